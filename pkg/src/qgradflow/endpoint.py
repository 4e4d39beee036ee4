"""Adjoint of the end-point differential, controllability Gramian, singular controls."""

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSignal
from .lie import EPS_GAP, ad_inverse, commutator, dag, sorted_eigh

EPS_SING = 1e-8
EPS_WIT = 1e-8


@dataclass(frozen=True)
class GramianMatrix:
    """Gramian in the orthonormal tangent basis ``z_j = Ad_U(T) [rho0, E_j]``.

    ``samples`` holds the basis switching functions, one row per ``E_j``.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    samples: np.ndarray
    dt: float

    @classmethod
    def from_samples(cls, samples, dt):
        G = dt * samples @ samples.T
        G = 0.5 * (G + G.T)
        return cls(G, np.linalg.eigvalsh(G), samples, dt)

    @property
    def N(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ControlClass:
    regular: bool
    corank: int
    ratio: float  # lambda_min / lambda_max, 0 for an all-zero Gramian

    def __str__(self):
        return "Regular" if self.regular else f"Singular({self.corank})"


def _check_tangent(zp, eigenvalues, tol):
    diag = np.diagonal(zp, axis1=-2, axis2=-1)
    scale = max(1.0, float(np.linalg.norm(zp)))
    err = float(np.max(np.abs(diag)))
    if err > tol * scale:
        raise ValueError(f"z is not tangent at rho(T): diagonal residue {err:.3e}")


def pulled_back_generator(problem, record, z, split=None, tol=1e-8):
    """``Omega0`` in p with ``z = Ad_U(T) [rho0, Omega0]``."""
    if split is None:
        lam, V = sorted_eigh(problem.rho0, eps_gap=EPS_GAP, name="rho0")
    else:
        lam, V = split.eigenvalues, split.V
    UT = record.U_T
    w = dag(UT) @ np.asarray(z, dtype=complex) @ UT
    _check_tangent(dag(V) @ w @ V, lam, tol)
    return ad_inverse(w, V, lam)


def switching_function(problem, record, z, split=None):
    """Samples of the switching function of ``z`` on the control grid.

    ``Phi_k = Re tr(Omega0 A_k)`` where ``A_k`` are the control frames of
    ``record``; this is the representative of ``dEnd(u)^* z`` in L2.
    """
    omega0 = pulled_back_generator(problem, record, z, split)
    return np.real(np.einsum("ab,kba->k", omega0, record.frames))


def adjoint_differential(problem, record, z, split=None):
    """``dEnd(u)^* z`` as a control signal on the grid of ``record``."""
    T = record.times[-1]
    return ControlSignal(T, switching_function(problem, record, z, split))


def basis_switching(record, split):
    """Switching functions of the orthonormal tangent basis, shape ``(N, M)``."""
    E = split.p_basis()
    return np.real(np.einsum("jab,kba->jk", E, record.frames))


def tangent_basis(record, split):
    """Metric-orthonormal basis ``z_j = U(T) [rho0, E_j] U(T)^dagger`` of the tangent space at rho(T)."""
    E = split.p_basis()
    UT = record.U_T
    return UT @ commutator(split.rho0, E) @ dag(UT)


def gramian(problem, record, split):
    """Controllability Gramian ``G_jk = (Phi_j, Phi_k)_L2``."""
    return GramianMatrix.from_samples(basis_switching(record, split), record.dt)


def classify_control(gram, eps_sing=EPS_SING):
    """Regular iff ``lambda_min / lambda_max >= eps_sing``."""
    ev = np.asarray(gram.eigenvalues if isinstance(gram, GramianMatrix) else np.linalg.eigvalsh(gram))
    N = ev.size
    lmax = float(ev.max()) if N else 0.0
    if lmax <= 0.0:
        return ControlClass(False, N, 0.0)
    ratios = ev / lmax
    corank = int(np.sum(ratios < eps_sing))
    return ControlClass(corank == 0, corank, float(ev.min() / lmax))


def numerical_rank(samples, eps_sing=EPS_SING):
    """Rank of the stacked switching samples with the classifier's threshold."""
    s = np.linalg.svd(samples, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum((s / s[0]) ** 2 >= eps_sing))


@dataclass(frozen=True)
class SingularityWitness:
    omega0: np.ndarray
    coefficients: np.ndarray
    residual: float
    trace_samples: np.ndarray


def witness_candidate(problem, record, split):
    """Best unit ``Omega0`` in p minimizing ``sum_k tr(Omega0 A_k)^2``."""
    S = basis_switching(record, split)
    u_, s, _ = np.linalg.svd(S, full_matrices=True)
    N = S.shape[0]
    c = u_[:, N - 1]
    resid = float(s[N - 1]) if s.size >= N else 0.0
    omega0 = np.einsum("j,jab->ab", c, split.p_basis())
    traces = np.real(np.einsum("ab,kba->k", omega0, record.frames))
    return SingularityWitness(omega0, c, resid, traces)


def singularity_witness(problem, record, split, eps_wit=EPS_WIT):
    """Nonzero ``Omega0`` in p with ``tr(Omega0 U^dagger H1 U) = 0`` on the grid, or ``None``."""
    cand = witness_candidate(problem, record, split)
    return cand if cand.residual < eps_wit else None
