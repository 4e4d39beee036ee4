"""The orbit cost ``J(rho) = Re tr(rho theta)`` and its critical-point landscape."""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .lie import (
    EPS_GAP,
    TOL_ALG,
    canonical_p_basis,
    check_hermitian,
    check_su,
    commutator,
    dag,
    sorted_eigh,
)

log = logging.getLogger(__name__)

CONTROL_RANK_TOL = 1e-10


@dataclass(frozen=True)
class QuantumProblem:
    """System data ``(H0, H1, rho0, theta, T)`` plus validation flags.

    Use :meth:`create` to build a validated instance; the constructor itself
    does no checking.
    """

    H0: np.ndarray
    H1: np.ndarray
    rho0: np.ndarray
    theta: np.ndarray
    T: float
    h1_ok: bool = False
    controllable: bool = False
    notes: tuple = field(default=())

    @property
    def n(self):
        return self.H0.shape[0]

    @property
    def N(self):
        return self.n * self.n - self.n

    @classmethod
    def create(cls, H0, H1, rho0, theta, T, tol=TOL_ALG, eps_gap=EPS_GAP):
        """Validate matrix types and set the (H1) and controllability flags.

        Structural violations (non-skew-Hermitian generators, non-Hermitian
        states, size mismatch, ``T <= 0``) raise ``ValueError``. Degenerate
        spectra and lack of controllability only clear the flags.
        """
        H0 = check_su(H0, tol=tol, name="H0")
        H1 = check_su(H1, tol=tol, name="H1")
        rho0 = check_hermitian(rho0, tol=tol, name="rho0")
        theta = check_hermitian(theta, tol=tol, name="theta")
        n = H0.shape[0]
        for name, m in (("H1", H1), ("rho0", rho0), ("theta", theta)):
            if m.shape != (n, n):
                raise ValueError(f"{name} has shape {m.shape}, expected {(n, n)}")
        if not (np.isfinite(T) and T > 0):
            raise ValueError(f"horizon T must be positive, got {T}")
        notes = []
        h1_ok = True
        for name, m in (("rho0", rho0), ("theta", theta)):
            try:
                sorted_eigh(m, eps_gap=eps_gap, name=name)
            except ValueError as exc:
                h1_ok = False
                notes.append(str(exc))
        controllable = check_controllability(H0, H1)
        if not controllable:
            notes.append("Lie algebra generated by H0, H1 is not su(n)")
        return cls(H0, H1, rho0, theta, float(T), h1_ok, controllable, tuple(notes))

    def with_theta(self, theta):
        return QuantumProblem.create(self.H0, self.H1, self.rho0, theta, self.T)

    def with_horizon(self, T):
        return QuantumProblem(
            self.H0, self.H1, self.rho0, self.theta, float(T),
            self.h1_ok, self.controllable, self.notes,
        )


@dataclass(frozen=True)
class CriticalPoint:
    permutation: tuple
    rho: np.ndarray
    value: float
    frame: np.ndarray
    hessian_spectrum: np.ndarray = None
    morse_index: int = None


def cost(rho, theta):
    """``Re tr(rho theta)``."""
    rho = np.asarray(rho)
    theta = np.asarray(theta)
    if rho.shape[-2:] != theta.shape[-2:]:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {theta.shape}")
    return np.real(np.einsum("...ij,ji->...", rho, theta))


def grad_J(rho, theta):
    """Gradient of the orbit cost for the invariant metric: ``[rho, [rho, theta]]``."""
    return commutator(rho, commutator(rho, theta))


def check_controllability(H0, H1, tol=CONTROL_RANK_TOL):
    """Lie algebra rank condition: does ``{H0, H1}`` generate su(n)?

    Closes the generator set under commutators, keeping an orthonormal basis of
    the real-linear span of the vectorized matrices.
    """
    H0 = np.asarray(H0, dtype=complex)
    H1 = np.asarray(H1, dtype=complex)
    n = H0.shape[0]
    target = n * n - 1
    basis_vecs = []
    basis_mats = []

    def _add(m):
        v = np.concatenate([m.real.ravel(), m.imag.ravel()])
        nrm = np.linalg.norm(v)
        if nrm <= tol:
            return False
        v = v / nrm
        for b in basis_vecs:
            v = v - (b @ v) * b
        # second pass for numerical orthogonality
        for b in basis_vecs:
            v = v - (b @ v) * b
        r = np.linalg.norm(v)
        if r <= tol:
            return False
        basis_vecs.append(v / r)
        basis_mats.append(m / nrm)
        return True

    frontier = [m for m in (H0, H1) if _add(m)]
    while frontier and len(basis_mats) < target:
        new = []
        for a in frontier:
            for b in list(basis_mats):
                c = commutator(a, b)
                if _add(c):
                    new.append(basis_mats[-1])
                if len(basis_mats) >= target:
                    break
            if len(basis_mats) >= target:
                break
        frontier = new
    return len(basis_mats) >= target


def _pair_critical(lam, mu, perm):
    return float(np.dot(np.asarray(lam)[list(perm)], mu))


def enumerate_critical_points(problem, eps_gap=EPS_GAP, with_hessian=True):
    """All ``n!`` critical points of ``J`` on the orbit of ``rho0``, ascending in ``J``.

    ``theta = W diag(mu) W^dagger``; each permutation ``s`` gives
    ``rho_c = W diag(lam[s]) W^dagger``. Ties in ``J`` are broken by the
    lexicographic order of ``s``.
    """
    lam, _ = sorted_eigh(problem.rho0, eps_gap=eps_gap, name="rho0")
    mu, W = sorted_eigh(problem.theta, eps_gap=eps_gap, name="theta")
    n = len(lam)
    points = []
    for perm in itertools.permutations(range(n)):
        rho_c = (W * lam[list(perm)]) @ dag(W)
        rho_c = 0.5 * (rho_c + dag(rho_c))
        value = float(cost(rho_c, problem.theta))
        points.append(CriticalPoint(perm, rho_c, value, W))
    points.sort(key=lambda p: (p.value, p.permutation))
    if not with_hessian:
        return points
    out = []
    for p in points:
        h = hessian_J(p, problem)
        spec = np.linalg.eigvalsh(h)
        out.append(
            CriticalPoint(p.permutation, p.rho, p.value, p.frame, spec, int(np.sum(spec < 0)))
        )
    return out


def max_cost(rho0, theta):
    """Global maximum of ``J`` over the orbit: the sorted eigenvalue pairing."""
    lam = np.sort(np.linalg.eigvalsh(rho0))[::-1]
    mu = np.sort(np.linalg.eigvalsh(theta))[::-1]
    return float(np.dot(lam, mu))


def hessian_form(rho, theta, directions):
    """Symmetrized second directional derivatives of ``J`` at ``rho``.

    For skew-Hermitian ``directions`` ``Omega_j`` (shape ``(N, n, n)``), returns
    ``H_jk = (h_jk + h_kj)/2`` with ``h_jk = Re tr([Omega_j, [Omega_k, rho]] theta)``,
    the second derivative of ``J`` along ``exp(s Omega) rho exp(-s Omega)``.
    """
    om = np.asarray(directions)
    inner = om @ rho - rho @ om  # [Omega_k, rho]
    # h_jk = Re tr(Omega_j inner_k theta - inner_k Omega_j theta)
    a = np.einsum("jab,kbc,ca->jk", om, inner, theta)
    b = np.einsum("kab,jbc,ca->jk", inner, om, theta)
    h = np.real(a - b)
    return 0.5 * (h + h.T)


def hessian_J(point, problem, split=None, tol=TOL_ALG):
    """Hessian of ``J`` at a critical point in a metric-orthonormal tangent basis.

    The basis is ``[rho_c, Omega_j]`` with ``Omega_j`` the canonical orthonormal
    basis of ``p`` in the eigenframe of ``rho_c``. ``split`` is accepted for
    interface symmetry; the eigenframe of ``rho_c`` is what matters here.
    """
    rho = point.rho
    comm = np.linalg.norm(commutator(rho, problem.theta))
    scale = max(1.0, np.linalg.norm(rho) * np.linalg.norm(problem.theta))
    if comm > 1e3 * tol * scale:
        raise ValueError(f"not a critical point: ||[rho, theta]|| = {comm:.3e}")
    frame = point.frame
    dirs = frame @ canonical_p_basis(problem.n) @ dag(frame)
    return hessian_form(rho, problem.theta, dirs)
