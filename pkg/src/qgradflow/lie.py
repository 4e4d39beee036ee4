"""Matrix algebra on su(n) and the geometry of unitary orbits.

Matrices are plain complex ``numpy`` arrays. The validators below check the
structural invariants (skew-Hermitian, Hermitian, special unitary) and raise
``ValueError`` when they fail.
"""

from dataclasses import dataclass

import numpy as np

TOL_ALG = 1e-10
TOL_UNI = 1e-9
EPS_GAP = 1e-8


def dag(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a, b):
    """Return ``ab - ba``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def hs_inner(a, b):
    """Hilbert-Schmidt product ``tr(a^dagger b)``."""
    return np.einsum("...ij,...ij->...", np.conj(a), b)


def _as_square(a, name):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise ValueError(f"{name} must have dimension >= 2")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def check_hermitian(a, tol=TOL_ALG, name="matrix"):
    a = _as_square(a, name)
    err = np.max(np.abs(a - dag(a)))
    if err > tol:
        raise ValueError(f"{name} is not Hermitian (max deviation {err:.3e})")
    return a


def check_su(a, tol=TOL_ALG, name="matrix"):
    """Validate membership of su(n): skew-Hermitian and traceless."""
    a = _as_square(a, name)
    err = np.max(np.abs(a + dag(a)))
    if err > tol:
        raise ValueError(f"{name} is not skew-Hermitian (max deviation {err:.3e})")
    if abs(np.trace(a)) > tol:
        raise ValueError(f"{name} is not traceless (|tr| = {abs(np.trace(a)):.3e})")
    return a


def check_special_unitary(u, tol=TOL_UNI, name="matrix"):
    u = _as_square(u, name)
    n = u.shape[0]
    err = np.linalg.norm(dag(u) @ u - np.eye(n))
    if err > tol:
        raise ValueError(f"{name} is not unitary (||U'U - I|| = {err:.3e})")
    det_err = abs(np.linalg.det(u) - 1.0)
    if det_err > tol:
        raise ValueError(f"{name} has det != 1 (|det - 1| = {det_err:.3e})")
    return u


def project_su(a):
    """Nearest element of su(n) in the Hilbert-Schmidt norm."""
    a = np.asarray(a, dtype=complex)
    x = 0.5 * (a - dag(a))
    n = x.shape[-1]
    tr = np.trace(x, axis1=-2, axis2=-1)
    return x - tr[..., None, None] / n * np.eye(n)


def expm_skew(a, t=1.0):
    """``exp(t a)`` for skew-Hermitian ``a`` via diagonalization of ``i a``.

    Accepts a stack of matrices of shape ``(..., n, n)``. Since ``i a`` is
    Hermitian, ``exp(t a) = V diag(exp(-i t w)) V^dagger`` with ``(w, V)`` its
    eigen-decomposition; the result is unitary to working precision.
    """
    a = np.asarray(a, dtype=complex)
    w, v = np.linalg.eigh(1j * a)
    phases = np.exp(-1j * t * w)
    return (v * phases[..., None, :]) @ dag(v)


@dataclass(frozen=True)
class OrbitSplitting:
    """Eigenframe of ``rho0`` defining the h/p splitting of su(n).

    In the basis ``V`` the stabilizer algebra h is the traceless imaginary
    diagonal and p is the off-diagonal skew-Hermitian part.
    """

    rho0: np.ndarray
    V: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def dim_h(self):
        return self.n - 1

    @property
    def dim_p(self):
        return self.n * self.n - self.n

    def p_basis(self):
        """Orthonormal basis of p as a ``(N, n, n)`` array, in the original frame."""
        return self.V @ canonical_p_basis(self.n) @ dag(self.V)


def canonical_p_basis(n):
    """Off-diagonal skew-Hermitian basis: for each ``j < k`` the pair
    ``(E_jk - E_kj)/sqrt2`` and ``i(E_jk + E_kj)/sqrt2``, lexicographic."""
    out = np.zeros((n * n - n, n, n), dtype=complex)
    s = 1.0 / np.sqrt(2.0)
    idx = 0
    for j in range(n):
        for k in range(j + 1, n):
            out[idx, j, k] = s
            out[idx, k, j] = -s
            out[idx + 1, j, k] = 1j * s
            out[idx + 1, k, j] = 1j * s
            idx += 2
    return out


def sorted_eigh(h, eps_gap=EPS_GAP, name="matrix"):
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    Raises ``ValueError`` if two eigenvalues are closer than ``eps_gap``.
    Eigenvector phases are fixed deterministically: the largest-modulus entry
    of each column is made real positive, then the last column absorbs a phase
    so that ``det V = 1``.
    """
    w, v = np.linalg.eigh(h)
    w = w[::-1]
    v = v[:, ::-1]
    gaps = -np.diff(w)
    if gaps.size and gaps.min() < eps_gap:
        raise ValueError(
            f"{name} has a repeated eigenvalue (min gap {gaps.min():.3e} < {eps_gap:.1e})"
        )
    pivots = np.argmax(np.abs(v), axis=0)
    ph = v[pivots, np.arange(v.shape[1])]
    v = v * (np.abs(ph) / ph)
    # a phase on one column keeps V diagonalizing and brings det to 1
    v[:, -1] = v[:, -1] / np.linalg.det(v)
    return w, v


def build_splitting(rho0, eps_gap=EPS_GAP, tol=TOL_ALG):
    """Eigenbasis of ``rho0`` (descending spectrum) and the h/p dimensions."""
    rho0 = check_hermitian(rho0, tol=tol, name="rho0")
    w, v = sorted_eigh(rho0, eps_gap=eps_gap, name="rho0")
    return OrbitSplitting(rho0=rho0, V=v, eigenvalues=w)


def project_p(omega, split, u=None):
    """Component of ``omega`` in ``p_rho = Ad_u p``.

    Conjugates into the frame ``u V``, zeroes the diagonal, and conjugates back.
    Works on stacks ``(..., n, n)``.
    """
    frame = split.V if u is None else np.asarray(u) @ split.V
    x = dag(frame) @ np.asarray(omega, dtype=complex) @ frame
    n = split.n
    x = x * (1.0 - np.eye(n))
    return frame @ x @ dag(frame)


def ad_inverse(y, frame, eigenvalues):
    """Inverse of ``ad_rho`` on ``p_rho`` for ``rho = frame diag(eigenvalues) frame^dagger``.

    Returns the unique ``omega`` in ``p_rho`` with ``[rho, omega] = y``;
    the diagonal of ``y`` in the eigenframe is discarded.
    """
    x = dag(frame) @ y @ frame
    gaps = eigenvalues[:, None] - eigenvalues[None, :]
    n = len(eigenvalues)
    off = ~np.eye(n, dtype=bool)
    out = np.zeros_like(x)
    out[..., off] = x[..., off] / gaps[off]
    return frame @ out @ dag(frame)


def metric(y1, y2, rho, eps_gap=EPS_GAP):
    """Invariant metric on the tangent space of the orbit at ``rho``.

    With ``rho`` diagonal with eigenvalues ``l``, returns
    ``Re sum_{j != k} conj(y1_jk) y2_jk / (l_j - l_k)^2``.
    """
    w, v = sorted_eigh(rho, eps_gap=eps_gap, name="rho")
    return metric_in_frame(y1, y2, v, w)


def metric_in_frame(y1, y2, frame, eigenvalues):
    a = dag(frame) @ np.asarray(y1, dtype=complex) @ frame
    b = dag(frame) @ np.asarray(y2, dtype=complex) @ frame
    gaps = eigenvalues[:, None] - eigenvalues[None, :]
    n = len(eigenvalues)
    off = ~np.eye(n, dtype=bool)
    weights = np.zeros((n, n))
    weights[off] = 1.0 / gaps[off] ** 2
    return float(np.real(np.sum(np.conj(a) * b * weights, axis=(-2, -1))))


def is_tangent(y, rho, tol=1e-9, eps_gap=EPS_GAP):
    """True if ``y`` is traceless Hermitian with zero diagonal in the eigenframe of ``rho``."""
    y = np.asarray(y, dtype=complex)
    if np.max(np.abs(y - dag(y)), initial=0.0) > tol:
        return False
    _, v = sorted_eigh(rho, eps_gap=eps_gap, name="rho")
    diag = np.diag(dag(v) @ y @ v)
    scale = max(1.0, np.linalg.norm(y))
    return bool(np.max(np.abs(diag)) <= tol * scale)


def random_su(n, rng, scale=1.0):
    """Gaussian element of su(n)."""
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * project_su(g)


def random_unitary(n, rng):
    """Haar-random element of SU(n)."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    return q / np.linalg.det(q) ** (1.0 / n)
