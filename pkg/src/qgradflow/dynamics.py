"""Propagation of the controlled Liouville-von Neumann equation on a control grid.

Controls are piecewise constant on a uniform grid ``t_k = k T / M``. Every
derivative of the end-point map is expressed through the *control frames*

    A_k = (1/dt) * integral over [t_k, t_k+1] of U(t)^dagger H1 U(t) dt

(``rule="exact"``), or their midpoint samples ``U(tbar_k)^dagger H1 U(tbar_k)``
(``rule="midpoint"``). With the exact rule, the first variation, switching
functions and gradients are exact derivatives of the discretized end-point map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .lie import commutator, dag, expm_skew

RULES = ("exact", "midpoint")


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant real control: ``values[k]`` on ``[t_k, t_k+1)``."""

    T: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("control values must be a non-empty 1-D array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon must be positive, got {self.T}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def zeros(cls, T, M):
        return cls(T, np.zeros(M))

    @classmethod
    def from_function(cls, f, T, M):
        """Sample ``f`` at the subinterval midpoints."""
        t = (np.arange(M) + 0.5) * (T / M)
        return cls(T, np.asarray(f(t), dtype=float))

    @classmethod
    def random(cls, T, M, rng, amplitude=1.0):
        return cls(T, rng.uniform(-amplitude, amplitude, size=M))

    @property
    def M(self):
        return self.values.size

    @property
    def dt(self):
        return self.T / self.M

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.M + 1)

    @property
    def midpoints(self):
        return (np.arange(self.M) + 0.5) * self.dt

    def inner(self, other):
        """L2 product; exact for piecewise-constant signals."""
        self.check_same_grid(other)
        return float(self.dt * np.dot(self.values, other.values))

    def norm(self):
        return float(np.sqrt(self.dt * np.dot(self.values, self.values)))

    def check_same_grid(self, other):
        if other.M != self.M or not np.isclose(other.T, self.T, rtol=0, atol=1e-14 * self.T):
            raise ValueError(
                f"grid mismatch: (T={self.T}, M={self.M}) vs (T={other.T}, M={other.M})"
            )

    def __add__(self, other):
        self.check_same_grid(other)
        return ControlSignal(self.T, self.values + other.values)

    def __sub__(self, other):
        self.check_same_grid(other)
        return ControlSignal(self.T, self.values - other.values)

    def __mul__(self, c):
        return ControlSignal(self.T, float(c) * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class PropagationRecord:
    """Propagators at the grid times, terminal state, and control frames."""

    times: np.ndarray
    U: np.ndarray  # (M+1, n, n); U[0] = I
    rho_T: np.ndarray
    frames: np.ndarray  # (M, n, n), skew-Hermitian
    rule: str
    dt: float

    @property
    def U_T(self):
        return self.U[-1]


def _phi1(z):
    """``(exp(z) - 1)/z`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-5
    safe = np.where(small, 1.0, z)
    out = np.expm1(safe) / safe
    series = 1.0 + z / 2.0 + z * z / 6.0
    return np.where(small, series, out)


def step_generators(problem, u):
    """Stack of ``H0 + u_k H1`` with shape ``(M, n, n)``."""
    return problem.H0[None] + u.values[:, None, None] * problem.H1[None]


def propagate(problem, u, rule="exact"):
    """Propagate ``U`` and ``rho`` through the control grid.

    ``U_{k+1} = exp(dt (H0 + u_k H1)) U_k`` with each step exponential computed
    from the eigen-decomposition of the Hermitian matrix ``i (H0 + u_k H1)``.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if abs(u.T - problem.T) > 1e-12 * problem.T:
        raise ValueError(f"control horizon {u.T} differs from problem horizon {problem.T}")
    dt = u.dt
    X = step_generators(problem, u)
    w, V = np.linalg.eigh(1j * X)
    Vd = dag(V)
    steps = (V * np.exp(-1j * dt * w)[:, None, :]) @ Vd

    n = problem.n
    M = u.M
    U = np.empty((M + 1, n, n), dtype=complex)
    U[0] = np.eye(n)
    for k in range(M):
        U[k + 1] = steps[k] @ U[k]

    H1 = problem.H1
    if rule == "exact":
        # e^{-tau X} H1 e^{tau X} in the eigenbasis has entries B_ab exp(i tau (w_a - w_b))
        B = Vd @ H1[None] @ V
        gaps = w[:, :, None] - w[:, None, :]
        K = V @ (B * _phi1(1j * dt * gaps)) @ Vd
    else:
        half = (V * np.exp(-0.5j * dt * w)[:, None, :]) @ Vd
        K = dag(half) @ H1[None] @ half
    frames = dag(U[:-1]) @ K @ U[:-1]
    frames = 0.5 * (frames - dag(frames))

    UT = U[-1]
    rho_T = UT @ problem.rho0 @ dag(UT)
    rho_T = 0.5 * (rho_T + dag(rho_T))
    return PropagationRecord(u.times, U, rho_T, frames, rule, dt)


def end_point(problem, u, rule="exact"):
    """Terminal state ``rho(T)``."""
    return propagate(problem, u, rule).rho_T


def first_variation(problem, u, v, record=None, rule="exact"):
    """``dEnd(u) v`` by quadrature of the variation-of-constants formula.

    ``y(T) = U(T) [sum_k dt v_k [A_k, rho0]] U(T)^dagger`` with ``A_k`` the
    control frames of ``record``.
    """
    u.check_same_grid(v)
    if record is None:
        record = propagate(problem, u, rule)
    z = np.einsum("k,kab->ab", v.values * record.dt, record.frames)
    y = record.U_T @ commutator(z, problem.rho0) @ dag(record.U_T)
    return 0.5 * (y + dag(y))


def _ad_super(A):
    """Matrix of ``Y -> [A, Y]`` acting on row-major ``vec(Y)``."""
    n = A.shape[0]
    eye = np.eye(n)
    return np.kron(A, eye) - np.kron(eye, A.T)


def first_variation_ode(problem, u, v, rule="exact"):
    """``dEnd(u) v`` by integrating the variational equation step by step.

    Integrates ``rho' = [X, rho]``, ``y' = [X, y] + v [H1, rho]`` with
    ``X = H0 + u H1``. ``rule="exact"`` solves the coupled linear system on each
    subinterval with a block matrix exponential; ``rule="midpoint"`` propagates
    the homogeneous part exactly and injects the source at the midpoint.
    """
    u.check_same_grid(v)
    n = problem.n
    dt = u.dt
    X = step_generators(problem, u)
    rho = problem.rho0.astype(complex)
    y = np.zeros((n, n), dtype=complex)
    if rule == "exact":
        C = _ad_super(problem.H1)
        m = n * n
        for k in range(u.M):
            L = _ad_super(X[k])
            G = np.zeros((2 * m, 2 * m), dtype=complex)
            G[:m, :m] = L
            G[m:, m:] = L
            G[m:, :m] = v.values[k] * C
            state = expm(dt * G) @ np.concatenate([rho.ravel(), y.ravel()])
            rho = state[:m].reshape(n, n)
            y = state[m:].reshape(n, n)
    elif rule == "midpoint":
        for k in range(u.M):
            E = expm_skew(X[k], dt)
            Eh = expm_skew(X[k], 0.5 * dt)
            rho_mid = Eh @ rho @ dag(Eh)
            src = dt * v.values[k] * commutator(problem.H1, rho_mid)
            y = E @ y @ dag(E) + Eh @ src @ dag(Eh)
            rho = E @ rho @ dag(E)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return 0.5 * (y + dag(y))


def second_variation(problem, u, v):
    """``d^2 End(u)(v, v)``: the second derivative of ``eps -> End(u + eps v)``.

    Integrates the coupled system ``rho' = [X, rho]``, ``y' = [X, y] + v [H1, rho]``,
    ``r' = [X, r] + 2 v [H1, y]`` exactly on each subinterval.
    """
    u.check_same_grid(v)
    n = problem.n
    m = n * n
    dt = u.dt
    X = step_generators(problem, u)
    C = _ad_super(problem.H1)
    state = np.concatenate(
        [problem.rho0.astype(complex).ravel(), np.zeros(m, complex), np.zeros(m, complex)]
    )
    for k in range(u.M):
        L = _ad_super(X[k])
        G = np.zeros((3 * m, 3 * m), dtype=complex)
        for b in range(3):
            G[b * m:(b + 1) * m, b * m:(b + 1) * m] = L
        G[m:2 * m, :m] = v.values[k] * C
        G[2 * m:, m:2 * m] = 2.0 * v.values[k] * C
        state = expm(dt * G) @ state
    r = state[2 * m:].reshape(n, n)
    return 0.5 * (r + dag(r))
