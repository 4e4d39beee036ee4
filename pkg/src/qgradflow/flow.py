"""Gradient flow of the terminal cost in control space.

The continuous flow ``du/ds = grad Jc(u)`` is discretized by explicit Euler
steps in ``s`` with a backtracking line search that enforces monotone ascent.
Updates use the L2 (functional) gradient sampled on the control grid, so the
coordinate gradient is ``dt * grad`` and the discrete flow approaches the L2
flow as the grid is refined.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import ControlSignal, propagate, second_variation
from .endpoint import EPS_SING, adjoint_differential, classify_control, gramian
from .lie import build_splitting, commutator, dag
from .objective import cost, enumerate_critical_points, grad_J, hessian_form

log = logging.getLogger(__name__)


class FlowError(RuntimeError):
    """Raised when the flow produces a non-finite cost."""


@dataclass(frozen=True)
class FlowConfig:
    eta: float = 0.5
    beta: float = 0.5
    max_iters: int = 5000
    grad_tol: float = 1e-6
    grad_floor: float = 1e-9
    max_backtracks: int = 40
    eta_max: float = 1e3
    comm_tol: float = 1e-5
    gap_tol: float = 1e-4
    eps_sing: float = EPS_SING
    seed: int = 0
    rule: str = "exact"
    snapshot_every: int = 0
    hessian_samples: int = 8

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown flow options: {sorted(unknown)}")
        return cls(**d)


def cost_functional(problem, u, rule="exact"):
    """``Jc(u) = Re tr(End(u) theta)``."""
    return float(cost(propagate(problem, u, rule).rho_T, problem.theta))


def _gradient_from_record(problem, record):
    UT = record.U_T
    theta_back = dag(UT) @ problem.theta @ UT
    c = commutator(problem.rho0, theta_back)
    return np.real(np.einsum("ab,kba->k", c, record.frames))


def grad_cost_functional(problem, u, record=None, rule="exact"):
    """L2 gradient of ``Jc`` on the grid: ``tr([rho0, U(T)^dagger theta U(T)] A_k)``.

    ``A_k`` are the control frames (averages of ``U^dagger H1 U`` over each
    subinterval). The partial derivative with respect to ``u_k`` is
    ``dt`` times the returned sample.
    """
    if record is None:
        record = propagate(problem, u, rule)
    return ControlSignal(u.T, _gradient_from_record(problem, record))


def grad_via_adjoint(problem, u, record=None, rule="exact"):
    """Same gradient composed as ``dEnd(u)^* grad J(End(u))``."""
    if record is None:
        record = propagate(problem, u, rule)
    return adjoint_differential(problem, record, grad_J(record.rho_T, problem.theta))


@dataclass
class StepResult:
    u: ControlSignal
    accepted: bool
    J: float
    eta_used: float
    eta_next: float
    streak: int
    backtracks: int
    record: object = None


def flow_step(problem, u, config, eta=None, streak=0, J=None, grad=None):
    """One Euler step ``u + eta * grad`` with backtracking.

    The step size is multiplied by ``beta`` until the cost does not decrease.
    After two consecutive acceptances the next step size grows by ``1/beta``,
    capped at ``eta_max``. If backtracking is exhausted, ``u`` is returned
    unchanged with ``accepted=False``.
    """
    eta = config.eta if eta is None else eta
    if J is None or grad is None:
        rec = propagate(problem, u, config.rule)
        J = float(cost(rec.rho_T, problem.theta))
        grad = _gradient_from_record(problem, rec)
    grad = np.asarray(getattr(grad, "values", grad))
    if not np.any(grad):
        return StepResult(u, True, J, 0.0, eta, streak, 0)
    trial_eta = eta
    for bt in range(config.max_backtracks + 1):
        trial = ControlSignal(u.T, u.values + trial_eta * grad)
        rec = propagate(problem, trial, config.rule)
        J_new = float(cost(rec.rho_T, problem.theta))
        if not np.isfinite(J_new):
            raise FlowError(f"non-finite cost after step of size {trial_eta:.3e}")
        if J_new >= J:
            streak = streak + 1 if bt == 0 else 0
            nxt = trial_eta
            if streak >= 2:
                nxt = min(trial_eta / config.beta, config.eta_max)
                streak = 0
            return StepResult(trial, True, J_new, trial_eta, nxt, streak, bt, rec)
        trial_eta *= config.beta
    return StepResult(u, False, J, 0.0, eta, 0, config.max_backtracks)


@dataclass
class FlowTrace:
    iteration: list = field(default_factory=list)
    s: list = field(default_factory=list)
    J: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def append(self, it, s, J, gnorm, eta, accepted, backtracks):
        self.iteration.append(it)
        self.s.append(s)
        self.J.append(J)
        self.grad_norm.append(gnorm)
        self.eta.append(eta)
        self.accepted.append(accepted)
        self.backtracks.append(backtracks)

    def rows(self):
        return list(
            zip(self.iteration, self.s, self.J, self.grad_norm, self.eta,
                self.accepted, self.backtracks)
        )


@dataclass
class HessianSummary:
    eigenvalues: np.ndarray
    n_pos: int
    n_neg: int
    n_zero: int
    reliable: bool
    comm_norm: float

    @property
    def signature(self):
        return (self.n_pos, self.n_neg, self.n_zero)


def _signature(ev, rel_tol=1e-9):
    scale = float(np.max(np.abs(ev))) if ev.size else 0.0
    thr = rel_tol * scale
    return int(np.sum(ev > thr)), int(np.sum(ev < -thr)), int(np.sum(np.abs(ev) <= thr))


def sym_sqrt(G):
    w, v = np.linalg.eigh(0.5 * (G + G.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def hessian_at_control(problem, u, split=None, record=None, eps_sing=EPS_SING, rule="exact"):
    """Spectrum of ``g H g`` with ``g = G(u)^(1/2)`` near a kinematic critical point.

    ``G`` is the Gramian and ``H`` the Hessian of ``J`` at ``rho(T)``, both in the
    tangent basis ``U(T) [rho0, E_j] U(T)^dagger``. Its nonzero spectrum is that of
    the control-space Hessian restricted to the image of ``dEnd^*``. The signature
    is flagged unreliable when the Gramian is numerically singular.
    """
    if split is None:
        split = build_splitting(problem.rho0)
    if record is None:
        record = propagate(problem, u, rule)
    gram = gramian(problem, record, split)
    UT = record.U_T
    dirs = UT @ split.p_basis() @ dag(UT)
    H = hessian_form(record.rho_T, problem.theta, dirs)
    g = sym_sqrt(gram.matrix)
    a = g @ H @ g
    ev = np.linalg.eigvalsh(0.5 * (a + a.T))
    pos, neg, zero = _signature(ev)
    reliable = classify_control(gram, eps_sing).regular
    comm = float(np.linalg.norm(commutator(record.rho_T, problem.theta)))
    return HessianSummary(ev, pos, neg, zero, reliable, comm)


def hessian_form_samples(problem, u, rng, k=8):
    """Second derivatives ``d^2/de^2 Jc(u + e v)`` along ``k`` random unit directions."""
    out = []
    for _ in range(k):
        v = ControlSignal(u.T, rng.standard_normal(u.M))
        v = v * (1.0 / v.norm())
        r = second_variation(problem, u, v)
        out.append(float(cost(r, problem.theta)))
    return np.array(out)


STATUS_EXIT = {"GlobalMax": 0, "Saddle": 2, "SuspectedNonKinematic": 3, "MaxIters": 4}


@dataclass
class ConvergenceReport:
    status: str
    morse_index: int
    iterations: int
    termination: str
    final_J: float
    J_max: float
    gap: float
    grad_norm: float
    comm_norm: float
    nearest_permutation: tuple
    nearest_distance: float
    nearest_J: float
    gramian_eigenvalues: list
    gramian_ratio: float
    control_class: str
    hessian: dict
    thresholds: dict

    @property
    def label(self):
        if self.status == "Saddle":
            return f"Saddle({self.morse_index})"
        return self.status

    @property
    def exit_code(self):
        return STATUS_EXIT[self.status]

    def to_dict(self):
        d = asdict(self)
        d["label"] = self.label
        d["nearest_permutation"] = list(self.nearest_permutation)
        return d


def classify_run(problem, u, config, record=None, points=None, split=None,
                 converged=True, iterations=0, termination="grad_tol", rng=None):
    """Classify the terminal control against the critical points of ``J``."""
    if record is None:
        record = propagate(problem, u, config.rule)
    if split is None:
        split = build_splitting(problem.rho0)
    if points is None:
        points = enumerate_critical_points(problem)
    rho = record.rho_T
    J = float(cost(rho, problem.theta))
    J_max = points[-1].value
    dists = [float(np.linalg.norm(rho - p.rho)) for p in points]
    i_near = int(np.argmin(dists))
    near = points[i_near]
    comm = float(np.linalg.norm(commutator(rho, problem.theta)))
    gnorm = ControlSignal(u.T, _gradient_from_record(problem, record)).norm()
    gram = gramian(problem, record, split)
    cls = classify_control(gram, config.eps_sing)
    hess = {}
    if comm < config.comm_tol:
        hs = hessian_at_control(problem, u, split, record, config.eps_sing)
        hess = {
            "kind": "kinematic",
            "eigenvalues": hs.eigenvalues.tolist(),
            "n_pos": hs.n_pos,
            "n_neg": hs.n_neg,
            "reliable": hs.reliable,
            "critical_point_index": near.morse_index,
        }
        if i_near == len(points) - 1 and (J_max - J) < config.gap_tol:
            status = "GlobalMax"
        else:
            status = "Saddle"
    elif converged:
        status = "SuspectedNonKinematic"
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        samples = hessian_form_samples(problem, u, rng, config.hessian_samples)
        hess = {
            "kind": "control_space_samples",
            "samples": samples.tolist(),
            "min": float(samples.min()) if samples.size else 0.0,
            "max": float(samples.max()) if samples.size else 0.0,
            "n_pos": int(np.sum(samples > 0)),
            "n_neg": int(np.sum(samples < 0)),
        }
    else:
        status = "MaxIters"
    return ConvergenceReport(
        status=status,
        morse_index=int(near.morse_index) if status == "Saddle" else (
            int(problem.N) if status == "GlobalMax" else -1),
        iterations=int(iterations),
        termination=termination,
        final_J=J,
        J_max=float(J_max),
        gap=float(J_max - J),
        grad_norm=float(gnorm),
        comm_norm=comm,
        nearest_permutation=tuple(int(i) for i in near.permutation),
        nearest_distance=dists[i_near],
        nearest_J=float(near.value),
        gramian_eigenvalues=gram.eigenvalues.tolist(),
        gramian_ratio=cls.ratio,
        control_class=str(cls),
        hessian=hess,
        thresholds={
            "grad_tol": config.grad_tol,
            "comm_tol": config.comm_tol,
            "gap_tol": config.gap_tol,
            "eps_sing": config.eps_sing,
        },
    )


def run_flow(problem, u0, config=FlowConfig(), points=None):
    """Iterate :func:`flow_step` until the gradient norm drops below ``grad_tol``.

    Returns ``(trace, report, u_final)``.
    """
    if not problem.controllable:
        warnings.warn("problem is not controllable; convergence to the maximum is not expected")
    split = build_splitting(problem.rho0)
    if points is None:
        points = enumerate_critical_points(problem)
    trace = FlowTrace()
    u = u0
    rec = propagate(problem, u, config.rule)
    J = float(cost(rec.rho_T, problem.theta))
    if not np.isfinite(J):
        raise FlowError("non-finite cost at the initial control")
    grad = _gradient_from_record(problem, rec)
    gnorm = float(np.sqrt(u.dt * grad @ grad))
    eta = config.eta
    streak = 0
    s = 0.0
    trace.append(0, s, J, gnorm, 0.0, True, 0)
    if config.snapshot_every:
        trace.snapshots[0] = u.values.copy()
    it = 0
    termination = "max_iters"
    while True:
        if gnorm < config.grad_tol:
            # a small gradient with a large commutator may be a slow approach to a
            # kinematic point; only the deeper floor lets it count as non-kinematic
            comm = float(np.linalg.norm(commutator(rec.rho_T, problem.theta)))
            if comm < config.comm_tol:
                termination = "grad_tol"
                break
            if gnorm < config.grad_floor:
                termination = "grad_floor"
                break
        if it >= config.max_iters:
            break
        step = flow_step(problem, u, config, eta=eta, streak=streak, J=J, grad=grad)
        it += 1
        if not step.accepted:
            trace.append(it, s, J, gnorm, 0.0, False, step.backtracks)
            termination = "stalled"
            break
        if step.J < J:
            raise AssertionError("accepted step decreased the cost")
        s += step.eta_used
        u, J, eta, streak = step.u, step.J, step.eta_next, step.streak
        if step.record is not None:
            rec = step.record
            grad = _gradient_from_record(problem, rec)
        gnorm = float(np.sqrt(u.dt * grad @ grad))
        trace.append(it, s, J, gnorm, step.eta_used, True, step.backtracks)
        if config.snapshot_every and it % config.snapshot_every == 0:
            trace.snapshots[it] = u.values.copy()
    converged = termination in ("grad_tol", "grad_floor", "stalled")
    report = classify_run(problem, u, config, rec, points, split, converged, it, termination)
    log.info("flow finished: %s after %d iterations, J=%.12g", report.label, it, J)
    return trace, report, u


def initial_control(problem, M, kind="random", seed=0, amplitude=1.0, values=None, grad_tol=1e-6):
    """Zero, seeded uniform noise in ``[-amplitude, amplitude]``, or user-supplied values.

    Warns when the starting gradient is already below ``grad_tol``.
    """
    if kind == "zero":
        u = ControlSignal.zeros(problem.T, M)
    elif kind == "random":
        u = ControlSignal.random(problem.T, M, np.random.default_rng(seed), amplitude)
    elif kind == "values":
        u = ControlSignal(problem.T, values)
    else:
        raise ValueError(f"unknown initial control kind {kind!r}")
    g = grad_cost_functional(problem, u).norm()
    if g < grad_tol:
        warnings.warn(f"initial control is (nearly) critical: gradient norm {g:.3e}")
    return u


def steer(problem, target, u0, config=FlowConfig()):
    """Drive ``End(u)`` towards an orbit point ``target`` by maximizing ``Re tr(rho target)``."""
    aux = problem.with_theta(target)
    _, report, u = run_flow(aux, u0, config)
    return u, report
