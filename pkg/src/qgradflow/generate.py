"""Random problem generation and the commuting (singular) construction."""

import numpy as np

from .lie import EPS_GAP, random_su, random_unitary
from .objective import QuantumProblem


def default_rho_spectrum(n):
    """Evenly spaced in (0, 1), normalized to unit trace, descending."""
    lam = np.arange(n, 0, -1, dtype=float)
    return lam / lam.sum()


def default_theta_spectrum(n):
    return np.linspace(1.0, -1.0, n)


def _check_simple(spec, name, eps_gap):
    spec = np.sort(np.asarray(spec, dtype=float))
    if spec.size < 2:
        raise ValueError(f"{name} spectrum needs at least two values")
    if np.min(np.diff(spec)) < eps_gap:
        raise ValueError(f"{name} spectrum is degenerate: {spec.tolist()}")


def random_problem(n, seed, T=10.0, rho_spectrum=None, theta_spectrum=None,
                   max_tries=20, eps_gap=EPS_GAP):
    """Gaussian su(n) generators with ``rho0``, ``theta`` of prescribed simple spectra.

    Redraws (at most ``max_tries`` times) until the pair is controllable.
    """
    rho_spectrum = default_rho_spectrum(n) if rho_spectrum is None else np.asarray(rho_spectrum, float)
    theta_spectrum = default_theta_spectrum(n) if theta_spectrum is None else np.asarray(theta_spectrum, float)
    if len(rho_spectrum) != n or len(theta_spectrum) != n:
        raise ValueError("spectra must have length n")
    _check_simple(rho_spectrum, "rho0", eps_gap)
    _check_simple(theta_spectrum, "theta", eps_gap)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        H0 = random_su(n, rng)
        H1 = random_su(n, rng)
        V = random_unitary(n, rng)
        W = random_unitary(n, rng)
        rho0 = V @ np.diag(rho_spectrum) @ V.conj().T
        theta = W @ np.diag(theta_spectrum) @ W.conj().T
        rho0 = 0.5 * (rho0 + rho0.conj().T)
        theta = 0.5 * (theta + theta.conj().T)
        prob = QuantumProblem.create(H0, H1, rho0, theta, T)
        if prob.controllable and prob.h1_ok:
            return prob
    raise RuntimeError(f"no controllable problem found in {max_tries} draws")


def commuting_problem(n=2, seed=0, T=5.0):
    """``H1`` a polynomial in ``H0`` so that ``[H0, H1] = 0``: every control is singular.

    ``rho0`` is a generic-basis state so that ``H1`` has a nonzero p-component.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    w -= w.mean()
    Q = random_unitary(n, rng)
    H0 = Q @ np.diag(1j * w) @ Q.conj().T
    c = rng.standard_normal(n)
    c -= c.mean()
    H1 = Q @ np.diag(1j * c) @ Q.conj().T
    V = random_unitary(n, rng)
    W = random_unitary(n, rng)
    rho0 = V @ np.diag(default_rho_spectrum(n)) @ V.conj().T
    theta = W @ np.diag(default_theta_spectrum(n)) @ W.conj().T
    return QuantumProblem.create(
        0.5 * (H0 - H0.conj().T), 0.5 * (H1 - H1.conj().T),
        0.5 * (rho0 + rho0.conj().T), 0.5 * (theta + theta.conj().T), T,
    )
