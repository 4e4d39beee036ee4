import numpy as np
import pytest

from qgradflow.dynamics import ControlSignal, first_variation, propagate
from qgradflow.endpoint import (
    GramianMatrix,
    adjoint_differential,
    basis_switching,
    classify_control,
    gramian,
    numerical_rank,
    singularity_witness,
    switching_function,
    tangent_basis,
    witness_candidate,
)
from qgradflow.generate import commuting_problem, random_problem
from qgradflow.lie import build_splitting, commutator, metric, project_p, random_su
from qgradflow.objective import QuantumProblem, grad_J


def _setup(p, M, rng):
    u = ControlSignal.random(p.T, M, rng)
    return u, propagate(p, u), build_splitting(p.rho0)


def _random_tangent(rec, rng, n):
    return commutator(rec.rho_T, random_su(n, rng))


def test_switching_trivial(problem, rng):
    u, rec, sp = _setup(problem, 16, rng)
    assert np.allclose(switching_function(problem, rec, np.zeros((problem.n,) * 2)), 0)
    theta = rec.rho_T @ rec.rho_T  # commutes with rho(T)
    z = grad_J(rec.rho_T, theta)
    assert np.allclose(switching_function(problem, rec, z), 0)
    with pytest.raises(ValueError):
        switching_function(problem, rec, rec.rho_T)


def test_adjoint_trivial(problem, rng):
    u, rec, sp = _setup(problem, 16, rng)
    z = _random_tangent(rec, rng, problem.n)
    p0 = QuantumProblem.create(problem.H0, 0 * problem.H1, problem.rho0, problem.theta, problem.T)
    rec0 = propagate(p0, u)
    z0 = commutator(rec0.rho_T, random_su(problem.n, rng))
    assert np.allclose(adjoint_differential(p0, rec0, z0).values, 0)
    assert adjoint_differential(problem, rec, 0 * z).norm() == 0


@pytest.mark.parametrize("rule", ["exact", "midpoint"])
def test_duality(problem, rng, rule):
    worst = 0.0
    for _ in range(25):
        u = ControlSignal.random(problem.T, 16, rng)
        v = ControlSignal.random(problem.T, 16, rng)
        rec = propagate(problem, u, rule)
        z = _random_tangent(rec, rng, problem.n)
        lhs = adjoint_differential(problem, rec, z).inner(v)
        rhs = metric(z, first_variation(problem, u, v, record=rec), rec.rho_T)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(rhs)))
    assert worst < 1e-6


def test_adjoint_norm_equals_gramian_form(problem, rng):
    u, rec, sp = _setup(problem, 24, rng)
    G = gramian(problem, rec, sp)
    Z = tangent_basis(rec, sp)
    for _ in range(10):
        c = rng.standard_normal(problem.N)
        z = np.einsum("j,jab->ab", c, Z)
        lhs = adjoint_differential(problem, rec, z, sp).norm() ** 2
        assert c @ G.matrix @ c == pytest.approx(lhs, rel=1e-8)


def test_tangent_basis_orthonormal(problem, rng):
    u, rec, sp = _setup(problem, 8, rng)
    Z = tangent_basis(rec, sp)
    M = np.array([[metric(a, b, rec.rho_T) for b in Z] for a in Z])
    assert np.allclose(M, np.eye(problem.N), atol=1e-9)


def test_gramian_consistency(problem, rng):
    # G_jk = <z_j, dEnd(dEnd^* z_k)>
    u, rec, sp = _setup(problem, 16, rng)
    G = gramian(problem, rec, sp)
    Z = tangent_basis(rec, sp)
    alt = np.empty_like(G.matrix)
    for k, zk in enumerate(Z):
        y = first_variation(problem, u, adjoint_differential(problem, rec, zk, sp), record=rec)
        for j, zj in enumerate(Z):
            alt[j, k] = metric(zj, y, rec.rho_T)
    assert np.allclose(G.matrix, alt, atol=1e-6)
    assert np.allclose(G.matrix, G.matrix.T, atol=1e-10)
    assert G.eigenvalues.min() >= -1e-10


def test_gramian_zero_coupling(rng):
    p = random_problem(2, 1, T=3.0)
    p0 = QuantumProblem.create(p.H0, 0 * p.H1, p.rho0, p.theta, p.T)
    u, rec, sp = _setup(p0, 8, rng)
    G = gramian(p0, rec, sp)
    assert np.allclose(G.matrix, 0)
    c = classify_control(G)
    assert not c.regular and c.corank == p.N


def test_gramian_generic_regular(problem, rng):
    u, rec, sp = _setup(problem, 32, rng)
    G = gramian(problem, rec, sp)
    assert G.eigenvalues.min() > 0
    assert np.linalg.matrix_rank(basis_switching(rec, sp)) == problem.N
    assert classify_control(G).regular


def test_classify_examples():
    assert str(classify_control(np.zeros((2, 2)))) == "Singular(2)"
    assert classify_control(np.eye(6)).regular
    c = classify_control(np.diag([1.0, 1e-12, 0.5]))
    assert not c.regular and c.corank == 1


def test_commuting_generators_are_singular():
    p = commuting_problem(2, seed=3)
    assert np.linalg.norm(commutator(p.H0, p.H1)) < 1e-12
    u = ControlSignal.zeros(p.T, 32)
    rec = propagate(p, u)
    sp = build_splitting(p.rho0)
    G = gramian(p, rec, sp)
    c = classify_control(G)
    assert not c.regular and c.corank >= 1
    # constant integrand: the frames all equal H1, so the sample matrix has rank <= 1
    assert np.allclose(rec.frames, p.H1[None], atol=1e-12)
    w = singularity_witness(p, rec, sp)
    assert w is not None and w.residual < 1e-8
    assert np.linalg.norm(w.omega0) == pytest.approx(1.0)
    assert np.allclose(project_p(w.omega0, sp), w.omega0)
    assert np.max(np.abs(w.trace_samples)) < 1e-8
    # brute-force oracle: SVD of the stacked samples
    s = np.linalg.svd(basis_switching(rec, sp), compute_uv=False)
    assert s[-1] < 1e-8


def test_regular_has_no_witness(problem, rng):
    u, rec, sp = _setup(problem, 32, rng)
    assert singularity_witness(problem, rec, sp) is None


def test_witness_residual_is_sqrt_lambda_min(problem, rng):
    u, rec, sp = _setup(problem, 32, rng)
    S = basis_switching(rec, sp)
    cand = witness_candidate(problem, rec, sp)
    lam = np.linalg.eigvalsh(S @ S.T).min()
    assert cand.residual == pytest.approx(np.sqrt(max(lam, 0)), abs=1e-10)


def test_rank_equivalence(rng):
    cases = 0
    for seed in range(15):
        for p in (random_problem(2 + seed % 2, seed, T=3.0), commuting_problem(2 + seed % 2, seed)):
            u, rec, sp = _setup(p, 16, rng)
            G = gramian(p, rec, sp)
            S = basis_switching(rec, sp)
            assert classify_control(G).regular == (numerical_rank(S) == p.N)
            cases += 1
    assert cases == 30


def test_gramian_from_samples_symmetric():
    S = np.arange(12.0).reshape(3, 4)
    G = GramianMatrix.from_samples(S, 0.25)
    assert np.allclose(G.matrix, 0.25 * S @ S.T)
