import numpy as np
import pytest
from scipy.linalg import expm

from graphmbo.errors import ConvergenceError, DimensionError, IsolatedVertexError
from graphmbo.kernel_graph import SimilarityGraph, reweight_lambda
from graphmbo.operators import (
    GraphOperator,
    dirichlet_energy,
    dissipation_audit,
    infinity_laplacian_solve,
    vertex_inner,
)

from conftest import random_geometric_graph


# -- inner products -----------------------------------------------------------

def test_inner_product_two_node(two_node_graph):
    u = np.array([1.0, 0.0])
    assert vertex_inner(two_node_graph, u, u) == pytest.approx(0.25, abs=1e-15)


def test_inner_product_zero_vector(two_node_graph):
    v = np.array([0.3, -2.0])
    assert vertex_inner(two_node_graph, np.zeros(2), v) == 0.0


def test_inner_product_unit_degrees_normalization():
    n = 4
    W = np.ones((n, n)) - np.eye(n)
    g = SimilarityGraph(1.0, W * n / (n - 1))  # degrees exactly 1
    ones = np.ones(n)
    assert vertex_inner(g, ones, ones) == pytest.approx(1.0, abs=1e-14)
    assert vertex_inner(g, ones, ones, weighted=False) == pytest.approx(1.0)


def test_inner_product_length_mismatch(two_node_graph):
    with pytest.raises(DimensionError):
        vertex_inner(two_node_graph, np.ones(3), np.ones(3))


# -- Dirichlet energy -----------------------------------------------------------

def test_dirichlet_constant_is_zero():
    g = random_geometric_graph(30, 0)
    assert dirichlet_energy(g, 3.7 * np.ones(g.n)) == pytest.approx(0.0, abs=1e-15)


def test_dirichlet_two_node(two_node_graph):
    assert dirichlet_energy(two_node_graph, np.array([1.0, 0.0])) == pytest.approx(1 / 8)


def test_dirichlet_quadratic_scaling():
    g = random_geometric_graph(25, 1)
    u = np.random.default_rng(0).standard_normal(g.n)
    assert dirichlet_energy(g, 2 * u) == pytest.approx(4 * dirichlet_energy(g, u),
                                                       rel=1e-12)


def test_dirichlet_matches_pair_sum():
    g = random_geometric_graph(20, 2)
    u = np.random.default_rng(1).standard_normal(g.n)
    W = g.to_dense()
    brute = (W * (u[:, None] - u[None, :]) ** 2).sum() / (4 * g.n**2 * g.epsilon**2)
    assert dirichlet_energy(g, u) == pytest.approx(brute, rel=1e-12)


# -- heat semigroup --------------------------------------------------------------

def test_heat_identity_at_zero(two_node_graph):
    op = GraphOperator(two_node_graph)
    u = np.array([0.3, -1.2])
    assert np.array_equal(op.heat_apply(u, 0.0), u)


def test_heat_two_node_closed_form(two_node_graph):
    # Delta = I - W has eigenvalues {0, 2}: e^{-tDelta}(1,0) splits into
    # symmetric and antisymmetric parts
    op = GraphOperator(two_node_graph)
    t = 0.5
    out = op.heat_apply(np.array([1.0, 0.0]), t)
    expect = np.array([(1 + np.exp(-2 * t)) / 2, (1 - np.exp(-2 * t)) / 2])
    assert np.allclose(out, expect, rtol=1e-12, atol=0)


def test_heat_negative_time_rejected(two_node_graph):
    with pytest.raises(ValueError):
        GraphOperator(two_node_graph).heat_apply(np.ones(2), -0.1)


@pytest.mark.parametrize("kind", ["random-walk", "unnormalized"])
def test_heat_constant_invariant_random_walk(kind):
    g = random_geometric_graph(40, 3)
    op = GraphOperator(g, kind=kind)
    ones = np.ones(g.n)
    out = op.heat_apply(ones, 0.8)
    if kind == "random-walk":
        assert np.allclose(out, ones, atol=1e-12)
    else:
        # unnormalized flow does not fix constants, only total mass
        assert abs(out.sum() - g.n) < 1e-9


@pytest.mark.parametrize("kind", ["random-walk", "unnormalized"])
def test_heat_matches_scipy_expm(kind):
    g = random_geometric_graph(35, 4)
    op = GraphOperator(g, kind=kind)
    u = np.random.default_rng(2).standard_normal(g.n)
    t = 0.6
    ref = expm(-t * op.to_matrix()) @ u
    assert np.allclose(op.heat_apply(u, t), ref, rtol=1e-9, atol=1e-11)


def test_krylov_matches_dense():
    g = random_geometric_graph(120, 5)
    u = np.random.default_rng(3).standard_normal(g.n)
    dense = GraphOperator(g, dense_limit=2000)
    krylov = GraphOperator(g, dense_limit=10)
    for t in (0.05, 0.7, 3.0):
        a = dense.heat_apply(u, t)
        b = krylov.heat_apply(u, t, tol=1e-11)
        assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(u)


def test_krylov_batched_matrix_input():
    g = random_geometric_graph(60, 6)
    U = np.random.default_rng(4).standard_normal((g.n, 3))
    dense = GraphOperator(g, dense_limit=2000)
    krylov = GraphOperator(g, dense_limit=10)
    assert np.allclose(krylov.heat_apply(U, 0.4), dense.heat_apply(U, 0.4),
                       atol=1e-9)


def test_eigenvalues_nonnegative_both_kinds():
    for kind in ("random-walk", "unnormalized"):
        for seed in range(3):
            op = GraphOperator(random_geometric_graph(30, seed), kind=kind)
            assert op.eigenvalues().min() >= -1e-10


@pytest.mark.parametrize("kind", ["random-walk", "unnormalized"])
@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_semigroup_self_adjoint_mass_maximum(kind, lam):
    rng = np.random.default_rng(7)
    for seed in range(5):
        g = reweight_lambda(random_geometric_graph(30, 20 + seed), lam)
        op = GraphOperator(g, kind=kind)
        u = rng.standard_normal(g.n)
        v = rng.standard_normal(g.n)
        tol = 1e-10
        s, t = rng.uniform(0.05, 2.0, 2)
        # semigroup law
        a = op.heat_apply(u, s + t)
        b = op.heat_apply(op.heat_apply(u, t), s)
        assert np.linalg.norm(a - b) <= 10 * tol * np.linalg.norm(u)
        # self-adjointness in the matching inner product
        hu, hv = op.heat_apply(u, t), op.heat_apply(v, t)
        err = abs(op.inner(hu, v) - op.inner(u, hv))
        assert err <= 10 * tol * np.linalg.norm(u) * np.linalg.norm(v)
        # mass conservation
        ones = np.ones(g.n)
        assert abs(op.inner(ones, hu) - op.inner(ones, u)) <= 10 * tol * np.linalg.norm(u)
        # maximum principle
        assert hu.min() >= u.min() - 1e-10 and hu.max() <= u.max() + 1e-10
        # monotone L2 decay
        n0 = op.inner(u, u)
        n1 = op.inner(hu, hu)
        n2 = op.inner(op.heat_apply(u, 2 * t), op.heat_apply(u, 2 * t))
        assert n1 <= n0 + 1e-12 and n2 <= n1 + 1e-12


def test_laplacian_self_adjoint_and_energy_identity():
    # <L u, v> = <u, L v> and <L u, u> = 2 E(u) ties the operator to the
    # Dirichlet energy
    for seed in range(3):
        g = random_geometric_graph(25, seed)
        op = GraphOperator(g)
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(g.n)
        v = rng.standard_normal(g.n)
        assert op.inner(op.apply(u), v) == pytest.approx(op.inner(u, op.apply(v)),
                                                         rel=1e-10, abs=1e-12)
        assert op.inner(op.apply(u), u) == pytest.approx(2 * dirichlet_energy(g, u),
                                                         rel=1e-10)


@pytest.mark.parametrize("kind", ["random-walk", "unnormalized"])
def test_dissipation_inequality(kind):
    for seed in range(4):
        g = random_geometric_graph(40, 30 + seed)
        op = GraphOperator(g, kind=kind)
        u = np.random.default_rng(seed).standard_normal(g.n)
        for t in (0.1, 1.0):
            audit = dissipation_audit(op, u, t)
            assert audit["margin"] >= -1e-10 * max(1.0, audit["rhs"])


# -- infinity Laplacian -----------------------------------------------------------

def test_inf_laplacian_unit_path():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    W[1, 2] = W[2, 1] = 1.0
    g = SimilarityGraph(1.0, W)
    u = infinity_laplacian_solve(g, {0: 0.0, 2: 1.0}, tol=1e-12)
    assert u[1] == pytest.approx(0.5, abs=1e-10)


def test_inf_laplacian_weighted_path():
    # (1 - u) * 1 = 2 u at the middle vertex forces u = 1/3
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 2.0
    W[1, 2] = W[2, 1] = 1.0
    g = SimilarityGraph(1.0, W)
    u = infinity_laplacian_solve(g, {0: 0.0, 2: 1.0}, tol=1e-12)
    assert u[1] == pytest.approx(1 / 3, abs=1e-10)


def test_inf_laplacian_constant_boundary():
    g = random_geometric_graph(40, 11)
    u = infinity_laplacian_solve(g, {0: 0.7, 5: 0.7, 9: 0.7})
    assert np.allclose(u, 0.7, atol=1e-12)


def test_inf_laplacian_comparison_and_residual():
    rng = np.random.default_rng(0)
    for seed in range(6):
        g = random_geometric_graph(60, 40 + seed)
        nb = rng.integers(2, 8)
        idx = rng.choice(g.n, nb, replace=False)
        vals = rng.uniform(-1, 2, nb)
        u = infinity_laplacian_solve(g, (idx, vals), tol=1e-9)
        assert u.min() >= vals.min() - 1e-12
        assert u.max() <= vals.max() + 1e-12
        # residual check against the definition, dense arithmetic
        W = g.to_dense()
        free = np.ones(g.n, bool)
        free[idx] = False
        for i in np.where(free)[0]:
            vals_i = W[i][W[i] > 0] * (u[W[i] > 0] - u[i])
            assert abs(vals_i.max() + vals_i.min()) <= 1e-8


def test_inf_laplacian_sparse_matches_dense():
    from scipy import sparse
    g = random_geometric_graph(50, 12)
    gs = SimilarityGraph(g.epsilon, sparse.csr_matrix(g.to_dense()))
    bdy = {0: 0.0, 7: 1.0, 13: 0.4}
    a = infinity_laplacian_solve(g, bdy, tol=1e-11)
    b = infinity_laplacian_solve(gs, bdy, tol=1e-11)
    assert np.allclose(a, b, atol=1e-9)


def test_inf_laplacian_random_order_agrees():
    g = random_geometric_graph(45, 13)
    bdy = {1: 0.0, 2: 1.0}
    a = infinity_laplacian_solve(g, bdy, tol=1e-11)
    b = infinity_laplacian_solve(g, bdy, tol=1e-11, order="random", seed=5)
    assert np.allclose(a, b, atol=1e-9)


def test_inf_laplacian_empty_boundary_rejected():
    g = random_geometric_graph(10, 14)
    with pytest.raises(ValueError):
        infinity_laplacian_solve(g, {})


def test_inf_laplacian_isolated_unlabeled_vertex():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    # vertex 2 isolated: constructing the graph itself refuses it
    with pytest.raises(IsolatedVertexError):
        SimilarityGraph(1.0, W)


def test_inf_laplacian_convergence_error_carries_residual():
    g = random_geometric_graph(80, 15)
    with pytest.raises(ConvergenceError) as err:
        infinity_laplacian_solve(g, {0: 0.0, 1: 1.0}, tol=1e-13, max_iter=1)
    assert err.value.residual is not None and err.value.residual > 1e-13
