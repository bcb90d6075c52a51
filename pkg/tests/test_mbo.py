import itertools

import numpy as np
import pytest
from scipy.linalg import expm

from graphmbo.errors import SigmaValidationError
from graphmbo.kernel_graph import SimilarityGraph
from graphmbo.mbo import (
    ForcingField,
    LabelField,
    forced_energy,
    forcing_from_labels,
    lipschitz_forcing,
    mbo_run,
    mbo_step,
    movement_functional,
    thresholding_energy,
    uniform_sigma,
    validate_sigma,
)
from graphmbo.operators import GraphOperator

from conftest import random_geometric_graph, random_sigma


# -- surface tension ---------------------------------------------------------

def test_sigma_all_ones_valid():
    for P in (2, 3, 5):
        st = uniform_sigma(P)
        assert st.P == P


def test_sigma_two_phase_valid():
    st = validate_sigma(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert st.P == 2


def test_sigma_triangle_violation_witnessed():
    s = np.array([[0.0, 5.0, 1.0], [5.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    with pytest.raises(SigmaValidationError) as err:
        validate_sigma(s)
    assert any("triangle" in v for v in err.value.violations)


def test_sigma_asymmetric_and_diagonal_witnessed():
    s = np.array([[0.5, 1.0], [2.0, 0.0]])
    with pytest.raises(SigmaValidationError) as err:
        validate_sigma(s)
    msgs = " ".join(err.value.violations)
    assert "symmetric" in msgs and "diagonal" in msgs


def test_sigma_not_cnd_rejected():
    # equality sigma = J - I is CND; pushing one entry far above breaks it
    s = np.ones((3, 3)) - np.eye(3)
    s[0, 1] = s[1, 0] = 10.0  # still violates triangle too, but check CND message
    with pytest.raises(SigmaValidationError) as err:
        validate_sigma(s)
    assert any("semidefinite" in v for v in err.value.violations)


def test_random_sigma_families_valid():
    for seed in range(9):
        validate_sigma(random_sigma(4, seed))


# -- label fields ---------------------------------------------------------------

def test_label_field_round_trip():
    idx = np.array([0, 2, 1, 1, 0])
    f = LabelField.from_indices(idx, 3)
    assert f.mode == "hard"
    assert np.array_equal(f.to_indices(), idx)


def test_label_field_rejects_bad_rows():
    with pytest.raises(ValueError):
        LabelField(np.array([[0.5, 0.6], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        LabelField(np.array([[0.5, 0.5], [1.0, 0.0]]), mode="hard")


def test_soft_label_field_accepted():
    f = LabelField(np.array([[0.25, 0.75], [0.5, 0.5]]), mode="soft")
    assert f.P == 2


# -- energies ---------------------------------------------------------------------

@pytest.fixture
def two_node_op(two_node_graph):
    return GraphOperator(two_node_graph)


def test_thresholding_energy_single_cluster_zero(two_node_op):
    chi = LabelField.from_indices(np.zeros(2, dtype=int), 2)
    rep = thresholding_energy(two_node_op, chi, uniform_sigma(2), 0.3)
    assert rep.total == pytest.approx(0.0, abs=1e-14)


def test_thresholding_energy_two_node_closed_form(two_node_op):
    # each node its own cluster: E = (1 - e^{-2h}) / (4 sqrt(h))
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    for h in (0.25, 0.1, 1.0):
        rep = thresholding_energy(two_node_op, chi, uniform_sigma(2), h)
        assert rep.total == pytest.approx((1 - np.exp(-2 * h)) / (4 * np.sqrt(h)),
                                          rel=1e-12)
    rep = thresholding_energy(two_node_op, chi, uniform_sigma(2), 0.25)
    assert rep.total == pytest.approx(0.196735, abs=5e-7)


def test_thresholding_energy_linear_in_sigma(two_node_op):
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    st1 = uniform_sigma(2)
    st2 = validate_sigma(2.0 * st1.sigma)
    a = thresholding_energy(two_node_op, chi, st1, 0.4).total
    b = thresholding_energy(two_node_op, chi, st2, 0.4).total
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_forced_energy_zero_forcing_matches(two_node_op):
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    f0 = ForcingField(values=np.zeros((2, 2)), gamma=1.0)
    a = thresholding_energy(two_node_op, chi, uniform_sigma(2), 0.3)
    b = forced_energy(two_node_op, chi, uniform_sigma(2), 0.3, f0)
    assert b.total == a.total and b.forcing_term == 0.0


def test_forced_energy_two_node_forcing_term(two_node_op):
    # f^0 = (1,1), u^0 = (1,0), degrees 1/2: <f,u> = (1/2)(1/2) = 1/4
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    f = ForcingField(values=np.array([[1.0, 0.0], [1.0, 0.0]]), gamma=1.0)
    rep = forced_energy(two_node_op, chi, uniform_sigma(2), 0.25, f)
    assert rep.forcing_term == pytest.approx(0.25, abs=1e-14)
    base = thresholding_energy(two_node_op, chi, uniform_sigma(2), 0.25).total
    assert rep.total == pytest.approx(base - 0.25, rel=1e-12)


def test_forced_energy_shift_linearity():
    g = random_geometric_graph(20, 0)
    op = GraphOperator(g)
    rng = np.random.default_rng(1)
    chi = LabelField.from_indices(rng.integers(0, 3, g.n), 3)
    f1 = rng.standard_normal((g.n, 3))
    c = rng.standard_normal((g.n, 3))
    st = uniform_sigma(3)
    a = forced_energy(op, chi, st, 0.2, ForcingField(values=f1, gamma=1.0))
    b = forced_energy(op, chi, st, 0.2, ForcingField(values=f1 + c, gamma=1.0))
    shift = sum(
        np.dot(g.degrees * c[:, m], chi.values[:, m]) / g.n for m in range(3)
    )
    assert b.total == pytest.approx(a.total - shift, rel=1e-10, abs=1e-12)


# -- MBO stepping -------------------------------------------------------------------

def test_mbo_step_single_cluster_fixed(two_node_op):
    chi = LabelField.from_indices(np.zeros(2, dtype=int), 2)
    out = mbo_step(two_node_op, chi, uniform_sigma(2), 0.5)
    assert out == chi


def test_mbo_step_two_node_fixed_point(two_node_op):
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    for h in (0.05, 0.5, 2.0):
        assert mbo_step(two_node_op, chi, uniform_sigma(2), h) == chi


def test_mbo_step_forcing_pins_labels():
    # gamma sqrt(h) > 1 pins every labeled vertex regardless of geometry
    g = random_geometric_graph(40, 2)
    op = GraphOperator(g)
    rng = np.random.default_rng(3)
    chi = LabelField.from_indices(rng.integers(0, 2, g.n), 2)
    h = 0.2
    gamma = 1.5 / np.sqrt(h)
    labeled = rng.choice(g.n, 12, replace=False)
    labels = rng.integers(0, 2, labeled.size)
    forcing = forcing_from_labels((labeled, labels), gamma, g.n, 2)
    # force the initial labeling to disagree on labeled vertices
    vals = chi.to_indices()
    vals[labeled] = 1 - labels
    chi = LabelField.from_indices(vals, 2)
    out = mbo_step(op, chi, uniform_sigma(2), h, forcing=forcing)
    assert np.array_equal(out.to_indices()[labeled], labels)


def test_mbo_step_permutation_equivariance():
    g = random_geometric_graph(30, 4)
    op = GraphOperator(g)
    rng = np.random.default_rng(5)
    P = 3
    chi = LabelField.from_indices(rng.integers(0, P, g.n), P)
    sig = validate_sigma(random_sigma(P, 1))
    perm = np.array([2, 0, 1])
    out = mbo_step(op, chi, sig, 0.3).to_indices()
    chi_p = LabelField.from_indices(perm[chi.to_indices()], P)
    sig_p = validate_sigma(sig.sigma[np.ix_(np.argsort(perm), np.argsort(perm))])
    out_p = mbo_step(op, chi_p, sig_p, 0.3).to_indices()
    assert np.array_equal(out_p, perm[out])


def test_diffusion_preserves_simplex():
    g = random_geometric_graph(30, 6)
    op = GraphOperator(g)
    rng = np.random.default_rng(7)
    soft = rng.random((g.n, 4))
    soft /= soft.sum(axis=1, keepdims=True)
    out = op.heat_apply(soft, 0.7)
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-10
    assert out.min() >= -1e-10 and out.max() <= 1 + 1e-10


def test_mbo_run_single_step_equals_step():
    g = random_geometric_graph(25, 8)
    op = GraphOperator(g)
    rng = np.random.default_rng(9)
    chi = LabelField.from_indices(rng.integers(0, 2, g.n), 2)
    st = uniform_sigma(2)
    traj = mbo_run(op, chi, st, 0.05, 1)
    direct = mbo_step(op, chi, st, 0.05)
    assert traj.fields[-1] == direct or (traj.stabilized and direct == chi)


def test_mbo_run_fixed_point_stops_immediately(two_node_op):
    chi = LabelField.from_indices(np.array([0, 1]), 2)
    traj = mbo_run(two_node_op, chi, uniform_sigma(2), 0.5, 10)
    assert traj.stabilized and traj.stop_index == 0 and len(traj.fields) == 1


def test_mbo_run_energy_nonincreasing_forced_and_unforced():
    rng = np.random.default_rng(17)
    for seed in range(6):
        g = random_geometric_graph(60, 50 + seed, eps=0.5)
        op = GraphOperator(g)
        P = int(rng.integers(2, 5))
        st = validate_sigma(random_sigma(P, seed))
        chi = LabelField.from_indices(rng.integers(0, P, g.n), P)
        h = g.epsilon**2 * rng.uniform(1.0, 4.0)
        forcing = None
        if seed % 2:
            labeled = rng.choice(g.n, 5, replace=False)
            forcing = forcing_from_labels(
                (labeled, rng.integers(0, P, 5)), 1.0, g.n, P
            )
        traj = mbo_run(op, chi, st, h, 12, forcing=forcing)
        totals = [r.total for r in traj.reports]
        assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))


# -- minimizing movements ---------------------------------------------------------

def _movement_oracle(op, labels, chi, sigma, h):
    """Direct evaluation with an independent propagator (scipy expm)."""
    S = expm(-h * op.to_matrix())
    d = op.graph.degrees
    n = op.n

    def ip_matrix(A, B):
        return (A * d[:, None]).T @ (S @ B) / n

    U = labels.values
    C = chi.values
    e_term = (sigma.sigma * ip_matrix(U, U)).sum()
    m_term = (sigma.sigma * ip_matrix(U - C, U - C)).sum()
    return (e_term - m_term) / np.sqrt(h)


def test_movement_functional_at_previous_state():
    g = random_geometric_graph(15, 10)
    op = GraphOperator(g)
    rng = np.random.default_rng(11)
    chi = LabelField.from_indices(rng.integers(0, 2, g.n), 2)
    st = uniform_sigma(2)
    mf = movement_functional(op, chi, chi, st, 0.2)
    e = thresholding_energy(op, chi, st, 0.2).total
    assert mf == pytest.approx(e, rel=1e-12)


def test_movement_functional_decreases_along_step():
    for seed in range(5):
        g = random_geometric_graph(40, 60 + seed, eps=0.5)
        op = GraphOperator(g)
        rng = np.random.default_rng(seed)
        P = 3
        st = validate_sigma(random_sigma(P, seed))
        chi = LabelField.from_indices(rng.integers(0, P, g.n), P)
        h = 0.3
        out = mbo_step(op, chi, st, h)
        assert movement_functional(op, out, chi, st, h) <= (
            movement_functional(op, chi, chi, st, h) + 1e-10
        )


def test_movement_functional_matches_oracle():
    g = random_geometric_graph(12, 12)
    op = GraphOperator(g)
    rng = np.random.default_rng(13)
    st = validate_sigma(random_sigma(3, 2))
    chi = LabelField.from_indices(rng.integers(0, 3, g.n), 3)
    u = LabelField.from_indices(rng.integers(0, 3, g.n), 3)
    a = movement_functional(op, u, chi, st, 0.4)
    b = _movement_oracle(op, u, chi, st, 0.4)
    assert a == pytest.approx(b, rel=1e-9)


def test_mbo_step_is_brute_force_argmin():
    # exhaustive check over all P^n hard labelings on small graphs
    rng = np.random.default_rng(23)
    for seed in range(4):
        n = int(rng.integers(4, 8))
        P = int(rng.integers(2, 4))
        g = random_geometric_graph(n, 70 + seed, eps=0.8)
        op = GraphOperator(g)
        st = validate_sigma(random_sigma(P, seed))
        chi = LabelField.from_indices(rng.integers(0, P, g.n), P)
        h = 0.4
        out = mbo_step(op, chi, st, h)
        best_val = np.inf
        best = None
        for assign in itertools.product(range(P), repeat=g.n):
            u = LabelField.from_indices(np.array(assign), P)
            val = _movement_oracle(op, u, chi, st, h)
            if val < best_val - 1e-12:
                best_val = val
                best = assign
        assert _movement_oracle(op, out, chi, st, h) <= best_val + 1e-9
        assert np.array_equal(out.to_indices(), np.array(best))


# -- forcing construction --------------------------------------------------------

def test_forcing_from_labels_signs():
    f = forcing_from_labels({0: 1, 3: 0}, 2.0, 5, 2)
    # labeled class gets +gamma, the competitor -gamma; scalar view
    # (f^1 - f^0)/2 matches -gamma (1 - 2 u0)
    assert f.values[0, 1] == 2.0 and f.values[0, 0] == -2.0
    assert f.values[3, 0] == 2.0 and f.values[3, 1] == -2.0
    assert (f.values[0, 1] - f.values[0, 0]) / 2 == pytest.approx(2.0)
    assert (f.values[3, 1] - f.values[3, 0]) / 2 == pytest.approx(-2.0)
    assert np.all(f.values[[1, 2, 4]] == 0.0)


def test_forcing_from_labels_class_out_of_range():
    with pytest.raises(ValueError):
        forcing_from_labels({0: 5}, 1.0, 4, 2)


def test_lipschitz_forcing_three_path():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    W[1, 2] = W[2, 1] = 1.0
    g = SimilarityGraph(1.0, W)
    f = lipschitz_forcing(g, {0: 0.0, 2: 1.0}, 1.0)
    assert np.allclose(f.extension, [0.0, 0.5, 1.0], atol=1e-9)
    assert np.allclose(f.values[:, 1], [-1.0, 0.0, 1.0], atol=1e-9)
    assert np.allclose(f.values[:, 0], [1.0, 0.0, -1.0], atol=1e-9)


def test_lipschitz_forcing_constant_labels():
    g = random_geometric_graph(30, 14)
    f = lipschitz_forcing(g, {0: 1.0, 4: 1.0}, 0.8)
    assert np.allclose(f.extension, 1.0, atol=1e-10)
    assert np.allclose(f.values[:, 1], 0.8, atol=1e-9)


def test_lipschitz_forcing_gamma_zero():
    g = random_geometric_graph(20, 15)
    f = lipschitz_forcing(g, {0: 0.0, 3: 1.0}, 0.0)
    assert np.all(f.values == 0.0)
