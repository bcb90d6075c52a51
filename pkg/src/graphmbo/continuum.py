"""Manifold samplers, TL^2 comparison, and the desk-scale limit experiments.

The experiments probe, at laptop scale, the large-data behavior of the graph
constructions: degree concentration toward C1 * rho, Dirichlet-energy
consistency against a closed-form continuum value, Cauchy-type stability of
heated fields and of one MBO step across graph sizes, and the step-size
monotonicity of the thresholding energy.  Everything is deterministic given
(seed, grid, tolerances); per-task RNG streams derive from the master seed by
fixed integer offsets.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import DimensionError, MethodError, UnsupportedDensityError
from .kernel_graph import PointCloud, build_graph, epsilon_scale, kernel_constants
from .mbo import LabelField, mbo_step, thresholding_energy, uniform_sigma
from .operators import GraphOperator, dirichlet_energy

__all__ = [
    "DensityModel",
    "uniform_sphere",
    "flat_torus",
    "sample_cloud",
    "TransportPlan",
    "tl2_distance",
    "greedy_plan",
    "SweepResult",
    "degree_convergence_experiment",
    "dirichlet_consistency_experiment",
    "heat_consistency_experiment",
    "one_step_consistency_experiment",
    "monotonicity_sweep",
    "relaxed_monotonicity_audit",
]


@dataclass(frozen=True)
class DensityModel:
    """Sampling density on a manifold.

    ``uniform-sphere`` is the uniform distribution on the unit sphere in R^3
    (k = 2, rho = 1/(4 pi)); ``uniform-flat-torus`` is uniform on [0,1)^k with
    the quotient metric (rho = 1).  Custom models carry a density evaluator
    and, optionally, a sampler; without a sampler they can only be used where
    densities are evaluated (degree experiments).
    """

    kind: str
    k: int
    rho: object = None      # callable points -> densities (custom only)
    sampler: object = None  # callable (n, seed) -> points  (custom only)
    normalization_error: float = 0.0

    def rho_values(self, points):
        if self.kind == "uniform-sphere":
            return np.full(points.shape[0], 1.0 / (4.0 * np.pi))
        if self.kind == "uniform-flat-torus":
            return np.ones(points.shape[0])
        if self.rho is None:
            raise UnsupportedDensityError("custom model lacks a density evaluator")
        return np.asarray(self.rho(points), dtype=float)


def uniform_sphere():
    return DensityModel(kind="uniform-sphere", k=2)


def flat_torus(k=2):
    return DensityModel(kind="uniform-flat-torus", k=k)


def sample_cloud(model, n, seed):
    """Draw n iid points from the density model, reproducibly.

    Sphere sampling normalizes Gaussian vectors; the flat torus draws uniform
    coordinates.  Clouds drawn with the same seed are nested: the first n
    points of a larger draw coincide bitwise with a smaller draw.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    if model.kind == "uniform-sphere":
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return PointCloud(points=v, k=2, density="uniform-sphere", seed=seed)
    if model.kind == "uniform-flat-torus":
        pts = rng.random((n, model.k))
        return PointCloud(points=pts, k=model.k, density="uniform-flat-torus",
                          seed=seed)
    if model.sampler is None:
        raise UnsupportedDensityError(
            "custom density has no sampler; it can only be evaluated"
        )
    pts = np.asarray(model.sampler(n, seed), dtype=float)
    return PointCloud(points=pts, k=model.k, density="custom", seed=seed,
                      rho=model.rho)


# -- geodesic distances -----------------------------------------------------------


def _geodesic_matrix(A, B, density_kind):
    """Pairwise geodesic distances between coordinate blocks.

    Arc length on the sphere, quotient metric on the torus, ambient Euclidean
    otherwise (a lower bound on the geodesic; flagged by the caller).
    """
    if density_kind == "uniform-sphere":
        dots = np.clip(A @ B.T, -1.0, 1.0)
        return np.arccos(dots)
    if density_kind == "uniform-flat-torus":
        diff = np.abs(A[:, None, :] - B[None, :, :])
        diff = np.minimum(diff, 1.0 - diff)
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class TransportPlan:
    """A matching between two clouds with its TL^2 cost split.

    ``cost_distance_sq`` and ``cost_function_sq`` are the mean squared ground
    distance and function discrepancy over matched pairs; the TL^2 value is
    the square root of their sum.  ``geodesic_exact`` is False when ambient
    Euclidean distances stand in for unknown geodesics (then the value is a
    lower bound on the ground metric side).
    """

    source_indices: np.ndarray
    target_indices: np.ndarray
    cost_distance_sq: float
    cost_function_sq: float
    method: str
    metric: str
    geodesic_exact: bool

    @property
    def value(self):
        return float(np.sqrt(self.cost_distance_sq + self.cost_function_sq))


def _plan_metric(cloud_a, cloud_b):
    if cloud_a.density != cloud_b.density:
        raise MethodError("clouds live on different models; no common metric")
    kind = cloud_a.density
    exact = kind in ("uniform-sphere", "uniform-flat-torus")
    return kind, exact


def tl2_distance(cloud_a, field_a, cloud_b, field_b, method="exact"):
    """Upper bound on the TL^2 distance between (cloud_a, field_a), (cloud_b, field_b).

    The distance couples ground distance and function discrepancy,

        ( (1/n) sum over matched pairs [ d(x, y)^2 + |u(x) - u(y)|^2 ] )^{1/2},

    minimized over a matching family: ``exact`` solves the optimal assignment
    (equal sizes up to 512; the optimal coupling of uniform empirical measures
    is a permutation, so this is the true distance), ``greedy`` matches
    mutual nearest neighbors first and the remainder by nearest-available
    (equal sizes), or maps every point of the larger cloud to its nearest
    point in the smaller cloud (unequal sizes; an assignment-style surrogate,
    not a coupling of the uniform measures).

    Returns
    -------
    (value, TransportPlan)
    """
    fa = np.asarray(field_a, dtype=float)
    fb = np.asarray(field_b, dtype=float)
    na, nb = cloud_a.n, cloud_b.n
    if fa.shape[0] != na or fb.shape[0] != nb:
        raise DimensionError("fields must match their clouds")
    kind, exact_geo = _plan_metric(cloud_a, cloud_b)

    if method == "exact":
        if na != nb:
            raise MethodError("exact method requires equal cloud sizes")
        if na > 512:
            raise MethodError("exact method limited to 512 points")
        D = _geodesic_matrix(cloud_a.points, cloud_b.points, kind)
        cost = D**2 + (fa[:, None] - fb[None, :]) ** 2
        rows, cols = linear_sum_assignment(cost)
        plan = _finish_plan(rows, cols, D, fa, fb, "exact", kind, exact_geo)
    elif method == "greedy":
        plan = greedy_plan(cloud_a, cloud_b, fa, fb)
    else:
        raise MethodError(f"unknown method {method!r}")
    return plan.value, plan


def _finish_plan(rows, cols, D, fa, fb, method, kind, exact_geo):
    dsq = float(np.mean(D[rows, cols] ** 2))
    fsq = float(np.mean((fa[rows] - fb[cols]) ** 2))
    return TransportPlan(
        source_indices=np.asarray(rows), target_indices=np.asarray(cols),
        cost_distance_sq=dsq, cost_function_sq=fsq,
        method=method, metric=kind, geodesic_exact=exact_geo,
    )


def greedy_plan(cloud_a, cloud_b, field_a=None, field_b=None):
    """Greedy matching between clouds; spatial-only when fields are omitted.

    Equal sizes: one mutual-nearest-neighbor pass on the pair cost, then the
    remaining sources (ascending index) take their nearest remaining target.
    Unequal sizes: every point of the larger cloud maps to its nearest point
    of the smaller cloud (targets reused).
    """
    kind, exact_geo = _plan_metric(cloud_a, cloud_b)
    fa = None if field_a is None else np.asarray(field_a, dtype=float)
    fb = None if field_b is None else np.asarray(field_b, dtype=float)
    na, nb = cloud_a.n, cloud_b.n

    if na != nb:
        # larger cloud is the source; nearest-target assignment
        if na >= nb:
            A, B, ffa, ffb, swapped = cloud_a, cloud_b, fa, fb, False
        else:
            A, B, ffa, ffb, swapped = cloud_b, cloud_a, fb, fa, True
        D = _geodesic_matrix(A.points, B.points, kind)
        cost = D**2
        if ffa is not None:
            cost = cost + (ffa[:, None] - ffb[None, :]) ** 2
        cols = np.argmin(cost, axis=1)
        rows = np.arange(A.n)
        if ffa is None:
            ffa = np.zeros(A.n)
            ffb = np.zeros(B.n)
        plan = _finish_plan(rows, cols, D, ffa, ffb, "greedy", kind, exact_geo)
        if swapped:
            plan = TransportPlan(
                source_indices=plan.target_indices,
                target_indices=plan.source_indices,
                cost_distance_sq=plan.cost_distance_sq,
                cost_function_sq=plan.cost_function_sq,
                method=plan.method, metric=plan.metric,
                geodesic_exact=plan.geodesic_exact,
            )
        return plan

    D = _geodesic_matrix(cloud_a.points, cloud_b.points, kind)
    cost = D**2
    if fa is not None:
        cost = cost + (fa[:, None] - fb[None, :]) ** 2
    n = na
    best_t = np.argmin(cost, axis=1)
    best_s = np.argmin(cost, axis=0)
    mutual = best_s[best_t] == np.arange(n)
    rows = list(np.nonzero(mutual)[0])
    cols = list(best_t[mutual])
    taken = np.zeros(n, dtype=bool)
    taken[cols] = True
    big = cost.max() + 1.0
    for i in np.nonzero(~mutual)[0]:
        c = np.where(taken, big, cost[i])
        j = int(np.argmin(c))
        rows.append(i)
        cols.append(j)
        taken[j] = True
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if fa is None:
        fa = np.zeros(n)
        fb = np.zeros(n)
    return _finish_plan(rows, cols, D, fa, fb, "greedy", kind, exact_geo)


# -- sweep results ----------------------------------------------------------------


@dataclass
class SweepResult:
    """Observable values over a parameter grid, one row per (grid point, seed)."""

    experiment: str
    grid: np.ndarray
    seeds: tuple
    rows: list  # (grid_value, seed, observable)
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.size > 1 and not (np.all(np.diff(g) > 0) or np.all(np.diff(g) < 0)):
            raise ValueError("parameter grid must be strictly monotone")
        self.grid = g

    def observables(self, grid_value=None, seed=None):
        out = [
            obs for (g, s, obs) in self.rows
            if (grid_value is None or g == grid_value) and (seed is None or s == seed)
        ]
        return np.asarray(out)

    def median_curve(self):
        return np.asarray([np.median(self.observables(g)) for g in self.grid])


def _stream(master_seed, offset):
    # fixed-offset per-task RNG stream derived from the master seed
    return np.random.default_rng([int(master_seed), int(offset)])


# -- experiments ------------------------------------------------------------------


def degree_convergence_experiment(model, profile, n_grid, seeds,
                                  constants_tol=1e-10):
    """Record max_i |d_i - C1 rho(X_i)| for graphs built at eps(n).

    The observable is the sup-norm degree discrepancy at the sample points
    (identity pairing); it decays as n grows for admissible eps(n).
    """
    consts = kernel_constants(profile, tol=constants_tol)
    rows = []
    for n in n_grid:
        eps = epsilon_scale(n, model.k)
        for seed in seeds:
            cloud = sample_cloud(model, n, seed)
            graph = build_graph(cloud, eps, profile)
            target = consts.C1 * model.rho_values(cloud.points)
            rows.append((float(n), int(seed), float(np.abs(graph.degrees - target).max())))
    return SweepResult(
        experiment="degrees", grid=np.asarray(n_grid, dtype=float),
        seeds=tuple(seeds), rows=rows,
        metadata={"epsilon_rule": "(log n / n)^(1/(k+3))", "C1": consts.C1,
                  "kernel": profile.as_dict(), "model": model.kind},
    )


def dirichlet_consistency_experiment(model, profile, test_function, oracle,
                                     n_grid, seeds):
    """Graph Dirichlet energy of a restricted smooth function vs. its continuum value.

    ``oracle`` is the closed-form limit (C2/2) * (1/2) int |grad u|^2 rho^2 dVol,
    supplied by the caller; the experiment records E_n(u|V_n).
    """
    rows = []
    for n in n_grid:
        eps = epsilon_scale(n, model.k)
        for seed in seeds:
            cloud = sample_cloud(model, n, seed)
            graph = build_graph(cloud, eps, profile)
            u = np.asarray(test_function(cloud.points), dtype=float)
            rows.append((float(n), int(seed), dirichlet_energy(graph, u)))
    return SweepResult(
        experiment="dirichlet", grid=np.asarray(n_grid, dtype=float),
        seeds=tuple(seeds), rows=rows,
        metadata={"oracle": float(oracle), "kernel": profile.as_dict(),
                  "model": model.kind},
    )


def heat_consistency_experiment(model, profile, initial_function, t, n_grid,
                                seeds, heat_tol=1e-8, dense_limit=2000):
    """TL^2 distance between heated fields on consecutive graph sizes.

    For each seed the clouds are nested draws from one stream; the observable
    at grid point n' is the greedy TL^2 distance between e^{-tL_n} u|_{V_n}
    and e^{-tL_{n'}} u|_{V_{n'}} for the previous size n.  A Cauchy-sequence
    proxy for the common large-n limit.
    """
    if len(n_grid) < 2:
        raise ValueError("need at least two grid sizes")
    rows = []
    for seed in seeds:
        prev = None
        for n in n_grid:
            cloud = sample_cloud(model, n, seed)
            eps = epsilon_scale(n, model.k)
            graph = build_graph(cloud, eps, profile)
            op = GraphOperator(graph, dense_limit=dense_limit)
            u0 = np.asarray(initial_function(cloud.points), dtype=float)
            ut = op.heat_apply(u0, t, tol=heat_tol)
            if prev is not None:
                pcloud, pfield = prev
                plan = greedy_plan(cloud, pcloud, ut, pfield)
                rows.append((float(n), int(seed), plan.value))
            prev = (cloud, ut)
    return SweepResult(
        experiment="heat-consistency", grid=np.asarray(n_grid[1:], dtype=float),
        seeds=tuple(seeds), rows=rows,
        metadata={"t": float(t), "kernel": profile.as_dict(), "model": model.kind,
                  "pairs": [[int(a), int(b)] for a, b in zip(n_grid[:-1], n_grid[1:])]},
    )


def one_step_consistency_experiment(model, profile, partition_function, h_rule,
                                    n_grid, seeds, heat_tol=1e-8,
                                    dense_limit=2000):
    """Label agreement of one MBO step across consecutive graph sizes.

    ``partition_function`` maps points to initial class indices;
    ``h_rule`` is either a fixed step size or the string ``"eps2"`` for
    h = eps(n)^2 per graph.  Matching between sizes is spatial-nearest
    (label-blind); the observable is the fraction of matched pairs whose
    output labels agree.
    """
    if len(n_grid) < 2:
        raise ValueError("need at least two grid sizes")
    rows = []
    for seed in seeds:
        prev = None
        for n in n_grid:
            cloud = sample_cloud(model, n, seed)
            eps = epsilon_scale(n, model.k)
            graph = build_graph(cloud, eps, profile)
            op = GraphOperator(graph, dense_limit=dense_limit)
            init_idx = np.asarray(partition_function(cloud.points), dtype=int)
            P = max(int(init_idx.max()) + 1, 2)
            chi = LabelField.from_indices(init_idx, P)
            h = eps**2 if h_rule == "eps2" else float(h_rule)
            out = mbo_step(op, chi, uniform_sigma(P), h, heat_tol=heat_tol)
            lab = out.to_indices()
            if prev is not None:
                pcloud, plab = prev
                plan = greedy_plan(cloud, pcloud)  # spatial matching only
                agree = float(
                    np.mean(lab[plan.source_indices] == plab[plan.target_indices])
                )
                rows.append((float(n), int(seed), agree))
            prev = (cloud, lab)
    return SweepResult(
        experiment="one-step-consistency", grid=np.asarray(n_grid[1:], dtype=float),
        seeds=tuple(seeds), rows=rows,
        metadata={"h_rule": str(h_rule), "kernel": profile.as_dict(),
                  "model": model.kind},
    )


def monotonicity_sweep(model, profile, n, seed, j_range=range(-5, 5),
                       dense_limit=2000):
    """Thresholding energy of a random half/half two-class field over h = 2^j eps^2.

    Samples the model, builds the graph at eps(n), draws a hard two-class
    field with exactly floor(n/2) ones (stream offset 1 from the master
    seed), and evaluates the two-phase thresholding energy on the default
    h grid 2^{-5} eps^2 ... 2^4 eps^2.
    """
    cloud = sample_cloud(model, n, seed)
    eps = epsilon_scale(n, model.k)
    graph = build_graph(cloud, eps, profile)
    op = GraphOperator(graph, dense_limit=dense_limit)
    rng = _stream(seed, 1)
    ones = rng.choice(n, n // 2, replace=False)
    idx = np.zeros(n, dtype=int)
    idx[ones] = 1
    chi = LabelField.from_indices(idx, 2)
    sigma = uniform_sigma(2)
    js = list(j_range)
    hs = [2.0**j * eps**2 for j in js]
    rows = []
    for h in hs:
        rep = thresholding_energy(op, chi, sigma, h)
        rows.append((float(h), int(seed), rep.total))
    return SweepResult(
        experiment="monotonicity", grid=np.asarray(hs), seeds=(int(seed),),
        rows=rows,
        metadata={"n": int(n), "epsilon": float(eps), "j_range": js,
                  "kernel": profile.as_dict(), "model": model.kind},
    )


def relaxed_monotonicity_audit(sweep, g, f, z):
    """Residuals of the relaxed monotonicity ansatz on a sweep's energy curve.

    For every ordered pair h <= h_tilde of sweep grid points, reports

        residual = E(h_tilde) - [ g(h) E(h) + f(h_tilde) E(h) + z(h_tilde) ].

    Residuals all <= 0 exactly when the candidate (g, f, z) family satisfies
    the relaxed inequality on this sample; g = 1, f = z = 0 recovers plain
    monotonicity residuals.

    Returns
    -------
    list of dict rows with keys seed, h, h_tilde, E_h, E_h_tilde, residual.
    """
    out = []
    for seed in sweep.seeds:
        hs = sweep.grid
        E = {h: float(sweep.observables(h, seed)[0]) for h in hs}
        for i, h in enumerate(hs):
            for ht in hs[i:]:
                resid = E[ht] - (g(h) * E[h] + f(ht) * E[h] + z(ht))
                out.append({
                    "seed": int(seed), "h": float(h), "h_tilde": float(ht),
                    "E_h": E[h], "E_h_tilde": E[ht], "residual": float(resid),
                })
    return out
