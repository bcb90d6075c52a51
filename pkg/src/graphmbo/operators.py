"""Graph calculus: inner products, Laplacians, heat semigroup, Dirichlet energy.

Two Laplacian kinds are supported on a SimilarityGraph:

    random-walk:   L = eps^{-2} (I - (1/n) D^{-1} W)
    unnormalized:  L = eps^{-2} (D - (1/n) W)

The random-walk kind is self-adjoint under the degree-weighted vertex inner
product (1/n) sum_i d_i u_i v_i, the unnormalized kind under the plain product
(1/n) sum_i u_i v_i.  Heat-semigroup action e^{-tL} u is computed through the
degree-symmetrization D^{1/2} L D^{-1/2}: dense symmetric eigendecomposition
(cached) up to ``dense_limit`` vertices, a Lanczos exponential action beyond.
"""

import numpy as np
import numba
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceError, DimensionError, IsolatedVertexError, ToleranceError

__all__ = [
    "GraphOperator",
    "vertex_inner",
    "dirichlet_energy",
    "heat_apply",
    "infinity_laplacian_solve",
    "dissipation_audit",
]

RANDOM_WALK = "random-walk"
UNNORMALIZED = "unnormalized"


def vertex_inner(graph, u, v, weighted=True):
    """Vertex inner product (1/n) sum_i d_i u_i v_i (or unweighted with d_i = 1).

    The weighted form is the one the random-walk Laplacian is self-adjoint
    under; the unweighted form pairs with the unnormalized Laplacian.
    """
    u = graph.check_vector(u)
    v = graph.check_vector(v)
    if weighted:
        return float(np.dot(graph.degrees * u, v) / graph.n)
    return float(np.dot(u, v) / graph.n)


def dirichlet_energy(graph, u):
    """Graph Dirichlet energy E(u) = (1/(4 n^2 eps^2)) sum_ij w_ij (u_j - u_i)^2.

    This is half the squared edge norm of the graph gradient
    (grad u)_ij = (w_ij/eps)(u_j - u_i) under the edge inner product
    <F, G> = (1/(2 n^2)) sum_{w_ij != 0} F_ij G_ij / w_ij.
    """
    u = graph.check_vector(u)
    row = graph.row_sums()
    quad = float(np.dot(row * u, u) - np.dot(u, graph.matvec(u)))
    # sum_ij w_ij (u_i - u_j)^2 = 2 * quad
    return max(quad, 0.0) / (2.0 * graph.n**2 * graph.epsilon**2)


class GraphOperator:
    """A Laplacian bound to a similarity graph, exposing heat-semigroup action.

    Parameters
    ----------
    graph : SimilarityGraph
    kind : str
        ``random-walk`` or ``unnormalized``.
    dense_limit : int
        Up to this many vertices the symmetrized operator is eigendecomposed
        once and cached; larger graphs use a Lanczos exponential action per
        heat solve.
    """

    def __init__(self, graph, kind=RANDOM_WALK, dense_limit=2000):
        if kind not in (RANDOM_WALK, UNNORMALIZED):
            raise ValueError(f"unknown Laplacian kind {kind!r}")
        self.graph = graph
        self.kind = kind
        self.epsilon = graph.epsilon
        self.dense_limit = dense_limit
        self._spectral = None
        d = graph.degrees
        self._sqrt_d = np.sqrt(d)
        self._inv_sqrt_d = 1.0 / self._sqrt_d

    @property
    def n(self):
        return self.graph.n

    @property
    def weighted_inner(self):
        return self.kind == RANDOM_WALK

    def inner(self, u, v):
        """Vertex inner product matching this operator's kind."""
        return vertex_inner(self.graph, u, v, weighted=self.weighted_inner)

    def norm(self, u):
        return np.sqrt(max(self.inner(u, u), 0.0))

    def apply(self, v):
        """Apply the Laplacian to a vector (or to each column of a matrix)."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError("vector length does not match graph")
        g = self.graph
        Wv = g.matvec(v)
        d = g.degrees if v.ndim == 1 else g.degrees[:, None]
        if self.kind == RANDOM_WALK:
            out = v - Wv / (g.n * d)
        else:
            out = d * v - Wv / g.n
        return out / self.epsilon**2

    def to_matrix(self):
        """Dense Laplacian matrix (small graphs; mainly for tests)."""
        W = self.graph.to_dense()
        d = self.graph.degrees
        n = self.n
        if self.kind == RANDOM_WALK:
            L = np.eye(n) - (W / d[:, None]) / n
        else:
            L = np.diag(d) - W / n
        return L / self.epsilon**2

    # -- symmetrized operator ------------------------------------------------

    def _sym_matvec(self, v):
        """Matvec of A = D^{1/2} L D^{-1/2} (rw) or A = L (un); A is symmetric PSD."""
        g = self.graph
        if self.kind == RANDOM_WALK:
            w = g.matvec(self._inv_sqrt_d * v)
            return (v - self._inv_sqrt_d * w / g.n) / self.epsilon**2
        return (g.degrees * v - g.matvec(v) / g.n) / self.epsilon**2

    def _sym_matrix(self):
        W = self.graph.to_dense()
        n = self.n
        if self.kind == RANDOM_WALK:
            s = self._inv_sqrt_d
            A = (np.eye(n) - (W * s[:, None] * s[None, :]) / n) / self.epsilon**2
        else:
            A = (np.diag(self.graph.degrees) - W / n) / self.epsilon**2
        return 0.5 * (A + A.T)

    def spectral_cache(self):
        """Eigendecomposition (lam, Q) of the symmetrized operator, built once."""
        if self._spectral is None:
            lam, Q = np.linalg.eigh(self._sym_matrix())
            self._spectral = (lam, Q)
        return self._spectral

    def eigenvalues(self):
        return self.spectral_cache()[0]

    # -- heat semigroup --------------------------------------------------------

    def heat_apply(self, u, t, tol=1e-10, max_krylov=400):
        """Apply e^{-t L} to u (vector, or columnwise to a matrix).

        Dense spectral path for n <= dense_limit (accuracy near machine
        precision); Lanczos exponential action otherwise, stopped when the
        relative update falls below ``tol``.

        Raises
        ------
        ValueError
            For t < 0.
        ToleranceError
            If the Lanczos iteration cannot certify the requested tolerance.
        """
        u = np.asarray(u, dtype=float)
        if t < 0:
            raise ValueError("heat time t must be nonnegative")
        if u.shape[0] != self.n:
            raise DimensionError("vector length does not match graph")
        if t == 0:
            return u.copy()
        single = u.ndim == 1
        U = u[:, None] if single else u
        if self.kind == RANDOM_WALK:
            V = U * self._sqrt_d[:, None]
        else:
            V = U
        if self.n <= self.dense_limit:
            lam, Q = self.spectral_cache()
            out = Q @ (np.exp(-t * lam)[:, None] * (Q.T @ V))
        else:
            out = np.empty_like(V)
            for j in range(V.shape[1]):
                out[:, j] = _lanczos_expm(self._sym_matvec, V[:, j], t, tol, max_krylov)
        if self.kind == RANDOM_WALK:
            out = out * self._inv_sqrt_d[:, None]
        return out[:, 0] if single else out


def heat_apply(op, u, t, tol=1e-10):
    """Function form of GraphOperator.heat_apply."""
    return op.heat_apply(u, t, tol=tol)


def _lanczos_expm(matvec, u, t, tol, max_dim):
    """Lanczos approximation of e^{-tA} u for symmetric PSD matvec A.

    Full reorthogonalization (basis sizes here are small); stops when two
    consecutive iterates differ by less than tol * |u| each.
    """
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        return u.copy()
    n = u.shape[0]
    max_dim = min(max_dim, n)
    V = np.empty((n, max_dim))
    V[:, 0] = u / nrm
    alphas = np.empty(max_dim)
    betas = np.empty(max_dim)
    y_prev = None
    small_updates = 0
    resid = np.inf
    for m in range(max_dim):
        w = matvec(V[:, m])
        alphas[m] = np.dot(V[:, m], w)
        w -= alphas[m] * V[:, m]
        if m > 0:
            w -= betas[m - 1] * V[:, m - 1]
        # full reorthogonalization, twice for stability
        basis = V[:, : m + 1]
        w -= basis @ (basis.T @ w)
        w -= basis @ (basis.T @ w)
        beta = np.linalg.norm(w)
        # current approximation from the tridiagonal exponential
        lam, S = eigh_tridiagonal(alphas[: m + 1], betas[:m])
        coef = S @ (np.exp(-t * lam) * S[0])
        y = basis @ (nrm * coef)
        if y_prev is not None:
            resid = np.linalg.norm(y - y_prev) / nrm
            small_updates = small_updates + 1 if resid <= 0.25 * tol else 0
            if small_updates >= 2:
                return y
        y_prev = y
        if beta <= 1e-14 * nrm:
            return y  # invariant subspace reached: result is exact
        if m + 1 < max_dim:
            betas[m] = beta
            V[:, m + 1] = w / beta
    raise ToleranceError(
        f"Lanczos heat action did not reach tol {tol:.1e} within {max_dim} steps",
        residual=resid,
    )


# -- energy dissipation audit ---------------------------------------------------


def dissipation_audit(op, u0, t, nodes=64, span=1e-6):
    """Evaluate both sides of the heat-flow energy dissipation inequality.

    For v(s) = e^{-sL} u0,

        E[v(t)] + 1/2 int_0^t |L v|^2 ds + 1/2 int_0^t |dv/ds|^2 ds <= E[u0],

    with norms in the operator's vertex inner product and E the graph
    Dirichlet energy.  Time integrals use composite trapezoid on a geometric
    grid; the integrand is convex and decreasing, so the trapezoid rule
    overestimates and the per-interval (trapezoid - midpoint) gap bounds the
    quadrature error one-sidedly.  That slack is reported for the right side.

    Returns
    -------
    dict with keys ``lhs``, ``rhs``, ``slack``, ``margin`` where
    margin = rhs + slack - lhs (nonnegative up to roundoff).
    """
    g = op.graph
    u0 = g.check_vector(u0)
    base = t * span
    ratio = (t / base) ** (1.0 / (nodes - 2))
    grid = np.concatenate([[0.0], base * ratio ** np.arange(nodes - 1)])
    grid[-1] = t

    def integrand(s):
        v = op.heat_apply(u0, s)
        Lv = op.apply(v)
        a = op.inner(Lv, Lv)
        return 0.5 * a + 0.5 * a  # |dv/ds|^2 = |L v|^2 along the exact flow

    vals = np.array([integrand(s) for s in grid])
    mids = 0.5 * (grid[:-1] + grid[1:])
    mvals = np.array([integrand(s) for s in mids])
    widths = np.diff(grid)
    trap = float(np.sum(0.5 * (vals[:-1] + vals[1:]) * widths))
    mid = float(np.sum(mvals * widths))
    slack = max(trap - mid, 0.0)

    vt = op.heat_apply(u0, t)
    lhs = dirichlet_energy(g, vt) + trap
    rhs = dirichlet_energy(g, u0)
    return {"lhs": lhs, "rhs": rhs, "slack": slack, "margin": rhs + slack - lhs}


# -- graph infinity Laplacian ---------------------------------------------------


@numba.njit(cache=True)
def _inf_lap_sweeps_dense(u, W, free, order, max_iter, tol):
    n = u.shape[0]
    res = np.inf
    sweeps = 0
    while sweeps < max_iter:
        for oi in range(order.shape[0]):
            i = order[oi]
            mx = -np.inf
            mn = np.inf
            wmx = 0.0
            wmn = 0.0
            umx = 0.0
            umn = 0.0
            for j in range(n):
                w = W[i, j]
                if w <= 0.0:
                    continue
                gcur = w * (u[j] - u[i])
                if gcur > mx:
                    mx = gcur
                    wmx = w
                    umx = u[j]
                if gcur < mn:
                    mn = gcur
                    wmn = w
                    umn = u[j]
            if wmx + wmn > 0.0:
                u[i] = (wmx * umx + wmn * umn) / (wmx + wmn)
        sweeps += 1
        res = 0.0
        for oi in range(order.shape[0]):
            i = order[oi]
            mx = -np.inf
            mn = np.inf
            for j in range(n):
                w = W[i, j]
                if w <= 0.0:
                    continue
                gcur = w * (u[j] - u[i])
                if gcur > mx:
                    mx = gcur
                if gcur < mn:
                    mn = gcur
            r = abs(mx + mn)
            if r > res:
                res = r
        if res <= tol:
            break
    return res, sweeps


@numba.njit(cache=True)
def _inf_lap_sweeps_csr(u, data, indices, indptr, free, order, max_iter, tol):
    res = np.inf
    sweeps = 0
    while sweeps < max_iter:
        for oi in range(order.shape[0]):
            i = order[oi]
            mx = -np.inf
            mn = np.inf
            wmx = 0.0
            wmn = 0.0
            umx = 0.0
            umn = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                w = data[p]
                if w <= 0.0:
                    continue
                j = indices[p]
                gcur = w * (u[j] - u[i])
                if gcur > mx:
                    mx = gcur
                    wmx = w
                    umx = u[j]
                if gcur < mn:
                    mn = gcur
                    wmn = w
                    umn = u[j]
            if wmx + wmn > 0.0:
                u[i] = (wmx * umx + wmn * umn) / (wmx + wmn)
        sweeps += 1
        res = 0.0
        for oi in range(order.shape[0]):
            i = order[oi]
            mx = -np.inf
            mn = np.inf
            for p in range(indptr[i], indptr[i + 1]):
                w = data[p]
                if w <= 0.0:
                    continue
                j = indices[p]
                gcur = w * (u[j] - u[i])
                if gcur > mx:
                    mx = gcur
                if gcur < mn:
                    mn = gcur
            r = abs(mx + mn)
            if r > res:
                res = r
        if res <= tol:
            break
    return res, sweeps


def infinity_laplacian_solve(graph, boundary, tol=1e-8, max_iter=5000,
                             order="index", seed=0):
    """Solve the graph infinity-Laplace Dirichlet problem.

    Finds u with u = g on the labeled set and, at every unlabeled vertex,

        max_j w_ij (u_j - u_i) + min_j w_ij (u_j - u_i) = 0

    (extrema over positive-weight neighbors) to residual ``tol``.  Iteration is
    a Gauss-Seidel sweep whose per-vertex update replaces u_i by the weighted
    midpoint (w+ u+ + w- u-) / (w+ + w-) of the current extremal neighbor pair.

    Parameters
    ----------
    graph : SimilarityGraph
    boundary : dict[int, float] or (indices, values) pair
        Labeled vertices and their values; must be nonempty.
    tol : float
        Target on max_i |infinity-Laplacian at i| over unlabeled vertices.
    max_iter : int
        Maximum number of full sweeps.
    order : str
        ``index`` sweeps unlabeled vertices in index order; ``random`` uses a
        seeded fixed permutation (robustness checks).

    Returns
    -------
    u : ndarray
        The extension; satisfies min(g) <= u <= max(g) componentwise.

    Raises
    ------
    ConvergenceError
        If the residual is still above tol after max_iter sweeps (carries the
        achieved residual).
    IsolatedVertexError
        If an unlabeled vertex has no positive-weight neighbor.
    """
    n = graph.n
    if isinstance(boundary, dict):
        idx = np.fromiter(boundary.keys(), dtype=np.int64)
        vals = np.fromiter((boundary[i] for i in idx), dtype=float)
    else:
        idx, vals = boundary
        idx = np.asarray(idx, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
    if idx.size == 0:
        raise ValueError("boundary set must be nonempty")
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionError("boundary index out of range")

    free = np.ones(n, dtype=np.bool_)
    free[idx] = False
    u = np.full(n, float(vals.mean()))
    u[idx] = vals

    unlabeled = np.where(free)[0]
    if unlabeled.size:
        # every unlabeled vertex needs at least one positive-weight neighbor
        row = graph.row_sums()
        if np.any(row[unlabeled] <= 0.0):
            bad = int(unlabeled[np.argmin(row[unlabeled])])
            raise IsolatedVertexError(f"unlabeled vertex {bad} has no neighbors")
    else:
        return u

    if order == "random":
        rng = np.random.default_rng(seed)
        sweep_order = rng.permutation(unlabeled).astype(np.int64)
    else:
        sweep_order = unlabeled.astype(np.int64)

    if graph.is_sparse:
        M = graph.weights.tocsr()
        res, _ = _inf_lap_sweeps_csr(
            u, M.data, M.indices.astype(np.int64), M.indptr.astype(np.int64),
            free, sweep_order, max_iter, tol,
        )
    else:
        res, _ = _inf_lap_sweeps_dense(
            u, graph.weights, free, sweep_order, max_iter, tol
        )
    if res > tol:
        raise ConvergenceError(
            f"infinity-Laplacian solve stalled at residual {res:.3e} > tol {tol:.3e}",
            residual=res,
        )
    return u


def infinity_laplacian_residual(graph, u, boundary_idx):
    """Max |infinity-Laplacian| over unlabeled vertices (diagnostic)."""
    W = graph.to_dense()
    n = graph.n
    free = np.ones(n, dtype=bool)
    free[np.asarray(boundary_idx, dtype=int)] = False
    res = 0.0
    for i in np.where(free)[0]:
        w = W[i]
        mask = w > 0
        if not mask.any():
            continue
        gvals = w[mask] * (u[mask] - u[i])
        res = max(res, abs(gvals.max() + gvals.min()))
    return res
