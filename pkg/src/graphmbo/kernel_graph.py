"""Similarity graphs from point clouds.

Weights follow the rescaled-kernel construction

    w_ij = eps^{-k} * eta(|X_i - X_j| / eps),   w_ii = 0,

with degrees d_i = (1/n) * sum_j w_ij.  Kernel profiles are restricted to
closed-form families (gaussian, exponential, smooth-truncated) so that the
required regularity and decay of eta hold by construction.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse, special
from scipy.spatial import cKDTree

from .errors import DimensionError, IsolatedVertexError, QuadratureError

__all__ = [
    "KernelProfile",
    "KernelConstants",
    "PointCloud",
    "SimilarityGraph",
    "kernel_constants",
    "build_graph",
    "reweight_lambda",
    "epsilon_scale",
]

KERNEL_SHAPES = ("gaussian", "exponential", "smooth-truncated")

# Metric names a PointCloud may carry.  "torus" wraps each coordinate on the
# unit circle; everything else is ambient Euclidean.
METRIC_EUCLIDEAN = "euclidean"
METRIC_TORUS = "torus"


def epsilon_scale(n, k):
    """Connectivity scale eps(n) = (log n / n)^(1/(k+3)) used by the experiments.

    Satisfies eps -> 0 and eps^(k+2) n / log n -> infinity, the admissible
    regime for the graph constructions here.  One convenient choice, not a
    canonical one.
    """
    if n < 2:
        raise ValueError("need n >= 2 to set a scale")
    return (np.log(n) / n) ** (1.0 / (k + 3))


@dataclass(frozen=True)
class KernelProfile:
    """A kernel family member eta together with its intrinsic dimension k.

    Parameters
    ----------
    shape : str
        One of ``gaussian`` (eta(t) = exp(-(t/scale)^2)), ``exponential``
        (eta(t) = exp(-t/scale)) or ``smooth-truncated`` (a C^2 plateau on
        [0, scale*(1-width)] descending to 0 at t = scale, approximating the
        indicator of [0, scale]).
    k : int
        Intrinsic dimension of the sampling manifold; sets the eps^{-k}
        normalization and the moment integrals.
    scale : float
        Positive length-scale parameter of the family.
    width : float
        Relative width of the smooth-truncated descent region (ignored by the
        other families).
    """

    shape: str
    k: int
    scale: float = 1.0
    width: float = 0.1

    def __post_init__(self):
        if self.shape not in KERNEL_SHAPES:
            raise ValueError(f"unknown kernel shape {self.shape!r}")
        if self.k < 1:
            raise ValueError("manifold dimension k must be >= 1")
        if self.scale <= 0:
            raise ValueError("kernel scale must be positive")
        if self.shape == "smooth-truncated" and not 0 < self.width < 1:
            raise ValueError("smooth-truncated width must lie in (0, 1)")

    def eta(self, t):
        """Evaluate eta on an array of nonnegative distances."""
        t = np.asarray(t, dtype=float)
        s = self.scale
        if self.shape == "gaussian":
            return np.exp(-((t / s) ** 2))
        if self.shape == "exponential":
            return np.exp(-t / s)
        # smooth plateau: quintic smoothstep in the descent band, C^2 overall
        x = np.clip((s - t) / (s * self.width), 0.0, 1.0)
        return x**3 * (10.0 + x * (-15.0 + 6.0 * x))

    def cutoff_radius(self, floor):
        """Distance beyond which eta(t) < floor (closed form per family)."""
        s = self.scale
        if floor <= 0:
            return np.inf
        if self.shape == "gaussian":
            return s * np.sqrt(max(np.log(1.0 / floor), 0.0))
        if self.shape == "exponential":
            return s * max(np.log(1.0 / floor), 0.0)
        return s  # compact support

    def as_dict(self):
        return {"shape": self.shape, "k": self.k, "scale": self.scale, "width": self.width}


@dataclass(frozen=True)
class KernelConstants:
    """Moment constants of a kernel profile.

    C1 = int_{R^k} eta(|y|) dy and C2 = int_{R^k} eta(|y|) y_1^2 dy; the second
    is computed as (1/k) int eta(|y|) |y|^2 dy by symmetry.
    """

    C1: float
    C2: float
    quadrature_error: float


def kernel_constants(profile, tol=1e-10):
    """Compute the moment constants C1, C2 of a kernel profile.

    Radial reduction: int_{R^k} eta(|y|) |y|^p dy equals the surface area of
    S^{k-1} times int_0^inf eta(r) r^{k-1+p} dr, evaluated by adaptive
    quadrature.

    Parameters
    ----------
    profile : KernelProfile
    tol : float
        Bound on the combined reported quadrature error.

    Returns
    -------
    KernelConstants

    Raises
    ------
    QuadratureError
        If the reported quadrature error exceeds ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    k = profile.k
    area = 2.0 * np.pi ** (k / 2.0) / special.gamma(k / 2.0)
    # integrate on a finite interval chosen so the neglected tail is far below
    # machine precision (exponential decay is guaranteed by family membership)
    upper = profile.cutoff_radius(1e-120) * 1.5 + profile.scale

    def moment(p):
        return integrate.quad(
            lambda r: profile.eta(r) * r ** (k - 1 + p), 0.0, upper,
            epsabs=tol / (8.0 * area), epsrel=1e-14, limit=500,
        )

    i0, e0 = moment(0)
    i2, e2 = moment(2)
    err = area * (e0 + e2 / k)
    if not np.isfinite(i0) or not np.isfinite(i2) or err > tol:
        raise QuadratureError(
            f"kernel moment quadrature error {err:.3e} exceeds tol {tol:.3e}",
            achieved=err,
        )
    return KernelConstants(C1=area * i0, C2=area * i2 / k, quadrature_error=err)


@dataclass(frozen=True)
class PointCloud:
    """Sampled points in ambient space.

    ``density`` is a descriptor string (``uniform-sphere``, ``uniform-flat-torus``
    or ``custom``); torus clouds are stored as coordinates in [0,1)^k and use
    the quotient metric when a graph is built on them.
    """

    points: np.ndarray
    k: int
    density: str = "custom"
    seed: int | None = None
    rho: object = None  # optional density evaluator, points -> values

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DimensionError("points must be an (n, d) array")
        if pts.shape[1] < self.k:
            raise DimensionError(
                f"ambient dimension {pts.shape[1]} below intrinsic dimension {self.k}"
            )
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def ambient_dim(self):
        return self.points.shape[1]

    @property
    def metric(self):
        return METRIC_TORUS if self.density == "uniform-flat-torus" else METRIC_EUCLIDEAN


def _pairwise_sq_dists(A, B, metric):
    """Dense squared distances between two coordinate blocks."""
    if metric == METRIC_TORUS:
        diff = np.abs(A[:, None, :] - B[None, :, :])
        diff = np.minimum(diff, 1.0 - diff)
    else:
        diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


class SimilarityGraph:
    """Symmetric nonnegative kernel weight matrix with zero diagonal.

    Attributes
    ----------
    n : int
    epsilon : float
    weights : ndarray or scipy.sparse.csr_matrix
        Symmetric (n, n) weight matrix, zero diagonal.
    degrees : ndarray
        d_i = (1/n) sum_j w_ij, all strictly positive.
    lam : float
        Data-dependent reweighting exponent already applied (0 = none).
    kernel : dict or None
        Descriptor of the kernel used to build the graph (for export).
    """

    def __init__(self, epsilon, weights, lam=0.0, kernel=None):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.weights = weights
        self.lam = float(lam)
        self.kernel = kernel
        self.n = weights.shape[0]
        if weights.shape != (self.n, self.n):
            raise DimensionError("weight matrix must be square")
        self.degrees = self.row_sums() / self.n
        if np.any(self.degrees <= 0.0):
            bad = int(np.argmin(self.degrees))
            raise IsolatedVertexError(
                f"vertex {bad} has zero degree after sparsification"
            )

    @property
    def is_sparse(self):
        return sparse.issparse(self.weights)

    def row_sums(self):
        if self.is_sparse:
            return np.asarray(self.weights.sum(axis=1)).ravel()
        return self.weights.sum(axis=1)

    def matvec(self, v):
        return self.weights @ v

    def to_dense(self):
        return self.weights.toarray() if self.is_sparse else self.weights

    def max_weight(self):
        return self.weights.max() if not self.is_sparse else (
            self.weights.data.max() if self.weights.nnz else 0.0
        )

    def check_vector(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n:
            raise DimensionError(f"vector of length {u.shape[0]} on graph with n={self.n}")
        return u


def build_graph(cloud, epsilon, profile, floor_scale=1e-14, brute_force_max=2000):
    """Build the similarity graph of a point cloud.

    Weights w_ij = eps^{-k} eta(|X_i - X_j|/eps) for i != j, w_ii = 0.  Entries
    below ``floor_scale * eps^{-k}`` are dropped, which keeps the matrix sparse
    without measurably changing energies for the exponential-decay families.
    Neighbor search uses a kd-tree when the kernel cutoff radius is small
    relative to the data extent; otherwise (and always for n <= brute_force_max)
    weights are formed by blocked dense evaluation.

    Parameters
    ----------
    cloud : PointCloud
    epsilon : float
        Positive kernel scale (also the derivative-operator scale).
    profile : KernelProfile
        Must satisfy profile.k == cloud.k.
    floor_scale : float
        Relative sparsification floor (absolute floor is floor_scale * eps^{-k}).
    brute_force_max : int
        Below this size the dense path is always used.

    Returns
    -------
    SimilarityGraph

    Raises
    ------
    IsolatedVertexError
        If any vertex has zero degree after sparsification (this includes the
        single-point cloud, whose only weight is the zero diagonal).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if profile.k != cloud.k:
        raise DimensionError(
            f"kernel dimension k={profile.k} does not match cloud k={cloud.k}"
        )
    X = cloud.points
    n = X.shape[0]
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] != n:
        raise ValueError("cloud points must be distinct")

    k = profile.k
    scale = epsilon ** (-k)
    floor = floor_scale * scale
    r_cut = epsilon * profile.cutoff_radius(floor_scale)
    metric = cloud.metric
    extent = _data_extent(X, metric)

    if n <= brute_force_max or r_cut >= 0.5 * extent:
        W = _dense_weights(X, epsilon, profile, metric, floor)
    else:
        W = _kdtree_weights(X, epsilon, profile, metric, floor, r_cut)
    return SimilarityGraph(epsilon, W, lam=0.0, kernel=profile.as_dict())


def _data_extent(X, metric):
    if metric == METRIC_TORUS:
        return float(np.sqrt(X.shape[1])) * 0.5
    span = X.max(axis=0) - X.min(axis=0)
    return float(np.linalg.norm(span))


def _dense_weights(X, epsilon, profile, metric, floor, block=1024):
    n = X.shape[0]
    k = profile.k
    W = np.zeros((n, n))
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        D2 = _pairwise_sq_dists(X[i0:i1], X, metric)
        W[i0:i1] = profile.eta(np.sqrt(D2) / epsilon) * epsilon ** (-k)
    np.fill_diagonal(W, 0.0)
    W[W < floor] = 0.0
    return W


def _kdtree_weights(X, epsilon, profile, metric, floor, r_cut):
    n, k = X.shape[0], profile.k
    if metric == METRIC_TORUS:
        tree = cKDTree(X, boxsize=1.0)
    else:
        tree = cKDTree(X)
    pairs = tree.query_pairs(r_cut, output_type="ndarray")
    if pairs.size == 0:
        raise IsolatedVertexError("no pairs within kernel cutoff; graph is empty")
    i, j = pairs[:, 0], pairs[:, 1]
    if metric == METRIC_TORUS:
        diff = np.abs(X[i] - X[j])
        diff = np.minimum(diff, 1.0 - diff)
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    else:
        dist = np.linalg.norm(X[i] - X[j], axis=1)
    vals = profile.eta(dist / epsilon) * epsilon ** (-k)
    keep = vals >= floor
    i, j, vals = i[keep], j[keep], vals[keep]
    W = sparse.coo_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n, n),
    ).tocsr()
    if W.nnz > 0.25 * n * n:
        return W.toarray()
    return W


def reweight_lambda(graph, lam):
    """Apply data-dependent reweighting w_ij -> w_ij / (d_i d_j)^lam.

    Degrees are recomputed from the new weights.  lam = 0 returns the graph
    unchanged (same object).

    Raises
    ------
    IsolatedVertexError
        If a reweighted degree vanishes (cannot happen for finite lam and a
        valid input graph, but checked regardless).
    """
    if lam == 0.0:
        return graph
    s = graph.degrees ** (-lam)
    if graph.is_sparse:
        D = sparse.diags(s)
        W = (D @ graph.weights @ D).tocsr()
    else:
        W = graph.weights * s[:, None] * s[None, :]
    return SimilarityGraph(graph.epsilon, W, lam=lam, kernel=graph.kernel)
