import numpy as np
import pytest

from graphmbo.kernel_graph import KernelProfile, PointCloud, SimilarityGraph, build_graph


def random_cloud(n, seed, d=2, spread=1.0):
    rng = np.random.default_rng(seed)
    return PointCloud(points=spread * rng.random((n, d)), k=d, density="custom",
                      seed=seed)


def random_geometric_graph(n, seed, eps=0.8, shape="gaussian", d=2):
    cloud = random_cloud(n, seed, d=d)
    return build_graph(cloud, eps, KernelProfile(shape=shape, k=d))


def random_sigma(P, seed):
    """A random valid surface tension: symmetric, zero diagonal, positive
    off-diagonal, triangle inequality, conditionally negative semidefinite.

    Alternates between the additive family a_i + a_j and the line-metric
    family |b_i - b_j| (both are negative-type and metric-like)."""
    rng = np.random.default_rng(seed)
    if seed % 3 == 0:
        return np.ones((P, P)) - np.eye(P)
    if seed % 3 == 1:
        a = rng.uniform(0.2, 2.0, P)
        s = a[:, None] + a[None, :]
    else:
        b = np.cumsum(rng.uniform(0.2, 1.0, P))
        s = np.abs(b[:, None] - b[None, :])
    np.fill_diagonal(s, 0.0)
    return s


@pytest.fixture
def two_node_graph():
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    return SimilarityGraph(1.0, W)
