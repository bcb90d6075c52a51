"""Multiclass MBO iteration, thresholding/forced energies, and SSL forcing.

One MBO step diffuses each class indicator through the heat semigroup,
combines classes through the surface-tension matrix, and thresholds:

    diffusion:     u^m = sum_{l != m} sigma_ml e^{-h L} chi^l
    thresholding:  assign x to the class minimizing u^m(x) - sqrt(h) f^m(x)

with ties broken toward the lowest class index.  Each step decreases the
thresholding energy

    E_h(u) = h^{-1/2} sum_{ij} sigma_ij <u^i, e^{-h L} u^j>

(minus the forcing term <f^i, u^i> when a forcing field is present), provided
sigma is conditionally negative semidefinite.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SigmaValidationError
from .operators import infinity_laplacian_solve, vertex_inner

__all__ = [
    "SurfaceTension",
    "validate_sigma",
    "uniform_sigma",
    "LabelField",
    "ForcingField",
    "EnergyReport",
    "MboTrajectory",
    "thresholding_energy",
    "forced_energy",
    "mbo_step",
    "mbo_run",
    "movement_functional",
    "forcing_from_labels",
    "lipschitz_forcing",
]


@dataclass(frozen=True)
class SurfaceTension:
    """Validated surface-tension matrix (see validate_sigma)."""

    P: int
    sigma: np.ndarray


def uniform_sigma(P):
    """The all-ones off-diagonal surface tension (the standard choice)."""
    s = np.ones((P, P)) - np.eye(P)
    return validate_sigma(s)


def validate_sigma(sigma, tol=1e-10):
    """Validate a surface-tension matrix and wrap it.

    Conditions: symmetric, zero diagonal, positive off-diagonal entries,
    triangle inequality sigma_ij <= sigma_il + sigma_lj, and conditional
    negative semidefiniteness on the orthogonal complement of (1, ..., 1)
    (checked through the eigenvalues of the centered matrix).  The last
    condition is what makes the MBO iteration dissipate the energy.

    Raises
    ------
    SigmaValidationError
        Listing every violated condition with witness indices.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("sigma must be a square matrix")
    P = s.shape[0]
    if P < 2:
        raise ValueError("need at least two classes")
    scale = max(float(np.abs(s).max()), 1.0)
    violations = []
    asym = np.abs(s - s.T)
    if asym.max() > 0:
        i, j = np.unravel_index(np.argmax(asym), s.shape)
        violations.append(f"not symmetric at ({i},{j})")
    diag = np.abs(np.diag(s))
    if diag.max() > 0:
        violations.append(f"nonzero diagonal at ({int(np.argmax(diag))})")
    off = s + np.eye(P) * scale  # mask the diagonal
    if off.min() <= 0:
        i, j = np.unravel_index(np.argmin(off), s.shape)
        violations.append(f"nonpositive off-diagonal at ({i},{j})")
    # triangle inequality over all ordered triples: tri[i,j,l] = s_ij - s_il - s_lj
    tri = s[:, :, None] - s[:, None, :] - s.T[None, :, :]
    bad = tri > 1e-12 * scale
    if bad.any():
        i, j, l = (int(a[0]) for a in np.nonzero(bad))
        violations.append(f"triangle inequality violated at ({i},{j}) via {l}")
    # conditional negative semidefiniteness on (1,...,1)^perp
    C = np.eye(P) - np.full((P, P), 1.0 / P)
    w = np.linalg.eigvalsh(C @ ((s + s.T) / 2.0) @ C)
    if w.max() > tol:
        violations.append(
            f"not negative semidefinite on the mean-zero subspace "
            f"(max projected eigenvalue {w.max():.3e})"
        )
    if violations:
        raise SigmaValidationError(violations)
    return SurfaceTension(P=P, sigma=s)


class LabelField:
    """n x P matrix of cluster memberships.

    Hard fields are exactly one-hot per row; soft fields have rows on the
    probability simplex (within 1e-12).
    """

    def __init__(self, values, mode="hard"):
        v = np.ascontiguousarray(values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("label field must be an (n, P) array")
        if mode not in ("hard", "soft"):
            raise ValueError("mode must be 'hard' or 'soft'")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("label field entries must lie in [0, 1]")
        rs = v.sum(axis=1)
        if np.abs(rs - 1.0).max() > 1e-12:
            raise ValueError("label field rows must sum to 1")
        if mode == "hard" and not np.all((v == 0.0) | (v == 1.0)):
            raise ValueError("hard label field must be one-hot")
        self.values = v
        self.mode = mode

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def P(self):
        return self.values.shape[1]

    @classmethod
    def from_indices(cls, idx, P):
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= P):
            raise ValueError("class index out of range")
        v = np.zeros((idx.shape[0], P))
        v[np.arange(idx.shape[0]), idx] = 1.0
        return cls(v, mode="hard")

    def to_indices(self):
        if self.mode != "hard":
            raise ValueError("soft fields have no single class per vertex")
        return np.argmax(self.values, axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, LabelField)
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class ForcingField:
    """Per-class forcing values f : V -> R^P and the gamma used to build them."""

    values: np.ndarray
    gamma: float
    extension: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("forcing field must be an (n, P) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("forcing field entries must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class EnergyReport:
    """Thresholding/forced energy evaluation at a single step size h."""

    h: float
    total: float
    pair_contributions: np.ndarray
    forcing_term: float = 0.0

    def __post_init__(self):
        check = self.pair_contributions.sum() - self.forcing_term
        scale = max(abs(self.total), 1.0)
        if abs(check - self.total) > 1e-12 * scale:
            raise ValueError("inconsistent energy report")


def _check_bound(op, field):
    if field.n != op.n:
        raise DimensionError("label field not bound to the operator's graph")


def _diffused(op, values, h, heat_tol):
    return op.heat_apply(values, h, tol=heat_tol)


def _pair_matrix(op, values, diffused):
    """M_ij = <u^i, S u^j> in the operator's vertex inner product."""
    if op.weighted_inner:
        lhs = values * op.graph.degrees[:, None]
    else:
        lhs = values
    return (lhs.T @ diffused) / op.n


def _energy_from_diffused(op, field, sigma, h, diffused, forcing=None):
    M = _pair_matrix(op, field.values, diffused)
    pairs = sigma.sigma * M / np.sqrt(h)
    fterm = 0.0
    if forcing is not None:
        fterm = sum(
            vertex_inner(op.graph, forcing.values[:, m], field.values[:, m],
                         weighted=op.weighted_inner)
            for m in range(field.P)
        )
    return EnergyReport(h=h, total=float(pairs.sum() - fterm),
                        pair_contributions=pairs, forcing_term=float(fterm))


def thresholding_energy(op, field, sigma, h, heat_tol=1e-10):
    """Thresholding energy E_h(u) = h^{-1/2} sum_ij sigma_ij <u^i, e^{-hL} u^j>.

    The vertex inner product matches the operator kind (degree-weighted for
    random-walk, unweighted for unnormalized).

    Returns
    -------
    EnergyReport
        ``total`` is the energy; ``pair_contributions[i, j]`` the (i, j)
        summand; ``forcing_term`` is zero here.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _check_bound(op, field)
    if field.P != sigma.P:
        raise DimensionError("label field classes do not match sigma")
    diffused = _diffused(op, field.values, h, heat_tol)
    return _energy_from_diffused(op, field, sigma, h, diffused)


def forced_energy(op, field, sigma, h, forcing, heat_tol=1e-10):
    """Forced energy F_h(u) = E_h(u) - sum_i <f^i, u^i>; the SSL objective."""
    if h <= 0:
        raise ValueError("h must be positive")
    _check_bound(op, field)
    if forcing.values.shape != field.values.shape:
        raise DimensionError("forcing field shape does not match label field")
    diffused = _diffused(op, field.values, h, heat_tol)
    return _energy_from_diffused(op, field, sigma, h, diffused, forcing=forcing)


def mbo_step(op, chi, sigma, h, forcing=None, heat_tol=1e-10):
    """One MBO step (diffusion + thresholding) from a hard labeling.

    With a forcing field the comparator is u^m - sqrt(h) f^m, i.e. the SSL
    variant; choosing gamma sqrt(h) > 1 in forcing_from_labels pins the
    labeled vertices.  Ties go to the lowest class index.
    """
    if chi.mode != "hard":
        raise ValueError("mbo_step expects a hard labeling")
    if h <= 0:
        raise ValueError("h must be positive")
    _check_bound(op, chi)
    diffused = _diffused(op, chi.values, h, heat_tol)
    comparator = diffused @ sigma.sigma
    if forcing is not None:
        comparator = comparator - np.sqrt(h) * forcing.values
    # np.argmin returns the first (lowest-index) minimizer
    return LabelField.from_indices(np.argmin(comparator, axis=1), chi.P)


@dataclass
class MboTrajectory:
    """Labelings and energy reports produced by mbo_run."""

    fields: list
    reports: list
    stop_index: int
    stabilized: bool


def mbo_run(op, chi0, sigma, h, n_steps, forcing=None, heat_tol=1e-10):
    """Iterate mbo_step up to n_steps times, recording energies along the way.

    The energy of every visited labeling is recorded (forced energy when a
    forcing field is given; its ``pair_contributions`` always hold the
    unforced part).  Iteration stops early at a fixed point, which cannot
    change the output because fixed points persist.

    Returns
    -------
    MboTrajectory
        ``fields[q]`` is the labeling after q steps; ``reports[q]`` its
        energy; ``stop_index`` the last step index executed.
    """
    if n_steps < 1:
        raise ValueError("need at least one iteration")
    fields = [chi0]
    diffused = _diffused(op, chi0.values, h, heat_tol)
    reports = [_energy_from_diffused(op, chi0, sigma, h, diffused, forcing)]
    stabilized = False
    q = 0
    for q in range(1, n_steps + 1):
        prev = fields[-1]
        comparator = diffused @ sigma.sigma
        if forcing is not None:
            comparator = comparator - np.sqrt(h) * forcing.values
        nxt = LabelField.from_indices(np.argmin(comparator, axis=1), prev.P)
        if nxt == prev:
            stabilized = True
            q -= 1
            break
        fields.append(nxt)
        diffused = _diffused(op, nxt.values, h, heat_tol)
        reports.append(_energy_from_diffused(op, nxt, sigma, h, diffused, forcing))
    return MboTrajectory(fields=fields, reports=reports, stop_index=q,
                         stabilized=stabilized)


def movement_functional(op, u, chi_prev, sigma, h, heat_tol=1e-10):
    """Minimizing-movements objective whose hard minimizer is the MBO step.

    MF(u) = E_h(u) - h^{-1/2} sum_ij sigma_ij <u^i - chi^i, e^{-hL}(u^j - chi^j)>.
    """
    _check_bound(op, u)
    _check_bound(op, chi_prev)
    if u.values.shape != chi_prev.values.shape:
        raise DimensionError("fields must share shape")
    energy = thresholding_energy(op, u, sigma, h, heat_tol=heat_tol).total
    diff = u.values - chi_prev.values
    Sdiff = _diffused(op, diff, h, heat_tol)
    if op.weighted_inner:
        lhs = diff * op.graph.degrees[:, None]
    else:
        lhs = diff
    M = (lhs.T @ Sdiff) / op.n
    return float(energy - (sigma.sigma * M).sum() / np.sqrt(h))


def forcing_from_labels(labels, gamma, n, P):
    """Forcing field +-gamma on the labeled set.

    For each labeled vertex x with class c: f^c(x) = gamma and f^m(x) = -gamma
    for m != c; zero off the labeled set.  For two classes this reproduces the
    scalar convention f = -gamma (1 - 2 u0) 1_O through f = (f^1 - f^0) / 2;
    the sign raises the effective threshold against competing classes.

    Parameters
    ----------
    labels : dict[int, int] or (indices, classes) pair
    gamma : float, positive
    n, P : int
        Field dimensions.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if isinstance(labels, dict):
        idx = np.fromiter(labels.keys(), dtype=int)
        cls = np.fromiter((labels[i] for i in idx), dtype=int)
    else:
        idx, cls = labels
        idx = np.asarray(idx, dtype=int)
        cls = np.asarray(cls, dtype=int)
    if idx.size == 0:
        raise ValueError("labels must be nonempty")
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionError("label index out of range")
    if cls.min() < 0 or cls.max() >= P:
        raise ValueError("label class out of range")
    f = np.zeros((n, P))
    f[idx, :] = -gamma
    f[idx, cls] = gamma
    return ForcingField(values=f, gamma=float(gamma))


def lipschitz_forcing(graph, labels, gamma, tol=1e-8, max_iter=5000):
    """Forcing from Lipschitz learning: propagate two-class labels, then force.

    Solves the infinity-Laplacian Dirichlet problem with the given {0,1}
    labels as boundary data and sets the scalar forcing f = -gamma (1 - 2u)
    everywhere, mapped to per-class columns (f^1 = f, f^0 = -f).  The
    extension u is carried on the returned field.

    Parameters
    ----------
    labels : dict[int, float] or (indices, values) pair with values in {0, 1}
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if isinstance(labels, dict):
        idx = np.fromiter(labels.keys(), dtype=int)
        vals = np.fromiter((labels[i] for i in idx), dtype=float)
    else:
        idx, vals = labels
        idx = np.asarray(idx, dtype=int)
        vals = np.asarray(vals, dtype=float)
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ValueError("lipschitz forcing expects {0,1} labels")
    u = infinity_laplacian_solve(graph, (idx, vals), tol=tol, max_iter=max_iter)
    scalar = -gamma * (1.0 - 2.0 * u)
    f = np.column_stack([-scalar, scalar])
    return ForcingField(values=f, gamma=float(gamma), extension=u)
