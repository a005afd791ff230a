"""Isotonic subgroup selection.

Each distinct covariate vector ``x0`` carries the hypothesis ``eta(x0) < tau``.
Its p-value is built from the responses of the rows lying componentwise below
``x0``, taken in order of sup-norm distance from ``x0``; the cumulative count
of ones is compared against a boundary that is valid uniformly over the
sequence (an anytime-valid binomial test).  Hypotheses are then combined by a
graph-structured sequential rejection procedure so that the selected upper
set lies inside ``{eta >= tau}`` with probability at least ``1 - alpha``.

All coordinates handled internally are *direction adjusted*: decreasing
columns are negated so that the regression function is nondecreasing in every
coordinate.  Regions are stored in the dataset's own coordinates together
with the column specs needed to redo the adjustment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve_triangular
from scipy.special import betainc, betaln

from .data import ColumnSpec, Dataset, direction_signs, unit_variance_scales
from .errors import ConfigError, DataError, DomainError

logger = logging.getLogger(__name__)

KINDS = ("binary", "quantile")
PROCEDURES = ("dag", "frontier", "holm")
SCALINGS = ("unit_variance", "minmax", "none")
SIDES = ("lower", "upper", "two-sided-lower", "two-sided-upper")


# --------------------------------------------------------------------------
# incomplete beta function


def log_incomplete_beta(z, a, b):
    """Logarithm of the (unregularised) incomplete beta function, vectorised."""
    z, a, b = np.broadcast_arrays(
        np.asarray(z, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    with np.errstate(divide="ignore"):
        return np.log(betainc(a, b, z)) + betaln(a, b)


def incomplete_beta(z: float, a: float, b: float) -> float:
    """B(z; a, b) = integral from 0 to z of t**(a-1) * (1-t)**(b-1) dt."""
    if not (0.0 <= z <= 1.0):
        raise DomainError(f"incomplete_beta: z={z} outside [0, 1]")
    if not (a > 0 and b > 0):
        raise DomainError(f"incomplete_beta: need a, b > 0 (got a={a}, b={b})")
    if z == 0.0:
        return 0.0
    return float(np.exp(log_incomplete_beta(z, a, b)))


# --------------------------------------------------------------------------
# test sequences and p-values


@dataclass(frozen=True)
class TestSequence:
    """Responses of the rows dominated by ``x0``, nearest first."""

    __test__ = False  # keep pytest from collecting this class

    x0: np.ndarray
    responses: np.ndarray
    distances: np.ndarray
    rows: np.ndarray

    @property
    def n_x0(self) -> int:
        return int(self.responses.shape[0])


def _order_rows(Z, rows, dist):
    # sort key: distance, then covariates lexicographically, then row index
    keys = [rows] + [Z[rows, j] for j in range(Z.shape[1] - 1, -1, -1)] + [dist]
    return np.lexsort(keys)


def build_sequence(X, y, x0, scale=None) -> TestSequence:
    """Collect the rows with ``X[i] <= x0`` componentwise, ordered by distance.

    ``X`` must already be direction adjusted.  ``scale`` divides each
    coordinate before the sup-norm distance is taken.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != X.shape[1]:
        raise DataError("x0 dimension does not match covariates")
    scale = np.ones(X.shape[1]) if scale is None else np.asarray(scale, dtype=float)
    rows = np.flatnonzero(np.all(X <= x0, axis=1))
    dist = np.max(np.abs(x0 - X[rows]) / scale, axis=1) if rows.size else np.empty(0)
    order = _order_rows(X, rows, dist)
    return TestSequence(
        x0=x0, responses=y[rows][order], distances=dist[order], rows=rows[order]
    )


def _check_tau(tau):
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1) for binary responses, got {tau}")


def _binary_pvalue(responses: np.ndarray, tau: float) -> float:
    m = responses.shape[0]
    if m == 0:
        return 1.0
    k = np.arange(1, m + 1, dtype=float)
    ones = np.cumsum(responses)
    a = k - ones + 1.0
    b = ones + 1.0
    log_ratio = ones * np.log(tau) + a * np.log1p(-tau) - log_incomplete_beta(1.0 - tau, a, b)
    return float(min(1.0, np.exp(np.min(log_ratio))))


def pvalue_binary(seq, tau: float) -> float:
    """Anytime-valid p-value for ``H0: eta(x0) < tau`` from binary responses.

    ``seq`` is a :class:`TestSequence` or the ordered responses themselves.
    With ``T_k`` the number of ones among the first ``k`` responses, returns
    ``min(1, min_k tau**T_k (1-tau)**(k-T_k+1) / B(1-tau; k-T_k+1, T_k+1))``.
    """
    _check_tau(tau)
    responses = seq.responses if isinstance(seq, TestSequence) else np.asarray(seq, float)
    if not np.all((responses == 0) | (responses == 1)):
        raise DomainError("pvalue_binary needs responses in {0, 1}")
    return _binary_pvalue(responses, tau)


def dichotomize(responses, tau: float) -> np.ndarray:
    """Indicator ``Y > tau`` (strict, so ties count as zeros)."""
    return (np.asarray(responses, dtype=float) > tau).astype(float)


def pvalue_quantile(seq, tau: float) -> float:
    """p-value for ``H0: median(Y | x0) < tau`` via dichotomised responses."""
    responses = seq.responses if isinstance(seq, TestSequence) else np.asarray(seq, float)
    return _binary_pvalue(dichotomize(responses, tau), 0.5)


# --------------------------------------------------------------------------
# regions


@dataclass
class UpperSetRegion:
    """Selected set, an upper set in direction-adjusted coordinates.

    ``generators`` (dataset coordinates) span the set from below:
    ``x`` is inside if some generator is componentwise below ``x`` after
    direction adjustment.  Upper-side regions additionally carry
    ``excluded`` points: ``x`` is then also inside if it is *not* below any
    excluded point.
    """

    side: str
    tau: float
    alpha: float
    columns: tuple[ColumnSpec, ...]
    generators: np.ndarray
    excluded: np.ndarray | None = None
    kind: str = "binary"
    procedure: str = "dag"
    scaling: str = "unit_variance"

    def __post_init__(self):
        d = len(self.columns)
        self.generators = np.asarray(self.generators, dtype=float).reshape(-1, d)
        if self.excluded is not None:
            self.excluded = np.asarray(self.excluded, dtype=float).reshape(-1, d)

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def signs(self) -> np.ndarray:
        return direction_signs(self.columns)

    @property
    def is_upper(self) -> bool:
        return self.side in ("upper", "two-sided-upper")

    def is_empty(self) -> bool:
        """True when the region contains no point at all."""
        if self.generators.shape[0]:
            return False
        return not self.is_upper

    def membership(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        single = P.ndim == 1
        P = P.reshape(-1, self.d) if not single else P.reshape(1, -1)
        if P.shape[1] != self.d:
            raise DataError(f"points have {P.shape[1]} coordinates, region has {self.d}")
        s = self.signs
        Z = P * s
        inside = _dominates_any(self.generators * s, Z)
        if self.is_upper:
            below = _dominated_by_any(Z, self.excluded * s)
            inside |= ~below
        return inside[0] if single else inside

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "tau": float(self.tau),
            "alpha": float(self.alpha),
            "kind": self.kind,
            "procedure": self.procedure,
            "scaling": self.scaling,
            "direction_spec": [c.to_dict() for c in self.columns],
            "generators": self.generators.tolist(),
            "excluded": None if self.excluded is None else self.excluded.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UpperSetRegion":
        return cls(
            side=d["side"],
            tau=d["tau"],
            alpha=d["alpha"],
            columns=tuple(ColumnSpec.from_dict(c) for c in d["direction_spec"]),
            generators=np.array(d["generators"], dtype=float),
            excluded=None if d.get("excluded") is None else np.array(d["excluded"], float),
            kind=d.get("kind", "binary"),
            procedure=d.get("procedure", "dag"),
            scaling=d.get("scaling", "unit_variance"),
        )


def _dominates_any(G, Z, chunk=4096):
    """For each row of Z: does some row of G lie componentwise below it?"""
    out = np.zeros(Z.shape[0], dtype=bool)
    if G.shape[0] == 0:
        return out
    for start in range(0, Z.shape[0], chunk):
        block = Z[start : start + chunk]
        out[start : start + chunk] = np.any(
            np.all(G[None, :, :] <= block[:, None, :], axis=2), axis=1
        )
    return out


def _dominated_by_any(Z, H, chunk=4096):
    out = np.zeros(Z.shape[0], dtype=bool)
    if H is None or H.shape[0] == 0:
        return out
    for start in range(0, Z.shape[0], chunk):
        block = Z[start : start + chunk]
        out[start : start + chunk] = np.any(
            np.all(block[:, None, :] <= H[None, :, :], axis=2), axis=1
        )
    return out


# --------------------------------------------------------------------------
# multiple testing over the observed points


class _PointTests:
    """Lazily evaluated p-values at the distinct points of Z."""

    def __init__(self, Z, yb, tau, scale):
        self.Z = Z
        self.yb = yb
        self.tau = tau
        self.scale = scale
        self.points, self.inverse = np.unique(Z, axis=0, return_inverse=True)
        self.inverse = self.inverse.reshape(-1)
        self._p = np.full(self.points.shape[0], np.nan)

    def pvalue(self, i: int) -> float:
        if np.isnan(self._p[i]):
            seq = build_sequence(self.Z, self.yb, self.points[i], self.scale)
            self._p[i] = _binary_pvalue(seq.responses, self.tau)
        return self._p[i]


def _dominance(points):
    # below[i, j]: point j lies componentwise below point i (j != i)
    le = np.all(points[None, :, :] <= points[:, None, :], axis=2)
    np.fill_diagonal(le, False)
    return le


def _cover(below):
    b = below.astype(np.float32)
    via = (b @ b) > 0
    return below & ~via


def _leaf_flow_levels(cover, active, order, alpha):
    """Per-node levels from equal leaf weights pushed up the cover graph.

    Every active minimal point starts with weight ``alpha / L``; each active
    point passes its accumulated weight, split evenly, to its active parents.
    Frontier points (no active parent) keep what they receive.
    """
    n = active.shape[0]
    cov = cover & active[:, None] & active[None, :]
    n_children = cov.sum(axis=1)
    n_parents = cov.sum(axis=0)
    leaves = active & (n_children == 0)
    init = np.where(leaves, alpha / max(1, leaves.sum()), 0.0)
    parent, child = np.nonzero(cov)
    if parent.size == 0:
        return init
    # positions in a children-before-parents order make the system triangular
    pos = np.empty(n, dtype=int)
    pos[order] = np.arange(n)
    W = sparse.csr_matrix(
        (1.0 / n_parents[child], (pos[parent], pos[child])), shape=(n, n)
    )
    A = (sparse.identity(n, format="csr") - W).tocsr()
    mass_pos = spsolve_triangular(A, init[order], lower=True)
    mass = np.empty(n)
    mass[order] = mass_pos
    return mass


def _sequential_rejection(tests: _PointTests, alpha: float, procedure: str) -> np.ndarray:
    P = tests.points
    m = P.shape[0]
    rejected = np.zeros(m, dtype=bool)
    if m == 0:
        return rejected
    if P.shape[1] == 1 and procedure in ("dag", "frontier"):
        # chain: the fixed-sequence procedure from the largest point down
        for i in np.argsort(-P[:, 0], kind="stable"):
            if tests.pvalue(i) > alpha:
                break
            rejected[i] = True
        return rejected

    below = _dominance(P)
    above = below.T
    if procedure == "dag":
        cover = _cover(below)
        order = np.lexsort(P.T[::-1])  # lexicographic order is a linear extension
    while True:
        active = ~rejected
        if not active.any():
            break
        if procedure == "holm":
            candidates = np.flatnonzero(active)
            levels = np.full(m, alpha / candidates.size)
        else:
            has_active_parent = (above & active[None, :]).any(axis=1)
            candidates = np.flatnonzero(active & ~has_active_parent)
            if procedure == "dag":
                levels = _leaf_flow_levels(cover, active, order, alpha)
            else:
                levels = np.full(m, alpha / candidates.size)
        hits = [i for i in candidates if tests.pvalue(i) <= levels[i]]
        if not hits:
            break
        rejected[hits] = True
        # everything above a rejected point is implied
        rejected |= below[:, hits].any(axis=1)
    return rejected


def _minimal(points):
    if points.shape[0] == 0:
        return points
    below = _dominance(points)
    return points[~below.any(axis=1)]


def _check_common(ds: Dataset, tau, alpha, kind, procedure, scaling):
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if kind not in KINDS:
        raise ConfigError(f"unknown p-value kind {kind!r}")
    if procedure not in PROCEDURES:
        raise ConfigError(f"unknown procedure {procedure!r}")
    if scaling not in SCALINGS:
        raise ConfigError(f"unknown scaling {scaling!r}")
    if kind == "binary":
        _check_tau(tau)
        if not ds.is_binary_response():
            raise DataError("binary p-value requested but responses are not 0/1")


def _distance_scale(Z, scaling):
    if scaling == "unit_variance":
        return unit_variance_scales(Z)
    if scaling == "minmax" and Z.shape[0]:
        span = Z.max(axis=0) - Z.min(axis=0)
        return np.where(span > 0, span, 1.0)
    return np.ones(Z.shape[1])


def _rejected_points(Z, y, tau, alpha, kind, procedure, scaling):
    if kind == "binary":
        yb, tau_b = y, tau
    else:
        yb, tau_b = dichotomize(y, tau), 0.5
    tests = _PointTests(Z, yb, tau_b, _distance_scale(Z, scaling))
    rejected = _sequential_rejection(tests, alpha, procedure)
    logger.debug("ISS: %d of %d points rejected", rejected.sum(), rejected.size)
    return _minimal(tests.points[rejected])


def select_lower(
    ds: Dataset,
    tau: float,
    alpha: float,
    kind: str = "binary",
    procedure: str = "dag",
    scaling: str = "unit_variance",
    side: str = "lower",
) -> UpperSetRegion:
    """Lower confidence set for ``{x : eta(x) >= tau}``.

    Parameters
    ----------
    ds : Dataset
        Covariates with resolved directions (no ``antichain`` or ``none``
        columns left; see :func:`subsel.data.antichain_augment`).
    tau : float
        Threshold on the regression function (or on the conditional median
        when ``kind='quantile'``).
    alpha : float
        Family-wise error level.
    kind : {'binary', 'quantile'}
        p-value construction.
    procedure : {'dag', 'frontier', 'holm'}
        Multiplicity control across points.  ``'dag'`` spreads ``alpha`` over
        the minimal points and pushes it up the dominance graph; ``'frontier'``
        splits it evenly over the current maximal points; ``'holm'`` tests all
        remaining points at ``alpha / #remaining``.  In one dimension ``dag``
        and ``frontier`` coincide with the fixed-sequence procedure.
    scaling : {'unit_variance', 'minmax', 'none'}
        Column scaling used for distances only.

    Returns
    -------
    UpperSetRegion
    """
    _check_common(ds, tau, alpha, kind, procedure, scaling)
    s = direction_signs(ds.columns)
    Z = ds.X * s
    G = _rejected_points(Z, ds.y, tau, alpha, kind, procedure, scaling)
    return UpperSetRegion(
        side=side,
        tau=tau,
        alpha=alpha,
        columns=ds.columns,
        generators=G * s,
        kind=kind,
        procedure=procedure,
        scaling=scaling,
    )


def select_upper(
    ds: Dataset,
    tau: float,
    alpha: float,
    kind: str = "binary",
    procedure: str = "dag",
    scaling: str = "unit_variance",
    side: str = "upper",
) -> UpperSetRegion:
    """Upper confidence set for ``{x : eta(x) >= tau}`` by duality.

    The lower procedure is run on negated covariates with responses
    ``1 - Y`` and threshold ``1 - tau`` (binary) or ``-Y`` and ``-tau``
    (quantile); every point it certifies, together with everything below it,
    is excluded.
    """
    _check_common(ds, tau, alpha, kind, procedure, scaling)
    s = direction_signs(ds.columns)
    Z = -(ds.X * s)
    if kind == "binary":
        y_neg, tau_neg = 1.0 - ds.y, 1.0 - tau
    else:
        y_neg, tau_neg = -ds.y, -tau
    G_neg = _rejected_points(Z, y_neg, tau_neg, alpha, kind, procedure, scaling)
    # -G_neg are the maximal excluded points in adjusted coordinates
    return UpperSetRegion(
        side=side,
        tau=tau,
        alpha=alpha,
        columns=ds.columns,
        generators=np.empty((0, ds.d)),
        excluded=(-G_neg) * s,
        kind=kind,
        procedure=procedure,
        scaling=scaling,
    )


def select_two_sided(
    ds: Dataset,
    tau: float,
    alpha: float,
    kind: str = "binary",
    procedure: str = "dag",
    scaling: str = "unit_variance",
):
    """Two-sided pair ``(L, U)`` at level ``alpha / 2`` each.

    The upper set is returned as ``U ∪ L`` so that ``L ⊆ U`` holds on every
    dataset; the union only differs from ``U`` on outcomes where one of the
    two bounds has already failed, so coverage is unchanged.
    """
    half = alpha / 2.0
    lower = select_lower(ds, tau, half, kind, procedure, scaling, side="two-sided-lower")
    upper = select_upper(ds, tau, half, kind, procedure, scaling, side="two-sided-upper")
    upper.generators = lower.generators.copy()
    return lower, upper
