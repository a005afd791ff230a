"""Doubly-robust pseudo-outcomes with cross-fitting.

For row ``i`` in fold ``k(i)`` the nuisance models are fitted on the other
folds and

    Y~_i = m1(X_i) - m0(X_i) + (T_i - pi(X_i)) / (pi(X_i) (1 - pi(X_i))) * (Y_i - m_{T_i}(X_i)),

whose conditional mean given ``X_i = x`` is the CATE at ``x`` whenever either
the outcome models or the propensity model are correct.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import ConfigError, DataError, DomainError, FoldError
from .glm import irls_logistic

logger = logging.getLogger(__name__)

RIDGE_PENALTY = 1e-3


class NuisanceLearner(Protocol):
    name: str

    def fit(self, X: np.ndarray, y: np.ndarray) -> "NuisanceLearner": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


def _with_intercept(X):
    X = np.asarray(X, dtype=float)
    return np.hstack([np.ones((X.shape[0], 1)), X])


class RidgeRegression:
    """Least squares with a small ridge penalty (intercept unpenalised)."""

    name = "ridge"

    def __init__(self, penalty: float = RIDGE_PENALTY):
        self.penalty = penalty
        self.coef_ = None

    def fit(self, X, y):
        Xd = _with_intercept(X)
        pen = np.full(Xd.shape[1], self.penalty)
        pen[0] = 0.0
        self.coef_ = np.linalg.solve(Xd.T @ Xd + np.diag(pen), Xd.T @ np.asarray(y, float))
        return self

    def predict(self, X):
        return _with_intercept(X) @ self.coef_


class RidgeLogistic:
    """Ridge-penalised logistic regression; predicts probabilities."""

    name = "ridge_logistic"

    def __init__(self, penalty: float = RIDGE_PENALTY):
        self.penalty = penalty
        self.coef_ = None

    def fit(self, X, y):
        self.coef_, _ = irls_logistic(
            _with_intercept(X), np.asarray(y, float), self.penalty, check_separation=False
        )
        return self

    def predict(self, X):
        return expit(_with_intercept(X) @ self.coef_)


class ConstantLearner:
    """Ignores the training data and predicts a fixed value."""

    def __init__(self, value: float, name: str = "constant"):
        self.value = float(value)
        self.name = name

    def fit(self, X, y):
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


class FunctionLearner:
    """Wraps a known function of the covariates (e.g. a true nuisance)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def fit(self, X, y):
        return self

    def predict(self, X):
        return np.asarray(self.fn(np.asarray(X, dtype=float)), dtype=float)


def known_propensity(p: float) -> ConstantLearner:
    """Propensity learner for a randomised trial with known allocation ``p``."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"propensity must lie in (0, 1), got {p}")
    return ConstantLearner(p, name=f"known_propensity({p:g})")


@dataclass
class Learners:
    """Factories producing fresh nuisance learners for each fold."""

    outcome0: Callable[[], NuisanceLearner]
    outcome1: Callable[[], NuisanceLearner]
    propensity: Callable[[], NuisanceLearner]

    @classmethod
    def default(cls, binary_outcome: bool = False, propensity: float | None = 0.5):
        outcome = RidgeLogistic if binary_outcome else RidgeRegression
        if propensity is None:
            prop = RidgeLogistic
        else:
            known_propensity(propensity)
            prop = lambda: known_propensity(propensity)  # noqa: E731
        return cls(outcome0=outcome, outcome1=outcome, propensity=prop)

    @classmethod
    def from_instances(cls, outcome0, outcome1, propensity):
        return cls(lambda: outcome0, lambda: outcome1, lambda: propensity)


@dataclass(frozen=True)
class FoldAssignment:
    K: int
    folds: np.ndarray

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.folds == k)


def assign_folds(n: int, K: int, seed) -> FoldAssignment:
    """Random split of ``range(n)`` into ``K`` folds whose sizes differ by at most one.

    The first ``n % K`` folds receive the extra rows.
    """
    if K < 2:
        raise ConfigError(f"need at least two folds, got K={K}")
    if K > n:
        raise ConfigError(f"cannot split {n} rows into {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(perm, K)):
        folds[chunk] = k
    return FoldAssignment(K=K, folds=folds)


@dataclass
class PseudoOutcomeSet:
    y_tilde: np.ndarray
    provenance: dict = field(default_factory=dict)
    # row indices each fold's learners were trained on
    training_rows: dict = field(default_factory=dict)


def dr_pseudo_outcome(y, t, m0, m1, pi):
    """The doubly-robust transformation at given nuisance predictions."""
    m_t = np.where(t == 1, m1, m0)
    return m1 - m0 + (t - pi) / (pi * (1.0 - pi)) * (y - m_t)


def crossfit(
    ds: Dataset,
    folds: FoldAssignment,
    learners: Learners | None = None,
    clip: tuple[float, float] = (0.01, 0.99),
) -> PseudoOutcomeSet:
    """Cross-fitted doubly-robust pseudo-outcomes for every row of ``ds``."""
    if ds.t is None:
        raise DataError("crossfit needs a treatment vector")
    lo, hi = clip
    if not (0.0 < lo <= hi < 1.0):
        raise DomainError(f"clip bounds must satisfy 0 < lo <= hi < 1, got {clip}")
    if folds.folds.shape[0] != ds.n:
        raise ConfigError("fold assignment does not match dataset size")
    if learners is None:
        learners = Learners.default(binary_outcome=ds.is_binary_response())
    X, y, t = ds.X, ds.y, ds.t
    y_tilde = np.empty(ds.n)
    training = {}
    names = {}
    for k in range(folds.K):
        test = folds.folds == k
        train = ~test
        t_train = t[train]
        if not (np.any(t_train == 1) and np.any(t_train == 0)):
            raise FoldError(f"fold {k}: a treatment arm is absent from the training rows")
        X_tr, y_tr = X[train], y[train]
        m0 = learners.outcome0().fit(X_tr[t_train == 0], y_tr[t_train == 0])
        m1 = learners.outcome1().fit(X_tr[t_train == 1], y_tr[t_train == 1])
        ps = learners.propensity().fit(X_tr, t_train)
        names = {"outcome0": m0.name, "outcome1": m1.name, "propensity": ps.name}
        X_te = X[test]
        pi = np.clip(ps.predict(X_te), lo, hi)
        y_tilde[test] = dr_pseudo_outcome(y[test], t[test], m0.predict(X_te), m1.predict(X_te), pi)
        training[k] = np.flatnonzero(train)
    if not np.all(np.isfinite(y_tilde)):
        raise DataError("non-finite pseudo-outcome produced")
    provenance = {"learners": names, "K": folds.K, "clip": [lo, hi]}
    return PseudoOutcomeSet(y_tilde=y_tilde, provenance=provenance, training_rows=training)


def pseudo_outcomes(ds: Dataset, K: int = 4, seed=0, learners=None, clip=(0.01, 0.99),
                    max_reseeds: int = 10) -> PseudoOutcomeSet:
    """:func:`crossfit` with a fresh fold draw whenever a fold lacks an arm."""
    ss = np.random.SeedSequence(seed)
    for attempt, child in enumerate(ss.spawn(max_reseeds)):
        folds = assign_folds(ds.n, K, child)
        try:
            out = crossfit(ds, folds, learners, clip)
        except FoldError:
            logger.info("fold draw %d lacks a treatment arm; redrawing", attempt)
            continue
        out.provenance.update({"seed": seed, "fold_attempt": attempt})
        return out
    raise FoldError(f"no valid fold assignment in {max_reseeds} attempts")
