"""Subgroup selection from simultaneous confidence bands in a GLM.

Under ``g(eta(x)) = phi(x)' beta`` with increasing link ``g`` the superlevel
set ``{eta >= tau}`` equals ``{phi(x)' beta >= g(tau)}``.  A band
``phi(x)' beta_hat -/+ c * se(x)`` that holds simultaneously over a finite
evaluation set ``K`` therefore yields lower and upper confidence sets.  The
critical value ``c`` is the simulated quantile of the supremum of the
standardised Gaussian process ``phi(x)' Z / se(x)`` over ``K``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlog1py, xlogy

from .data import ColumnSpec, Dataset
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    SeparationError,
    SingularDesignError,
)

LINKS = ("identity", "logit")
MODES = ("lower", "upper", "two-sided-lower", "two-sided-upper")

MAX_ITER = 100
TOL = 1e-8
MAX_HALVINGS = 20
SEPARATION_BOUND = 30.0


def design_matrix(columns, X, n_levels=None) -> np.ndarray:
    """Main-effects feature map with intercept.

    Continuous and binary columns enter as they are; categorical columns with
    more than two levels are expanded into treatment-coded dummies.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    parts = [np.ones((X.shape[0], 1))]
    for j, col in enumerate(columns):
        levels = None if n_levels is None else n_levels[j]
        if col.kind == "categorical" and levels is not None and levels > 2:
            codes = X[:, j].astype(int)
            parts.append((codes[:, None] == np.arange(1, levels)[None, :]).astype(float))
        else:
            parts.append(X[:, j : j + 1])
    return np.hstack(parts)


def _category_counts(columns, X):
    return tuple(
        int(X[:, j].max()) + 1 if c.kind == "categorical" and X.shape[0] else None
        for j, c in enumerate(columns)
    )


def _deviance(Xd, y, beta, penalty):
    eta = Xd @ beta
    mu = expit(eta)
    ll = xlogy(y, mu) + xlog1py(1.0 - y, -mu)
    return -2.0 * ll.sum() + penalty * np.sum(beta[1:] ** 2)


def irls_logistic(Xd, y, penalty: float = 0.0, check_separation: bool = True):
    """Logistic regression by iteratively reweighted least squares.

    Starts at zero, halves the step while the (penalised) deviance increases
    and stops once no coefficient moves by more than ``1e-8``.  A ridge
    ``penalty`` applies to all coefficients but the intercept.

    Returns ``(beta, fisher_information)``.
    """
    n, p = Xd.shape
    beta = np.zeros(p)
    pen = np.full(p, penalty)
    pen[0] = 0.0
    dev = _deviance(Xd, y, beta, penalty)
    converged = False
    for _ in range(MAX_ITER):
        eta = Xd @ beta
        mu = expit(eta)
        w = np.clip(mu * (1.0 - mu), 1e-12, None)
        info = (Xd * w[:, None]).T @ Xd + np.diag(pen)
        grad = Xd.T @ (y - mu) - pen * beta
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularDesignError("information matrix is singular") from None
        new = beta + step
        new_dev = _deviance(Xd, y, new, penalty)
        halvings = 0
        while not new_dev <= dev and halvings < MAX_HALVINGS:
            step /= 2.0
            new = beta + step
            new_dev = _deviance(Xd, y, new, penalty)
            halvings += 1
        delta = np.max(np.abs(new - beta))
        beta, dev = new, new_dev
        if delta < TOL:
            converged = True
            break
    if check_separation and (not converged or np.max(np.abs(Xd @ beta)) > SEPARATION_BOUND):
        raise SeparationError(
            "logistic fit did not converge to a finite estimate (separated data?)"
        )
    mu = expit(Xd @ beta)
    w = mu * (1.0 - mu)
    info = (Xd * w[:, None]).T @ Xd + np.diag(pen)
    return beta, info


@dataclass
class GlmFit:
    link: str
    columns: tuple[ColumnSpec, ...]
    beta_hat: np.ndarray
    V_hat: np.ndarray
    n: int
    residual_df: int | None = None
    sigma_hat: float | None = None
    # (X'X)^-1 for the identity link; the studentised simulation needs it
    unscaled_cov: np.ndarray | None = None
    n_levels: tuple = ()

    def features(self, X) -> np.ndarray:
        return design_matrix(self.columns, X, self.n_levels or None)

    def linear_predictor(self, X) -> np.ndarray:
        return self.features(X) @ self.beta_hat

    def se(self, X) -> np.ndarray:
        F = self.features(X)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", F, self.V_hat, F), 0.0))

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "columns": [c.to_dict() for c in self.columns],
            "beta_hat": self.beta_hat.tolist(),
            "V_hat": self.V_hat.tolist(),
            "n": self.n,
            "residual_df": self.residual_df,
            "sigma_hat": self.sigma_hat,
            "unscaled_cov": None if self.unscaled_cov is None else self.unscaled_cov.tolist(),
            "n_levels": list(self.n_levels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmFit":
        return cls(
            link=d["link"],
            columns=tuple(ColumnSpec.from_dict(c) for c in d["columns"]),
            beta_hat=np.array(d["beta_hat"], dtype=float),
            V_hat=np.array(d["V_hat"], dtype=float),
            n=d["n"],
            residual_df=d.get("residual_df"),
            sigma_hat=d.get("sigma_hat"),
            unscaled_cov=None
            if d.get("unscaled_cov") is None
            else np.array(d["unscaled_cov"], dtype=float),
            n_levels=tuple(d.get("n_levels", ())),
        )


def fit_glm(ds: Dataset, link: str = "logit", penalty: float = 0.0) -> GlmFit:
    """Fit a main-effects GLM by least squares (identity) or IRLS (logit)."""
    if link not in LINKS:
        raise ConfigError(f"unknown link {link!r}")
    n_levels = _category_counts(ds.columns, ds.X)
    Xd = design_matrix(ds.columns, ds.X, n_levels)
    n, p = Xd.shape
    if n < p or np.linalg.matrix_rank(Xd) < p:
        raise SingularDesignError("design matrix does not have full column rank")
    y = ds.y
    if link == "identity":
        if n <= p:
            raise SingularDesignError("no residual degrees of freedom")
        XtX = Xd.T @ Xd
        M = np.linalg.inv(XtX)
        beta = np.linalg.solve(XtX, Xd.T @ y)
        rss = float(np.sum((y - Xd @ beta) ** 2))
        df = n - p
        sigma2 = rss / df
        return GlmFit(
            link=link,
            columns=ds.columns,
            beta_hat=beta,
            V_hat=sigma2 * M,
            n=n,
            residual_df=df,
            sigma_hat=math.sqrt(sigma2),
            unscaled_cov=M,
            n_levels=n_levels,
        )
    if not ds.is_binary_response():
        raise DataError("logit link requires responses in {0, 1}")
    beta, info = irls_logistic(Xd, y, penalty)
    try:
        V = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularDesignError("Fisher information is singular") from None
    return GlmFit(link=link, columns=ds.columns, beta_hat=beta, V_hat=V, n=n, n_levels=n_levels)


def link_transform(link: str, tau: float) -> float:
    if link == "identity":
        return float(tau)
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1) under the logit link, got {tau}")
    return math.log(tau / (1.0 - tau))


def _chol(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericError("covariance matrix is not positive definite") from None


def simulate_sup(fit: GlmFit, K, sided: str, n_sims: int, seed, chunk: int = 2048):
    """Simulated supremum statistics over ``K``, one per draw.

    The Gaussian draws (and, for the identity link, the chi-square scale
    factors) depend only on ``seed``, ``n_sims`` and the coefficient
    dimension, so two evaluation sets share the same draws.
    """
    if sided not in ("one", "two"):
        raise ConfigError(f"sided must be 'one' or 'two', got {sided!r}")
    F = fit.features(np.asarray(K, dtype=float))
    if F.shape[0] == 0:
        raise ConfigError("evaluation set K is empty")
    rng = np.random.default_rng(seed)
    p = F.shape[1]
    if fit.link == "identity":
        S = fit.unscaled_cov
        E = rng.standard_normal((n_sims, p))
        scale = np.sqrt(rng.chisquare(fit.residual_df, size=n_sims) / fit.residual_df)
    else:
        S = fit.V_hat
        E = rng.standard_normal((n_sims, p))
        scale = np.ones(n_sims)
    Z = E @ _chol(S).T
    sd = np.sqrt(np.einsum("ij,jk,ik->i", F, S, F))
    if np.any(sd <= 0):
        raise NumericError("zero standard error at an evaluation point")
    out = np.empty(n_sims)
    for start in range(0, n_sims, chunk):
        block = (Z[start : start + chunk] @ F.T) / sd[None, :]
        if sided == "two":
            block = np.abs(block)
        out[start : start + chunk] = block.max(axis=1) / scale[start : start + chunk]
    return out


def order_statistic_quantile(values, alpha: float) -> float:
    """Order statistic of rank ceil((1 - alpha) * n)."""
    n = values.shape[0]
    k = math.ceil(round((1.0 - alpha) * n, 9))
    k = min(max(k, 1), n)
    return float(np.partition(values, k - 1)[k - 1])


def critical_value(fit: GlmFit, K, alpha: float, sided: str = "one", n_sims: int = 1000, seed=0):
    """Monte-Carlo critical value for a band simultaneous over ``K``."""
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if n_sims < 100:
        raise ConfigError("n_sims must be at least 100")
    stats = simulate_sup(fit, K, sided, n_sims, seed)
    return max(0.0, order_statistic_quantile(stats, alpha))


@dataclass
class BandRegion:
    fit: GlmFit
    c: float
    g_tau: float
    mode: str
    K: np.ndarray
    tau: float | None = None
    alpha: float | None = None
    seed: object = None

    @property
    def side(self) -> str:
        return self.mode

    def bounds(self, X) -> np.ndarray:
        sign = -1.0 if self.mode in ("lower", "two-sided-lower") else 1.0
        return self.fit.linear_predictor(X) + sign * self.c * self.fit.se(X)

    def membership(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        single = P.ndim == 1
        P = P.reshape(1, -1) if single else P
        if P.shape[1] != len(self.fit.columns):
            raise DataError(
                f"points have {P.shape[1]} coordinates, model has {len(self.fit.columns)}"
            )
        inside = self.bounds(P) >= self.g_tau
        return inside[0] if single else inside

    def extrapolated(self, points) -> np.ndarray:
        """Flag points outside the bounding box of the evaluation set."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = self.K.min(axis=0), self.K.max(axis=0)
        return np.any((P < lo) | (P > hi), axis=1)

    def is_empty(self) -> bool:
        return not bool(self.membership(self.K).any())

    def K_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.K, dtype=float).tobytes()).hexdigest()

    def to_dict(self) -> dict:
        d = self.fit.to_dict()
        d.update(
            {
                "c": self.c,
                "g_tau": self.g_tau,
                "mode": self.mode,
                "tau": self.tau,
                "alpha": self.alpha,
                "K_digest": self.K_digest(),
                "K_size": int(self.K.shape[0]),
                "seed": self.seed,
            }
        )
        return d


def evaluation_set(ds: Dataset, grid=None) -> np.ndarray:
    """Observed covariate vectors, plus an optional probe grid."""
    K = ds.X
    if grid is not None:
        K = np.vstack([K, np.asarray(grid, dtype=float).reshape(-1, ds.d)])
    return np.unique(K, axis=0)


def select(
    fit: GlmFit,
    K,
    tau: float,
    alpha: float,
    mode: str = "lower",
    n_sims: int = 1000,
    seed=0,
    c: float | None = None,
) -> BandRegion:
    """Band-defined confidence set for ``{x : eta(x) >= tau}``.

    One-sided modes use the one-sided critical value, two-sided modes the
    two-sided one at the same ``alpha``.  Passing ``c`` skips the simulation.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    g_tau = link_transform(fit.link, tau)
    K = np.asarray(K, dtype=float).reshape(-1, len(fit.columns))
    if c is None:
        sided = "two" if mode.startswith("two-sided") else "one"
        c = critical_value(fit, K, alpha, sided, n_sims, seed)
    return BandRegion(fit=fit, c=float(c), g_tau=g_tau, mode=mode, K=K, tau=tau, alpha=alpha, seed=seed)
