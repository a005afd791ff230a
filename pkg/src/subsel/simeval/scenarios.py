"""Ground truths, covariate generators and response models.

Regression scenarios describe the probability of staying free of an adverse
event as a function of a single exposure covariate on [0, 1] (optionally
with a binary group).  Their shapes are parametric stand-ins whose
superlevel-set sizes are calibrated to the reference values; the CATE
scenarios use the published treatment-effect functions verbatim on 30
covariates (8 binary, 22 continuous).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import norm

from ..data import ColumnSpec
from ..errors import ConfigError, DataError

CALIBRATION_GRID = 200_001


@dataclass(frozen=True)
class GroundTruth:
    """A regression function (or CATE) with its threshold and covariate law.

    ``eval`` and ``prognostic`` act on full covariate matrices as produced by
    :func:`sample_covariates`; ``selection`` lists the column indices (and
    specs, with monotone directions) handed to the selection methods.
    """

    name: str
    label: str
    kind: str  # 'regression' or 'cate'
    tau: float
    eval: Callable[[np.ndarray], np.ndarray]
    generators: tuple[str, ...]
    selection: tuple[int, ...]
    selection_columns: tuple[ColumnSpec, ...]
    target_size: float
    reference_size: float | None = None
    prognostic: Callable[[np.ndarray], np.ndarray] | None = None
    nuisance: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.generators)

    def s_tau_member(self, X, tau=None) -> np.ndarray:
        tau = self.tau if tau is None else tau
        return self.eval(np.atleast_2d(X)) >= tau

    def with_tau(self, tau: float) -> "GroundTruth":
        from dataclasses import replace

        return replace(self, tau=float(tau), target_size=float("nan"))


# --------------------------------------------------------------------------
# regression stand-ins (one exposure covariate, decreasing effect)

EXPOSURE = (ColumnSpec("exposure", "continuous", "decreasing"),)
LOGISTIC_SLOPE = -4.0
QUADRATIC_CURVATURE = -36.0
QUADRATIC_ROOTS_GAP = 0.5
STEP_LEVELS = (0.55, 0.15)
NONSMOOTH_KNOTS = (
    (0.0, 0.15, 0.30, 0.45, 0.55, 0.70, 0.85, 1.0),
    (0.66, 0.50, 0.58, 0.45, 0.38, 0.30, 0.34, 0.20),
)


def _grid():
    return np.linspace(0.0, 1.0, CALIBRATION_GRID)


def calibrate_intercept(shape: Callable[[np.ndarray, float], np.ndarray], tau: float,
                        target: float, bracket=(-50.0, 50.0)) -> float:
    """Find the intercept ``a`` with ``P(shape(U, a) >= tau) = target``, U ~ Unif[0, 1].

    ``shape`` must be nondecreasing in ``a``; the measure is taken on a fine
    grid and the root located by Brent's bisection-type method.
    """
    u = _grid()

    def gap(a):
        return np.mean(shape(u, a) >= tau) - target

    return brentq(gap, *bracket, xtol=1e-12)


def _logistic(tau=0.76, size=0.50, slope=LOGISTIC_SLOPE):
    shape = lambda u, a: expit(a + slope * u)  # noqa: E731
    a = calibrate_intercept(shape, tau, size)
    return a, slope


def _regression(name, label, tau, fn, reference_size, params, columns=EXPOSURE, generators=("uniform",)):
    return GroundTruth(
        name=name,
        label=label,
        kind="regression",
        tau=tau,
        eval=fn,
        generators=generators,
        selection=tuple(range(len(columns))),
        selection_columns=columns,
        target_size=float("nan"),
        reference_size=reference_size,
        params=params,
    )


def _logistic_model():
    a, b = _logistic()
    fn = lambda X: expit(a + b * X[:, 0])  # noqa: E731
    return _regression("logistic", "Logistic model", 0.76, fn, 0.50, {"a": a, "b": b})


def _logistic_truncated():
    a, b = _logistic()
    cap = 0.76 - 0.01
    fn = lambda X: np.minimum(expit(a + b * X[:, 0]), cap)  # noqa: E731
    return _regression(
        "logistic_truncated", "Logistic model (truncated)", 0.76, fn, 0.0,
        {"a": a, "b": b, "cap": cap},
    )


def _step():
    hi, lo = STEP_LEVELS
    cut = 0.78
    fn = lambda X: np.where(X[:, 0] <= cut, hi, lo)  # noqa: E731
    return _regression("step", "Step function", 0.34, fn, 0.78, {"cut": cut, "levels": [hi, lo]})


def _logistic_quadratic():
    # logit eta = a + b x + c x^2 with c < 0: a hump whose top part is S_tau
    tau, c = 0.75, QUADRATIC_CURVATURE
    gap = QUADRATIC_ROOTS_GAP
    # roots r1 < r2 of a + b x + c x^2 = logit(tau) with r2 - r1 = gap, r1 fixed
    r1 = 0.08
    r2 = r1 + gap
    b = -c * (r1 + r2)

    def shape(u, a):
        return expit(a + b * u + c * u**2)

    a = calibrate_intercept(shape, tau, gap)
    fn = lambda X: shape(X[:, 0], a)  # noqa: E731
    return _regression(
        "logistic_quadratic", "Logistic model (quadratic component)", tau, fn, 0.50,
        {"a": a, "b": b, "c": c},
    )


def _nonsmooth():
    xs, ys = (np.array(v) for v in NONSMOOTH_KNOTS)
    fn = lambda X: np.interp(X[:, 0], xs, ys)  # noqa: E731
    return _regression(
        "nonsmooth_nonmonotone", "Non-smooth & non-monotone", 0.38, fn, 0.55,
        {"knots": [xs.tolist(), ys.tolist()]},
    )


GROUP_SHIFT = 0.8


def _logistic_group(interaction: bool):
    # exposure (decreasing) plus a binary group raising eta
    tau = 0.76 if not interaction else 0.92
    cols = (
        ColumnSpec("exposure", "continuous", "decreasing"),
        ColumnSpec("group", "binary", "increasing"),
    )
    slope = LOGISTIC_SLOPE
    if interaction:
        def shape(X, a):
            return expit(a + (slope - 2.0 * X[:, 1]) * X[:, 0] + 2.0 * GROUP_SHIFT * X[:, 1])
    else:
        def shape(X, a):
            return expit(a + slope * X[:, 0] + GROUP_SHIFT * X[:, 1])
    u = _grid()
    both = np.column_stack([np.concatenate([u, u]), np.repeat([0.0, 1.0], u.size)])
    a = brentq(lambda a: np.mean(shape(both, a) >= tau) - 0.5, -50, 50, xtol=1e-12)
    name = "logistic_interaction_group" if interaction else "logistic_additive_group"
    label = "Logistic model (interaction)" if interaction else "Logistic model (additive)"
    gt = _regression(
        name, label, tau, lambda X: shape(X, a), 0.50, {"a": a, "slope": slope},
        columns=cols, generators=("uniform", "bernoulli"),
    )
    return gt


# --------------------------------------------------------------------------
# treatment-effect scenarios (30 covariates; columns 1..8 binary)

N_CATE_COLUMNS = 30
N_BINARY = 8


def _x(X, j):
    """1-based covariate accessor matching the usual x^(j) notation."""
    return X[:, j - 1]


def _cate(name, label, pred, prog, beta0, beta1, tau, reference_size, target, selection, nuisance):
    cols = tuple(
        ColumnSpec(f"x{j}", "binary" if j <= N_BINARY else "continuous", direction)
        for j, direction in selection
    )
    return GroundTruth(
        name=name,
        label=label,
        kind="cate",
        tau=tau,
        eval=lambda X: beta0 + beta1 * pred(X),
        generators=tuple("bernoulli" if j <= N_BINARY else "uniform"
                         for j in range(1, N_CATE_COLUMNS + 1)),
        selection=tuple(j - 1 for j, _ in selection),
        selection_columns=cols,
        target_size=target,
        reference_size=reference_size,
        prognostic=prog,
        nuisance=tuple(j - 1 for j in nuisance),
        params={"beta0": beta0, "beta1": beta1},
    )


def _gaussian_cdf():
    b0, b1, tau = -0.11, 1.53, 0.17
    cut = 0.5 + norm.ppf((tau - b0) / b1) / 20.0
    return _cate(
        "gaussian_cdf", "Gaussian CDF",
        pred=lambda X: norm.cdf(20.0 * (_x(X, 11) - 0.5)),
        prog=lambda X: 2.3 * (0.5 * (_x(X, 1) == 1) + _x(X, 11)),
        beta0=b0, beta1=b1, tau=tau, reference_size=0.52, target=1.0 - cut,
        selection=[(11, "increasing")], nuisance=[1, 11],
    )


def _linear():
    b0, b1, tau = -0.55, 6.62, 1.65
    return _cate(
        "linear", "Linear",
        pred=lambda X: _x(X, 14),
        prog=lambda X: 1.41 * (_x(X, 14) - (_x(X, 8) == 0)),
        beta0=b0, beta1=b1, tau=tau, reference_size=0.51, target=1.0 - (tau - b0) / b1,
        selection=[(14, "increasing")], nuisance=[8, 14],
    )


def _and_condition():
    return _cate(
        "and_condition", "'And'-condition",
        pred=lambda X: ((_x(X, 14) > 0.25) & (_x(X, 1) == 0)).astype(float),
        prog=lambda X: 1.38 * ((_x(X, 1) == 0) - 0.5 * _x(X, 17)),
        beta0=-0.10, beta1=5.07, tau=2.48, reference_size=0.46, target=0.75 * 0.5,
        selection=[(1, "decreasing"), (14, "increasing")], nuisance=[1, 14, 17],
    )


def _or_condition():
    return _cate(
        "or_condition", "'Or'-condition",
        pred=lambda X: ((_x(X, 14) > 0.3) | (_x(X, 4) == 1)).astype(float),
        prog=lambda X: 2.9 * (_x(X, 11) - _x(X, 14)),
        beta0=-0.45, beta1=2.44, tau=0.78, reference_size=0.81, target=1.0 - 0.3 * 0.5,
        selection=[(4, "increasing"), (14, "increasing")], nuisance=[4, 11, 14],
    )


_BUILDERS = {
    "logistic": _logistic_model,
    "logistic_truncated": _logistic_truncated,
    "step": _step,
    "logistic_quadratic": _logistic_quadratic,
    "nonsmooth_nonmonotone": _nonsmooth,
    "logistic_additive_group": lambda: _logistic_group(False),
    "logistic_interaction_group": lambda: _logistic_group(True),
    "gaussian_cdf": _gaussian_cdf,
    "linear": _linear,
    "and_condition": _and_condition,
    "or_condition": _or_condition,
}

_ALIASES = {
    "logistic model": "logistic",
    "logistic model (truncated)": "logistic_truncated",
    "step function": "step",
    "logistic model (quadratic component)": "logistic_quadratic",
    "non-smooth & non-monotone": "nonsmooth_nonmonotone",
    "logistic model (additive)": "logistic_additive_group",
    "logistic model (interaction)": "logistic_interaction_group",
    "gaussian cdf": "gaussian_cdf",
    "'and'-condition": "and_condition",
    "'or'-condition": "or_condition",
}

_CACHE: dict[str, GroundTruth] = {}


def scenario_names() -> list[str]:
    return list(_BUILDERS)


def scenario_library(name: str) -> GroundTruth:
    key = _ALIASES.get(name.strip().lower(), name.strip().lower())
    if key not in _BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(_BUILDERS)}")
    if key not in _CACHE:
        gt = _BUILDERS[key]()
        if gt.kind == "regression":
            gt = _with_grid_size(gt)
        _CACHE[key] = gt
    return _CACHE[key]


def _with_grid_size(gt: GroundTruth) -> GroundTruth:
    from dataclasses import replace

    u = _grid()
    if gt.d == 1:
        size = float(np.mean(gt.s_tau_member(u[:, None])))
    else:
        both = np.column_stack([np.concatenate([u, u]), np.repeat([0.0, 1.0], u.size)])
        size = float(np.mean(gt.s_tau_member(both)))
    return replace(gt, target_size=size)


# --------------------------------------------------------------------------
# sampling


def sample_covariates(gt: GroundTruth, n: int, seed) -> np.ndarray:
    """I.i.d. covariate rows: Uniform[0, 1] or Bernoulli(1/2) per column."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, gt.d))
    for j, g in enumerate(gt.generators):
        if g == "bernoulli":
            X[:, j] = (X[:, j] < 0.5).astype(float)
        elif g != "uniform":
            raise ConfigError(f"unknown covariate generator {g!r}")
    return X


RESPONSE_MODELS = ("bernoulli", "gaussian", "treatment", "ite")
ITE_VARIANCE = 2.0


def sample_responses(gt: GroundTruth, X, model: str = "bernoulli", seed=0, sigma: float = 1.0):
    """Draw responses (and treatments) at covariates ``X``.

    Returns ``(y, t)`` with ``t`` None except for the ``treatment`` model.
    """
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if model == "bernoulli":
        eta = gt.eval(X)
        if np.any((eta < 0) | (eta > 1)):
            raise DataError(f"scenario {gt.name!r}: eta outside [0, 1] under a Bernoulli model")
        return (rng.uniform(size=n) < eta).astype(float), None
    if model == "gaussian":
        return gt.eval(X) + sigma * rng.standard_normal(n), None
    if gt.kind != "cate":
        raise ConfigError(f"response model {model!r} needs a treatment-effect scenario")
    if model == "treatment":
        t = (rng.uniform(size=n) < 0.5).astype(float)
        y = gt.prognostic(X) + t * gt.eval(X) + rng.standard_normal(n)
        return y, t
    if model == "ite":
        return gt.eval(X) + math.sqrt(ITE_VARIANCE) * rng.standard_normal(n), None
    raise ConfigError(f"unknown response model {model!r}")


def default_response(gt: GroundTruth) -> str:
    return "bernoulli" if gt.kind == "regression" else "treatment"


def true_nuisances(gt: GroundTruth):
    """Outcome regressions per arm, as functions of the full covariate matrix."""
    if gt.kind != "cate":
        raise ConfigError("true nuisances exist only for treatment-effect scenarios")
    return (lambda X: gt.prognostic(X)), (lambda X: gt.prognostic(X) + gt.eval(X))
