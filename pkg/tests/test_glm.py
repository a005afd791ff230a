import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from subsel import glm
from subsel.data import ColumnSpec, Dataset
from subsel.errors import ConfigError, DataError, DomainError, SeparationError
from subsel.glm import BandRegion, GlmFit, critical_value, fit_glm, select


def ds_from(X, y, kinds=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    kinds = kinds or ["continuous"] * X.shape[1]
    cols = tuple(ColumnSpec(f"x{j}", k, "none") for j, k in enumerate(kinds))
    return Dataset(cols, X, np.asarray(y, dtype=float))


def logistic_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(-1 + 3 * x)))).astype(float)
    return ds_from(x, y)


def test_identity_noiseless():
    x = np.linspace(0, 1, 11)
    fit = fit_glm(ds_from(x, 1 + 2 * x), "identity")
    assert np.allclose(fit.beta_hat, [1.0, 2.0], atol=1e-12)
    assert fit.sigma_hat == pytest.approx(0.0, abs=1e-7)


def test_logit_symmetry():
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, -1.5, 1.5])
    y = np.array([0, 1, 0, 1, 0, 1, 1, 0], dtype=float)
    # mirror each row with flipped label
    fit = fit_glm(ds_from(np.r_[x, -x], np.r_[y, 1 - y]), "logit")
    assert abs(fit.beta_hat[0]) < 1e-6


def test_logit_matches_statsmodels():
    ds = logistic_data()
    fit = fit_glm(ds, "logit")
    ref = sm.GLM(ds.y, sm.add_constant(ds.X), family=sm.families.Binomial()).fit()
    assert np.allclose(fit.beta_hat, ref.params, atol=1e-6)
    assert np.allclose(fit.V_hat, ref.cov_params(), rtol=1e-5)


def test_identity_matches_statsmodels():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(100, 2))
    y = X @ [1.0, -2.0] + rng.standard_normal(100)
    fit = fit_glm(ds_from(X, y), "identity")
    ref = sm.OLS(y, sm.add_constant(X)).fit()
    assert np.allclose(fit.beta_hat, ref.params)
    assert np.allclose(fit.V_hat, ref.cov_params())
    assert fit.residual_df == 97


def test_separation():
    x = np.arange(10.0)
    with pytest.raises(SeparationError):
        fit_glm(ds_from(x, (x > 4.5).astype(float)), "logit")


def test_logit_requires_binary():
    with pytest.raises(DataError):
        fit_glm(ds_from(np.arange(5.0), np.arange(5.0)), "logit")
    with pytest.raises(ConfigError):
        fit_glm(ds_from(np.arange(5.0), np.zeros(5)), "probit")


def test_categorical_dummies():
    codes = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 1], dtype=float)
    rng = np.random.default_rng(0)
    y = codes + rng.standard_normal(10) * 0.1
    fit = fit_glm(ds_from(codes, y, ["categorical"]), "identity")
    assert fit.beta_hat.shape == (3,)
    assert fit.linear_predictor(np.array([[2.0]]))[0] == pytest.approx(fit.beta_hat[0] + fit.beta_hat[2])


def test_fit_invariants_and_roundtrip():
    fit = fit_glm(logistic_data(), "logit")
    assert fit.beta_hat.shape == (2,)
    assert np.allclose(fit.V_hat, fit.V_hat.T)
    assert np.all(np.linalg.eigvalsh(fit.V_hat) > 0)
    back = GlmFit.from_dict(fit.to_dict())
    assert np.array_equal(back.beta_hat, fit.beta_hat)


def test_critical_values_single_point():
    fit = fit_glm(logistic_data(), "logit")
    K = np.array([[0.5]])
    c1 = critical_value(fit, K, 0.1, "one", 200_000, seed=11)
    c2 = critical_value(fit, K, 0.1, "two", 200_000, seed=11)
    assert c1 == pytest.approx(norm.ppf(0.9), abs=0.01)
    assert c2 == pytest.approx(norm.ppf(0.95), abs=0.01)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 30))
def test_critical_value_monotone_in_K(seed, m):
    fit = fit_glm(logistic_data(200, seed=3), "logit")
    rng = np.random.default_rng(seed)
    K = rng.uniform(size=(m, 1))
    K2 = np.vstack([K, rng.uniform(size=(5, 1))])
    assert critical_value(fit, K, 0.1, n_sims=500, seed=seed) <= critical_value(fit, K2, 0.1, n_sims=500, seed=seed)


def test_critical_value_domain():
    fit = fit_glm(logistic_data(), "logit")
    with pytest.raises(DomainError):
        critical_value(fit, np.array([[0.5]]), 1.5)


def test_hand_arithmetic_band():
    fit = GlmFit(link="identity", columns=(ColumnSpec("x", direction="none"),),
                 beta_hat=np.array([0.0, 1.0]), V_hat=np.diag([0.01, 0.01]), n=10)
    region = BandRegion(fit=fit, c=1.2816, g_tau=0.5, mode="lower", K=np.array([[0.9]]))
    assert region.bounds(np.array([[0.9]]))[0] == pytest.approx(0.9 - 1.2816 * np.sqrt(0.01 * 1.81), abs=1e-12)
    assert region.bounds(np.array([[0.9]]))[0] == pytest.approx(0.7276, abs=1e-4)
    assert bool(region.membership(np.array([0.9])))


def test_zero_c_is_plugin():
    ds = logistic_data()
    fit = fit_glm(ds, "logit")
    K = glm.evaluation_set(ds)
    region = select(fit, K, 0.5, 0.1, c=0.0)
    assert np.array_equal(region.membership(K), fit.linear_predictor(K) >= 0.0)


def test_band_monotone_in_c():
    ds = logistic_data()
    fit = fit_glm(ds, "logit")
    K = glm.evaluation_set(ds)
    lo1, lo2 = (select(fit, K, 0.6, 0.1, "lower", c=c).membership(K) for c in (1.0, 2.0))
    up1, up2 = (select(fit, K, 0.6, 0.1, "upper", c=c).membership(K) for c in (1.0, 2.0))
    assert np.all(lo2 <= lo1) and np.all(up1 <= up2)


def test_two_sided_sandwich():
    ds = logistic_data()
    fit = fit_glm(ds, "logit")
    K = glm.evaluation_set(ds)
    lo = select(fit, K, 0.6, 0.1, "two-sided-lower", seed=5)
    up = select(fit, K, 0.6, 0.1, "two-sided-upper", seed=5)
    assert lo.c == up.c
    probes = np.linspace(-1, 2, 301)[:, None]
    assert np.all(lo.membership(probes) <= up.membership(probes))


def test_larger_se_never_gains_membership():
    fit = GlmFit(link="identity", columns=(ColumnSpec("x", direction="none"),),
                 beta_hat=np.array([1.0, 0.0]), V_hat=np.diag([0.01, 0.04]), n=10)
    region = BandRegion(fit=fit, c=1.5, g_tau=0.75, mode="lower", K=np.array([[0.0]]))
    near, far = region.membership(np.array([[0.1], [3.0]]))
    assert near and not far


def test_region_metadata():
    ds = logistic_data()
    fit = fit_glm(ds, "logit")
    K = glm.evaluation_set(ds)
    region = select(fit, K, 0.5, 0.1, seed=2)
    d = region.to_dict()
    assert d["g_tau"] == 0.0 and d["seed"] == 2 and len(d["K_digest"]) == 64
    assert region.extrapolated(np.array([[-1.0], [0.5]])).tolist() == [True, False]
    with pytest.raises(DataError):
        region.membership(np.zeros((2, 3)))


def test_link_transform():
    assert glm.link_transform("identity", 3.0) == 3.0
    assert glm.link_transform("logit", 0.5) == 0.0
    with pytest.raises(DomainError):
        glm.link_transform("logit", 1.0)


def test_order_statistic():
    v = np.arange(1.0, 11.0)
    assert glm.order_statistic_quantile(v, 0.1) == 9.0
    assert glm.order_statistic_quantile(v, 0.05) == 10.0
