import json
import math
from dataclasses import replace

import numpy as np
import pytest

from subsel.errors import ConfigError, DataError
from subsel.simeval import (
    MethodMetrics,
    MetricsReport,
    ScenarioSpec,
    estimate_metrics,
    replication_metrics,
    run_study,
    sample_covariates,
    sample_responses,
    scenario_library,
    scenario_names,
)
from subsel.simeval.scenarios import true_nuisances

# sizes of S_tau under Uniform / Bernoulli(1/2) covariates, computed by hand
# Gaussian CDF: 1 - (0.5 + Phi^{-1}((0.17 + 0.11) / 1.53) / 20)
SIZE_ORACLES = {
    "gaussian_cdf": 0.5451983338,
    "linear": 1 - (1.65 + 0.55) / 6.62,
    "and_condition": 0.375,
    "or_condition": 0.85,
}


def x_with(d, **cols):
    X = np.full((1, d), 0.5)
    for name, v in cols.items():
        X[0, int(name[1:]) - 1] = v
    return X


def test_cate_substitutions():
    assert scenario_library("gaussian_cdf").eval(x_with(30, x11=0.5))[0] == pytest.approx(0.655)
    assert scenario_library("linear").eval(x_with(30, x14=0.0))[0] == pytest.approx(-0.55)
    for x14 in (0.0, 0.2, 0.9):
        assert scenario_library("or_condition").eval(x_with(30, x4=1.0, x14=x14))[0] == pytest.approx(1.99)


def test_truncated_has_empty_superlevel_set():
    gt = scenario_library("logistic_truncated")
    u = np.linspace(0, 1, 10_001)[:, None]
    assert gt.eval(u).max() < gt.tau
    assert gt.target_size == 0.0


def test_aliases_and_unknown():
    assert scenario_library("Logistic model").name == "logistic"
    assert scenario_library("'Or'-condition").name == "or_condition"
    with pytest.raises(ConfigError):
        scenario_library("nope")


@pytest.mark.parametrize("name", list(SIZE_ORACLES))
def test_cate_size_targets(name):
    gt = scenario_library(name)
    assert gt.target_size == pytest.approx(SIZE_ORACLES[name], abs=1e-9)
    X = sample_covariates(gt, 200_000, 1)
    assert gt.s_tau_member(X).mean() == pytest.approx(SIZE_ORACLES[name], abs=0.01)


@pytest.mark.parametrize("name", [n for n in scenario_names() if scenario_library(n).kind == "regression"])
def test_regression_size_calibration(name):
    gt = scenario_library(name)
    assert gt.target_size == pytest.approx(gt.reference_size, abs=0.01)
    X = sample_covariates(gt, 200_000, 2)
    assert gt.s_tau_member(X).mean() == pytest.approx(gt.target_size, abs=0.01)


def test_nonmonotone_scenarios_are_nonmonotone():
    u = np.linspace(0, 1, 2001)[:, None]
    for name in ("logistic_quadratic", "nonsmooth_nonmonotone"):
        d = np.diff(scenario_library(name).eval(u))
        assert (d > 0).any() and (d < 0).any()
    assert np.all(np.diff(scenario_library("logistic").eval(u)) < 0)


def test_sample_covariates():
    gt = scenario_library("and_condition")
    assert sample_covariates(gt, 0, 0).shape == (0, 30)
    X = sample_covariates(gt, 100_000, 3)
    assert np.all(np.abs(X[:, 8:].mean(axis=0) - 0.5) < 0.005)
    assert set(np.unique(X[:, :8])) == {0.0, 1.0}
    assert np.array_equal(X, sample_covariates(gt, 100_000, 3))


def test_sample_responses():
    gt = scenario_library("logistic")
    ones = replace(gt, eval=lambda X: np.ones(X.shape[0]))
    y, t = sample_responses(ones, np.zeros((50, 1)), "bernoulli", 0)
    assert y.tolist() == [1.0] * 50 and t is None
    bad = replace(gt, eval=lambda X: np.full(X.shape[0], 1.5))
    with pytest.raises(DataError):
        sample_responses(bad, np.zeros((5, 1)), "bernoulli", 0)
    with pytest.raises(ConfigError):
        sample_responses(gt, np.zeros((5, 1)), "treatment", 0)


def test_treatment_noise_variance():
    gt = replace(
        scenario_library("linear"),
        eval=lambda X: np.zeros(X.shape[0]),
        prognostic=lambda X: np.zeros(X.shape[0]),
    )
    X = np.zeros((100_000, 30))
    y, t = sample_responses(gt, X, "treatment", 4)
    assert y.var(ddof=1) == pytest.approx(1.0, abs=0.02)
    assert t.mean() == pytest.approx(0.5, abs=0.01)
    y, _ = sample_responses(gt, X, "ite", 5)
    assert y.var(ddof=1) == pytest.approx(2.0, abs=0.03)


def test_true_nuisances():
    gt = scenario_library("linear")
    m0, m1 = true_nuisances(gt)
    X = sample_covariates(gt, 10, 0)
    assert np.allclose(m1(X) - m0(X), gt.eval(X))
    with pytest.raises(ConfigError):
        true_nuisances(scenario_library("logistic"))


# ---------------------------------------------------------------- metrics


def test_metrics_hand_table():
    selected = np.array([[1, 1, 0, 0], [0, 0, 0, 0]], dtype=bool)
    truth = np.array([[1, 0, 1, 0], [1, 1, 0, 0]], dtype=bool)
    t1, fs, pw = replication_metrics(selected, truth)
    assert t1.tolist() == [1.0, 0.0]
    assert fs.tolist() == [0.5, 0.0]
    assert pw.tolist() == [0.5, 0.0]
    mm = MethodMetrics.from_replications(t1, fs, pw)
    assert mm.type1.mean == 0.5 and mm.type1.se == pytest.approx(math.sqrt(0.5 / 2))
    assert mm.fsr.mean == 0.25 and mm.power.mean == 0.25


def test_metrics_full_empty_exact():
    gt = scenario_library("logistic")
    full = estimate_metrics([lambda P: np.ones(P.shape[0], bool)] * 3, gt, 20_000, 0)
    assert full.type1.mean == 1.0 and full.power.mean == 1.0
    assert full.fsr.mean == pytest.approx(0.5, abs=0.02)
    empty = estimate_metrics([lambda P: np.zeros(P.shape[0], bool)] * 3, gt, 1000, 0)
    assert (empty.type1.mean, empty.fsr.mean, empty.power.mean) == (0.0, 0.0, 0.0)
    exact = estimate_metrics([gt.s_tau_member] * 3, gt, 1000, 0)
    assert (exact.type1.mean, exact.fsr.mean, exact.power.mean) == (0.0, 0.0, 1.0)


# ---------------------------------------------------------------- studies


def test_study_all_zero_responses():
    gt = replace(scenario_library("logistic"), eval=lambda X: np.zeros(X.shape[0]))
    spec = ScenarioSpec(gt, n=50, B=1, M=500, seed=0, methods=["iss"])
    rep = run_study(spec)
    m = rep.methods["iss"]
    assert (m.type1.mean, m.fsr.mean, m.power.mean) == (0.0, 0.0, 0.0)
    assert rep.config["scenario"] == "logistic"


def test_study_determinism_and_serialisation():
    spec = ScenarioSpec("logistic", n=120, B=4, M=2000, seed=9, methods=["iss", "glm"])
    a, b = run_study(spec), run_study(spec)
    assert a.to_json() == b.to_json()
    back = MetricsReport.from_dict(json.loads(a.to_json()))
    assert back.to_csv() == a.to_csv()
    assert a.check_dominance()
    assert len(a.methods["glm"].per_replication["digest"]) == 4
    assert a.scenario["reference_size"] == 0.5


def test_study_seed_changes_results():
    base = dict(scenario="logistic", n=120, B=3, M=2000, methods=["iss"])
    a = run_study(ScenarioSpec(seed=1, **base))
    b = run_study(ScenarioSpec(seed=2, **base))
    assert a.methods["iss"].per_replication["digest"] != b.methods["iss"].per_replication["digest"]


def test_study_cate_pipeline():
    spec = ScenarioSpec("and_condition", n=400, B=2, M=2000, seed=3, methods=["iss", "glm"])
    rep = run_study(spec)
    assert rep.config["response"] == "treatment"
    assert rep.check_dominance()


def test_study_antichain_and_squares():
    spec = ScenarioSpec(
        "logistic_interaction_group", n=300, B=2, M=2000, seed=1,
        methods=[
            {"name": "iss", "label": "iss_ac", "options": {"directions": {"group": "antichain"}}},
            {"name": "glm", "label": "glm_sq", "options": {"squares": ["exposure"]}},
        ],
    )
    rep = run_study(spec)
    assert set(rep.methods) == {"iss_ac", "glm_sq"}
    assert rep.check_dominance()


def test_study_config_errors():
    with pytest.raises(ConfigError):
        ScenarioSpec("logistic", n=10, alpha=1.5)
    with pytest.raises(ConfigError):
        ScenarioSpec.from_dict({"scenario": "logistic", "n": 10, "bogus": 1})
    with pytest.raises(ConfigError):
        run_study(ScenarioSpec("logistic", n=10, B=1, methods=["iss"], response="treatment"))
    with pytest.raises(ConfigError):
        run_study(ScenarioSpec("logistic", n=10, B=1, methods=[]))
    with pytest.raises(ConfigError):
        ScenarioSpec("logistic", n=10, methods=["lasso"])


def test_tidy_csv_layout():
    spec = ScenarioSpec("step", n=100, B=2, M=500, seed=0, methods=["glm", "iss"])
    lines = run_study(spec).to_csv().splitlines()
    assert lines[0] == "scenario,n,method,metric,estimate,se,B"
    assert len(lines) == 7
    assert [ln.split(",")[2] for ln in lines[1:]] == ["glm"] * 3 + ["iss"] * 3
