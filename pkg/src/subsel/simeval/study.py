"""Replicated simulation studies.

A study fixes a scenario, a sample size and a list of methods, then for each
of ``B`` replications generates data, optionally converts it to
doubly-robust pseudo-outcomes, runs every method and scores the selected
sets on a shared probe sample.  All randomness is derived from the master
seed: replication ``b`` owns child ``b`` of ``SeedSequence(seed)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import glm, iss
from ..data import ColumnSpec, Dataset, antichain_augment, apply_antichain
from ..errors import ConfigError, NumericError
from ..hte import FunctionLearner, Learners, RidgeRegression, known_propensity, pseudo_outcomes
from .metrics import METRICS, MethodMetrics, replication_metrics
from .scenarios import (
    GroundTruth,
    default_response,
    sample_covariates,
    sample_responses,
    scenario_library,
    true_nuisances,
)

logger = logging.getLogger(__name__)

METHOD_NAMES = ("iss", "glm")


@dataclass
class MethodSpec:
    name: str
    options: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {self.name!r}; expected one of {METHOD_NAMES}")
        if self.label is None:
            self.label = self.name

    @classmethod
    def from_dict(cls, d) -> "MethodSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], dict(d.get("options", {})), d.get("label"))

    def to_dict(self) -> dict:
        return {"name": self.name, "label": self.label, "options": self.options}


@dataclass
class ScenarioSpec:
    scenario: str | GroundTruth
    n: int
    B: int = 200
    M: int = 100_000
    alpha: float = 0.1
    seed: int = 0
    tau: float | None = None
    response: str | None = None
    folds: int = 4
    nuisance: str = "ridge"  # or 'oracle'
    methods: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("n", "B", "M"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.nuisance not in ("ridge", "oracle"):
            raise ConfigError(f"unknown nuisance learner set {self.nuisance!r}")
        self.methods = [m if isinstance(m, MethodSpec) else MethodSpec.from_dict(m)
                        for m in self.methods]

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if "tau_override" in d:
            d["tau"] = d.pop("tau_override")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown study keys: {sorted(extra)}")
        if "scenario" not in d or "n" not in d:
            raise ConfigError("study config needs 'scenario' and 'n'")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(replace(self, methods=[]))
        if isinstance(self.scenario, GroundTruth):
            out["scenario"] = self.scenario.name
        out["methods"] = [m.to_dict() for m in self.methods]
        return out


class EmptyRegion:
    """Stand-in for a method that failed on a replication."""

    side = "lower"

    def membership(self, points):
        return np.zeros(np.atleast_2d(points).shape[0], dtype=bool)


def _expand(X, columns, squares):
    """Append squared copies of the named columns (for basis expansions)."""
    if not squares:
        return X, columns
    names = [c.name for c in columns]
    extra = [X[:, names.index(nm)] ** 2 for nm in squares]
    cols = tuple(columns) + tuple(ColumnSpec(f"{nm}^2", "continuous", "none") for nm in squares)
    return np.column_stack([X] + extra), cols


class _Mapped:
    """Region evaluated after a fixed covariate transform."""

    def __init__(self, region, fn):
        self.region = region
        self.fn = fn

    def membership(self, points):
        return self.region.membership(self.fn(np.atleast_2d(points)))


def run_method(method: MethodSpec, ds: Dataset, tau: float, alpha: float, response: str, seed):
    """Lower confidence set for one method on one dataset.

    Returns an object with a ``membership(points)`` method taking points in
    ``ds``'s column layout.
    """
    opts = dict(method.options)
    if method.name == "iss":
        kind = opts.pop("kind", "binary" if response == "bernoulli" else "quantile")
        directions = opts.pop("directions", {})
        cols = tuple(
            ColumnSpec(c.name, c.kind, directions.get(c.name, c.direction)) for c in ds.columns
        )
        antichain = [c.name for c in cols if c.direction == "antichain"]
        work = Dataset(cols, ds.X, ds.y)
        if antichain:
            work, record = antichain_augment(work, antichain)
            region = iss.select_lower(work, tau, alpha, kind=kind, **opts)
            return _Mapped(region, lambda P: apply_antichain(P, cols, record))
        return iss.select_lower(work, tau, alpha, kind=kind, **opts)

    link = opts.pop("link", "logit" if response == "bernoulli" else "identity")
    n_sims = int(opts.pop("n_sims", 1000))
    squares = opts.pop("squares", [])
    if opts:
        raise ConfigError(f"unknown glm options {sorted(opts)}")
    X, cols = _expand(ds.X, ds.columns, squares)
    cols = tuple(ColumnSpec(c.name, c.kind, "none") for c in cols)
    work = Dataset(cols, X, ds.y)
    fit = glm.fit_glm(work, link)
    region = glm.select(fit, glm.evaluation_set(work), tau, alpha, "lower", n_sims, seed)
    if squares:
        return _Mapped(region, lambda P: _expand(P, ds.columns, squares)[0])
    return region


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _regression_dataset(gt, spec, response, X, rng_resp, rng_folds):
    sel = list(gt.selection)
    y, t = sample_responses(gt, X, response, rng_resp)
    if response == "treatment":
        nuis = list(gt.nuisance) or sel
        full = Dataset(
            tuple(ColumnSpec(f"c{j}", "continuous", "none") for j in nuis), X[:, nuis], y, t
        )
        if spec.nuisance == "oracle":
            f0, f1 = true_nuisances(gt)

            def lift(f):
                def g(Xn):
                    Z = np.zeros((Xn.shape[0], gt.d))
                    Z[:, nuis] = Xn
                    return f(Z)
                return g

            learners = Learners.from_instances(
                FunctionLearner(lift(f0), "true_eta0"),
                FunctionLearner(lift(f1), "true_eta1"),
                known_propensity(0.5),
            )
        else:
            learners = Learners(RidgeRegression, RidgeRegression, lambda: known_propensity(0.5))
        y = pseudo_outcomes(full, spec.folds, _seed_int(rng_folds), learners).y_tilde
    return Dataset(gt.selection_columns, X[:, sel], y)


@dataclass
class MetricsReport:
    config: dict
    scenario: dict
    methods: dict
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "scenario": self.scenario,
            "methods": {k: v.to_dict() for k, v in self.methods.items()},
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(
            config=d["config"],
            scenario=d["scenario"],
            methods={k: MethodMetrics.from_dict(v) for k, v in d["methods"].items()},
            failures=d.get("failures", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def tidy_rows(self) -> list[dict]:
        rows = []
        order = [m["label"] for m in self.config.get("methods", []) if m.get("label") in self.methods]
        order += [k for k in self.methods if k not in order]
        for label in order:
            mm = self.methods[label]
            for metric in METRICS:
                est = getattr(mm, metric)
                rows.append(
                    {
                        "scenario": self.scenario["name"],
                        "n": self.config["n"],
                        "method": label,
                        "metric": metric,
                        "estimate": repr(est.mean),
                        "se": repr(est.se),
                        "B": mm.B,
                    }
                )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, fieldnames=["scenario", "n", "method", "metric", "estimate", "se", "B"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(self.tidy_rows())
        return buf.getvalue()

    def check_dominance(self) -> bool:
        """FSR can never exceed the Type I error rate, replication by replication."""
        for mm in self.methods.values():
            if mm.fsr.mean > mm.type1.mean:
                return False
            pr = mm.per_replication
            if any(f > t for f, t in zip(pr.get("fsr", []), pr.get("type1", []))):
                return False
        return True


def run_study(spec: ScenarioSpec, methods=None, progress=None) -> MetricsReport:
    """Execute all replications of ``spec`` and aggregate the metrics."""
    methods = [m if isinstance(m, MethodSpec) else MethodSpec.from_dict(m)
               for m in (methods if methods is not None else spec.methods)]
    if not methods:
        raise ConfigError("no methods configured")
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ConfigError("method labels must be unique")
    gt = spec.scenario if isinstance(spec.scenario, GroundTruth) else scenario_library(spec.scenario)
    if spec.tau is not None:
        gt = gt.with_tau(spec.tau)
    response = spec.response or default_response(gt)
    if gt.kind == "regression" and response not in ("bernoulli", "gaussian"):
        raise ConfigError(f"response {response!r} does not fit regression scenario {gt.name!r}")
    if gt.kind == "cate" and response not in ("treatment", "ite"):
        raise ConfigError(f"response {response!r} does not fit CATE scenario {gt.name!r}")
    for m in methods:
        if m.name == "iss" and response == "bernoulli" and m.options.get("kind") == "quantile":
            logger.warning("quantile p-value on binary responses in %s", m.label)

    per = {lab: {"type1": [], "fsr": [], "power": [], "digest": [], "selected_share": []}
           for lab in labels}
    failures = {lab: 0 for lab in labels}
    for b, child in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.B)):
        s_cov, s_resp, s_folds, s_meth, s_probe = child.spawn(5)
        X = sample_covariates(gt, spec.n, s_cov)
        ds = _regression_dataset(gt, spec, response, X, s_resp, s_folds)
        P = sample_covariates(gt, spec.M, s_probe)
        truth = gt.s_tau_member(P)
        P_sel = P[:, list(gt.selection)]
        method_seeds = s_meth.spawn(len(methods))
        for m, ms in zip(methods, method_seeds):
            try:
                region = run_method(m, ds, gt.tau, spec.alpha, response, _seed_int(ms))
            except NumericError as exc:
                logger.info("replication %d, %s: %s; counted as empty selection", b, m.label, exc)
                failures[m.label] += 1
                region = EmptyRegion()
            sel = np.asarray(region.membership(P_sel), dtype=bool)
            t1, fs, pw = replication_metrics(sel, truth)
            rec = per[m.label]
            rec["type1"].append(float(t1[0]))
            rec["fsr"].append(float(fs[0]))
            rec["power"].append(float(pw[0]))
            rec["selected_share"].append(float(sel.mean()))
            rec["digest"].append(hashlib.sha256(np.packbits(sel).tobytes()).hexdigest()[:16])
        if progress is not None:
            progress(b + 1, spec.B)

    results = {}
    for lab in labels:
        rec = per[lab]
        results[lab] = MethodMetrics.from_replications(
            rec["type1"], rec["fsr"], rec["power"],
            digest=rec["digest"], selected_share=rec["selected_share"],
        )
    config = spec.to_dict()
    config["methods"] = [m.to_dict() for m in methods]
    config["response"] = response
    scenario = {
        "name": gt.name,
        "label": gt.label,
        "kind": gt.kind,
        "tau": gt.tau,
        "target_size": gt.target_size,
        "reference_size": gt.reference_size,
        "params": gt.params,
    }
    return MetricsReport(config=config, scenario=scenario, methods=results, failures=failures)
