"""Command-line interface.

Artifacts go to files named by ``--out`` (or standard output); logs and
diagnostics go to standard error.  Library errors map to exit codes
2 (configuration), 3 (data) and 4 (numerics).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import glm, iss
from .data import (
    ColumnSpec,
    Dataset,
    antichain_augment,
    apply_antichain,
    load_csv,
    read_schema,
)
from .errors import ConfigError, DataError, SubselError
from .hte import (
    ConstantLearner,
    Learners,
    RidgeLogistic,
    RidgeRegression,
    known_propensity,
    pseudo_outcomes,
)
from .simeval.study import MetricsReport, ScenarioSpec, run_study

log = logging.getLogger("subsel")

SIDES = ("lower", "upper", "two-sided")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, path):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _sidecar(out, suffix: str):
    if out is None or str(out) == "-":
        return None
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


def _check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def _load(args, need_treatment=False):
    schema = read_schema(args.schema)
    response = args.response or schema.get("response")
    if response is None:
        raise ConfigError("no response column: pass --response or set it in the schema")
    treatment = getattr(args, "treatment", None) or schema.get("treatment")
    if need_treatment and treatment is None:
        raise DataError("no treatment column: pass --treatment or set it in the schema")
    ds, record = load_csv(args.data, schema["columns"], response, treatment if need_treatment else None)
    return ds, record, schema


def _read_probe_rows(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _write_rows(header, rows, extra: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header) + list(extra))
    cols = list(extra.values())
    for i, row in enumerate(rows):
        writer.writerow([row[h] for h in header] + [c[i] for c in cols])
    return buf.getvalue()


# ---------------------------------------------------------------- select


class _AugmentedRegion:
    def __init__(self, region, columns, record):
        self.region, self.columns, self.record = region, columns, record

    def membership(self, P):
        return self.region.membership(apply_antichain(P, self.columns, self.record))


def _iss_regions(ds: Dataset, args):
    kind = args.kind or ("binary" if ds.is_binary_response() else "quantile")
    antichain = [c.name for c in ds.columns if c.direction == "antichain"]
    work, record = (antichain_augment(ds, antichain) if antichain else (ds, None))
    opts = dict(kind=kind, procedure=args.procedure, scaling=args.scaling)
    if args.side == "lower":
        regions = {"lower": iss.select_lower(work, args.tau, args.alpha, **opts)}
    elif args.side == "upper":
        regions = {"upper": iss.select_upper(work, args.tau, args.alpha, **opts)}
    else:
        lo, up = iss.select_two_sided(work, args.tau, args.alpha, **opts)
        regions = {"lower": lo, "upper": up}
    doc = {k: r.to_dict() for k, r in regions.items()}
    if record is not None:
        doc["antichain"] = record.to_dict()
        regions = {k: _AugmentedRegion(r, ds.columns, record) for k, r in regions.items()}
    return regions, doc


def _glm_regions(ds: Dataset, args):
    link = args.link or ("logit" if ds.is_binary_response() else "identity")
    cols = tuple(ColumnSpec(c.name, c.kind, "none") for c in ds.columns)
    fit = glm.fit_glm(Dataset(cols, ds.X, ds.y), link)
    K = glm.evaluation_set(ds)
    modes = {"lower": ["lower"], "upper": ["upper"], "two-sided": ["two-sided-lower", "two-sided-upper"]}
    regions = {}
    for mode in modes[args.side]:
        key = "upper" if mode.endswith("upper") else "lower"
        regions[key] = glm.select(fit, K, args.tau, args.alpha, mode, args.sims, args.seed)
    return regions, {k: r.to_dict() for k, r in regions.items()}


def cmd_select(args) -> int:
    _check_alpha(args.alpha)
    if args.sims < 1:
        raise ConfigError("--sims must be positive")
    ds, record, _ = _load(args)
    if args.method == "iss":
        regions, doc = _iss_regions(ds, args)
    else:
        regions, doc = _glm_regions(ds, args)
    for key, r in regions.items():
        if getattr(r, "is_empty", None) and r.is_empty():
            log.warning("%s confidence set is empty", key)
    out = {
        "config": {
            "method": args.method,
            "side": args.side,
            "tau": args.tau,
            "alpha": args.alpha,
            "seed": args.seed,
            "data": str(args.data),
            "schema": str(args.schema),
            "response": ds.response_name,
            "n": ds.n,
            "kind": args.kind,
            "procedure": args.procedure,
            "scaling": args.scaling,
            "link": args.link,
            "sims": args.sims,
        },
        "encoding": record.to_dict(),
        "regions": doc,
    }
    _emit(_dumps(out), args.out)
    if args.probes:
        target = args.selected or _sidecar(args.out, ".selected.csv")
        if target is None:
            raise ConfigError("--probes needs --selected when the region goes to stdout")
        header, rows = _read_probe_rows(args.probes)
        P = record.encode_rows(rows)
        extra = {}
        for key, r in regions.items():
            name = "selected" if key == "lower" or len(regions) == 1 else f"selected_{key}"
            extra[name] = [str(int(v)) for v in r.membership(P)]
        if args.method == "glm":
            first = next(iter(regions.values()))
            extra["extrapolated"] = [str(int(v)) for v in first.extrapolated(P)]
        _emit(_write_rows(header, rows, extra), target)
    return 0


# ---------------------------------------------------------------- pseudo


def _learners(args, binary: bool) -> Learners:
    if args.propensity == "estimate":
        prop = RidgeLogistic
    else:
        p = float(args.propensity)
        known_propensity(p)
        prop = lambda: known_propensity(p)  # noqa: E731
    if args.learner == "constant":
        outcome = lambda: ConstantLearner(0.0, "constant(0)")  # noqa: E731
    elif args.learner == "ridge":
        outcome = RidgeLogistic if binary else RidgeRegression
    else:
        raise ConfigError(f"unknown learner {args.learner!r}")
    return Learners(outcome, outcome, prop)


def _fold_of_row(training_rows: dict, n: int) -> list[int]:
    fold = [0] * n
    for k, train in training_rows.items():
        held_out = set(range(n)) - set(int(i) for i in train)
        for i in held_out:
            fold[i] = int(k)
    return fold


def cmd_pseudo(args) -> int:
    ds, _, _ = _load(args, need_treatment=True)
    if args.folds < 2:
        raise ConfigError("--folds must be at least 2")
    try:
        p = float(args.propensity)
    except ValueError:
        if args.propensity != "estimate":
            raise ConfigError(f"--propensity must be a number or 'estimate', got {args.propensity!r}") from None
        p = None
    if p is not None and not (0.0 < p < 1.0):
        raise ConfigError(f"known propensity must lie in (0, 1), got {p}")
    learners = _learners(args, ds.is_binary_response())
    res = pseudo_outcomes(ds, args.folds, args.seed, learners, (args.clip_lo, args.clip_hi))
    header, rows = _read_probe_rows(args.data)
    _emit(_write_rows(header, rows, {"y_tilde": [repr(float(v)) for v in res.y_tilde]}), args.out)
    prov = dict(res.provenance)
    prov.update({
        "data": str(args.data),
        "response": ds.response_name,
        "treatment": ds.treatment_name,
        "covariates": list(ds.names),
        "n": ds.n,
        "propensity": args.propensity,
        "fold_of_row": _fold_of_row(res.training_rows, ds.n),
    })
    target = args.provenance or _sidecar(args.out, ".provenance.json")
    if target is not None:
        _emit(_dumps(prov), target)
    else:
        log.info("provenance: %s", json.dumps(prov, sort_keys=True))
    return 0


# ---------------------------------------------------------------- simulate


def bundled_studies() -> list[str]:
    root = resources.files("subsel") / "studies"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _study_doc(args) -> dict:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"no such study config: {path}")
        text = path.read_text(encoding="utf-8")
    else:
        name = args.study
        if name not in bundled_studies():
            raise ConfigError(f"unknown bundled study {name!r}; known: {bundled_studies()}")
        text = (resources.files("subsel") / "studies" / f"{name}.json").read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"study config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("study config must be a JSON object")
    return doc


def cmd_simulate(args) -> int:
    if not (args.config or args.study):
        raise ConfigError("pass --config FILE or --study NAME")
    doc = _study_doc(args)
    for key in ("n", "B", "M", "alpha", "seed", "tau"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if args.scenario:
        doc["scenario"] = args.scenario
    if args.sims is not None:
        for m in doc.get("methods", []):
            if isinstance(m, dict) and m.get("name") == "glm":
                m.setdefault("options", {})["n_sims"] = args.sims
    if doc.get("seed") is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the study config)")
    if "alpha" in doc:
        _check_alpha(float(doc["alpha"]))
    spec = ScenarioSpec.from_dict(doc)

    def progress(b, B):
        if b == B or b % max(1, B // 10) == 0:
            log.info("replication %d/%d", b, B)

    report = run_study(spec, progress=progress)
    if not report.check_dominance():
        raise ArithmeticError("false selection rate exceeds Type I error rate")
    _emit(report.to_json(), args.out)
    target = args.csv or _sidecar(args.out, ".csv")
    if target is not None:
        _emit(report.to_csv(), target)
    return 0


def cmd_report(args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise DataError(f"no such report: {path}")
    try:
        report = MetricsReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"not a metrics report: {exc}") from None
    _emit(report.to_csv(), args.out)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subsel", description="Confidence sets for subgroups.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", required=True, help="input CSV")
        p.add_argument("--schema", required=True, help="column schema JSON")
        p.add_argument("--response", help="response column (overrides the schema)")

    p = sub.add_parser("select", help="confidence set for {x : eta(x) >= tau}")
    data_args(p)
    p.add_argument("--method", choices=("iss", "glm"), required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--side", choices=SIDES, default="lower")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sims", type=int, default=1000, help="Monte-Carlo draws for the GLM critical value")
    p.add_argument("--kind", choices=("binary", "quantile"), help="ISS p-value type")
    p.add_argument("--procedure", choices=("dag", "frontier", "holm"), default="dag")
    p.add_argument("--scaling", choices=("unit_variance", "minmax", "none"), default="unit_variance")
    p.add_argument("--link", choices=glm.LINKS, help="GLM link")
    p.add_argument("--probes", help="CSV of points to classify")
    p.add_argument("--selected", help="output CSV for --probes")
    p.add_argument("--out", help="region JSON (default: stdout)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("pseudo", help="cross-fitted doubly-robust pseudo-outcomes")
    data_args(p)
    p.add_argument("--treatment", help="treatment column (overrides the schema)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--learner", choices=("ridge", "constant"), default="ridge")
    p.add_argument("--propensity", default="0.5", help="known P(T=1) or 'estimate'")
    p.add_argument("--clip-lo", type=float, default=0.01)
    p.add_argument("--clip-hi", type=float, default=0.99)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--provenance", help="provenance JSON (default: next to --out)")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("simulate", help="run a simulation study")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="study JSON")
    src.add_argument("--study", help="bundled study name")
    p.add_argument("--scenario")
    p.add_argument("--n", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sims", type=int, help="GLM critical-value draws")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--csv", help="tidy CSV (default: next to --out)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render a report JSON as tidy CSV")
    p.add_argument("report")
    p.add_argument("--out", help="CSV (default: stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SubselError as exc:
        print(f"subsel: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"subsel: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ArithmeticError as exc:
        print(f"subsel: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
