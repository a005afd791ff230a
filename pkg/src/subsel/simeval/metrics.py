"""Monte-Carlo estimators of Type I error rate, false selection rate and power.

For replication ``b`` with selected set ``L_b`` and probe sample
``X^(b,1..M)``:

* Type I indicator: some probe lies in ``L_b`` but outside ``S_tau``;
* FSR_b: share of probes in ``L_b`` that fall outside ``S_tau``;
* power_b: share of probes in ``S_tau`` that ``L_b`` contains;

with ``0/0 := 0``.  Estimates are means over replications with standard
error ``sqrt(var / B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRICS = ("type1", "fsr", "power")


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def replication_metrics(selected, truth):
    """Per-replication (type1, fsr, power) from boolean probe indicators.

    ``selected`` and ``truth`` have shape ``(B, M)`` (or ``(M,)``).
    """
    selected = np.atleast_2d(np.asarray(selected, dtype=bool))
    truth = np.atleast_2d(np.asarray(truth, dtype=bool))
    false_sel = (selected & ~truth).sum(axis=1)
    n_sel = selected.sum(axis=1)
    type1 = (false_sel > 0).astype(float)
    fsr = _ratio(false_sel, n_sel)
    power = _ratio((selected & truth).sum(axis=1), truth.sum(axis=1))
    return type1, fsr, power


@dataclass
class Estimate:
    mean: float
    se: float

    def to_dict(self):
        return {"estimate": self.mean, "se": self.se}


def _estimate(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    B = v.shape[0]
    if B == 0:
        return Estimate(0.0, 0.0)
    var = v.var(ddof=1) if B > 1 else 0.0
    return Estimate(float(v.mean()), float(np.sqrt(var / B)))


@dataclass
class MethodMetrics:
    type1: Estimate
    fsr: Estimate
    power: Estimate
    B: int
    per_replication: dict = field(default_factory=dict)

    @classmethod
    def from_replications(cls, type1, fsr, power, **extra) -> "MethodMetrics":
        return cls(
            type1=_estimate(type1),
            fsr=_estimate(fsr),
            power=_estimate(power),
            B=len(type1),
            per_replication={
                "type1": [float(v) for v in type1],
                "fsr": [float(v) for v in fsr],
                "power": [float(v) for v in power],
                **extra,
            },
        )

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "type1": self.type1.to_dict(),
            "fsr": self.fsr.to_dict(),
            "power": self.power.to_dict(),
            "per_replication": self.per_replication,
        }

    @classmethod
    def from_dict(cls, d) -> "MethodMetrics":
        est = lambda k: Estimate(d[k]["estimate"], d[k]["se"])  # noqa: E731
        return cls(est("type1"), est("fsr"), est("power"), d["B"], d.get("per_replication", {}))


def estimate_metrics(memberships, gt, M: int, seed, tau=None) -> MethodMetrics:
    """Metrics for a list of per-replication membership functions.

    Each membership function receives the probe covariates restricted to the
    ground truth's selection columns.  Replication ``b`` draws its probes from
    child ``b`` of ``seed``.
    """
    from .scenarios import sample_covariates

    children = np.random.SeedSequence(seed).spawn(len(memberships))
    t1, fs, pw = [], [], []
    for member, child in zip(memberships, children):
        P = sample_covariates(gt, M, child)
        truth = gt.s_tau_member(P, tau)
        sel = np.asarray(member(P[:, list(gt.selection)]), dtype=bool)
        a, b, c = replication_metrics(sel, truth)
        t1.append(a[0])
        fs.append(b[0])
        pw.append(c[0])
    return MethodMetrics.from_replications(t1, fs, pw)
