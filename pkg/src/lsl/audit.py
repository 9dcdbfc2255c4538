"""FM1/FM2 risk classification for an architecture and initialization.

FM1: the mean length M_d grows or decays exponentially with depth.
FM2: the empirical variance of M_1..M_d grows exponentially with depth.

The verdict thresholds are calibration choices: ``beta < 0.5`` is ok,
``beta >= 2`` is high; residual nets are ok while the scale sum is at most 3
and exploding above 10.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from lsl.dists import InitScheme
from lsl.netgen import Architecture, ConvArch, FCArch, ResidualArch
from lsl.theory import KAPPA_TOL, layer_kappas, sum_reciprocal_widths

BETA_CAUTION = 0.5
BETA_HIGH = 2.0
SCALE_SUM_OK = 3.0
SCALE_SUM_CAUTION = 10.0
TARGET_BETA = 0.3

SET_CRITICAL_VARIANCE = "SET_CRITICAL_VARIANCE"
WIDEN_TO_BETA = "WIDEN_TO_BETA"
GEOMETRIC_SCALES = "GEOMETRIC_SCALES"


@dataclass
class AuditReport:
    arch_type: str
    scheme: str
    kappa: list[float]
    fm1_verdict: str
    predicted_ratio: float | None = None
    beta: float | None = None
    fm2_verdict: str = "ok"
    scale_sum: float | None = None
    recommendations: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    module: "AuditReport | None" = None

    @property
    def ok(self) -> bool:
        return self.fm1_verdict == "ok" and self.fm2_verdict == "ok"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [("architecture", self.arch_type), ("init", self.scheme)]
        k = np.asarray(self.kappa)
        if k.size:
            rows.append(("kappa", f"{k.min():.6g}" if np.ptp(k) == 0 else f"{k.min():.6g} .. {k.max():.6g}"))
        if self.scale_sum is not None:
            rows.append(("scale sum", f"{self.scale_sum:.6g}"))
        rows.append(("FM1", self.fm1_verdict))
        if self.predicted_ratio is not None:
            rows.append(("E[M_d]/M_0", f"{self.predicted_ratio:.6g}"))
        if self.beta is not None:
            rows.append(("beta", f"{self.beta:.6g}"))
        rows.append(("FM2", self.fm2_verdict))
        for code in self.recommendations:
            extra = self.details.get(code)
            rows.append(("recommend", code if extra is None else f"{code} {extra}"))
        for note in self.notes:
            rows.append(("note", note))
        width = max(len(r[0]) for r in rows)
        lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
        if self.module is not None:
            lines.append("module:")
            lines.extend("  " + line for line in self.module.to_text().splitlines())
        return "\n".join(lines) + "\n"


def fm2_verdict(beta: float) -> str:
    if beta < BETA_CAUTION:
        return "ok"
    return "caution" if beta < BETA_HIGH else "high"


def _audit_feedforward(arch: FCArch | ConvArch, scheme: InitScheme) -> AuditReport:
    kappa = layer_kappas(arch, scheme)
    ratio = float(np.prod(kappa))
    if np.max(np.abs(kappa - 1.0)) <= KAPPA_TOL:
        fm1 = "ok"
    else:
        fm1 = "vanishing" if ratio < 1 else "exploding"
    beta = sum_reciprocal_widths(arch)
    report = AuditReport("fc" if isinstance(arch, FCArch) else "conv", scheme.label, kappa.tolist(),
                         fm1, ratio, beta, fm2_verdict(beta))
    if fm1 != "ok":
        report.recommendations.append(SET_CRITICAL_VARIANCE)
        report.details[SET_CRITICAL_VARIANCE] = "weight variance 2/fan-in (e.g. he-normal, he-uniform)"
    if report.fm2_verdict != "ok":
        report.recommendations.append(WIDEN_TO_BETA)
        if isinstance(arch, FCArch) and arch.depth >= 2:
            n = recommend_width(arch.depth, TARGET_BETA)
            report.details[WIDEN_TO_BETA] = f"constant hidden width {n} for beta <= {TARGET_BETA}"
        else:
            report.details[WIDEN_TO_BETA] = f"beta <= {TARGET_BETA}"
    return report


def _audit_residual(arch: ResidualArch, scheme: InitScheme) -> AuditReport:
    module = _audit_feedforward(arch.module, scheme)
    total = float(sum(arch.scales))
    if total <= SCALE_SUM_OK:
        fm1 = "ok"
    elif total <= SCALE_SUM_CAUTION:
        fm1 = "caution"
    else:
        fm1 = "exploding"
    if module.fm1_verdict != "ok":
        fm1 = "exploding" if module.fm1_verdict == "exploding" or fm1 == "exploding" else "caution"
    module_ok = module.fm1_verdict == "ok" and module.fm2_verdict == "ok"
    if fm1 == "ok" and module_ok:
        fm2 = "ok"
    elif fm1 == "exploding":
        fm2 = "high"
    else:
        fm2 = "caution"
    report = AuditReport("residual", scheme.label, module.kappa, fm1, None, None, fm2, total, module=module)
    report.notes.append("FM2 is controlled whenever FM1 is avoided and each module passes on its own")
    if module.fm1_verdict != "ok":
        report.recommendations.append(SET_CRITICAL_VARIANCE)
    if total > SCALE_SUM_OK:
        report.recommendations.append(GEOMETRIC_SCALES)
        target = min(SCALE_SUM_OK, arch.depth / 2)
        b = geometric_ratio(arch.depth, target)
        report.details[GEOMETRIC_SCALES] = f"eta_l = {b:.6g}^l (sum {target:.6g})"
    return report


def audit(arch: Architecture, scheme: InitScheme) -> AuditReport:
    """Classify FM1/FM2 risk from architecture and initialization alone."""
    if isinstance(arch, ResidualArch):
        return _audit_residual(arch, scheme)
    return _audit_feedforward(arch, scheme)


def recommend_width(depth: int, target_beta: float) -> int:
    """Smallest constant hidden width n with (depth - 1) / n <= target_beta."""
    if depth < 2:
        raise ValueError("depth must be >= 2")
    if not target_beta > 0:
        raise ValueError("target_beta must be positive")
    n = max(1, math.ceil((depth - 1) / target_beta))
    while n > 1 and (depth - 1) / (n - 1) <= target_beta:
        n -= 1
    while (depth - 1) / n > target_beta:
        n += 1
    return n


def geometric_ratio(count: int, target_sum: float) -> float:
    """b in (0, 1) with sum_{l=1..count} b^l = target_sum."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 < target_sum < count:
        raise ValueError(f"target sum must lie in (0, {count}) for {count} scales, got {target_sum}")
    f = lambda b: sum(b**l for l in range(1, count + 1)) - target_sum
    return optimize.brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def recommend_scales(count: int, target_sum: float) -> list[float]:
    b = geometric_ratio(count, target_sum)
    return [b**l for l in range(1, count + 1)]
