"""Statistical verification suites: Monte-Carlo estimates against theory.

Single checks use |z| <= 4; checks inside multi-test batches use |z| <= 5
where noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from lsl import rng as rngs
from lsl.dists import DistributionSpec, InitScheme, effective_truncation_factor, moments, normal, parse_scheme
from lsl.forward import InputSpec
from lsl.mc import TrialPlan, conditional_step_stats, run_ensemble
from lsl.netgen import ConvArch, ConvLayer, FCArch, ResidualArch, geometric_scales
from lsl.theory import conditional_variance_exact, predict_mean_fc, resnet_growth_bounds, variance_bounds_fc

Z_SINGLE = 4.0
Z_BATCH = 5.0

DEFAULT_TRIALS = {
    "mean": 10_000,
    "variance": 100_000,
    "empvar": 100_000,
    "martingale": 100_000,
    "condvar": 100_000,
    "resnet": 10_000,
}
SUITES = tuple(DEFAULT_TRIALS)

SPHERE = InputSpec("sphere", "m0")


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""


def subseed(seed: int, *key: int) -> int:
    """Independent 64-bit seed for sub-experiment ``key`` of a suite."""
    ss = np.random.SeedSequence(rngs.check_seed(seed), spawn_key=(3,) + key)
    return int(ss.generate_state(1, np.uint64)[0])


def _z(est: float, se: float, target: float) -> float:
    if se == 0:
        return 0.0 if est == target else math.inf
    return (est - target) / se


def _z_check(suite, name, est, se, target, limit=Z_SINGLE) -> Check:
    z = _z(est, se, target)
    return Check(suite, name, abs(z) <= limit, abs(z), limit,
                 f"estimate={est:.6g} se={se:.3g} target={target:.6g}")


def table(checks: list[Check]) -> str:
    rows = [("suite", "check", "value", "limit", "result")]
    rows += [(c.suite, c.name, f"{c.value:.4g}", f"{c.limit:.4g}", "PASS" if c.passed else "FAIL")
             for c in checks]
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


# -- mean ------------------------------------------------------------------------------

def critical_mean_checks(trials: int = DEFAULT_TRIALS["mean"], seed: int = 1) -> list[Check]:
    """He weights keep E[M_d] = M_0 on an FC net of depth and width 20."""
    fc20 = FCArch((20,) * 21)
    out = []
    for k, name in enumerate(("he-normal", "he-uniform")):
        st = run_ensemble(TrialPlan(fc20, parse_scheme(name), SPHERE, trials, subseed(seed, 0, k)))
        out.append(_z_check("mean", f"critical {name} d=20", st.mean[-1], st.se_mean[-1], 1.0))
    return out


def kappa_mean_checks(trials: int = DEFAULT_TRIALS["mean"], seed: int = 1) -> list[Check]:
    """E[M_d] = kappa^d for kappa = 1/2 and 2 at depth 10."""
    fc10 = FCArch((20,) * 11)
    out = []
    for k, kappa in enumerate((0.5, 2.0)):
        st = run_ensemble(TrialPlan(fc10, parse_scheme(f"scaled:{kappa}:normal"), SPHERE, trials,
                                    subseed(seed, 1, k)))
        out.append(_z_check("mean", f"kappa={kappa} d=10", st.mean[-1], st.se_mean[-1], kappa**10))
    return out


def truncated_mean_checks(trials: int = DEFAULT_TRIALS["mean"], seed: int = 1) -> list[Check]:
    """Truncated He weights decay as r(2)^d at depth and width 50.

    The run uses a third of ``trials``: each trial costs ~50x more than a
    depth-20 net.
    """
    fc50 = FCArch((50,) * 51)
    scheme = parse_scheme("he-normal-trunc2")
    st = run_ensemble(TrialPlan(fc50, scheme, SPHERE, max(2, trials // 3), subseed(seed, 2)))
    target = effective_truncation_factor(2.0) ** 50
    assert math.isclose(predict_mean_fc(fc50, scheme).mean[-1], target, rel_tol=1e-12)
    return [_z_check("mean", "he-normal-trunc2 d=50", st.mean[-1], st.se_mean[-1], target)]


def conv_mean_checks(trials: int = DEFAULT_TRIALS["mean"], seed: int = 1) -> list[Check]:
    """Circular conv nets on a constant 8x8x10 image follow kappa^d per scheme."""
    conv = ConvArch((8, 8, 10), tuple(ConvLayer(10, 3, "circular") for _ in range(5)))
    flat = InputSpec("constant", "m0")
    out = []
    for k, (name, target) in enumerate((("he-normal", 1.0), ("he-uniform", 1.0),
                                        ("glorot-uniform", 2.0**-5), ("scaled:2:normal", 2.0**5))):
        st = run_ensemble(TrialPlan(conv, parse_scheme(name), flat, trials, subseed(seed, 3, k)))
        out.append(_z_check("mean", f"conv {name}", st.mean[-1], st.se_mean[-1], target))
    return out


def mean_checks(trials: int = DEFAULT_TRIALS["mean"], seed: int = 1) -> list[Check]:
    return (critical_mean_checks(trials, seed) + kappa_mean_checks(trials, seed)
            + truncated_mean_checks(trials, seed) + conv_mean_checks(trials, seed))


# -- second moment ---------------------------------------------------------------------

VARIANCE_CONFIGS = ((20, 20), (50, 50), (100, 20))


def variance_checks(trials: int = DEFAULT_TRIALS["variance"], seed: int = 1) -> list[Check]:
    out = []
    for k, (n, d) in enumerate(VARIANCE_CONFIGS):
        arch = FCArch((n,) * (d + 1))
        scheme = parse_scheme("he-normal")
        st = run_ensemble(TrialPlan(arch, scheme, InputSpec("sphere", "m0"), trials, subseed(seed, k),
                                    sampler="projected"))
        b = variance_bounds_fc(arch, scheme)
        est, se = st.mean_sq[-1], st.se_mean_sq[-1]
        lo, hi = est - Z_SINGLE * se, est + Z_SINGLE * se
        gap = max(b.lower[-1] - hi, lo - b.upper[-1], 0.0)
        out.append(Check("variance", f"E[M_d^2] n={n} d={d}", gap == 0.0, gap, 0.0,
                         f"estimate={est:.6g} se={se:.3g} bounds=[{b.lower[-1]:.6g}, {b.upper[-1]:.6g}]"))
    return out


# -- empirical variance --------------------------------------------------------------------

EMPVAR_TYPES = {
    "i": (30, 10) * 4,
    "ii": (30,) * 4 + (10,) * 4,
    "iii": (10,) * 4 + (30,) * 4,
    "iv": (15,) * 8,
    "v": (20,) * 8,
}


def _empvar_run(widths, trials, seed):
    arch = FCArch((widths[0],) + tuple(widths))
    st = run_ensemble(TrialPlan(arch, parse_scheme("he-normal"), InputSpec("sphere", "m0"), trials, seed,
                                sampler="projected"))
    return st.emp_var_mean, st.emp_var_se


def empvar_equivalence_checks(trials: int = DEFAULT_TRIALS["empvar"], seed: int = 1) -> list[Check]:
    """Stacks with equal beta share E[empirical variance]; a smaller beta lowers it."""
    out = []
    res = {name: _empvar_run(w, trials, subseed(seed, 0, k)) for k, (name, w) in enumerate(EMPVAR_TYPES.items())}
    for a, b in combinations(("i", "ii", "iii", "iv"), 2):
        (ma, sa), (mb, sb) = res[a], res[b]
        z = abs(ma - mb) / math.hypot(sa, sb)
        out.append(Check("empvar", f"same beta {a} vs {b}", z <= Z_BATCH, z, Z_BATCH,
                         f"{ma:.4g}+-{sa:.2g} vs {mb:.4g}+-{sb:.2g}"))
    mv, sv = res["v"]
    for a in ("i", "ii", "iii", "iv"):
        ma, sa = res[a]
        z = (ma - mv) / math.hypot(sa, sv)
        out.append(Check("empvar", f"smaller beta v < {a}", z >= Z_SINGLE, z, Z_SINGLE,
                         f"{mv:.4g}+-{sv:.2g} vs {ma:.4g}+-{sa:.2g}"))
    return out


def empvar_growth_checks(trials: int = DEFAULT_TRIALS["empvar"], seed: int = 1) -> list[Check]:
    """Growth ratio of E[empirical variance] from beta=2 to 4 beats the one from 1 to 2.

    Standard errors of the ratios come from the delta method.
    """
    means = {}
    for k, d in enumerate((11, 21, 41)):
        means[d] = _empvar_run((10,) * d, trials, subseed(seed, 1, k))
    (m1, s1), (m2, s2), (m4, s4) = means[11], means[21], means[41]
    r21, r42 = m2 / m1, m4 / m2
    se21 = r21 * math.hypot(s1 / m1, s2 / m2)
    se42 = r42 * math.hypot(s2 / m2, s4 / m4)
    z = (r42 - r21) / math.hypot(se21, se42)
    return [Check("empvar", "superlinear growth in beta", z >= Z_SINGLE, z, Z_SINGLE,
                  f"ratio(4:2)={r42:.4g}+-{se42:.2g} ratio(2:1)={r21:.4g}+-{se21:.2g}")]


def empvar_checks(trials: int = DEFAULT_TRIALS["empvar"], seed: int = 1) -> list[Check]:
    return empvar_equivalence_checks(trials, seed) + empvar_growth_checks(trials, seed)


# -- conditional one-step statistics ---------------------------------------------------------

MARTINGALE_WIDTHS = (1, 5, 50)


def _activation(r: np.random.Generator, n: int) -> np.ndarray:
    """A post-ReLU-like vector: nonnegative with some exact zeros, random scale."""
    a = np.abs(r.standard_normal(n)) * (r.random(n) < 0.7)
    if not a.any():
        a[r.integers(n)] = 1.0
    return a * math.exp(r.uniform(-1.0, 1.0))


def martingale_checks(samples: int = DEFAULT_TRIALS["martingale"], seed: int = 1) -> list[Check]:
    out = []
    r = rngs.stream(subseed(seed, 0), 0)
    for k in range(20):
        n_in = MARTINGALE_WIDTHS[k % 3]
        n_out = MARTINGALE_WIDTHS[(k // 3) % 3]
        nu2 = 0.0 if k % 2 == 0 else 0.1 * (1 + k % 5)
        bias = normal(nu2) if nu2 else DistributionSpec("point_mass_zero")
        a = _activation(r, n_in)
        st = conditional_step_stats(a, n_out, parse_scheme("he-normal", bias), samples, subseed(seed, 1, k))
        target = float(a @ a) / n_in + 0.5 * nu2
        out.append(_z_check("martingale", f"#{k} n={n_in}->{n_out} nu2={nu2:g}", st.mean, st.se_mean, target))
    return out


CONDVAR_KINDS = ("normal", "uniform", "rademacher")


def condvar_checks(samples: int = DEFAULT_TRIALS["condvar"], seed: int = 1) -> list[Check]:
    out = []
    gauss, zero = moments(normal(1.0)), moments(DistributionSpec("point_mass_zero"))
    for M in (0.3, 1.0, 2.5):
        for n in (1, 7):
            v = conditional_variance_exact(M, 0.123, n, gauss, zero)
            ok = v == 5 * M * M / n
            out.append(Check("condvar", f"gaussian exact M={M} n={n}", ok, v, 5 * M * M / n))
    rad = moments(DistributionSpec("rademacher", 2.0))
    v = conditional_variance_exact(1.0, 1.0, 1, rad, zero)
    out.append(Check("condvar", "rademacher single unit exact", v == 1.0, v, 1.0))

    r = rngs.stream(subseed(seed, 0), 0)
    idx = 0
    for kind in CONDVAR_KINDS:
        for bias_var in (0.0, 0.2):
            bias = normal(bias_var) if bias_var else DistributionSpec("point_mass_zero")
            scheme = InitScheme("scaled", 1.0, kind, bias)
            for k in range(10):
                n_in = int(r.integers(1, 9))
                n_out = int(r.integers(1, 4))
                a = _activation(r, n_in)
                M = float(a @ a) / n_in
                l4 = float(np.sum(a**4)) / n_in**2
                wm = moments(DistributionSpec(kind, 2.0 / n_in))
                exact = conditional_variance_exact(M, l4, n_out, wm, moments(bias))
                st = conditional_step_stats(a, n_out, scheme, samples, subseed(seed, 1, idx))
                idx += 1
                out.append(Check("condvar", f"{kind} nu2={bias_var:g} #{k} n={n_in}->{n_out}",
                                 abs(_z(st.var, st.se_var, exact)) <= Z_BATCH, abs(_z(st.var, st.se_var, exact)),
                                 Z_BATCH, f"estimate={st.var:.6g} se={st.se_var:.3g} exact={exact:.6g}"))
    return out


# -- residual nets ---------------------------------------------------------------------------

def _resnet_run(scales, trials, seed):
    arch = ResidualArch(5, tuple(scales))
    plan = TrialPlan(arch, parse_scheme("he-normal"), InputSpec("sphere", "m0", nonnegative=True), trials, seed,
                     resample_input=True)
    return run_ensemble(plan)


def resnet_growth_checks(trials: int = DEFAULT_TRIALS["resnet"], seed: int = 1) -> list[Check]:
    """Unit scales grow at least like 2^L; summable scales plateau inside the product bounds."""
    out = []
    st = _resnet_run((1.0,) * 30, trials, subseed(seed, 0))
    Ls = np.arange(5, 31)
    worst = min(_z(st.mean[L], st.se_mean[L], 2.0**L) for L in Ls)
    out.append(Check("resnet", "eta=1 mean >= 2^L, L=5..30", worst >= -Z_SINGLE, worst, -Z_SINGLE,
                     "minimum z of mean against 2^L"))
    y = np.log(st.mean[Ls])
    slope, icept = np.polyfit(Ls, y, 1)
    r2 = 1.0 - np.sum((y - (slope * Ls + icept)) ** 2) / np.sum((y - y.mean()) ** 2)
    out.append(Check("resnet", "eta=1 log-mean linear in L", bool(slope > 0 and r2 > 0.95), r2, 0.95,
                     f"slope={slope:.4g} R^2={r2:.6f}"))

    m40 = _resnet_run(geometric_scales(0.5, 40), trials, subseed(seed, 1))
    m160 = _resnet_run(geometric_scales(0.5, 160), trials, subseed(seed, 2))
    a, sa, b, sb = m40.mean[-1], m40.se_mean[-1], m160.mean[-1], m160.se_mean[-1]
    z = abs(a - b) / math.hypot(sa, sb)
    out.append(Check("resnet", "eta=0.5^l plateau L=40 vs 160", z <= Z_SINGLE, z, Z_SINGLE,
                     f"{a:.5g}+-{sa:.2g} vs {b:.5g}+-{sb:.2g}"))

    for k, base in enumerate((0.5, 0.75, 0.9)):
        scales = geometric_scales(base, 40)
        st = m40 if base == 0.5 else _resnet_run(scales, trials, subseed(seed, 3, k))
        bounds = resnet_growth_bounds(scales, 5)
        lo = st.mean - Z_SINGLE * st.se_mean
        hi = st.mean + Z_SINGLE * st.se_mean
        slack = 1e-12 * bounds.upper  # M^res_0 sits exactly on both bounds
        gap = float(np.max(np.maximum(np.maximum(bounds.lower - hi, lo - bounds.upper) - slack, 0.0)))
        out.append(Check("resnet", f"eta={base}^l within product bounds", gap == 0.0, gap, 0.0,
                         f"final mean={st.mean[-1]:.5g} bounds=[{bounds.lower[-1]:.5g}, {bounds.upper[-1]:.5g}]"))
    return out


def resnet_empvar_checks(trials: int = DEFAULT_TRIALS["resnet"], seed: int = 1) -> list[Check]:
    """With scales summing to 3, E[empirical variance] stays bounded as L grows."""
    out = []
    ev = {}
    for k, L in enumerate((10, 40, 160)):
        st = _resnet_run((3.0 / L,) * L, trials, subseed(seed, 4, k))
        ev[L] = (st.emp_var_mean, st.emp_var_se)
    m10, s10 = ev[10]
    for L in (40, 160):
        m, s = ev[L]
        limit = 2 * m10 + Z_SINGLE * math.hypot(s, 2 * s10)
        out.append(Check("resnet", f"sum eta=3 empvar L={L} <= 2x L=10", m <= limit, m, limit,
                         f"L=10: {m10:.4g}+-{s10:.2g}; L={L}: {m:.4g}+-{s:.2g}"))
    return out


def resnet_checks(trials: int = DEFAULT_TRIALS["resnet"], seed: int = 1) -> list[Check]:
    return resnet_growth_checks(trials, seed) + resnet_empvar_checks(trials, seed)


SUITE_FUNCS = {
    "mean": mean_checks,
    "variance": variance_checks,
    "empvar": empvar_checks,
    "martingale": martingale_checks,
    "condvar": condvar_checks,
    "resnet": resnet_checks,
}


def run_suite(name: str, seed: int = 1, trials: int | None = None) -> list[Check]:
    if name == "all":
        return [c for s in SUITES for c in run_suite(s, seed, trials)]
    if name not in SUITE_FUNCS:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES + ('all',))}")
    return SUITE_FUNCS[name](trials or DEFAULT_TRIALS[name], seed)
