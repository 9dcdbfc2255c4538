"""Monte-Carlo ensembles over independently initialized nets.

Trials are processed in fixed chunks of ``CHUNK`` consecutive trial indices.
Chunk results are merged in index order, so the output depends only on the
plan -- never on the number of worker threads.
"""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lsl import rng as rngs
from lsl.dists import InitScheme, resolve_layer, sample_array
from lsl.forward import InputSpec, conv_lengths, empirical_variance, fc_lengths, make_input, residual_lengths
from lsl.netgen import Architecture, ConvArch, FCArch, ResidualArch, arch_to_dict, fan_in, fan_out, sample_net

CHUNK = 512
SAMPLERS = ("full", "projected")
CSV_COLUMNS = ("layer", "n_layer", "mean_M", "se_mean", "var_M", "se_var",
               "mean_Msq", "se_Msq", "overflow_count")


def default_workers() -> int:
    value = os.environ.get("LSL_THREADS")
    if value is None:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"LSL_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ValueError(f"LSL_THREADS must be a positive integer, got {value!r}")
    return n


# -- moment accumulators ------------------------------------------------------

@dataclass
class Moments:
    """Column-wise count, mean and central sums of powers 2..4.

    Non-finite samples are skipped; merging follows the pairwise update
    formulas of Chan et al. / Pebay, so merge order affects only rounding.
    """

    count: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray

    @classmethod
    def empty(cls, width: int) -> "Moments":
        z = np.zeros(width)
        return cls(np.zeros(width, dtype=np.int64), z, z.copy(), z.copy(), z.copy())

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "Moments":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        ok = np.isfinite(x)
        count = ok.sum(axis=0)
        xs = np.where(ok, x, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(count > 0, xs.sum(axis=0) / np.maximum(count, 1), 0.0)
        d = np.where(ok, x - mean, 0.0)
        d2 = d * d
        return cls(count.astype(np.int64), mean, d2.sum(axis=0), (d2 * d).sum(axis=0), (d2 * d2).sum(axis=0))

    def merge(self, other: "Moments") -> "Moments":
        na = self.count.astype(np.float64)
        nb = other.count.astype(np.float64)
        n = na + nb
        safe = np.where(n > 0, n, 1.0)
        delta = other.mean - self.mean
        mean = np.where(n > 0, self.mean + delta * nb / safe, 0.0)
        m2 = self.m2 + other.m2 + delta**2 * na * nb / safe
        m3 = (self.m3 + other.m3 + delta**3 * na * nb * (na - nb) / safe**2
              + 3.0 * delta * (na * other.m2 - nb * self.m2) / safe)
        m4 = (self.m4 + other.m4
              + delta**4 * na * nb * (na * na - na * nb + nb * nb) / safe**3
              + 6.0 * delta**2 * (na * na * other.m2 + nb * nb * self.m2) / safe**2
              + 4.0 * delta * (na * other.m3 - nb * self.m3) / safe)
        return Moments(self.count + other.count, mean, m2, m3, m4)

    def _n(self) -> np.ndarray:
        return self.count.astype(np.float64)

    def variance(self) -> np.ndarray:
        n = self._n()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 1, self.m2 / np.maximum(n - 1, 1), np.nan)

    def se_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(self.variance() / self._n())

    def se_variance(self) -> np.ndarray:
        n = self._n()
        with np.errstate(invalid="ignore", divide="ignore"):
            c2 = self.m2 / n
            c4 = self.m4 / n
            return np.sqrt(np.maximum(c4 - c2 * c2, 0.0) / n)

    def mean_square(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.m2 / self._n() + self.mean**2

    def se_mean_square(self) -> np.ndarray:
        # Var[X^2] = c4 + 4 mu c3 + 4 mu^2 c2 - c2^2, expanded to avoid mu^4 cancellation
        n = self._n()
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            c2, c3, c4 = self.m2 / n, self.m3 / n, self.m4 / n
            mu = self.mean
            var_sq = c4 + 4 * mu * c3 + 4 * mu * mu * c2 - c2 * c2
            var_sq = var_sq * n / np.maximum(n - 1, 1)
            return np.sqrt(np.maximum(var_sq, 0.0) / n)

    def to_dict(self) -> dict:
        return {k: [_num(v) for v in getattr(self, k).tolist()]
                for k in ("count", "mean", "m2", "m3", "m4")}

    @classmethod
    def from_dict(cls, doc: dict) -> "Moments":
        return cls(np.asarray(doc["count"], dtype=np.int64),
                   *(np.asarray([float(v) for v in doc[k]]) for k in ("mean", "m2", "m3", "m4")))


def _num(x):
    if isinstance(x, int):
        return x
    return x if math.isfinite(x) else repr(x)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# -- plans and results ------------------------------------------------------------

@dataclass(frozen=True)
class TrialPlan:
    arch: Architecture
    scheme: InitScheme
    input: InputSpec = field(default_factory=InputSpec)
    trials: int = 1000
    master_seed: int = 0
    precision: str = "f64"
    sampler: str = "full"
    resample_input: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        rngs.check_seed(self.master_seed)
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.sampler == "projected":
            if not isinstance(self.arch, FCArch):
                raise ValueError("the projected sampler only supports FC nets")
            for j in range(1, self.arch.depth + 1):
                w, _ = resolve_layer(self.scheme, fan_in(self.arch, j), fan_out(self.arch, j))
                if w.kind != "normal":
                    raise ValueError("the projected sampler requires Gaussian weights")

    @property
    def input_shape(self) -> tuple[int, ...]:
        if isinstance(self.arch, FCArch):
            return (self.arch.widths[0],)
        if isinstance(self.arch, ConvArch):
            return self.arch.input
        return (self.arch.width,)

    def signature(self) -> dict:
        """Everything that must agree for two result sets to be mergeable."""
        b = self.scheme.bias
        return {
            "arch": arch_to_dict(self.arch),
            "scheme": self.scheme.label,
            "bias": {"kind": b.kind, "variance": b.variance},
            "input": {"kind": self.input.kind, "norm": self.input.norm,
                      "nonnegative": self.input.nonnegative,
                      "values": list(self.input.values) if self.input.values is not None else None},
            "master_seed": self.master_seed,
            "precision": self.precision,
            "sampler": self.sampler,
            "resample_input": self.resample_input,
        }


@dataclass
class EnsembleStats:
    widths: tuple[int, ...]
    layers: Moments
    emp_var: Moments
    overflow: np.ndarray
    trials: int
    master_seed: int
    signature: dict

    @classmethod
    def empty(cls, plan: TrialPlan) -> "EnsembleStats":
        widths = plan.arch.layer_widths
        return cls(widths, Moments.empty(len(widths)), Moments.empty(1),
                   np.zeros(len(widths), dtype=np.int64), 0, plan.master_seed, plan.signature())

    # per-layer estimates
    @property
    def mean(self) -> np.ndarray:
        return self.layers.mean

    @property
    def se_mean(self) -> np.ndarray:
        return self.layers.se_mean()

    @property
    def var(self) -> np.ndarray:
        return self.layers.variance()

    @property
    def se_var(self) -> np.ndarray:
        return self.layers.se_variance()

    @property
    def mean_sq(self) -> np.ndarray:
        return self.layers.mean_square()

    @property
    def se_mean_sq(self) -> np.ndarray:
        return self.layers.se_mean_square()

    @property
    def emp_var_mean(self) -> float:
        return float(self.emp_var.mean[0])

    @property
    def emp_var_se(self) -> float:
        return float(self.emp_var.se_mean()[0])

    def rows(self) -> list[dict]:
        cols = (self.mean, self.se_mean, self.var, self.se_var, self.mean_sq, self.se_mean_sq)
        out = []
        for j, n in enumerate(self.widths):
            row = {"layer": j, "n_layer": n}
            row.update({name: float(c[j]) for name, c in zip(CSV_COLUMNS[2:8], cols)})
            row["overflow_count"] = int(self.overflow[j])
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows():
            buf.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "signature": self.signature,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "widths": list(self.widths),
            "layers": [{k: _num(v) for k, v in row.items()} for row in self.rows()],
            "emp_var": {"mean": _num(self.emp_var_mean), "se": _num(self.emp_var_se),
                        "count": int(self.emp_var.count[0])},
            "accumulators": {"layers": self.layers.to_dict(), "emp_var": self.emp_var.to_dict(),
                             "overflow": self.overflow.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EnsembleStats":
        acc = doc["accumulators"]
        return cls(tuple(doc["widths"]), Moments.from_dict(acc["layers"]), Moments.from_dict(acc["emp_var"]),
                   np.asarray(acc["overflow"], dtype=np.int64), int(doc["trials"]),
                   int(doc["master_seed"]), doc["signature"])


def merge(a: EnsembleStats, b: EnsembleStats) -> EnsembleStats:
    """Combine results over disjoint trial sets of the same plan."""
    if a.widths != b.widths or a.signature != b.signature:
        raise ValueError("cannot merge ensembles of different plans")
    return EnsembleStats(a.widths, a.layers.merge(b.layers), a.emp_var.merge(b.emp_var),
                         a.overflow + b.overflow, a.trials + b.trials, a.master_seed, a.signature)


# -- trial execution -----------------------------------------------------------------

def _fixed_input(plan: TrialPlan) -> np.ndarray:
    return make_input(plan.input, plan.input_shape, rngs.input_stream(plan.master_seed))


def _inputs(plan: TrialPlan, lo: int, hi: int, fixed: np.ndarray | None) -> np.ndarray:
    if fixed is not None:
        return np.broadcast_to(fixed, (hi - lo,) + fixed.shape)
    return np.stack([make_input(plan.input, plan.input_shape, rngs.input_stream(plan.master_seed, t))
                     for t in range(lo, hi)])


def _full_lengths(plan: TrialPlan, lo: int, hi: int, x: np.ndarray, dt) -> np.ndarray:
    nets = [sample_net(plan.arch, plan.scheme, rngs.trial_stream(plan.master_seed, t),
                       lineage=(plan.master_seed, t)) for t in range(lo, hi)]
    x = x.astype(dt)
    if isinstance(plan.arch, ResidualArch):
        mw = [[np.stack([n.modules[l].weights[j] for n in nets]).astype(dt)
               for j in range(plan.arch.module_depth)] for l in range(plan.arch.depth)]
        return residual_lengths(plan.arch.scales, mw, x)
    ws = [np.stack([n.weights[j] for n in nets]).astype(dt) for j in range(plan.arch.depth)]
    bs = [np.stack([n.biases[j] for n in nets]).astype(dt) for j in range(plan.arch.depth)]
    if isinstance(plan.arch, ConvArch):
        return conv_lengths(plan.arch, ws, bs, x)
    return fc_lengths(ws, bs, x)


def fc_lengths_projected(variances, gauss, biases, x: np.ndarray) -> np.ndarray:
    """M_0..M_d for FC nets with Gaussian weights, sampled through projections.

    Given the activations a, the pre-activations W^T a + b of a layer with
    i.i.d. N(0, v) weights are distributed as sqrt(v) |a| g + b with g a
    standard normal vector, so only n_j draws per layer are needed.
    ``gauss[j]`` and ``biases[j]`` have shape (B, n_{j+1}).
    """
    dt = x.dtype.type
    sq = np.sum(x * x, axis=1)
    out = [sq / dt(x.shape[1])]
    with np.errstate(over="ignore", invalid="ignore"):
        for v, g, b in zip(variances, gauss, biases):
            a = np.maximum(np.sqrt(dt(v) * sq)[:, None] * g + b, 0)
            sq = np.sum(a * a, axis=1)
            out.append(sq / dt(a.shape[1]))
    return np.stack(out, axis=1)


def _projected_lengths(plan: TrialPlan, lo: int, hi: int, x: np.ndarray, dt) -> np.ndarray:
    arch = plan.arch
    widths = arch.widths[1:]
    specs = [resolve_layer(plan.scheme, fan_in(arch, j), fan_out(arch, j)) for j in range(1, arch.depth + 1)]
    splits = np.cumsum(widths)[:-1]
    gs, bs = [], []
    for t in range(lo, hi):
        r = rngs.trial_stream(plan.master_seed, t)
        gs.append(np.split(r.standard_normal(int(sum(widths))), splits))
        bs.append([sample_array(b, r, n) for (_, b), n in zip(specs, widths)])
    gauss = [np.stack([g[j] for g in gs]).astype(dt) for j in range(arch.depth)]
    biases = [np.stack([b[j] for b in bs]).astype(dt) for j in range(arch.depth)]
    return fc_lengths_projected([w.variance for w, _ in specs], gauss, biases, x.astype(dt))


def trial_lengths(plan: TrialPlan, lo: int, hi: int, fixed: np.ndarray | None = None) -> np.ndarray:
    """Length traces (one row per trial) for trials ``lo..hi-1``."""
    if fixed is None and not plan.resample_input:
        fixed = _fixed_input(plan)
    x = _inputs(plan, lo, hi, None if plan.resample_input else fixed)
    dt = np.float32 if plan.precision == "f32" else np.float64
    if plan.sampler == "projected":
        m = _projected_lengths(plan, lo, hi, x, dt)
    else:
        m = _full_lengths(plan, lo, hi, x, dt)
    return m.astype(np.float64)


def _chunk_stats(plan: TrialPlan, lo: int, hi: int, fixed) -> tuple[Moments, Moments, np.ndarray]:
    m = trial_lengths(plan, lo, hi, fixed)
    ev = empirical_variance(m[:, 1:]) if m.shape[1] > 1 else np.zeros(len(m))
    overflow = (~np.isfinite(m)).sum(axis=0)
    return Moments.from_samples(m), Moments.from_samples(np.atleast_1d(ev)), overflow


def run_ensemble(plan: TrialPlan, workers: int | None = None,
                 trial_range: tuple[int, int] | None = None) -> EnsembleStats:
    """Accumulate per-layer statistics over ``plan.trials`` sampled nets.

    ``trial_range`` restricts the run to a half-open slice of trial indices
    (a shard); merging the shards of a partition reproduces the full run.
    """
    lo, hi = trial_range if trial_range is not None else (0, plan.trials)
    if not 0 <= lo <= hi <= plan.trials:
        raise ValueError(f"trial range {lo}..{hi} outside 0..{plan.trials}")
    workers = default_workers() if workers is None else workers
    fixed = None if plan.resample_input else _fixed_input(plan)
    bounds = []
    start = lo
    while start < hi:
        stop = min(hi, (start // CHUNK + 1) * CHUNK)
        bounds.append((start, stop))
        start = stop

    job = lambda b: _chunk_stats(plan, b[0], b[1], fixed)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]

    result = EnsembleStats.empty(plan)
    for lm, em, ov in parts:
        result = EnsembleStats(result.widths, result.layers.merge(lm), result.emp_var.merge(em),
                               result.overflow + ov, result.trials, result.master_seed, result.signature)
    result.trials = hi - lo
    return result


def run_sharded(plan: TrialPlan, shards: int, workers: int | None = None) -> EnsembleStats:
    """Run ``plan`` as ``shards`` contiguous slices and merge them."""
    if shards < 1:
        raise ValueError("shards must be >= 1")
    edges = [plan.trials * i // shards for i in range(shards + 1)]
    parts = [run_ensemble(plan, workers, (edges[i], edges[i + 1])) for i in range(shards)]
    out = parts[0]
    for p in parts[1:]:
        out = merge(out, p)
    return out


# -- one-layer conditional statistics ---------------------------------------------------

@dataclass(frozen=True)
class StepStats:
    mean: float
    se_mean: float
    var: float
    se_var: float
    samples: int


def conditional_step_stats(activations, fan_out: int, scheme: InitScheme, samples: int,
                           seed: int, max_block: int = 4_000_000) -> StepStats:
    """Sample M_{j+1} = |relu(W^T a + b)|^2 / fan_out over fresh layer weights.

    The activation vector ``a`` is held fixed; weights and biases come from
    ``scheme`` resolved at fan-in ``len(a)``.
    """
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("activations must be a non-empty vector")
    if fan_out < 1:
        raise ValueError("fan_out must be >= 1")
    if samples < 2:
        raise ValueError("need at least two samples")
    wspec, bspec = resolve_layer(scheme, a.size, fan_out)
    r = rngs.stream(seed, rngs.AUX, 0)
    block = max(1, min(samples, max_block // (a.size * fan_out)))
    acc = Moments.empty(1)
    done = 0
    while done < samples:
        bsz = min(block, samples - done)
        w = sample_array(wspec, r, (bsz, a.size, fan_out))
        b = sample_array(bspec, r, (bsz, fan_out))
        z = np.einsum("i,bij->bj", a, w) + b
        act = np.maximum(z, 0.0)
        acc = acc.merge(Moments.from_samples(np.mean(act * act, axis=1)))
        done += bsz
    return StepStats(float(acc.mean[0]), float(acc.se_mean()[0]), float(acc.variance()[0]),
                     float(acc.se_variance()[0]), samples)
