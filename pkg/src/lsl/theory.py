"""Closed-form predictions and bounds for ReLU length statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lsl.dists import InitScheme, MomentSet, layer_kappa, moments, resolve_layer
from lsl.netgen import Architecture, ConvArch, FCArch, ResidualArch, fan_in, fan_out

KAPPA_TOL = 1e-9


def layer_specs(arch: Architecture, scheme: InitScheme):
    """(weight, bias) distributions for every layer of an FC or conv net."""
    if isinstance(arch, ResidualArch):
        arch = arch.module
    return [resolve_layer(scheme, fan_in(arch, j), fan_out(arch, j)) for j in range(1, arch.depth + 1)]


def layer_kappas(arch: Architecture, scheme: InitScheme) -> np.ndarray:
    """Weight variance of each layer relative to the critical 2/fan-in."""
    base = arch.module if isinstance(arch, ResidualArch) else arch
    return np.array([layer_kappa(scheme, fan_in(base, j), fan_out(base, j)) for j in range(1, base.depth + 1)])


@dataclass(frozen=True)
class MeanPrediction:
    mean: np.ndarray   # E[M_0..M_d]
    kappa: np.ndarray  # per layer 1..d
    nu2: np.ndarray    # bias second moment per layer 1..d


def predict_mean_fc(arch: FCArch, scheme: InitScheme, m0: float = 1.0) -> MeanPrediction:
    """Iterate E[M_j] = kappa_j E[M_{j-1}] + nu2_j / 2."""
    if not isinstance(arch, (FCArch, ConvArch)):
        raise TypeError("mean prediction is defined for FC (and conv) nets")
    kappa = layer_kappas(arch, scheme)
    nu2 = np.array([moments(b).mu2 for _, b in layer_specs(arch, scheme)])
    mean = [float(m0)]
    for k, v in zip(kappa, nu2):
        mean.append(k * mean[-1] + 0.5 * v)
    return MeanPrediction(np.array(mean), kappa, nu2)


def _require_critical(arch, scheme) -> np.ndarray:
    kappa = layer_kappas(arch, scheme)
    bad = np.flatnonzero(np.abs(kappa - 1.0) > KAPPA_TOL)
    if bad.size:
        j = int(bad[0]) + 1
        raise ValueError(f"bounds assume the critical variance 2/fan-in; layer {j} has kappa={kappa[j - 1]:.6g}")
    return kappa


@dataclass(frozen=True)
class VarianceBounds:
    lower: np.ndarray      # bounds on E[M_j^2], j = 0..d
    upper: np.ndarray
    c1: float
    c2: float
    recip_sum: np.ndarray  # sum_{k<=j} 1/n_k, j = 0..d


def variance_constants(arch: FCArch, scheme: InitScheme, m0: float = 1.0) -> tuple[float, float]:
    """Constants (C1, C2) of the second-moment bound.

    Gaussian weights with M_0 = 1 and small biases (sum nu2 <= 1, nu4 <= 1)
    use the fixed values (5, 4). Otherwise the general expressions are
    evaluated with the infinite bias sums truncated at the net's depth.
    """
    specs = layer_specs(arch, scheme)
    wm = [moments(w) for w, _ in specs]
    bm = [moments(b) for _, b in specs]
    s2 = sum(b.mu2 for b in bm)
    if m0 == 1.0 and all(w.kind == "normal" for w, _ in specs) and s2 <= 1 and max(b.mu4 for b in bm) <= 1:
        return 5.0, 4.0
    c1 = 1.0 + m0**2 + (m0 + s2) * s2
    worst = max(max(1.0, 0.25 * b.mu4 - 0.5 * b.mu2**2, 2.0 * abs(w.kurt - 3.0)) for w, b in zip(wm, bm))
    return c1, worst * (2.0 + m0 + s2)


def variance_bounds_fc(arch: FCArch, scheme: InitScheme, m0: float = 1.0) -> VarianceBounds:
    """exp(sum/2) <= E[M_j^2] <= C1 exp(C2 sum) with sum = sum_{k<=j} 1/n_k.

    Requires critical weights and M_0 = 1 (the lower bound assumes
    unit M_0). For Gaussian weights the fixed (5, 4) upper bound stops
    holding once sum 1/n_k exceeds about 1.6 with wide layers, since the
    exact second moment is prod(1 + 5/n_k).
    """
    if not isinstance(arch, FCArch):
        raise TypeError("variance bounds are defined for FC nets")
    if m0 != 1.0:
        raise ValueError("variance bounds require M_0 = 1")
    _require_critical(arch, scheme)
    c1, c2 = variance_constants(arch, scheme, m0)
    s = np.concatenate([[0.0], np.cumsum([1.0 / n for n in arch.widths[1:]])])
    return VarianceBounds(np.exp(0.5 * s), c1 * np.exp(c2 * s), c1, c2, s)


def sum_reciprocal_widths(arch: Architecture) -> float:
    """beta = sum of 1/n_j over hidden layers j = 1..d-1.

    For conv nets n_j is the fan-in of layer j+1 (channels times kernel area).
    """
    if isinstance(arch, FCArch):
        return float(sum(1.0 / n for n in arch.widths[1:-1]))
    if isinstance(arch, ConvArch):
        return float(sum(1.0 / fan_in(arch, j + 1) for j in range(1, arch.depth)))
    raise TypeError("beta is defined for FC and conv nets")


@dataclass(frozen=True)
class EmpvarBounds:
    lower: float
    upper: float
    beta: float
    c: float
    C: float


def _empvar_sum(widths: tuple[int, ...], const: float) -> float:
    d = len(widths) - 1
    recip = [1.0 / n for n in widths]
    total = 0.0
    for j in range(1, d + 1):
        tail = sum(recip[j:d])  # k = j..d-1
        total += (j - 1) / d * math.exp(const * tail)
    return const / d * total


def empvar_bounds_fc(arch: FCArch, scheme: InitScheme) -> EmpvarBounds:
    """Sandwich for E[empirical variance of M_1..M_d], with c = 1/2 and C = C2."""
    if not isinstance(arch, FCArch):
        raise TypeError("empirical-variance bounds are defined for FC nets")
    _require_critical(arch, scheme)
    if any(not b.is_zero for _, b in layer_specs(arch, scheme)):
        raise ValueError("empirical-variance bounds assume zero biases")
    _, c2 = variance_constants(arch, scheme, 1.0)
    return EmpvarBounds(_empvar_sum(arch.widths, 0.5), _empvar_sum(arch.widths, c2),
                        sum_reciprocal_widths(arch), 0.5, c2)


def optimal_constant_width(depth: int, budget: int, budget_kind: str = "neurons") -> int:
    """Constant width minimizing sum 1/n_j under a neuron or parameter budget."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if budget_kind == "neurons":
        width = budget // depth
    elif budget_kind == "parameters":
        width = math.isqrt(budget // depth)
    else:
        raise ValueError(f"budget_kind must be 'neurons' or 'parameters', got {budget_kind!r}")
    if width < 1:
        raise ValueError(f"budget {budget} cannot give every one of {depth} layers a unit")
    return width


@dataclass(frozen=True)
class ResnetBounds:
    lower: np.ndarray  # bounds on E[M^res_l] / M^res_0, l = 0..L
    upper: np.ndarray
    scale_sum: float
    bounded: bool | None


def _series_converges(scales) -> bool | None:
    s = np.asarray(scales, dtype=np.float64)
    if s.size < 2:
        return None
    if np.allclose(s, s[0], rtol=1e-12, atol=0):
        return False
    ratios = s[1:] / s[:-1]
    if np.allclose(ratios, ratios[0], rtol=1e-9, atol=0):
        return bool(ratios[0] < 1)
    return None


def resnet_growth_bounds(scales, module_width: int = 1, series: tuple[str, float] | None = None) -> ResnetBounds:
    """prod(1 + eta^2) <= E[M^res_L]/M^res_0 <= prod(1 + sqrt(2) eta + eta^2).

    Valid for zero-bias critical modules whose output width equals the
    ambient width, and nonnegative inputs. ``series`` optionally names the
    infinite continuation (``("const", v)`` or ``("geom", b)``); otherwise
    constant or geometric patterns in ``scales`` are recognized.
    """
    eta = np.asarray(scales, dtype=np.float64)
    if module_width < 1:
        raise ValueError("module width must be >= 1")
    if eta.size == 0:
        raise ValueError("need at least one scale")
    if np.any(eta <= 0) or np.any(eta >= 1):
        raise ValueError("scales must lie in (0, 1)")
    lower = np.concatenate([[1.0], np.cumprod(1.0 + eta**2)])
    upper = np.concatenate([[1.0], np.cumprod(1.0 + math.sqrt(2.0) * eta + eta**2)])
    if series is None:
        bounded = _series_converges(eta)
    else:
        kind, value = series
        if kind == "const":
            bounded = False
        elif kind == "geom":
            bounded = value < 1
        else:
            raise ValueError(f"unknown series kind {kind!r}")
    return ResnetBounds(lower, upper, float(eta.sum()), bounded)


def conditional_variance_exact(M: float, l4: float, n_next: int,
                               weight_moments: MomentSet, bias_moments: MomentSet) -> float:
    """Var[M_{j+1} | a^(j)] for critical weights.

    ``M`` is |a|^2 / n_j and ``l4`` is |a|_4^4 / n_j^2. For one unit
    A = relu(z), z = sum_a a w + b, symmetry gives E[A^k] = E[z^k] / 2 and

        Var[A^2] = 5 M^2 + 2 (kurt - 3) l4 + 5 nu2 M + nu4 / 2 - nu2^2 / 4.
    """
    if M < 0 or l4 < 0:
        raise ValueError("M and l4 must be nonnegative")
    if n_next < 1:
        raise ValueError("n_next must be >= 1")
    excess = weight_moments.kurt - 3.0 if weight_moments.mu2 > 0 else 0.0
    nu2, nu4 = bias_moments.mu2, bias_moments.mu4
    var_unit = 5.0 * M * M + 2.0 * excess * l4 + 5.0 * nu2 * M + 0.5 * nu4 - 0.25 * nu2 * nu2
    return var_unit / n_next
