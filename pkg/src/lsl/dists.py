"""Symmetric weight/bias distributions and named initialization schemes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

KINDS = ("normal", "uniform", "truncated_normal", "rademacher", "point_mass_zero")

# relative tolerance for the truncated-normal moment quadrature
QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class DistributionSpec:
    """A distribution symmetric about zero, parameterized by its variance.

    For ``truncated_normal`` the variance is the realized (post-truncation)
    variance and ``cutoff`` is measured in pre-truncation standard deviations.
    """

    kind: str
    variance: float = 0.0
    cutoff: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not (self.variance >= 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be finite and >= 0, got {self.variance}")
        if self.kind == "truncated_normal":
            if self.cutoff is None or not self.cutoff > 0:
                raise ValueError("truncated_normal needs a positive cutoff")
        elif self.cutoff is not None:
            raise ValueError(f"cutoff only applies to truncated_normal, not {self.kind}")
        if self.kind == "point_mass_zero" and self.variance != 0:
            raise ValueError("point_mass_zero has variance 0")

    @property
    def is_zero(self) -> bool:
        return self.kind == "point_mass_zero" or self.variance == 0


ZERO = DistributionSpec("point_mass_zero", 0.0)


def normal(variance: float) -> DistributionSpec:
    return DistributionSpec("normal", float(variance))


@dataclass(frozen=True)
class MomentSet:
    mu2: float
    mu4: float
    kurt: float


def _truncated_std_moment(k: int, cutoff: float) -> float:
    """E[X^k | |X| <= cutoff] for standard normal X, by adaptive quadrature."""
    mass = special.erf(cutoff / math.sqrt(2.0))
    pdf = lambda x: x**k * math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    # integrand is even
    val, _ = integrate.quad(pdf, 0.0, cutoff, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return float(2.0 * val / mass)


@lru_cache(maxsize=None)
def effective_truncation_factor(cutoff: float) -> float:
    """Var[X | |X| <= cutoff] for standard normal X.

    A normal with variance s^2 truncated at +-cutoff*s without rescaling
    has variance ``effective_truncation_factor(cutoff) * s^2``.
    """
    if not cutoff > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if math.isinf(cutoff):
        return 1.0
    return _truncated_std_moment(2, float(cutoff))


@lru_cache(maxsize=None)
def _truncated_kurtosis(cutoff: float) -> float:
    r = effective_truncation_factor(cutoff)
    return _truncated_std_moment(4, cutoff) / (r * r)


def moments(d: DistributionSpec) -> MomentSet:
    """Exact second and fourth moments of ``d``."""
    v = d.variance
    if d.kind == "point_mass_zero" or v == 0:
        return MomentSet(0.0, 0.0, 3.0)
    kurt = {
        "normal": 3.0,
        "uniform": 9.0 / 5.0,
        "rademacher": 1.0,
    }.get(d.kind)
    if kurt is None:
        kurt = _truncated_kurtosis(d.cutoff)
    kurt = float(kurt)
    return MomentSet(v, kurt * v * v, kurt)


def sample_array(d: DistributionSpec, rng: np.random.Generator, shape) -> np.ndarray:
    """Draw an array of i.i.d. samples, consuming ``rng`` in C order."""
    v = d.variance
    if d.kind == "point_mass_zero":
        return np.zeros(shape)
    if d.kind == "normal":
        return math.sqrt(v) * rng.standard_normal(shape)
    if d.kind == "uniform":
        bound = math.sqrt(3.0 * v)
        return rng.uniform(-bound, bound, shape)
    if d.kind == "rademacher":
        return math.sqrt(v) * (2.0 * rng.integers(0, 2, shape) - 1.0)
    # inverse-CDF keeps the number of draws fixed (one uniform per sample)
    c = d.cutoff
    lo = special.ndtr(-c)
    u = rng.random(shape)
    x = special.ndtri(lo + u * (1.0 - 2.0 * lo))
    sigma = math.sqrt(v / effective_truncation_factor(c))
    return sigma * x


def sample(d: DistributionSpec, rng: np.random.Generator) -> float:
    return float(sample_array(d, rng, 1)[0])


# -- initialization schemes -------------------------------------------------

SCHEME_NAMES = (
    "he_normal",
    "he_uniform",
    "he_normal_truncated2",
    "lecun_normal",
    "lecun_uniform",
    "glorot_normal",
    "glorot_uniform",
    "scaled",
)
SCALED_BASES = ("normal", "uniform", "rademacher")


@dataclass(frozen=True)
class InitScheme:
    name: str
    kappa: float = 1.0
    base: str = "normal"
    bias: DistributionSpec = ZERO

    def __post_init__(self):
        if self.name not in SCHEME_NAMES:
            raise ValueError(f"unknown init scheme {self.name!r}")
        if self.name == "scaled":
            if not self.kappa > 0:
                raise ValueError(f"kappa must be positive, got {self.kappa}")
            if self.base not in SCALED_BASES:
                raise ValueError(f"scaled base must be one of {SCALED_BASES}, got {self.base!r}")

    def with_bias(self, bias: DistributionSpec) -> "InitScheme":
        return InitScheme(self.name, self.kappa, self.base, bias)

    @property
    def label(self) -> str:
        if self.name == "scaled":
            return f"scaled:{self.kappa!r}:{self.base}"
        if self.name == "he_normal_truncated2":
            return "he-normal-trunc2"
        return self.name.replace("_", "-")


def parse_scheme(text: str, bias: DistributionSpec = ZERO) -> InitScheme:
    """Parse a stable scheme string such as ``he-normal`` or ``scaled:2.0:normal``."""
    key = text.strip().lower().replace("-", "_")
    if key.startswith("scaled:"):
        parts = key.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"malformed scaled scheme {text!r}")
        try:
            kappa = float(parts[1])
        except ValueError:
            raise ValueError(f"malformed kappa in {text!r}") from None
        base = parts[2] if len(parts) == 3 else "normal"
        return InitScheme("scaled", kappa, base, bias)
    aliases = {"he_normal_trunc2": "he_normal_truncated2",
               "xavier_normal": "glorot_normal", "xavier_uniform": "glorot_uniform"}
    key = aliases.get(key, key)
    if key not in SCHEME_NAMES or key == "scaled":
        raise ValueError(f"unknown init scheme {text!r}")
    return InitScheme(key, bias=bias)


def layer_kappa(scheme: InitScheme, fan_in: int, fan_out: int) -> float:
    """Weight variance relative to the critical value 2/fan_in."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    family = scheme.name.split("_")[0]
    if family == "he":
        return effective_truncation_factor(2.0) if scheme.name == "he_normal_truncated2" else 1.0
    if family == "lecun":
        return 0.5
    if family == "glorot":
        return fan_in / (fan_in + fan_out)
    return float(scheme.kappa)


def weight_variance(scheme: InitScheme, fan_in: int, fan_out: int) -> float:
    return layer_kappa(scheme, fan_in, fan_out) * 2.0 / fan_in


@lru_cache(maxsize=4096)
def resolve_layer(scheme: InitScheme, fan_in: int, fan_out: int) -> tuple[DistributionSpec, DistributionSpec]:
    """Weight and bias distributions for one layer."""
    v = weight_variance(scheme, fan_in, fan_out)
    if scheme.name == "he_normal_truncated2":
        w = DistributionSpec("truncated_normal", v, cutoff=2.0)
    elif scheme.name == "scaled":
        w = DistributionSpec(scheme.base, v)
    else:
        w = DistributionSpec(scheme.name.split("_")[1], v)
    return w, scheme.bias
