"""Network topologies and sampled weight instances.

Stream consumption order in :func:`sample_net` is fixed: layer-major, and
within a layer the weight array (C order) is drawn before the bias vector.
Residual nets draw module 1 completely, then module 2, and so on. Zero
(point-mass) biases consume nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from lsl.dists import InitScheme, resolve_layer, sample_array


@dataclass(frozen=True)
class FCArch:
    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("FC architecture needs at least an input and one layer")
        if min(self.widths) < 1:
            raise ValueError(f"widths must be >= 1, got {self.widths}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def layer_widths(self) -> tuple[int, ...]:
        """Widths n_0..n_d reported alongside each trace entry."""
        return self.widths


@dataclass(frozen=True)
class ConvLayer:
    out: int
    kernel: int = 3
    padding: str = "circular"

    def __post_init__(self):
        if self.out < 1:
            raise ValueError("out_channels must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.padding not in ("circular", "zero"):
            raise ValueError(f"padding must be 'circular' or 'zero', got {self.padding!r}")


@dataclass(frozen=True)
class ConvArch:
    input: tuple[int, int, int]
    layers: tuple[ConvLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(v) for v in self.input))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input) != 3 or min(self.input) < 1:
            raise ValueError(f"conv input must be (height, width, channels) >= 1, got {self.input}")
        if not self.layers:
            raise ValueError("conv architecture needs at least one layer")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def channels(self, j: int) -> int:
        return self.input[2] if j == 0 else self.layers[j - 1].out

    @property
    def layer_widths(self) -> tuple[int, ...]:
        h, w, _ = self.input
        return tuple(h * w * self.channels(j) for j in range(self.depth + 1))


@dataclass(frozen=True)
class ResidualArch:
    width: int
    scales: tuple[float, ...]
    module_depth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.width < 1 or self.module_depth < 1:
            raise ValueError("residual width and module depth must be >= 1")
        if not self.scales:
            raise ValueError("residual net needs at least one module")
        if min(self.scales) <= 0:
            raise ValueError("residual scales must be positive")

    @property
    def depth(self) -> int:
        return len(self.scales)

    @property
    def module(self) -> FCArch:
        return FCArch((self.width,) * (self.module_depth + 1))

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.width,) * (self.depth + 1)


Architecture = Union[FCArch, ConvArch, ResidualArch]


def _check_layer(arch: Architecture, j: int) -> None:
    n = arch.module_depth if isinstance(arch, ResidualArch) else arch.depth
    if not 1 <= j <= n:
        raise IndexError(f"layer index {j} out of range 1..{n}")


def fan_in(arch: Architecture, layer: int) -> int:
    """Number of inputs feeding a unit of ``layer`` (1-based)."""
    _check_layer(arch, layer)
    if isinstance(arch, FCArch):
        return arch.widths[layer - 1]
    if isinstance(arch, ConvArch):
        return arch.channels(layer - 1) * arch.layers[layer - 1].kernel ** 2
    return arch.width


def fan_out(arch: Architecture, layer: int) -> int:
    _check_layer(arch, layer)
    if isinstance(arch, FCArch):
        return arch.widths[layer]
    if isinstance(arch, ConvArch):
        return arch.layers[layer - 1].out * arch.layers[layer - 1].kernel ** 2
    return arch.width


# -- JSON ---------------------------------------------------------------------

def geometric_scales(b: float, count: int) -> tuple[float, ...]:
    return tuple(b**l for l in range(1, count + 1))


def arch_from_dict(doc: dict) -> Architecture:
    kind = doc.get("type")
    if kind == "fc":
        return FCArch(tuple(doc["widths"]))
    if kind == "conv":
        layers = tuple(
            ConvLayer(int(l["out"]), int(l.get("kernel", 3)), l.get("padding", "circular"))
            for l in doc["layers"]
        )
        return ConvArch(tuple(doc["input"]), layers)
    if kind == "residual":
        scales = doc["scales"]
        if isinstance(scales, dict):
            count = int(scales["count"])
            value = float(scales["value"])
            if scales.get("kind") == "const":
                scales = (value,) * count
            elif scales.get("kind") == "geom":
                scales = geometric_scales(value, count)
            else:
                raise ValueError(f"unknown scales kind {scales.get('kind')!r}")
        return ResidualArch(int(doc["width"]), tuple(scales), int(doc.get("module_depth", 1)))
    raise ValueError(f"unknown architecture type {kind!r}")


def arch_to_dict(arch: Architecture) -> dict:
    if isinstance(arch, FCArch):
        return {"type": "fc", "widths": list(arch.widths)}
    if isinstance(arch, ConvArch):
        return {
            "type": "conv",
            "input": list(arch.input),
            "layers": [{"out": l.out, "kernel": l.kernel, "padding": l.padding} for l in arch.layers],
        }
    return {"type": "residual", "width": arch.width, "module_depth": arch.module_depth,
            "scales": list(arch.scales)}


def load_arch(path: str | Path) -> Architecture:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: architecture must be a JSON object")
    try:
        return arch_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed architecture ({exc})") from exc


# -- sampling -------------------------------------------------------------------

@dataclass
class NetInstance:
    """Concrete weights for an architecture.

    FC layer ``j`` stores an ``(n_{j-1}, n_j)`` weight matrix (row = input
    unit). Conv layers store ``(k, k, c_in, c_out)`` kernels. Residual nets
    keep one FC instance per module in ``modules``.
    """

    arch: Architecture
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    modules: list["NetInstance"] = field(default_factory=list)
    lineage: tuple = ()


def _weight_shape(arch: Architecture, j: int) -> tuple[int, ...]:
    if isinstance(arch, FCArch):
        return (arch.widths[j - 1], arch.widths[j])
    layer = arch.layers[j - 1]
    return (layer.kernel, layer.kernel, arch.channels(j - 1), layer.out)


def sample_net(arch: Architecture, scheme: InitScheme, rng: np.random.Generator,
               lineage: tuple = ()) -> NetInstance:
    """Draw every weight and bias of ``arch`` i.i.d. from ``scheme``."""
    if isinstance(arch, ResidualArch):
        if not scheme.bias.is_zero:
            raise ValueError("residual modules use zero biases")
        modules = [sample_net(arch.module, scheme, rng, lineage + ("module", l))
                   for l in range(1, arch.depth + 1)]
        return NetInstance(arch, modules=modules, lineage=lineage)

    net = NetInstance(arch, lineage=lineage)
    for j in range(1, arch.depth + 1):
        wspec, bspec = resolve_layer(scheme, fan_in(arch, j), fan_out(arch, j))
        shape = _weight_shape(arch, j)
        net.weights.append(sample_array(wspec, rng, shape))
        net.biases.append(sample_array(bspec, rng, shape[-1]))
    return net
