"""Forward propagation and per-layer normalized squared lengths.

The batched kernels (``*_lengths``) take a leading trial axis and are shared
by the single-net entry points and the Monte-Carlo engine, so one trial of
an ensemble reproduces :func:`forward` exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lsl.netgen import ConvArch, FCArch, NetInstance, ResidualArch

DTYPES = {"f64": np.float64, "f32": np.float32}


def _dtype(precision: str):
    try:
        return DTYPES[precision]
    except KeyError:
        raise ValueError(f"precision must be 'f32' or 'f64', got {precision!r}") from None


def empirical_variance(values) -> float | np.ndarray:
    """Empirical variance of the hidden-layer lengths.

    Accepts a :class:`LengthTrace` (uses M_1..M_d) or an array whose last
    axis holds M_1..M_d; batched input gives one value per row.
    """
    if isinstance(values, LengthTrace):
        values = values.m[1:]
    h = np.asarray(values, dtype=np.float64)
    if h.shape[-1] < 1:
        raise ValueError("empirical variance needs at least one hidden layer")
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.mean(h * h, axis=-1) - np.mean(h, axis=-1) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LengthTrace:
    m: np.ndarray
    emp_var: float

    @classmethod
    def from_lengths(cls, m) -> "LengthTrace":
        m = np.asarray(m, dtype=np.float64)
        return cls(m, empirical_variance(m[1:]))


# -- inputs ---------------------------------------------------------------------

INPUT_KINDS = ("ones", "sphere", "explicit", "constant", "checkerboard")


@dataclass(frozen=True)
class InputSpec:
    """How to build the fixed network input.

    ``norm="m0"`` scales the input so M_0 = 1; ``norm="unit"`` scales it to
    unit Euclidean norm. ``nonnegative`` folds a sphere draw onto the
    positive orthant.
    """

    kind: str = "sphere"
    norm: str = "m0"
    values: tuple | None = None
    nonnegative: bool = False

    def __post_init__(self):
        if self.kind not in INPUT_KINDS:
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.norm not in ("m0", "unit"):
            raise ValueError(f"norm must be 'm0' or 'unit', got {self.norm!r}")
        if self.kind == "explicit" and self.values is None:
            raise ValueError("explicit input needs values")

    @property
    def random(self) -> bool:
        return self.kind == "sphere"


def make_input(spec: InputSpec, shape, rng: np.random.Generator | None = None) -> np.ndarray:
    shape = tuple(shape)
    if spec.kind == "ones" or spec.kind == "constant":
        x = np.ones(shape)
    elif spec.kind == "sphere":
        if rng is None:
            raise ValueError("sphere input needs a random stream")
        x = rng.standard_normal(shape)
        if spec.nonnegative:
            x = np.abs(x)
    elif spec.kind == "checkerboard":
        if len(shape) != 3:
            raise ValueError("checkerboard input is only defined for images")
        h, w, c = shape
        board = (np.add.outer(np.arange(h), np.arange(w)) % 2) * 2.0 - 1.0
        x = np.repeat(board[:, :, None], c, axis=2)
    else:
        x = np.asarray(spec.values, dtype=np.float64)
        if x.size != math.prod(shape):
            raise ValueError(f"input has {x.size} entries, architecture expects shape {shape}")
        x = x.reshape(shape)
    sq = float(np.sum(x * x))
    if sq > 0:
        target = x.size if spec.norm == "m0" else 1.0
        x = x * math.sqrt(target / sq)
    return x


def load_image_csv(path: str | Path) -> np.ndarray:
    """Read an image as CSV grids, one rows x cols block per channel.

    Channel blocks are separated by blank lines. Returns (height, width, channels).
    """
    blocks, cur = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or all(not cell.strip() for cell in row):
                if cur:
                    blocks.append(cur)
                    cur = []
                continue
            cur.append([float(cell) for cell in row])
    if cur:
        blocks.append(cur)
    if not blocks:
        raise ValueError(f"{path}: empty image")
    arr = np.asarray(blocks, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{path}: ragged image grid")
    return np.transpose(arr, (1, 2, 0))


# -- batched kernels ----------------------------------------------------------

def _sq_mean(a: np.ndarray, axes) -> np.ndarray:
    count = math.prod(a.shape[ax] for ax in axes)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.sum(a * a, axis=axes) / a.dtype.type(count)


def fc_lengths(weights, biases, x: np.ndarray) -> np.ndarray:
    """M_0..M_d for a batch of FC nets.

    ``weights[j]`` has shape (B, n_j, n_{j+1}), ``biases[j]`` (B, n_{j+1}),
    and ``x`` (B, n_0). Returns an array of shape (B, d+1).
    """
    a = x[:, None, :]
    out = [_sq_mean(a, (1, 2))]
    with np.errstate(over="ignore", invalid="ignore"):
        for w, b in zip(weights, biases):
            a = np.maximum(np.matmul(a, w) + b[:, None, :], 0)
            out.append(_sq_mean(a, (1, 2)))
    return np.stack(out, axis=1)


def _patches(img: np.ndarray, k: int, padding: str) -> np.ndarray:
    """im2col: (B, H, W, C) -> (B, H*W, k*k*C), patch order (dy, dx, c)."""
    bsz, h, w, c = img.shape
    r = k // 2
    if k == 1:
        cols = [img]
    elif padding == "circular":
        cols = [np.roll(img, (r - dy, r - dx), axis=(1, 2)) for dy in range(k) for dx in range(k)]
    else:
        padded = np.pad(img, ((0, 0), (r, r), (r, r), (0, 0)))
        cols = [padded[:, dy:dy + h, dx:dx + w, :] for dy in range(k) for dx in range(k)]
    return np.concatenate(cols, axis=-1).reshape(bsz, h * w, k * k * c)


def conv_lengths(arch: ConvArch, weights, biases, img: np.ndarray) -> np.ndarray:
    """M_0..M_d for a batch of stride-1 conv nets; ``img`` is (B, H, W, C)."""
    bsz, h, w, _ = img.shape
    out = [_sq_mean(img, (1, 2, 3))]
    a = img
    with np.errstate(over="ignore", invalid="ignore"):
        for layer, kern, b in zip(arch.layers, weights, biases):
            k = layer.kernel
            cols = _patches(a, k, layer.padding)
            wmat = kern.reshape(bsz, -1, layer.out)
            z = np.matmul(cols, wmat) + b[:, None, :]
            a = np.maximum(z, 0).reshape(bsz, h, w, layer.out)
            out.append(_sq_mean(a, (1, 2, 3)))
    return np.stack(out, axis=1)


def residual_lengths(scales, module_weights, x: np.ndarray) -> np.ndarray:
    """M^res_0..M^res_L for a batch of residual nets with zero biases.

    ``module_weights[l]`` is the list of (B, n, n) matrices of module l+1.
    """
    out = [_sq_mean(x, (1,))]
    with np.errstate(over="ignore", invalid="ignore"):
        for eta, ws in zip(scales, module_weights):
            a = x[:, None, :]
            for w in ws:
                a = np.maximum(np.matmul(a, w), 0)
            x = x + x.dtype.type(eta) * a[:, 0, :]
            out.append(_sq_mean(x, (1,)))
    return np.stack(out, axis=1)


# -- single-net entry points ------------------------------------------------

def _check_vector(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"input must have shape ({n},), got {x.shape}")
    return x


def forward_fc(net: NetInstance, x, precision: str = "f64") -> LengthTrace:
    if not isinstance(net.arch, FCArch):
        raise TypeError("forward_fc needs an FC net")
    dt = _dtype(precision)
    x = _check_vector(x, net.arch.widths[0])
    m = fc_lengths([w[None].astype(dt) for w in net.weights],
                   [b[None].astype(dt) for b in net.biases], x[None].astype(dt))
    return LengthTrace.from_lengths(m[0])


def forward_conv(net: NetInstance, image, precision: str = "f64") -> LengthTrace:
    if not isinstance(net.arch, ConvArch):
        raise TypeError("forward_conv needs a conv net")
    dt = _dtype(precision)
    image = np.asarray(image, dtype=np.float64)
    if image.shape != net.arch.input:
        raise ValueError(f"image must have shape {net.arch.input}, got {image.shape}")
    m = conv_lengths(net.arch, [w[None].astype(dt) for w in net.weights],
                     [b[None].astype(dt) for b in net.biases], image[None].astype(dt))
    return LengthTrace.from_lengths(m[0])


def forward_residual(net: NetInstance, x, precision: str = "f64") -> LengthTrace:
    if not isinstance(net.arch, ResidualArch):
        raise TypeError("forward_residual needs a residual net")
    dt = _dtype(precision)
    x = _check_vector(x, net.arch.width)
    mw = [[w[None].astype(dt) for w in mod.weights] for mod in net.modules]
    m = residual_lengths(net.arch.scales, mw, x[None].astype(dt))
    return LengthTrace.from_lengths(m[0])


def forward(net: NetInstance, x, precision: str = "f64") -> LengthTrace:
    if isinstance(net.arch, FCArch):
        return forward_fc(net, x, precision)
    if isinstance(net.arch, ConvArch):
        return forward_conv(net, x, precision)
    return forward_residual(net, x, precision)
