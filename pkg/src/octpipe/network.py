"""Network assembly: layer specs, shape-chain validation, params, weight files.

A network is an ordered list of layer specs plus per-layer parameter tensors.
Two networks built from the same (specs, input shape, seed) are bit-identical.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import ConfigError, WeightFormatError
from .rng import Rng

CONV3X3 = "conv3x3"
RELU = "relu"
MAXPOOL = "maxpool2x2"
FLATTEN = "flatten"
DENSE = "dense"
SOFTMAX = "softmax"

_KIND_TAGS = {CONV3X3: 1, DENSE: 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

OCTW_MAGIC = b"OCTW"
OCTW_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    in_features: int = 0
    out_features: int = 0


def conv3x3(in_channels: int, out_channels: int) -> LayerSpec:
    return LayerSpec(CONV3X3, in_channels=in_channels, out_channels=out_channels)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def maxpool2x2() -> LayerSpec:
    return LayerSpec(MAXPOOL)


def flatten() -> LayerSpec:
    return LayerSpec(FLATTEN)


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec(DENSE, in_features=in_features, out_features=out_features)


def softmax() -> LayerSpec:
    return LayerSpec(SOFTMAX)


def validate_specs(specs: list[LayerSpec], input_shape: tuple[int, int, int]) -> list[tuple]:
    """Walk the shape chain; returns the per-layer output shapes.

    Raises ConfigError naming the first offending layer index.
    """
    if len(specs) < 2 or specs[-2].kind != DENSE or specs[-2].out_features != 2 or specs[-1].kind != SOFTMAX:
        raise ConfigError("network must end with dense(out_features=2) followed by softmax")
    shape: tuple = tuple(input_shape)
    out_shapes = []
    for i, spec in enumerate(specs):
        if spec.kind == CONV3X3:
            if len(shape) != 3:
                raise ConfigError(f"layer {i}: conv3x3 needs a [C,H,W] input, got {shape}")
            c, h, w = shape
            if spec.in_channels != c:
                raise ConfigError(f"layer {i}: conv3x3 expects {spec.in_channels} channels, chain has {c}")
            if h < 1 or w < 1:
                raise ConfigError(f"layer {i}: conv3x3 needs H,W >= 1")
            shape = (spec.out_channels, h, w)
        elif spec.kind == RELU:
            pass
        elif spec.kind == MAXPOOL:
            if len(shape) != 3:
                raise ConfigError(f"layer {i}: maxpool2x2 needs a [C,H,W] input, got {shape}")
            c, h, w = shape
            shape = (c, (h + 1) // 2, (w + 1) // 2)
        elif spec.kind == FLATTEN:
            if len(shape) != 3:
                raise ConfigError(f"layer {i}: flatten needs a [C,H,W] input, got {shape}")
            shape = (int(np.prod(shape)),)
        elif spec.kind == DENSE:
            if len(shape) != 1:
                raise ConfigError(f"layer {i}: dense needs a flat input (insert flatten first)")
            if spec.in_features != shape[0]:
                raise ConfigError(f"layer {i}: dense expects {spec.in_features} features, chain has {shape[0]}")
            shape = (spec.out_features,)
        elif spec.kind == SOFTMAX:
            if len(shape) != 1 or shape[0] != 2:
                raise ConfigError(f"layer {i}: softmax needs a 2-logit input, chain has {shape}")
        else:
            raise ConfigError(f"layer {i}: unknown kind {spec.kind!r}")
        out_shapes.append(shape)
    return out_shapes


class Network:
    """Layer specs + learned parameters. Treat params as immutable snapshots."""

    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, int, int], seed: int,
                 params: list | None = None):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.rng_seed = seed
        validate_specs(self.specs, self.input_shape)
        self.params = params if params is not None else self._init_params(Rng(seed))

    def _init_params(self, rng: Rng) -> list:
        params = []
        for spec in self.specs:
            if spec.kind == CONV3X3:
                fan_in = spec.in_channels * 9
                fan_out = spec.out_channels * 9
                w = layers.xavier_init(fan_in, fan_out, rng,
                                       shape=(spec.out_channels, spec.in_channels, 3, 3))
                b = np.zeros(spec.out_channels, dtype=np.float32)
                params.append((w, b))
            elif spec.kind == DENSE:
                w = layers.xavier_init(spec.in_features, spec.out_features, rng)
                b = np.zeros(spec.out_features, dtype=np.float32)
                params.append((w, b))
            else:
                params.append(None)
        return params

    def copy(self) -> "Network":
        params = [None if p is None else (p[0].copy(), p[1].copy()) for p in self.params]
        return Network(self.specs, self.input_shape, self.rng_seed, params=params)

    # ---- forward/backward ------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x4 = x[None] if x.ndim == 3 else x
        if x4.ndim != 4 or x4.shape[1:] != self.input_shape:
            raise ConfigError(f"network expects input {self.input_shape}, got {x.shape}")
        return np.ascontiguousarray(x4, dtype=np.float32)

    def forward_logits(self, x: np.ndarray, keep_cache: bool = False):
        """Run all layers up to (not including) softmax; optionally keep the
        per-layer cache needed by backward()."""
        a = self._check_input(x)
        cache = [] if keep_cache else None
        for spec, p in zip(self.specs, self.params):
            if spec.kind == CONV3X3:
                if keep_cache:
                    cache.append(("conv", a, p))
                a = layers.conv2d_forward(a, p[0], p[1])
            elif spec.kind == RELU:
                if keep_cache:
                    cache.append(("relu", a))
                a = layers.relu(a)
            elif spec.kind == MAXPOOL:
                out, idx = layers.maxpool2x2(a)
                if keep_cache:
                    cache.append(("pool", a.shape, idx))
                a = out
            elif spec.kind == FLATTEN:
                if keep_cache:
                    cache.append(("flatten", a.shape))
                a = a.reshape(a.shape[0], -1)
            elif spec.kind == DENSE:
                if keep_cache:
                    cache.append(("dense", a, p))
                a = layers.dense_forward(a, p[0], p[1])
            elif spec.kind == SOFTMAX:
                if keep_cache:
                    cache.append(("softmax",))
        return (a, cache) if keep_cache else a

    def probs(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities, [B,2]."""
        logits = self.forward_logits(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, cache: list, grad_logits: np.ndarray) -> list:
        """Gradients w.r.t. every parameter tensor, aligned with self.params."""
        grads = [None] * len(self.specs)
        g = grad_logits
        for i in range(len(self.specs) - 1, -1, -1):
            entry = cache[i]
            kind = entry[0]
            if kind == "softmax":
                continue
            if kind == "dense":
                _, a, p = entry
                g, gw, gb = layers.dense_backward(a, p[0], g)
                grads[i] = (gw, gb)
            elif kind == "flatten":
                g = g.reshape(entry[1])
            elif kind == "pool":
                _, in_shape, idx = entry
                g = layers.maxpool2x2_backward(g, idx, in_shape[2], in_shape[3])
            elif kind == "relu":
                g = layers.relu_backward(entry[1], g)
            elif kind == "conv":
                _, a, p = entry
                g, gw, gb = layers.conv2d_backward(a, p[0], g)
                grads[i] = (gw, gb)
        return grads


def build_network(specs: list[LayerSpec], input_shape: tuple[int, int, int], seed: int) -> Network:
    return Network(specs, input_shape, seed)


def forward(network: Network, image: np.ndarray) -> float:
    """AMD probability (class-1 softmax output) for one preprocessed image."""
    if image.ndim != 3:
        raise ConfigError(f"forward expects one [C,H,W] image, got shape {image.shape}")
    return float(network.probs(image)[0, 1])


# ---- stock configurations --------------------------------------------------

def _conv_stack(blocks: list[list[int]], in_channels: int) -> list[LayerSpec]:
    specs = []
    c = in_channels
    for block in blocks:
        for width in block:
            specs.append(conv3x3(c, width))
            specs.append(relu())
            c = width
        specs.append(maxpool2x2())
    return specs


def _pooled_dims(h: int, w: int, n_pools: int) -> tuple[int, int]:
    for _ in range(n_pools):
        h, w = (h + 1) // 2, (w + 1) // 2
    return h, w


def make_specs(config: str, input_shape: tuple[int, int, int]) -> list[LayerSpec]:
    """Stock layer stacks.

    ``desk``: 4 conv blocks (8/16/32/32 filters) + dense-64 head; sized for
    small inputs and fast CPU training.
    ``full``: VGG16-style stack, 13 conv layers in 5 pooled blocks with filter
    widths halved (32..256) and two dense-2048 layers, for 192x124 inputs.
    Both end in dense(2) + softmax.
    """
    c, h, w = input_shape
    if config == "desk":
        blocks = [[8], [16], [32], [32]]
        dense_widths = [64]
    elif config == "full":
        blocks = [[32, 32], [64, 64], [128, 128, 128], [256, 256, 256], [256, 256, 256]]
        dense_widths = [2048, 2048]
    else:
        raise ConfigError(f"unknown network config {config!r} (expected 'desk' or 'full')")
    specs = _conv_stack(blocks, c)
    ph, pw = _pooled_dims(h, w, len(blocks))
    feat = blocks[-1][-1] * ph * pw
    specs.append(flatten())
    for width in dense_widths:
        specs.append(dense(feat, width))
        specs.append(relu())
        feat = width
    specs.append(dense(feat, 2))
    specs.append(softmax())
    return specs


DEFAULT_INPUT = {"desk": (1, 32, 48), "full": (1, 124, 192)}


# ---- OCTW weight files ------------------------------------------------------

def save_weights(network: Network, path: str) -> None:
    """OCTW format: magic, u32 version, u32 parameterized-layer count; then per
    parameterized layer a u8 kind tag, u32 ndim, u32 dims[] of the weight
    tensor, the raw little-endian float32 weights, and the float32 biases
    (bias length = dims[0])."""
    records = [(spec.kind, p) for spec, p in zip(network.specs, network.params) if p is not None]
    with open(path, "wb") as fh:
        fh.write(OCTW_MAGIC)
        fh.write(struct.pack("<II", OCTW_VERSION, len(records)))
        for kind, (w, b) in records:
            fh.write(struct.pack("<B", _KIND_TAGS[kind]))
            fh.write(struct.pack("<I", w.ndim))
            fh.write(struct.pack(f"<{w.ndim}I", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def read_weights(path: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Parse an OCTW file into (kind, weights, bias) records."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != OCTW_MAGIC:
        raise WeightFormatError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != OCTW_VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    off = 12
    records = []
    try:
        for _ in range(count):
            (tag,) = struct.unpack_from("<B", data, off)
            off += 1
            if tag not in _TAG_KINDS:
                raise WeightFormatError(f"{path}: unknown layer tag {tag}")
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n_w = int(np.prod(dims))
            w = np.frombuffer(data, dtype="<f4", count=n_w, offset=off).reshape(dims)
            off += 4 * n_w
            b = np.frombuffer(data, dtype="<f4", count=dims[0], offset=off)
            off += 4 * dims[0]
            records.append((_TAG_KINDS[tag], w.astype(np.float32), b.astype(np.float32)))
    except (struct.error, ValueError) as exc:
        raise WeightFormatError(f"{path}: truncated file") from exc
    if off != len(data):
        raise WeightFormatError(f"{path}: trailing bytes after last record")
    return records


def load_weights(network: Network, path: str) -> Network:
    """Return a copy of *network* with parameters replaced from an OCTW file."""
    records = read_weights(path)
    expected = [(spec.kind, p) for spec, p in zip(network.specs, network.params) if p is not None]
    if len(records) != len(expected):
        raise WeightFormatError(f"{path}: has {len(records)} layers, network needs {len(expected)}")
    new_params = []
    it = iter(records)
    for spec, p in zip(network.specs, network.params):
        if p is None:
            new_params.append(None)
            continue
        kind, w, b = next(it)
        if kind != spec.kind or w.shape != p[0].shape or b.shape != p[1].shape:
            raise WeightFormatError(
                f"{path}: layer mismatch, file has {kind}{w.shape}, network needs {spec.kind}{p[0].shape}"
            )
        new_params.append((w, b))
    return Network(network.specs, network.input_shape, network.rng_seed, params=new_params)
