"""Masked feedforward networks.

A network is an ordered stack of layers acting on NCHW image tensors (or
``(N, features)`` vectors). Every weight element of a dense or conv2d layer is
a synapse with a boolean mask bit; masked synapses hold exactly 0 and receive
exactly 0 gradient. ``concat`` layers join the running tensor with the output
of an earlier layer along the channel axis, which is enough to express small
encoder/decoder saliency networks with skip connections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ShapeError, TrainingDiverged

KINDS = ("dense", "conv2d", "upsample", "concat", "activation")
ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSSES = ("bce", "mse")
INIT_RULES = ("glorot-uniform", "constant")
_LOSS_ALIASES = {"binary-cross-entropy": "bce", "mean-squared-error": "mse"}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack.

    ``in_size``/``out_size`` are features for dense layers and channels for
    conv2d layers. ``source`` is the index of the earlier layer whose output a
    concat layer appends (-1 is the network input).
    """

    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    factor: int = 1
    source: int = -1
    activation: str = "identity"

    @property
    def has_weights(self) -> bool:
        return self.kind in ("dense", "conv2d")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.out_size, self.in_size)
        if self.kind == "conv2d":
            return (self.out_size, self.in_size, *self.kernel)
        return (0,)

    @property
    def bias_shape(self) -> tuple[int, ...]:
        return (self.out_size,) if self.has_weights else (0,)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.has_weights:
            d.update(in_size=self.in_size, out_size=self.out_size, activation=self.activation)
        if self.kind == "conv2d":
            d.update(kernel=list(self.kernel), stride=self.stride, padding=self.padding)
        elif self.kind == "upsample":
            d["factor"] = self.factor
        elif self.kind == "concat":
            d["source"] = self.source
        elif self.kind == "activation":
            d["activation"] = self.activation
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = tuple(d["kernel"])
        return cls(**d)


def dense(in_size, out_size, activation="identity"):
    return LayerSpec("dense", in_size=in_size, out_size=out_size, activation=activation)


def conv2d(in_channels, out_channels, kernel=3, stride=1, padding=0, activation="identity"):
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    return LayerSpec(
        "conv2d",
        in_size=in_channels,
        out_size=out_channels,
        kernel=tuple(kernel),
        stride=stride,
        padding=padding,
        activation=activation,
    )


def upsample(factor=2):
    return LayerSpec("upsample", factor=factor)


def concat(source):
    return LayerSpec("concat", source=source)


def activation(fn):
    return LayerSpec("activation", activation=fn)


def infer_shapes(input_shape, layers) -> list[tuple[int, ...]]:
    """Per-sample output shape of every layer; raises ShapeError on any mismatch."""
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) not in (1, 3) or min(input_shape) < 1:
        raise ShapeError(f"input shape must be (features,) or (C, H, W) with dims >= 1, got {input_shape}")
    shapes = []
    cur = input_shape
    for i, spec in enumerate(layers):
        if spec.kind not in KINDS:
            raise ShapeError(f"layer {i}: unknown kind {spec.kind!r}")
        if spec.activation not in ACTIVATIONS:
            raise ShapeError(f"layer {i}: unknown activation {spec.activation!r}")
        if spec.kind == "dense":
            if spec.in_size < 1 or spec.out_size < 1:
                raise ShapeError(f"layer {i}: dense sizes must be >= 1")
            flat = math.prod(cur)
            if flat != spec.in_size:
                raise ShapeError(f"layer {i}: dense expects {spec.in_size} inputs, got {flat} from shape {cur}")
            cur = (spec.out_size,)
        elif spec.kind == "conv2d":
            kh, kw = spec.kernel
            if min(spec.in_size, spec.out_size, kh, kw, spec.stride) < 1 or spec.padding < 0:
                raise ShapeError(f"layer {i}: conv2d dimensions must be >= 1")
            if spec.padding >= kh or spec.padding >= kw:
                raise ShapeError(f"layer {i}: padding {spec.padding} must be smaller than kernel {spec.kernel}")
            if len(cur) != 3 or cur[0] != spec.in_size:
                raise ShapeError(f"layer {i}: conv2d expects {spec.in_size} input channels, got shape {cur}")
            oh = (cur[1] + 2 * spec.padding - kh) // spec.stride + 1
            ow = (cur[2] + 2 * spec.padding - kw) // spec.stride + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"layer {i}: kernel {spec.kernel} does not fit input {cur}")
            cur = (spec.out_size, oh, ow)
        elif spec.kind == "upsample":
            if spec.factor < 1 or len(cur) != 3:
                raise ShapeError(f"layer {i}: upsample needs factor >= 1 and an image input, got {cur}")
            cur = (cur[0], cur[1] * spec.factor, cur[2] * spec.factor)
        elif spec.kind == "concat":
            if not -1 <= spec.source < i:
                raise ShapeError(f"layer {i}: concat source {spec.source} must refer to an earlier layer")
            other = input_shape if spec.source == -1 else shapes[spec.source]
            if len(other) != len(cur) or other[1:] != cur[1:]:
                raise ShapeError(f"layer {i}: cannot concat {cur} with {other}")
            cur = (cur[0] + other[0], *cur[1:])
        shapes.append(cur)
    return shapes


@dataclass
class Architecture:
    """Layer stack plus per-synapse masks and per-neuron alive flags.

    ``masks[i]`` has the layer's weight shape (empty for parameterless
    layers); ``alive[i]`` has one flag per output unit of a weight layer.
    """

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    masks: list[np.ndarray]
    alive: list[np.ndarray]
    generation: int = 1

    @classmethod
    def full(cls, input_shape, layers, generation=1) -> "Architecture":
        layers = tuple(layers)
        infer_shapes(input_shape, layers)
        masks = [np.ones(s.weight_shape if s.has_weights else (0,), dtype=bool) for s in layers]
        alive = [np.ones(s.out_size if s.has_weights else 0, dtype=bool) for s in layers]
        return cls(tuple(input_shape), layers, masks, alive, generation)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return infer_shapes(self.input_shape, self.layers)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1] if self.layers else tuple(self.input_shape)

    @property
    def weight_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.has_weights]

    def validate(self):
        if self.generation < 1:
            raise ShapeError("generation index must be >= 1")
        infer_shapes(self.input_shape, self.layers)
        if len(self.masks) != len(self.layers) or len(self.alive) != len(self.layers):
            raise ShapeError("one mask and one alive vector per layer required")
        for i, spec in enumerate(self.layers):
            want = spec.weight_shape if spec.has_weights else (0,)
            if self.masks[i].shape != want:
                raise ShapeError(f"layer {i}: mask shape {self.masks[i].shape} != weight shape {want}")
            if self.alive[i].shape != (spec.out_size if spec.has_weights else 0,):
                raise ShapeError(f"layer {i}: alive flags do not match output units")

    def copy(self) -> "Architecture":
        return Architecture(
            self.input_shape,
            self.layers,
            [m.copy() for m in self.masks],
            [a.copy() for a in self.alive],
            self.generation,
        )


def count_synapses(architecture: Architecture) -> int:
    """Unmasked weight elements; biases are not synapses."""
    return int(sum(int(m.sum()) for m in architecture.masks))


@dataclass
class Network:
    architecture: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        for w in self.weights:
            if w.size:
                return w.dtype
        return np.dtype(np.float32)

    def copy(self) -> "Network":
        return Network(
            self.architecture.copy(),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def astype(self, dtype) -> "Network":
        return Network(
            self.architecture.copy(),
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


def glorot_scale(mask: np.ndarray) -> float:
    """sqrt(6 / (fan_in + fan_out)) measured on the unmasked topology."""
    n = int(mask.sum())
    if n == 0:
        return 0.0
    by_out = mask.reshape(mask.shape[0], -1).any(axis=1).sum()
    by_in = mask.reshape(mask.shape[0], mask.shape[1], -1).any(axis=(0, 2)).sum()
    fan_in = n / by_out
    fan_out = n / by_in
    return math.sqrt(6.0 / (fan_in + fan_out))


def seed_streams(seed):
    """Independent (initialization, shuffling) generators derived from one seed."""
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def initialize(architecture: Architecture, seed, dtype=np.float32, rule="glorot-uniform") -> Network:
    """Fresh random weights on the surviving synapses, zero biases.

    An integer ``seed`` uses the initialization stream of ``seed_streams``, so
    a TrainConfig seed drives both initialization and shuffling. ``rule``
    "constant" sets every living weight to +scale instead (equal strengths,
    useful as a deterministic template).
    """
    if rule not in INIT_RULES:
        raise ValueError(f"unknown initialization rule {rule!r}")
    rng = seed if isinstance(seed, np.random.Generator) else seed_streams(seed)[0]
    weights, biases = [], []
    for spec, mask in zip(architecture.layers, architecture.masks):
        if not spec.has_weights:
            weights.append(np.zeros((0,), dtype=dtype))
            biases.append(np.zeros((0,), dtype=dtype))
            continue
        scale = glorot_scale(mask)
        if rule == "constant":
            w = np.full(mask.shape, scale)
        else:
            w = rng.uniform(-scale, scale, size=mask.shape)
        weights.append(np.where(mask, w, 0.0).astype(dtype))
        biases.append(np.zeros(spec.out_size, dtype=dtype))
    return Network(architecture.copy(), weights, biases)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 16
    loss: str = "bce"
    seed: int = 0
    init: str = "glorot-uniform"

    def __post_init__(self):
        object.__setattr__(self, "loss", _LOSS_ALIASES.get(self.loss, self.loss))
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs > 0 and not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.init not in INIT_RULES:
            raise ValueError(f"unknown initialization rule {self.init!r}")

    def with_seed(self, seed) -> "TrainConfig":
        return replace(self, seed=seed)


# -- forward / backward -------------------------------------------------------


def _act(fn, z):
    if fn == "relu":
        return np.maximum(z, 0)
    if fn == "sigmoid":
        return expit(z)
    return z


def _act_backward(fn, g, z, a):
    if fn == "relu":
        return g * (z > 0)
    if fn == "sigmoid":
        return g * a * (1 - a)
    return g


@dataclass
class _Trace:
    """Per-layer values kept for the backward pass."""

    inputs: list = field(default_factory=list)
    preact: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    cols: list = field(default_factory=list)


def _check_batch(architecture, x):
    want = tuple(architecture.input_shape)
    if x.ndim != len(want) + 1 or tuple(x.shape[1:]) != want:
        raise ShapeError(f"batch shape {tuple(x.shape)} does not match input shape (N, {', '.join(map(str, want))})")


def _conv_out(spec, h, w):
    kh, kw = spec.kernel
    return (h + 2 * spec.padding - kh) // spec.stride + 1, (w + 2 * spec.padding - kw) // spec.stride + 1


def _run(network: Network, x: np.ndarray, keep: bool):
    arch = network.architecture
    trace = _Trace()
    cur = x
    for i, spec in enumerate(arch.layers):
        cols = z = None
        if spec.kind == "dense":
            w = np.where(arch.masks[i], network.weights[i], 0)
            z = cur.reshape(cur.shape[0], -1) @ w.T + network.biases[i]
            out = _act(spec.activation, z)
        elif spec.kind == "conv2d":
            w = np.where(arch.masks[i], network.weights[i], 0)
            n, c, h, wd = cur.shape
            p = spec.padding
            xp = np.pad(cur, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(cur)
            oh, ow = _conv_out(spec, h, wd)
            cols = kernels.im2col(xp, spec.kernel[0], spec.kernel[1], spec.stride, oh, ow)
            z = cols @ w.reshape(spec.out_size, -1).T + network.biases[i]
            z = np.ascontiguousarray(z.reshape(n, oh, ow, spec.out_size).transpose(0, 3, 1, 2))
            out = _act(spec.activation, z)
        elif spec.kind == "upsample":
            f = spec.factor
            out = cur.repeat(f, axis=2).repeat(f, axis=3) if f > 1 else cur
        elif spec.kind == "concat":
            other = x if spec.source == -1 else trace.outputs[spec.source]
            out = np.concatenate([cur, other], axis=1)
        else:
            z = cur
            out = _act(spec.activation, z)
        if keep:
            trace.inputs.append(cur)
            trace.preact.append(z)
            trace.cols.append(cols)
        trace.outputs.append(out)
        cur = out
    return cur, trace


def forward(network: Network, batch: np.ndarray) -> np.ndarray:
    """Network output for a batch shaped ``(N, *input_shape)``."""
    batch = np.asarray(batch, dtype=network.dtype)
    _check_batch(network.architecture, batch)
    out, _ = _run(network, batch, keep=False)
    return out


def predict(network: Network, inputs: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Forward pass in chunks; results do not depend on ``batch_size``."""
    parts = [forward(network, inputs[i : i + batch_size]) for i in range(0, len(inputs), batch_size)]
    if not parts:
        return np.zeros((0, *network.architecture.output_shape), dtype=network.dtype)
    return np.concatenate(parts)


def _final_activation(arch):
    if not arch.layers:
        return "identity"
    last = arch.layers[-1]
    return last.activation if last.has_weights or last.kind == "activation" else "identity"


def _loss(out, z, targets, loss, final_act):
    """Mean loss and its gradient w.r.t. the last layer's output, or its
    pre-activation when sigmoid and cross-entropy are fused."""
    n = targets.size
    if loss == "mse":
        diff = out - targets
        return float(np.mean(diff * diff, dtype=np.float64)), 2 * diff / n, False
    if final_act == "sigmoid" and z is not None:
        value = np.mean(np.logaddexp(0, z) - targets * z, dtype=np.float64)
        return float(value), (out - targets) / n, True
    eps = 1e-7
    a = np.clip(out, eps, 1 - eps)
    value = -np.mean(targets * np.log(a) + (1 - targets) * np.log(1 - a), dtype=np.float64)
    return float(value), (a - targets) / (a * (1 - a)) / n, False


def _backward(network, x, trace, d_last, fused):
    arch = network.architecture
    layers = arch.layers
    gw = [np.zeros_like(w) for w in network.weights]
    gb = [np.zeros_like(b) for b in network.biases]
    d_out = [None] * len(layers)
    if layers:
        d_out[-1] = d_last

    def push(idx, g):
        if idx < 0:
            return
        d_out[idx] = g if d_out[idx] is None else d_out[idx] + g

    for i in range(len(layers) - 1, -1, -1):
        g = d_out[i]
        if g is None:
            continue
        spec = layers[i]
        cur = trace.inputs[i]
        need_dx = i > 0
        if spec.kind in ("dense", "conv2d", "activation"):
            if i == len(layers) - 1 and fused:
                dz = g
            else:
                dz = _act_backward(spec.activation, g, trace.preact[i], trace.outputs[i])
        if spec.kind == "dense":
            mask = arch.masks[i]
            flat = cur.reshape(cur.shape[0], -1)
            gw[i] = (dz.T @ flat) * mask
            gb[i] = dz.sum(axis=0)
            if need_dx:
                w = np.where(mask, network.weights[i], 0)
                push(i - 1, (dz @ w).reshape(cur.shape))
        elif spec.kind == "conv2d":
            mask = arch.masks[i]
            n, c, h, wd = cur.shape
            o = spec.out_size
            kh, kw = spec.kernel
            p = spec.padding
            oh, ow = dz.shape[2:]
            dz2 = dz.transpose(0, 2, 3, 1).reshape(-1, o)
            gw[i] = (dz2.T @ trace.cols[i]).reshape(mask.shape) * mask
            gb[i] = dz2.sum(axis=0)
            if need_dx:
                w = np.where(mask, network.weights[i], 0).reshape(o, -1)
                dcols = np.ascontiguousarray(dz2 @ w)
                dxp = kernels.col2im(dcols, n, c, h + 2 * p, wd + 2 * p, kh, kw, spec.stride, oh, ow)
                push(i - 1, dxp[:, :, p : p + h, p : p + wd] if p else dxp)
        elif spec.kind == "upsample":
            f = spec.factor
            if f > 1:
                n, c, h, wd = g.shape
                g = g.reshape(n, c, h // f, f, wd // f, f).sum(axis=(3, 5))
            push(i - 1, g)
        elif spec.kind == "concat":
            k = cur.shape[1]
            push(i - 1, g[:, :k])
            push(spec.source, g[:, k:])
        else:
            push(i - 1, dz)
    return gw, gb


def _evaluate_loss(network, batch, targets, loss):
    loss = _LOSS_ALIASES.get(loss, loss)
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    dtype = network.dtype
    batch = np.asarray(batch, dtype=dtype)
    targets = np.asarray(targets, dtype=dtype)
    _check_batch(network.architecture, batch)
    out, trace = _run(network, batch, keep=True)
    if targets.shape != out.shape:
        raise ShapeError(f"targets shape {targets.shape} does not match output shape {out.shape}")
    z = trace.preact[-1] if trace.preact else None
    value, d_last, fused = _loss(out, z, targets, loss, _final_activation(network.architecture))
    return value, (batch, trace, d_last.astype(dtype, copy=False), fused), out


def loss_and_gradients(network: Network, batch, targets, loss="bce"):
    value, (batch, trace, d_last, fused), _ = _evaluate_loss(network, batch, targets, loss)
    gw, gb = _backward(network, batch, trace, d_last, fused)
    return value, gw, gb


def gradients(network: Network, batch, targets, loss="bce"):
    """Per-layer (weight, bias) gradients of the mean loss; masked entries are 0."""
    _, gw, gb = loss_and_gradients(network, batch, targets, loss)
    return gw, gb


def loss_value(network: Network, batch, targets, loss="bce") -> float:
    value, _, _ = _evaluate_loss(network, batch, targets, loss)
    return value


def train(network: Network, inputs, targets, cfg: TrainConfig, progress=None):
    """Plain minibatch SGD in float32.

    Returns a new network (same architecture and masks) and the per-epoch
    mean training loss. Raises TrainingDiverged on a non-finite loss.
    """
    if cfg.epochs == 0:
        return network.copy(), []
    inputs = np.asarray(inputs, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.float32)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(inputs) != len(targets):
        raise ShapeError(f"{len(inputs)} inputs but {len(targets)} targets")
    net = network.astype(np.float32)
    for w, m in zip(net.weights, net.architecture.masks):
        if w.size:
            w[~m] = 0
    lr = np.float32(cfg.learning_rate)
    rng = seed_streams(cfg.seed)[1]
    trace = []
    # overflow is reported as TrainingDiverged, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(inputs))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                value, gw, gb = loss_and_gradients(net, inputs[idx], targets[idx], cfg.loss)
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, value)
                for i, spec in enumerate(net.architecture.layers):
                    if spec.has_weights:
                        net.weights[i] -= lr * gw[i]
                        net.biases[i] -= lr * gb[i]
                total += value * len(idx)
            epoch_loss = total / len(inputs)
            if not all(np.isfinite(w).all() for w in net.weights):
                raise TrainingDiverged(epoch, float("nan"))
            trace.append(epoch_loss)
            if progress is not None:
                progress(epoch, epoch_loss)
    return net, trace
