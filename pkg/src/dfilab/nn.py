"""Dense feed-forward networks described as layer lists over a flat parameter vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LAYER_KINDS = (
    "affine",
    "leaky_relu",
    "relu",
    "tanh",
    "sigmoid",
    "batch_norm",
    "group_norm",
    "concat_tap",
)
NORM_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.2

Mode = Literal["train", "eval"]


class SpecError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    hyper: dict = field(default_factory=dict)

    @classmethod
    def affine(cls, in_dim: int, out_dim: int) -> "LayerSpec":
        return cls("affine", in_dim, out_dim)

    @classmethod
    def leaky_relu(cls, dim: int, slope: float = LEAKY_SLOPE) -> "LayerSpec":
        return cls("leaky_relu", dim, dim, {"slope": slope})

    @classmethod
    def activation(cls, kind: str, dim: int) -> "LayerSpec":
        return cls(kind, dim, dim)

    @classmethod
    def batch_norm(cls, dim: int, eps: float = NORM_EPS, momentum: float = BN_MOMENTUM) -> "LayerSpec":
        return cls("batch_norm", dim, dim, {"eps": eps, "momentum": momentum})

    @classmethod
    def group_norm(cls, dim: int, groups: int | None = None, eps: float = NORM_EPS) -> "LayerSpec":
        return cls("group_norm", dim, dim, {"groups": groups or min(8, dim), "eps": eps})

    @classmethod
    def tap(cls, dim: int) -> "LayerSpec":
        return cls("concat_tap", dim, dim)

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise SpecError(f"{self.kind}: dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind != "affine" and self.in_dim != self.out_dim:
            raise SpecError(f"{self.kind} must preserve dimension, got {self.in_dim}->{self.out_dim}")
        if self.kind == "group_norm":
            groups = int(self.hyper.get("groups", min(8, self.out_dim)))
            if groups < 1 or self.out_dim % groups:
                raise SpecError(f"group_norm: width {self.out_dim} not divisible by {groups} groups")

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "affine":
            return [("weight", (self.in_dim, self.out_dim)), ("bias", (self.out_dim,))]
        if self.kind in ("batch_norm", "group_norm"):
            return [("scale", (self.out_dim,)), ("shift", (self.out_dim,))]
        return []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "hyper": dict(self.hyper)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], int(d["in_dim"]), int(d["out_dim"]), dict(d.get("hyper", {})))


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]

    def __post_init__(self):
        self.layers = list(self.layers)
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def validate(self) -> None:
        if not self.layers:
            raise SpecError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            layer.validate()
            if i and layer.in_dim != self.layers[i - 1].out_dim:
                prev = self.layers[i - 1]
                raise SpecError(
                    f"layer {i} ({layer.kind}) expects {layer.in_dim} inputs "
                    f"but layer {i - 1} ({prev.kind}) produces {prev.out_dim}"
                )

    def layout(self) -> dict[tuple[int, str], tuple[int, tuple[int, ...]]]:
        """(layer index, tensor name) -> (offset, shape) into the flat vector."""
        table = {}
        offset = 0
        for i, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes():
                table[(i, name)] = (offset, shape)
                offset += int(np.prod(shape))
        return table

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for layer in self.layers for _, s in layer.param_shapes())

    def to_dict(self) -> dict:
        return {"layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls([LayerSpec.from_dict(x) for x in d["layers"]])


def mlp(
    widths: list[int],
    *,
    norm: str | None = None,
    activation: str = "leaky_relu",
    head: str | None = None,
) -> NetworkSpec:
    """Affine stack ``widths[0] -> ... -> widths[-1]``.

    Each hidden affine is followed by ``norm`` (if any) and ``activation``;
    the final affine is followed only by ``head``.
    """
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(LayerSpec.affine(a, b))
        if i < len(widths) - 2:
            if norm == "batch_norm":
                layers.append(LayerSpec.batch_norm(b))
            elif norm == "group_norm":
                layers.append(LayerSpec.group_norm(b))
            elif norm is not None:
                raise SpecError(f"unknown norm {norm!r}")
            if activation == "leaky_relu":
                layers.append(LayerSpec.leaky_relu(b))
            else:
                layers.append(LayerSpec.activation(activation, b))
    if head is not None:
        layers.append(LayerSpec.activation(head, widths[-1]))
    return NetworkSpec(layers)


@dataclass
class ParamStore:
    """Flat parameter vector plus non-trainable buffers (batch-norm running stats)."""

    flat: np.ndarray
    offsets: dict[tuple[int, str], tuple[int, tuple[int, ...]]]
    buffers: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)

    def tensor(self, layer: int, name: str) -> np.ndarray:
        start, shape = self.offsets[(layer, name)]
        return self.flat[start : start + int(np.prod(shape))].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "ParamStore":
        return ParamStore(flat, self.offsets, self.buffers)

    def with_buffers(self, buffers: dict) -> "ParamStore":
        return ParamStore(self.flat, self.offsets, buffers)

    def copy(self) -> "ParamStore":
        return ParamStore(self.flat.copy(), dict(self.offsets), {k: v.copy() for k, v in self.buffers.items()})

    def equals(self, other: "ParamStore") -> bool:
        """Bit-level equality of parameters and buffers."""
        if self.flat.tobytes() != other.flat.tobytes() or self.buffers.keys() != other.buffers.keys():
            return False
        return all(self.buffers[k].tobytes() == other.buffers[k].tobytes() for k in self.buffers)


def init_network(spec: NetworkSpec, seed: int) -> ParamStore:
    """Xavier-uniform affine weights, zero biases, unit norm scales."""
    spec.validate()
    rng = np.random.Generator(np.random.Philox(seed))
    offsets = spec.layout()
    flat = np.zeros(spec.num_params())
    buffers = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind == "affine":
            start, shape = offsets[(i, "weight")]
            limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            flat[start : start + shape[0] * shape[1]] = rng.uniform(-limit, limit, size=shape[0] * shape[1])
        elif layer.kind in ("batch_norm", "group_norm"):
            start, shape = offsets[(i, "scale")]
            flat[start : start + shape[0]] = 1.0
        if layer.kind == "batch_norm":
            buffers[(i, "running_mean")] = np.zeros(layer.out_dim)
            buffers[(i, "running_var")] = np.ones(layer.out_dim)
    return ParamStore(flat, offsets, buffers)


@dataclass
class ActivationTrace:
    spec: NetworkSpec
    mode: str
    input: Tensor
    outputs: list[Tensor]
    leaves: dict[tuple[int, str], Tensor]
    buffers: dict[tuple[int, str], np.ndarray]

    @property
    def output(self) -> Tensor:
        return self.outputs[-1]


def _batch_norm(x: Tensor, scale, shift, layer: LayerSpec, i: int, params: ParamStore, mode: str, new_buffers: dict):
    eps = layer.hyper.get("eps", NORM_EPS)
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError(f"layer {i} (batch_norm): train mode needs at least 2 rows")
        out, mu, var = ad.batch_norm_train(x, scale, shift, eps)
        momentum = layer.hyper.get("momentum", BN_MOMENTUM)
        rm, rv = params.buffers[(i, "running_mean")], params.buffers[(i, "running_var")]
        new_buffers[(i, "running_mean")] = momentum * rm + (1 - momentum) * mu
        new_buffers[(i, "running_var")] = momentum * rv + (1 - momentum) * var * n / (n - 1)
        return out
    rm, rv = params.buffers[(i, "running_mean")], params.buffers[(i, "running_var")]
    inv_std = 1.0 / np.sqrt(rv + eps)
    # eval mode is a per-channel affine map: x * (scale / std) + (shift - mean * scale / std)
    gain = scale * inv_std
    return x * gain + (shift - gain * rm)


def group_normalize(x: Tensor, groups: int, eps: float = NORM_EPS) -> Tensor:
    """Per-row, per-group standardization (before the learned scale and shift)."""
    n, c = x.shape
    xg = ad.reshape(x, (n, groups, c // groups))
    mu = ad.mean(xg, axis=2, keepdims=True)
    centered = xg - mu
    var = ad.mean(centered * centered, axis=2, keepdims=True)
    return ad.reshape(centered / ad.sqrt(var + eps), (n, c))


def forward(
    spec: NetworkSpec,
    params: ParamStore,
    batch,
    mode: Mode = "train",
    *,
    track_params: bool = True,
    track_input: bool = True,
    leaves: dict | None = None,
) -> ActivationTrace:
    """Run the network, recording every layer output.

    ``batch`` may be an array or a Tensor (to chain networks inside one graph).
    Passing the ``leaves`` of an earlier trace makes both passes share
    parameter nodes, so their gradients accumulate.
    In train mode, updated batch-norm running statistics are returned in
    ``trace.buffers``; ``params`` itself is never modified.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(np.atleast_2d(batch), requires_grad=track_input)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match network input dim {spec.input_dim}")
    if x.shape[0] < 1:
        raise ValueError("batch must have at least one row")

    if leaves is None:
        leaves = make_leaves(params, track_params)

    new_buffers = dict(params.buffers)
    outputs = []
    h = x
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "affine":
            h = ad.affine(h, leaves[(i, "weight")], leaves[(i, "bias")])
        elif kind == "leaky_relu":
            h = ad.leaky_relu(h, layer.hyper.get("slope", LEAKY_SLOPE))
        elif kind == "relu":
            h = ad.relu(h)
        elif kind == "tanh":
            h = ad.tanh(h)
        elif kind == "sigmoid":
            h = ad.sigmoid(h)
        elif kind == "batch_norm":
            h = _batch_norm(h, leaves[(i, "scale")], leaves[(i, "shift")], layer, i, params, mode, new_buffers)
        elif kind == "group_norm":
            groups = int(layer.hyper.get("groups", min(8, layer.out_dim)))
            h = ad.group_norm(h, leaves[(i, "scale")], leaves[(i, "shift")], groups, layer.hyper.get("eps", NORM_EPS))
        elif kind == "concat_tap":
            pass
        outputs.append(h)

    if not np.all(np.isfinite(h.data)):
        for i, out in enumerate(outputs):
            if not np.all(np.isfinite(out.data)):
                raise FloatingPointError(f"non-finite output at layer {i} ({spec.layers[i].kind})")
    return ActivationTrace(spec, mode, x, outputs, leaves, new_buffers)


def make_leaves(params: ParamStore, requires_grad: bool = True) -> dict[tuple[int, str], Tensor]:
    leaves = {}
    for key, (start, shape) in params.offsets.items():
        view = params.flat[start : start + math.prod(shape)].reshape(shape)
        leaves[key] = Tensor(view, requires_grad=requires_grad)
    return leaves


def flatten_grads(params: ParamStore, leaves: dict, grads: list) -> np.ndarray:
    flat = np.zeros_like(params.flat)
    for key, g in zip(leaves, grads):
        if g is None:
            continue
        start, shape = params.offsets[key]
        flat[start : start + math.prod(shape)] = g.data.ravel()
    return flat


def param_grads(loss: Tensor, params: ParamStore, trace: ActivationTrace) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the parameters recorded in ``trace``."""
    leaves = trace.leaves
    grads = ad.grad(loss, list(leaves.values()))
    return flatten_grads(params, leaves, grads)


def backward(
    spec: NetworkSpec,
    params: ParamStore,
    trace: ActivationTrace,
    output_grad,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull ``output_grad`` back to (flat parameter gradient, input gradient)."""
    if trace.spec is not spec and trace.spec.to_dict() != spec.to_dict():
        raise ValueError("trace was produced by a different network spec")
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.output.shape:
        raise ValueError(f"output_grad shape {output_grad.shape} != trace output shape {trace.output.shape}")
    keys = list(trace.leaves)
    wrt = [trace.leaves[k] for k in keys] + [trace.input]
    grads = ad.grad(trace.output, wrt, grad_output=output_grad)
    flat = flatten_grads(params, trace.leaves, grads[:-1])
    g_in = grads[-1]
    input_grad = g_in.data if g_in is not None else np.zeros(trace.input.shape)
    return flat, input_grad


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), g.reshape(-1)
    for j in range(flat_x.size):
        orig = flat_x[j]
        flat_x[j] = orig + eps
        up = fn(x)
        flat_x[j] = orig - eps
        down = fn(x)
        flat_x[j] = orig
        flat_g[j] = (up - down) / (2 * eps)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def _resolve_loss(loss, target):
    if callable(loss):
        return loss
    if loss == "sum":
        return lambda out: out.sum()
    if loss == "mse":
        t = 0.0 if target is None else np.asarray(target, dtype=np.float64)
        return lambda out: ad.mean((out - t) * (out - t))
    raise ValueError(f"unknown loss {loss!r}")


def grad_check(
    spec: NetworkSpec,
    params: ParamStore,
    batch: np.ndarray,
    loss="mse",
    eps: float = 1e-5,
    *,
    mode: Mode = "train",
    target: np.ndarray | None = None,
) -> float:
    """Max relative error between analytic and central-difference parameter gradients.

    ``loss`` is ``"sum"``, ``"mse"`` (against ``target``, default zero) or any callable
    mapping the output Tensor to a scalar Tensor.
    """
    loss_fn = _resolve_loss(loss, target)
    trace = forward(spec, params, batch, mode)
    analytic = param_grads(loss_fn(trace.output), params, trace)

    def value(flat):
        with ad.no_grad():
            out = forward(spec, params.with_flat(flat), batch, mode, track_params=False, track_input=False)
            return float(loss_fn(out.output).data)

    numeric = central_difference(value, params.flat.copy(), eps)
    return max_relative_error(analytic, numeric)
