"""Inference mappings x -> z on top of a frozen generator/discriminator pair.

Two families: an encoder trained from scratch, and DFI (discriminator features
followed by a small connection network). Each is trained with either an image
reconstruction loss on real data or a latent reconstruction loss on prior
draws, and can be followed by per-sample latent refinement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MixtureSpec, draw, make_rng
from .gan import (
    FeatureTap,
    GanCheckpoint,
    TrainingDiverged,
    checkpoint_id,
    derive_seed,
    discriminator_features,
    sample_prior,
)
from .nn import LayerSpec, NetworkSpec, ParamStore, flatten_grads, forward, init_network
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

FAMILIES = ("encoder", "dfi")
LOSSES = ("image_recon", "latent_recon")
DISTANCES = ("L2", "L1")


def per_sample_distance(a, b, kind: str = "L2") -> Tensor:
    """Row-wise distance; "L2" is the squared Euclidean distance, "L1" the absolute sum."""
    diff = ad.as_tensor(a) - ad.as_tensor(b)
    if kind == "L2":
        return ad.tsum(diff * diff, axis=1)
    if kind == "L1":
        return ad.tsum(ad.absolute(diff), axis=1)
    raise ValueError(f"unknown distance {kind!r}")


@dataclass
class ConnectionSpec:
    hidden: tuple[int, ...] = (128, 128)
    groups: int | None = None

    def build(self, in_dim: int, latent_dim: int) -> NetworkSpec:
        layers = []
        width = in_dim
        for h in self.hidden:
            layers += [LayerSpec.affine(width, h), LayerSpec.group_norm(h, self.groups), LayerSpec.leaky_relu(h)]
            width = h
        layers.append(LayerSpec.affine(width, latent_dim))
        return NetworkSpec(layers)


@dataclass
class RefineConfig:
    steps: int = 50
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    distance: str = "L2"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("refine steps must be >= 0")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")


@dataclass
class TrainConfig:
    """Optimizer settings shared by encoder and connection-network training."""

    iterations: int = 50_000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    distance: str = "L2"
    seed: int = 0


@dataclass
class InferenceMethod:
    family: str
    loss: str
    net_spec: NetworkSpec
    trained_params: ParamStore
    checkpoint_id: str
    taps: FeatureTap | None = None
    distance: str = "L2"
    refine: RefineConfig | None = None
    history: list = field(default_factory=list)

    @property
    def name(self) -> str:
        """Abbreviation in the usual ENC/DFI naming (``opt`` marks refinement)."""
        base = "ENC" if self.family == "encoder" else "DFI"
        opt = "^opt" if self.refine is not None else ""
        if self.family == "dfi" and self.loss == "latent_recon":
            return base + opt
        return f"{base}{opt}_{'image' if self.loss == 'image_recon' else 'latent'}"

    def with_refinement(self, cfg: RefineConfig | None = None) -> "InferenceMethod":
        return replace(self, refine=cfg or RefineConfig(distance=self.distance))


METHOD_TABLE = {
    "ENC_image": ("encoder", "image_recon", False),
    "ENC^opt_image": ("encoder", "image_recon", True),
    "ENC_latent": ("encoder", "latent_recon", False),
    "ENC^opt_latent": ("encoder", "latent_recon", True),
    "DFI_image": ("dfi", "image_recon", False),
    "DFI^opt_image": ("dfi", "image_recon", True),
    "DFI": ("dfi", "latent_recon", False),
    "DFI^opt": ("dfi", "latent_recon", True),
}


class CountingSampler:
    """Real-data source that records how many samples were drawn."""

    def __init__(self, mixture: MixtureSpec, seed: int):
        self.mixture = mixture
        self.rng = make_rng(seed)
        self.reads = 0

    def __call__(self, n: int) -> np.ndarray:
        self.reads += n
        return draw(self.rng, self.mixture, n)


def _real_source(checkpoint: GanCheckpoint, data, seed: int) -> Callable[[int], np.ndarray]:
    if callable(data):
        return data
    mixture = data if isinstance(data, MixtureSpec) else checkpoint.mixture
    if mixture is None:
        raise ValueError("image_recon training needs a real-data source")
    return CountingSampler(mixture, seed)


def _generate_graph(checkpoint: GanCheckpoint, z: Tensor) -> Tensor:
    # frozen generator inside the graph: gradients flow to z only
    return forward(checkpoint.config.g_spec, checkpoint.g_params, z, "eval", track_params=False).output


def _features_nograd(checkpoint: GanCheckpoint, x: np.ndarray, taps: FeatureTap) -> np.ndarray:
    return discriminator_features(checkpoint, x, taps)


def _generate_nograd(checkpoint: GanCheckpoint, z: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return forward(
            checkpoint.config.g_spec, checkpoint.g_params, z, "eval", track_params=False, track_input=False
        ).output.data


def _train_mapping(
    checkpoint: GanCheckpoint,
    net_spec: NetworkSpec,
    featurize: Callable[[np.ndarray], np.ndarray],
    loss: str,
    cfg: TrainConfig,
    data,
    tag: str,
) -> tuple[ParamStore, list]:
    """Shared loop: ``featurize`` maps data points to the trainable net's input."""
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if cfg.distance not in DISTANCES:
        raise ValueError(f"unknown distance {cfg.distance!r}")
    params = init_network(net_spec, derive_seed(cfg.seed, tag, "init"))
    opt = AdamState.zeros(params.flat.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = make_rng(derive_seed(cfg.seed, tag, "stream"))
    real = _real_source(checkpoint, data, derive_seed(cfg.seed, tag, "real")) if loss == "image_recon" else None
    latent_dim = checkpoint.latent_dim
    history = []

    for it in range(cfg.iterations):
        if loss == "latent_recon":
            z = sample_prior(rng, cfg.batch_size, latent_dim)
            inputs = featurize(_generate_nograd(checkpoint, z))
            tr = forward(net_spec, params, inputs, "train", track_input=False)
            objective = ad.mean(per_sample_distance(z, tr.output, cfg.distance))
        else:
            x = real(cfg.batch_size)
            tr = forward(net_spec, params, featurize(x), "train", track_input=False)
            objective = ad.mean(per_sample_distance(x, _generate_graph(checkpoint, tr.output), cfg.distance))
        value = float(objective.data)
        if not np.isfinite(value):
            raise TrainingDiverged(it, {"loss": history[-1]} if history else {})
        grads = flatten_grads(params, tr.leaves, ad.grad(objective, list(tr.leaves.values())))
        flat, opt = adam_step(params.flat, grads, opt)
        params = ParamStore(flat, params.offsets, tr.buffers)
        history.append(value)
    return params, history


def train_connection(
    checkpoint: GanCheckpoint,
    spec: ConnectionSpec | None = None,
    taps: FeatureTap | None = None,
    loss: str = "latent_recon",
    iters: int = 50_000,
    seed: int = 0,
    *,
    data=None,
    config: TrainConfig | None = None,
) -> InferenceMethod:
    """Train a connection network from discriminator features to latents (DFI).

    With ``latent_recon`` every batch is a fresh prior draw pushed through the
    frozen generator, so no real data is read. ``image_recon`` draws real
    points from ``data`` (a MixtureSpec or a callable ``n -> array``;
    defaults to the checkpoint's training mixture).
    """
    spec = spec or ConnectionSpec()
    d_spec = checkpoint.config.d_spec
    taps = taps or FeatureTap.last_hidden(d_spec)
    taps.validate(d_spec)
    cfg = replace(config or TrainConfig(), iterations=iters, seed=seed)
    net_spec = spec.build(taps.width(d_spec), checkpoint.latent_dim)
    params, history = _train_mapping(
        checkpoint, net_spec, lambda x: _features_nograd(checkpoint, x, taps), loss, cfg, data, f"dfi/{loss}"
    )
    return InferenceMethod(
        "dfi", loss, net_spec, params, checkpoint_id(checkpoint), taps=taps, distance=cfg.distance, history=history
    )


def encoder_spec(checkpoint: GanCheckpoint, connection: ConnectionSpec | None = None) -> NetworkSpec:
    """The discriminator's hidden stack followed by a connection-network stack."""
    d_layers = checkpoint.config.d_spec.layers
    affines = [i for i, layer in enumerate(d_layers) if layer.kind == "affine"]
    hidden = [LayerSpec.from_dict(layer.to_dict()) for layer in d_layers[: affines[-1]]]
    cn = (connection or ConnectionSpec()).build(hidden[-1].out_dim, checkpoint.latent_dim)
    return NetworkSpec(hidden + cn.layers)


def train_encoder(
    checkpoint: GanCheckpoint,
    loss: str = "image_recon",
    iters: int = 50_000,
    seed: int = 0,
    *,
    connection: ConnectionSpec | None = None,
    data=None,
    config: TrainConfig | None = None,
) -> InferenceMethod:
    """Train an encoder from scratch (ENC_image or ENC_latent)."""
    cfg = replace(config or TrainConfig(), iterations=iters, seed=seed)
    net_spec = encoder_spec(checkpoint, connection)
    params, history = _train_mapping(checkpoint, net_spec, lambda x: x, loss, cfg, data, f"enc/{loss}")
    return InferenceMethod("encoder", loss, net_spec, params, checkpoint_id(checkpoint), distance=cfg.distance, history=history)


def _check_checkpoint(method: InferenceMethod, checkpoint: GanCheckpoint) -> None:
    if method.checkpoint_id != checkpoint_id(checkpoint):
        raise ValueError(
            f"{method.name} was trained against checkpoint {method.checkpoint_id}, got {checkpoint_id(checkpoint)}"
        )


def _as_rows(x, cols: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {x.shape[1]}")
    return x


def infer(method: InferenceMethod, x, checkpoint: GanCheckpoint) -> np.ndarray:
    """Latent estimates for the rows of ``x`` (refined if the method says so)."""
    _check_checkpoint(method, checkpoint)
    x = _as_rows(x, checkpoint.data_dim)
    inputs = x if method.family == "encoder" else _features_nograd(checkpoint, x, method.taps)
    with ad.no_grad():
        z = forward(method.net_spec, method.trained_params, inputs, "eval", track_params=False, track_input=False)
    z_hat = z.output.data
    if method.refine is not None:
        z_hat = refine(checkpoint, x, z_hat, method.refine)
    return z_hat


def refine_objective(checkpoint: GanCheckpoint, x: np.ndarray, z: np.ndarray, distance: str = "L2") -> np.ndarray:
    """Per-sample distance between ``x`` and ``G(z)``."""
    with ad.no_grad():
        return per_sample_distance(x, _generate_nograd(checkpoint, z), distance).data


def refine(checkpoint: GanCheckpoint, x, z0, cfg: RefineConfig | None = None) -> np.ndarray:
    """Per-sample Adam search on ``d(x, G(z))`` from ``z0``, returning the best iterate seen.

    The generator is in eval mode, so rows do not interact and one batched
    Adam run equals independent per-sample runs.
    """
    cfg = cfg or RefineConfig()
    x = _as_rows(x, checkpoint.data_dim)
    z = _as_rows(z0, checkpoint.latent_dim).copy()
    if len(z) != len(x):
        raise ValueError("x and z0 must have the same number of rows")
    best_z = z.copy()
    best = np.full(len(x), np.inf)
    state = AdamState.zeros(z.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    for step in range(cfg.steps + 1):
        zt = Tensor(z, requires_grad=True)
        obj = per_sample_distance(x, _generate_graph(checkpoint, zt), cfg.distance)
        better = obj.data < best
        best_z[better] = z[better]
        best[better] = obj.data[better]
        if step == cfg.steps:
            break
        (gz,) = ad.grad(ad.tsum(obj), [zt])
        flat, state = adam_step(z.ravel(), gz.data.ravel(), state)
        z = flat.reshape(z.shape)
    return best_z


def reconstruct(method: InferenceMethod, x, checkpoint: GanCheckpoint) -> np.ndarray:
    return _generate_nograd(checkpoint, infer(method, x, checkpoint))


def latent_interpolate(method: InferenceMethod, x1, x2, checkpoint: GanCheckpoint, alphas) -> np.ndarray:
    """``G(a * z1 + (1 - a) * z2)`` for each ``a`` in ``alphas`` (one row per alpha).

    Each row is generated on its own so the endpoints match ``reconstruct``
    bit for bit.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas < 0) or np.any(alphas > 1) or np.any(np.diff(alphas) < 0):
        raise ValueError("alphas must be sorted and lie in [0, 1]")
    z1 = infer(method, _as_rows(x1, checkpoint.data_dim)[:1], checkpoint)
    z2 = infer(method, _as_rows(x2, checkpoint.data_dim)[:1], checkpoint)
    rows = [_generate_nograd(checkpoint, a * z1 + (1 - a) * z2) for a in alphas]
    return np.concatenate(rows, axis=0)


def attribute_vector(method: InferenceMethod, checkpoint: GanCheckpoint, group_a, group_b) -> np.ndarray:
    """Difference of mean inferred latents between two groups of samples."""
    group_a = _as_rows(group_a, checkpoint.data_dim)
    group_b = _as_rows(group_b, checkpoint.data_dim)
    if len(group_a) == 0 or len(group_b) == 0:
        raise ValueError("attribute groups must be non-empty")
    return infer(method, group_a, checkpoint).mean(axis=0) - infer(method, group_b, checkpoint).mean(axis=0)


def build_method(
    name: str,
    checkpoint: GanCheckpoint,
    iters: int,
    seed: int,
    *,
    connection: ConnectionSpec | None = None,
    taps: FeatureTap | None = None,
    data=None,
    config: TrainConfig | None = None,
    refine_cfg: RefineConfig | None = None,
) -> InferenceMethod:
    """Train the method named by its abbreviation (see ``METHOD_TABLE``)."""
    if name not in METHOD_TABLE:
        raise KeyError(f"unknown method {name!r}; choose from {sorted(METHOD_TABLE)}")
    family, loss, refined = METHOD_TABLE[name]
    if family == "encoder":
        method = train_encoder(checkpoint, loss, iters, seed, connection=connection, data=data, config=config)
    else:
        method = train_connection(checkpoint, connection, taps, loss, iters, seed, data=data, config=config)
    return method.with_refinement(refine_cfg) if refined else method
