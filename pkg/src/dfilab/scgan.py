"""Spatially conditioned generation on low-dimensional data.

A frozen "center" stage (a GAN trained on a coordinate marginal plus a DFI
connection network) maps a partial input to a latent code. ``G_full`` turns
that code, concatenated with a free edge latent, into a full vector whose
center coordinates reconstruct the input while the remaining coordinates vary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MixtureSpec, draw, make_rng
from .gan import (
    PROB_CLAMP,
    GanCheckpoint,
    GanConfig,
    TrainingDiverged,
    checkpoint_id,
    derive_seed,
    train_gan,
)
from .inference import ConnectionSpec, InferenceMethod, TrainConfig, infer, train_connection
from .nn import NetworkSpec, ParamStore, flatten_grads, forward, init_network, make_leaves, mlp
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


def build_glue(y_full, y_center, center_indices) -> np.ndarray | Tensor:
    """``y_full`` with its center coordinates replaced by ``y_center``."""
    idx = list(center_indices)
    as_tensor = isinstance(y_full, Tensor) or isinstance(y_center, Tensor)
    y_full = ad.as_tensor(y_full)
    y_center = ad.as_tensor(y_center)
    d = y_full.shape[1]
    if any(i < 0 or i >= d for i in idx):
        raise IndexError(f"center indices {idx} out of range for width {d}")
    if y_center.shape != (y_full.shape[0], len(idx)):
        raise ValueError(f"y_center shape {y_center.shape} != ({y_full.shape[0]}, {len(idx)})")
    cols = []
    for j in range(d):
        if j in idx:
            k = idx.index(j)
            cols.append(y_center[:, k : k + 1])
        else:
            cols.append(y_full[:, j : j + 1])
    out = ad.concat(cols, axis=1)
    return out if as_tensor else out.data


def _penalty(d_spec: NetworkSpec, d_params: ParamStore, leaves, real, gamma: float) -> Tensor:
    tr = forward(d_spec, d_params, real, "train", leaves=leaves)
    logit = tr.outputs[-2]
    (gx,) = ad.grad(ad.tsum(logit), [tr.input], create_graph=True)
    if gx is None:
        return Tensor(0.0)
    return (0.5 * gamma) * ad.mean(ad.tsum(gx * gx, axis=1))


def _check_rowwise(d_spec: NetworkSpec) -> None:
    if any(layer.kind == "batch_norm" for layer in d_spec.layers):
        raise ValueError("gradient penalty needs a discriminator without batch normalization")


def zero_centered_gp(d_spec: NetworkSpec, d_params: ParamStore, real_batch, gamma: float = 10.0) -> float:
    """gamma/2 * mean squared norm of the input gradient of D's logit on real samples."""
    _check_rowwise(d_spec)
    return float(_penalty(d_spec, d_params, make_leaves(d_params, False), np.atleast_2d(real_batch), gamma).data)


def _log_d(scores: Tensor, from_logits: bool) -> Tensor:
    if from_logits:
        return -ad.softplus(-scores)
    return ad.log(ad.clip(scores, PROB_CLAMP, 1 - PROB_CLAMP))


def _log_one_minus_d(scores: Tensor, from_logits: bool) -> Tensor:
    if from_logits:
        return -ad.softplus(scores)
    return ad.log(1.0 - ad.clip(scores, PROB_CLAMP, 1 - PROB_CLAMP))


def _same_rows(*arrays) -> None:
    rows = {a.shape[0] for a in arrays}
    if len(rows) != 1:
        raise ValueError(f"paired batches have different row counts: {sorted(rows)}")


def scgan_generator_loss(scores_full, scores_glue, z_center, z_crop_recon, alpha: float = 10.0, *, from_logits=False):
    """0.5 * non-saturating adversarial terms on (y_full, y_glue) + alpha * mean L1 latent error.

    Scores are discriminator probabilities, or logits with ``from_logits``.
    """
    as_tensor = any(isinstance(a, Tensor) for a in (scores_full, scores_glue, z_center, z_crop_recon))
    sf, sg, zc, zr = (ad.as_tensor(a) for a in (scores_full, scores_glue, z_center, z_crop_recon))
    _same_rows(sf, sg)
    if zc.shape != zr.shape:
        raise ValueError(f"latent shapes differ: {zc.shape} vs {zr.shape}")
    adv = -ad.mean(_log_d(sf, from_logits)) - ad.mean(_log_d(sg, from_logits))
    recon = ad.mean(ad.tsum(ad.absolute(zc - zr), axis=1))
    loss = 0.5 * adv + alpha * recon
    return loss if as_tensor else float(loss.data)


def scgan_discriminator_loss(scores_real, scores_full, scores_glue, gp=0.0, *, from_logits=False):
    """-E log D(x) - 0.5 * [E log(1 - D(y_full)) + E log(1 - D(y_glue))] + gp."""
    as_tensor = any(isinstance(a, Tensor) for a in (scores_real, scores_full, scores_glue, gp))
    sr, sf, sg = (ad.as_tensor(a) for a in (scores_real, scores_full, scores_glue))
    _same_rows(sf, sg)
    loss = (
        -ad.mean(_log_d(sr, from_logits))
        - 0.5 * (ad.mean(_log_one_minus_d(sf, from_logits)) + ad.mean(_log_one_minus_d(sg, from_logits)))
        + gp
    )
    return loss if as_tensor else float(loss.data)


@dataclass
class FrozenStage:
    """Center-stage GAN and its DFI connection network; never modified by SCGAN training."""

    gan: GanCheckpoint
    connection: InferenceMethod
    center_indices: tuple[int, ...]

    def fingerprint(self) -> tuple[str, bytes]:
        cn = self.connection.trained_params
        return checkpoint_id(self.gan), cn.flat.tobytes() + b"".join(v.tobytes() for v in cn.buffers.values())


@dataclass
class ScganConfig:
    center_indices: tuple[int, ...] = (0,)
    data_dim: int = 2
    z_center_dim: int = 2
    z_edge_dim: int = 2
    alpha: float = 10.0
    gamma: float = 10.0
    hidden: int = 128
    g_full_spec: NetworkSpec | None = None
    d_full_spec: NetworkSpec | None = None
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    iterations: int = 20_000
    seed: int = 0

    def __post_init__(self):
        self.center_indices = tuple(int(i) for i in self.center_indices)
        if self.g_full_spec is None:
            self.g_full_spec = mlp(
                [self.z_center_dim + self.z_edge_dim, self.hidden, self.hidden, self.data_dim], norm="batch_norm"
            )
        if self.d_full_spec is None:
            self.d_full_spec = mlp([self.data_dim, self.hidden, self.hidden, 1], head="sigmoid")
        self.validate()

    def validate(self) -> None:
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be >= 0")
        if not self.center_indices:
            raise ValueError("center_indices must be non-empty")
        if any(i < 0 or i >= self.data_dim for i in self.center_indices):
            raise ValueError(f"center indices {self.center_indices} out of range for dim {self.data_dim}")
        if self.g_full_spec.input_dim != self.z_center_dim + self.z_edge_dim:
            raise ValueError("G_full input must be z_center_dim + z_edge_dim")
        if self.g_full_spec.output_dim != self.data_dim or self.d_full_spec.input_dim != self.data_dim:
            raise ValueError("G_full output and D_full input must match data_dim")
        if self.d_full_spec.layers[-1].kind != "sigmoid":
            raise ValueError("D_full must end in a sigmoid head")
        _check_rowwise(self.d_full_spec)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["center_indices"] = list(self.center_indices)
        d["g_full_spec"] = self.g_full_spec.to_dict()
        d["d_full_spec"] = self.d_full_spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScganConfig":
        d = dict(d)
        d["g_full_spec"] = NetworkSpec.from_dict(d["g_full_spec"])
        d["d_full_spec"] = NetworkSpec.from_dict(d["d_full_spec"])
        return cls(**d)


@dataclass
class ScganCheckpoint:
    config: ScganConfig
    g_full_params: ParamStore
    d_full_params: ParamStore
    frozen: FrozenStage
    iteration: int = 0
    history: dict = field(default_factory=lambda: {"d_loss": [], "g_loss": []})


def train_center_stage(
    mixture: MixtureSpec,
    center_indices=(0,),
    *,
    gan_config: GanConfig | None = None,
    cn_iters: int = 20_000,
    connection: ConnectionSpec | None = None,
    cn_config: TrainConfig | None = None,
    seed: int = 0,
) -> FrozenStage:
    """Train the center GAN on the coordinate marginal, then its DFI connection network."""
    marginal = mixture.marginal(center_indices)
    cfg = gan_config or GanConfig(data_dim=marginal.d, iterations=20_000, batch_size=64, seed=seed)
    gan = train_gan(cfg, marginal)
    cn = train_connection(gan, connection, None, "latent_recon", cn_iters, seed, config=cn_config)
    return FrozenStage(gan, cn, tuple(center_indices))


def _crop(y: Tensor, idx) -> Tensor:
    return ad.concat([y[:, i : i + 1] for i in idx], axis=1)


def _dfi_latent_graph(frozen: FrozenStage, y_crop: Tensor) -> Tensor:
    """CN(D_center^f(y)) with frozen parameters, differentiable w.r.t. ``y``."""
    gan, cn = frozen.gan, frozen.connection
    d_tr = forward(gan.config.d_spec, gan.d_params, y_crop, "eval", track_params=False)
    feats = ad.concat([d_tr.outputs[i] for i in cn.taps.layer_indices], axis=1)
    return forward(cn.net_spec, cn.trained_params, feats, "eval", track_params=False).output


def _center_generate(frozen: FrozenStage, z: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return forward(
            frozen.gan.config.g_spec, frozen.gan.g_params, z, "eval", track_params=False, track_input=False
        ).output.data


def train_scgan(frozen: FrozenStage, config: ScganConfig, mixture: MixtureSpec) -> ScganCheckpoint:
    """Alternate D_full and G_full updates with the composite SCGAN losses."""
    config.validate()
    if config.z_center_dim != frozen.gan.latent_dim:
        raise ValueError("z_center_dim must match the center GAN's latent dim")
    if tuple(config.center_indices) != tuple(frozen.center_indices):
        raise ValueError("config and frozen stage disagree on center indices")
    before = frozen.fingerprint()
    idx = list(config.center_indices)
    marginal = mixture.marginal(idx)
    g = init_network(config.g_full_spec, derive_seed(config.seed, "scgan", "g_init"))
    d = init_network(config.d_full_spec, derive_seed(config.seed, "scgan", "d_init"))
    hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_opt, d_opt = AdamState.zeros(g.flat.size, **hyper), AdamState.zeros(d.flat.size, **hyper)
    rng = make_rng(derive_seed(config.seed, "scgan", "stream"))
    history = {"d_loss": [], "g_loss": []}
    n = config.batch_size

    for it in range(config.iterations):
        real = draw(rng, mixture, n)
        x_center = draw(rng, marginal, n)
        z_center = infer(frozen.connection, x_center, frozen.gan)
        z_edge = rng.standard_normal((n, config.z_edge_dim))
        z_full = np.concatenate([z_center, z_edge], axis=1)
        y_center = _center_generate(frozen, z_center)

        # discriminator step
        with ad.no_grad():
            y_full = forward(config.g_full_spec, g, z_full, "train", track_params=False, track_input=False).output
            y_glue = build_glue(y_full, y_center, idx)
        leaves = make_leaves(d)
        s_real = forward(config.d_full_spec, d, real, "train", track_input=False, leaves=leaves).outputs[-2]
        s_full = forward(config.d_full_spec, d, y_full, "train", track_input=False, leaves=leaves).outputs[-2]
        s_glue = forward(config.d_full_spec, d, y_glue, "train", track_input=False, leaves=leaves).outputs[-2]
        gp = _penalty(config.d_full_spec, d, leaves, real, config.gamma) if config.gamma > 0 else 0.0
        d_loss = scgan_discriminator_loss(s_real, s_full, s_glue, gp, from_logits=True)
        d_grads = flatten_grads(d, leaves, ad.grad(d_loss, list(leaves.values())))
        d_flat, d_opt = adam_step(d.flat, d_grads, d_opt)
        d = ParamStore(d_flat, d.offsets, d.buffers)

        # generator step
        g_tr = forward(config.g_full_spec, g, z_full, "train", track_input=False)
        y_full_t = g_tr.output
        y_glue_t = build_glue(y_full_t, y_center, idx)
        sf = forward(config.d_full_spec, d, y_full_t, "train", track_params=False).outputs[-2]
        sg = forward(config.d_full_spec, d, y_glue_t, "train", track_params=False).outputs[-2]
        z_crop = _dfi_latent_graph(frozen, _crop(y_full_t, idx))
        g_loss = scgan_generator_loss(sf, sg, z_center, z_crop, config.alpha, from_logits=True)
        g_grads = flatten_grads(g, g_tr.leaves, ad.grad(g_loss, list(g_tr.leaves.values())))
        g_flat, g_opt = adam_step(g.flat, g_grads, g_opt)
        g = ParamStore(g_flat, g.offsets, g_tr.buffers)

        dl, gl = float(d_loss.data), float(g_loss.data)
        if not (np.isfinite(dl) and np.isfinite(gl)):
            raise TrainingDiverged(it, {k: v[-1] for k, v in history.items() if v})
        history["d_loss"].append(dl)
        history["g_loss"].append(gl)

    if frozen.fingerprint() != before:
        raise RuntimeError("frozen center stage was modified during SCGAN training")
    return ScganCheckpoint(config, g, d, frozen, config.iterations, history)


def conditional_generate(scgan: ScganCheckpoint, x_center, z_edge_batch) -> np.ndarray:
    """Full vectors sharing the inferred center latent of one input, one per edge latent."""
    cfg = scgan.config
    x_center = np.atleast_2d(np.asarray(x_center, dtype=np.float64))
    if x_center.shape != (1, len(cfg.center_indices)):
        raise ValueError(f"x_center must be one point with {len(cfg.center_indices)} coordinates")
    z_edge = np.atleast_2d(np.asarray(z_edge_batch, dtype=np.float64))
    if z_edge.shape[1] != cfg.z_edge_dim:
        raise ValueError(f"z_edge has {z_edge.shape[1]} columns, expected {cfg.z_edge_dim}")
    z_center = infer(scgan.frozen.connection, x_center, scgan.frozen.gan)
    z_full = np.concatenate([np.repeat(z_center, len(z_edge), axis=0), z_edge], axis=1)
    with ad.no_grad():
        return forward(cfg.g_full_spec, scgan.g_full_params, z_full, "eval", track_params=False, track_input=False).output.data


def center_generate(scgan: ScganCheckpoint, x_center) -> np.ndarray:
    """``y_center = G_center(CN(D_center^f(x_center)))`` for each row."""
    frozen = scgan.frozen
    return _center_generate(frozen, infer(frozen.connection, x_center, frozen.gan))


def evaluate_scgan(
    scgan: ScganCheckpoint, mixture: MixtureSpec, *, n_inputs: int = 50, n_edge: int = 100, n_test: int = 1000, seed: int = 0
) -> dict[str, float]:
    """Crop consistency and conditional diversity on held-out center inputs.

    ``crop_gap``: mean |y_crop - y_center| over ``n_test`` inputs with random edges.
    ``center_fidelity``: mean |x_center - y_center|, the frozen stage's own error.
    ``crop_input_gap``: mean |y_crop - x_center|, how well the crop reproduces the input.
    ``diversity_fraction``: share of ``n_inputs`` inputs whose edge coordinates vary
    more across ``n_edge`` edge draws than their center coordinates do.
    """
    cfg = scgan.config
    idx = list(cfg.center_indices)
    edge = [j for j in range(cfg.data_dim) if j not in idx]
    rng = make_rng(derive_seed(seed, "scgan", "eval"))
    marginal = mixture.marginal(idx)

    x_center = draw(rng, marginal, n_test)
    z_center = infer(scgan.frozen.connection, x_center, scgan.frozen.gan)
    y_center = _center_generate(scgan.frozen, z_center)
    z_full = np.concatenate([z_center, rng.standard_normal((n_test, cfg.z_edge_dim))], axis=1)
    with ad.no_grad():
        y_full = forward(cfg.g_full_spec, scgan.g_full_params, z_full, "eval", track_params=False, track_input=False).output.data
    crop_gap = float(np.linalg.norm(y_full[:, idx] - y_center, axis=1).mean())
    center_fidelity = float(np.linalg.norm(x_center - y_center, axis=1).mean())
    crop_input_gap = float(np.linalg.norm(y_full[:, idx] - x_center, axis=1).mean())

    inputs = draw(rng, marginal, n_inputs)
    wins = 0
    for x in inputs:
        y = conditional_generate(scgan, x[None, :], rng.standard_normal((n_edge, cfg.z_edge_dim)))
        wins += float(y[:, edge].std(axis=0).mean()) > float(y[:, idx].std(axis=0).mean())
    return {
        "crop_gap": crop_gap,
        "center_fidelity": center_fidelity,
        "crop_ratio": crop_gap / max(center_fidelity, 1e-12),
        "crop_input_gap": crop_input_gap,
        "diversity_fraction": wins / n_inputs,
    }
