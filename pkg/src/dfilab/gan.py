"""Adversarial training of a small generator/discriminator pair on mixture data."""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MixtureSpec, draw, make_rng
from .nn import NetworkSpec, ParamStore, forward, init_network, make_leaves, flatten_grads, mlp
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class TrainingDiverged(FloatingPointError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, iteration: int, last_losses: dict):
        self.iteration = iteration
        self.last_losses = last_losses
        super().__init__(f"non-finite loss at iteration {iteration}; last finite losses {last_losses}")


def derive_seed(seed: int, *tags: str) -> int:
    """Independent 64-bit seed for a named sub-stream of ``seed``."""
    key = tuple(zlib.crc32(t.encode()) for t in tags)
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def default_generator(latent_dim: int = 2, data_dim: int = 2, hidden: int = 128) -> NetworkSpec:
    return mlp([latent_dim, hidden, hidden, data_dim], norm="batch_norm")


def default_discriminator(data_dim: int = 2, hidden: int = 128, norm: str | None = None) -> NetworkSpec:
    """Two leaky-ReLU hidden blocks and a sigmoid head.

    Hidden blocks are unnormalized by default: batch statistics computed over
    separate all-real and all-fake batches let D separate them trivially on
    2-D data, and the generator then collapses onto one or two modes.
    """
    return mlp([data_dim, hidden, hidden, 1], norm=norm, head="sigmoid")


@dataclass
class GanConfig:
    latent_dim: int = 2
    g_spec: NetworkSpec | None = None
    d_spec: NetworkSpec | None = None
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 256
    iterations: int = 50_000
    seed: int = 0
    generator_loss: str = "non_saturating"
    hidden: int = 128
    data_dim: int = 2
    d_norm: str | None = None

    def __post_init__(self):
        if self.g_spec is None:
            self.g_spec = default_generator(self.latent_dim, self.data_dim, self.hidden)
        if self.d_spec is None:
            self.d_spec = default_discriminator(self.data_dim, self.hidden, self.d_norm)
        self.validate()

    def validate(self) -> None:
        if self.g_spec.input_dim != self.latent_dim:
            raise ValueError(f"generator input {self.g_spec.input_dim} != latent_dim {self.latent_dim}")
        if self.g_spec.output_dim != self.d_spec.input_dim:
            raise ValueError("generator output dim must equal discriminator input dim")
        if self.d_spec.output_dim != 1:
            raise ValueError("discriminator must output one score per row")
        if self.d_spec.layers[-1].kind != "sigmoid":
            raise ValueError("discriminator must end in a sigmoid head")
        if self.generator_loss not in ("non_saturating", "minimax"):
            raise ValueError(f"unknown generator loss {self.generator_loss!r}")
        if self.batch_size < 2 or self.iterations < 0:
            raise ValueError("need batch_size >= 2 and iterations >= 0")

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "g_spec": self.g_spec.to_dict(),
            "d_spec": self.d_spec.to_dict(),
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "seed": self.seed,
            "generator_loss": self.generator_loss,
            "hidden": self.hidden,
            "data_dim": self.data_dim,
            "d_norm": self.d_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        d["g_spec"] = NetworkSpec.from_dict(d["g_spec"])
        d["d_spec"] = NetworkSpec.from_dict(d["d_spec"])
        return cls(**d)


@dataclass
class GanCheckpoint:
    config: GanConfig
    g_params: ParamStore
    d_params: ParamStore
    iteration: int = 0
    rng_state: dict = field(default_factory=dict)
    history: dict = field(default_factory=lambda: {"d_loss": [], "g_loss": []})
    mixture: MixtureSpec | None = None

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def data_dim(self) -> int:
        return self.config.g_spec.output_dim


@dataclass
class FeatureTap:
    layer_indices: tuple[int, ...]

    @classmethod
    def last_hidden(cls, d_spec: NetworkSpec) -> "FeatureTap":
        return cls((hidden_activation_indices(d_spec)[-1],))

    @classmethod
    def all_hidden(cls, d_spec: NetworkSpec) -> "FeatureTap":
        return cls(tuple(hidden_activation_indices(d_spec)))

    def validate(self, d_spec: NetworkSpec) -> None:
        idx = list(self.layer_indices)
        if not idx:
            raise ValueError("feature tap needs at least one layer index")
        if any(i < 0 or i >= len(d_spec.layers) for i in idx):
            raise ValueError(f"tap indices {idx} out of range for {len(d_spec.layers)} layers")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"tap indices must be strictly increasing, got {idx}")

    def width(self, d_spec: NetworkSpec) -> int:
        return sum(d_spec.layers[i].out_dim for i in self.layer_indices)


def hidden_activation_indices(spec: NetworkSpec) -> list[int]:
    """Indices of the activation layers that close each hidden block."""
    affines = [i for i, layer in enumerate(spec.layers) if layer.kind == "affine"]
    out = []
    for a, b in zip(affines, affines[1:]):
        out.append(b - 1)
    return out


def gan_losses(d_real, d_fake):
    """Discriminator loss and non-saturating generator loss from sigmoid outputs.

    Accepts arrays (returns floats) or Tensors (returns Tensors).
    """
    as_tensors = isinstance(d_real, Tensor) or isinstance(d_fake, Tensor)
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    lo, hi = PROB_CLAMP, 1 - PROB_CLAMP
    n_clamped = int(np.sum((d_real.data < lo) | (d_real.data > hi)) + np.sum((d_fake.data < lo) | (d_fake.data > hi)))
    if n_clamped:
        log.warning("gan_losses: clamped %d discriminator outputs into [%g, %g]", n_clamped, lo, hi)
    r, f = ad.clip(d_real, lo, hi), ad.clip(d_fake, lo, hi)
    d_loss = -ad.mean(ad.log(r)) - ad.mean(ad.log(1.0 - f))
    g_loss = -ad.mean(ad.log(f))
    if as_tensors:
        return d_loss, g_loss
    return float(d_loss.data), float(g_loss.data)


def _logit_losses(real_logit: Tensor, fake_logit: Tensor) -> Tensor:
    # -log sigmoid(l) = softplus(-l), -log(1 - sigmoid(l)) = softplus(l)
    return ad.mean(ad.softplus(-real_logit)) + ad.mean(ad.softplus(fake_logit))


def _generator_loss(fake_logit: Tensor, kind: str) -> Tensor:
    if kind == "minimax":
        return -ad.mean(ad.softplus(fake_logit))
    return ad.mean(ad.softplus(-fake_logit))


def _logit(trace) -> Tensor:
    # the score head is the final sigmoid; its input is the logit
    return trace.outputs[-2]


def sample_prior(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def discriminator_step(
    config: GanConfig, g: ParamStore, d: ParamStore, d_opt: AdamState, real: np.ndarray, z: np.ndarray
) -> tuple[ParamStore, AdamState, float]:
    with ad.no_grad():
        fake = forward(config.g_spec, g, z, "train", track_params=False, track_input=False).output.data
    leaves = make_leaves(d)
    tr_real = forward(config.d_spec, d, real, "train", track_input=False, leaves=leaves)
    tr_fake = forward(
        config.d_spec, d.with_buffers(tr_real.buffers), fake, "train", track_input=False, leaves=leaves
    )
    loss = _logit_losses(_logit(tr_real), _logit(tr_fake))
    grads = flatten_grads(d, leaves, ad.grad(loss, list(leaves.values())))
    flat, d_opt = adam_step(d.flat, grads, d_opt)
    return ParamStore(flat, d.offsets, tr_fake.buffers), d_opt, float(loss.data)


def generator_step(
    config: GanConfig, g: ParamStore, d: ParamStore, g_opt: AdamState, z: np.ndarray
) -> tuple[ParamStore, AdamState, float]:
    tr_g = forward(config.g_spec, g, z, "train", track_input=False)
    tr_d = forward(config.d_spec, d, tr_g.output, "train", track_params=False)
    loss = _generator_loss(_logit(tr_d), config.generator_loss)
    grads = flatten_grads(g, tr_g.leaves, ad.grad(loss, list(tr_g.leaves.values())))
    flat, g_opt = adam_step(g.flat, grads, g_opt)
    return ParamStore(flat, g.offsets, tr_g.buffers), g_opt, float(loss.data)


def train_gan(config: GanConfig, mixture: MixtureSpec, *, log_every: int = 0) -> GanCheckpoint:
    """Alternate one discriminator and one generator Adam step per iteration."""
    config.validate()
    if mixture.d != config.g_spec.output_dim:
        raise ValueError(f"mixture dim {mixture.d} != generator output dim {config.g_spec.output_dim}")
    g = init_network(config.g_spec, derive_seed(config.seed, "gan", "g_init"))
    d = init_network(config.d_spec, derive_seed(config.seed, "gan", "d_init"))
    hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_opt = AdamState.zeros(g.flat.size, **hyper)
    d_opt = AdamState.zeros(d.flat.size, **hyper)
    rng = make_rng(derive_seed(config.seed, "gan", "stream"))
    history = {"d_loss": [], "g_loss": []}
    n = config.batch_size

    for it in range(config.iterations):
        real = draw(rng, mixture, n)
        z = sample_prior(rng, n, config.latent_dim)
        d_new, d_opt, d_loss = discriminator_step(config, g, d, d_opt, real, z)
        z = sample_prior(rng, n, config.latent_dim)
        g_new, g_opt, g_loss = generator_step(config, g, d_new, g_opt, z)
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            last = {k: v[-1] for k, v in history.items() if v}
            raise TrainingDiverged(it, last)
        g, d = g_new, d_new
        history["d_loss"].append(d_loss)
        history["g_loss"].append(g_loss)
        if log_every and (it + 1) % log_every == 0:
            log.info("gan iter %d d_loss %.4f g_loss %.4f", it + 1, d_loss, g_loss)

    return GanCheckpoint(
        config=config,
        g_params=g,
        d_params=d,
        iteration=config.iterations,
        rng_state=rng.bit_generator.state,
        history=history,
        mixture=mixture,
    )


def _check_cols(x: np.ndarray, cols: int, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != cols:
        raise ValueError(f"{what} has {x.shape[1]} columns, expected {cols}")
    return x


def generate(checkpoint: GanCheckpoint, z: np.ndarray) -> np.ndarray:
    z = _check_cols(z, checkpoint.latent_dim, "z")
    with ad.no_grad():
        tr = forward(checkpoint.config.g_spec, checkpoint.g_params, z, "eval", track_params=False, track_input=False)
    return tr.output.data


def discriminator_features(checkpoint: GanCheckpoint, x: np.ndarray, taps: FeatureTap | None = None) -> np.ndarray:
    """Concatenated tapped activations of the eval-mode discriminator."""
    d_spec = checkpoint.config.d_spec
    taps = taps or FeatureTap.last_hidden(d_spec)
    taps.validate(d_spec)
    x = _check_cols(x, d_spec.input_dim, "x")
    with ad.no_grad():
        tr = forward(d_spec, checkpoint.d_params, x, "eval", track_params=False, track_input=False)
    return np.concatenate([tr.outputs[i].data for i in taps.layer_indices], axis=1)


def discriminator_score(checkpoint: GanCheckpoint, x: np.ndarray) -> np.ndarray:
    d_spec = checkpoint.config.d_spec
    x = _check_cols(x, d_spec.input_dim, "x")
    with ad.no_grad():
        tr = forward(d_spec, checkpoint.d_params, x, "eval", track_params=False, track_input=False)
    return tr.output.data


def checkpoint_id(checkpoint: GanCheckpoint) -> str:
    """Content hash of the trained generator/discriminator state."""
    h = hashlib.sha256()
    for store in (checkpoint.g_params, checkpoint.d_params):
        h.update(store.flat.tobytes())
        for key in sorted(store.buffers):
            h.update(repr(key).encode())
            h.update(store.buffers[key].tobytes())
    return h.hexdigest()[:16]
