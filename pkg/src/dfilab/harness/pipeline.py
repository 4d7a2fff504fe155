"""Pipeline stages behind the ``dfi-lab`` commands.

Artifacts land under the output root::

    gan/seed<s>.ckpt               gan/seed<s>_losses.csv
    inference/seed<s>_<method>.ckpt
    report/eval.csv, report/eval.json
    scgan/seed<s>.ckpt             scgan/report.csv, scgan/report.json
    plots/seed<s>_gan.svg          plots/seed<s>_<method>.svg
    sweep/report.csv, sweep/report.json

Every file embeds the resolved config, its hash, the seed and the format
version. Nothing time- or path-dependent is written, so identical configs give
byte-identical outputs.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from pathlib import Path

import numpy as np

from ..data import MixtureSpec, eight_gaussian_spec, make_rng, sample
from ..gan import FeatureTap, GanCheckpoint, GanConfig, derive_seed, generate, sample_prior, train_gan
from ..inference import (
    METHOD_TABLE,
    ConnectionSpec,
    InferenceMethod,
    RefineConfig,
    TrainConfig,
    build_method,
    infer,
    reconstruct,
)
from ..metrics import (
    fidelity,
    latent_recon_error,
    mean_nearest_mode_distance,
    mode_coverage,
    reconstruction_fid,
)
from ..scgan import ScganCheckpoint, ScganConfig, evaluate_scgan, train_center_stage, train_scgan
from . import config as config_mod
from .checkpoint import (
    CheckpointContainer,
    gan_container,
    gan_from_container,
    inference_container,
    inference_from_container,
    scgan_container,
)
from .config import ConfigError, ExperimentConfig, canonical_json
from .plot import PALETTE, emit_scatter_svg
from .report import ExperimentReport, MetricRow

log = logging.getLogger(__name__)

COMMANDS = ("train-gan", "train-inference", "eval", "scgan", "sweep", "plot")
OUT_ENV = "DFI_LAB_OUT"


class DependencyError(RuntimeError):
    """An upstream artifact needed by a command is missing or stale."""

    def __init__(self, message: str, path: Path | None = None):
        super().__init__(message)
        self.path = path


# -- config -> library objects ---------------------------------------------


def mixture_of(cfg: ExperimentConfig) -> MixtureSpec:
    m = cfg.mixture
    return eight_gaussian_spec(m.radius, m.sigma, m.minor_factor)


def held_out_samples(cfg: ExperimentConfig) -> np.ndarray:
    mix = mixture_of(cfg)
    if cfg.eval.test_weights == "uniform":
        mix = MixtureSpec(mix.centers, mix.sigma, np.full(mix.n_modes, 1.0 / mix.n_modes))
    return sample(mix, cfg.eval.test_size, cfg.eval.test_seed)


def gan_config_of(cfg: ExperimentConfig, seed: int) -> GanConfig:
    g = cfg.gan
    return GanConfig(
        latent_dim=g.latent_dim,
        lr=g.lr,
        beta1=g.beta1,
        beta2=g.beta2,
        batch_size=g.batch_size,
        iterations=g.iterations,
        seed=seed,
        generator_loss=g.generator_loss,
        hidden=g.hidden,
        d_norm=None if g.d_norm == "none" else g.d_norm,
    )


def connection_of(cfg: ExperimentConfig) -> ConnectionSpec:
    return ConnectionSpec(tuple(cfg.inference.cn_hidden), cfg.inference.groups or None)


def train_config_of(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    i = cfg.inference
    return TrainConfig(i.iterations, i.batch_size, i.lr, i.beta1, i.beta2, i.distance, seed)


def refine_of(cfg: ExperimentConfig) -> RefineConfig:
    r = cfg.refine
    return RefineConfig(r.steps, r.lr, r.beta1, r.beta2, cfg.inference.distance)


def taps_of(cfg: ExperimentConfig, ck: GanCheckpoint) -> FeatureTap:
    if cfg.inference.taps == "all":
        return FeatureTap.all_hidden(ck.config.d_spec)
    return FeatureTap.last_hidden(ck.config.d_spec)


# -- stages ------------------------------------------------------------------


def run_gan(cfg: ExperimentConfig, seed: int) -> GanCheckpoint:
    return train_gan(gan_config_of(cfg, seed), mixture_of(cfg))


def run_inference(cfg: ExperimentConfig, ck: GanCheckpoint, seed: int) -> dict[str, InferenceMethod]:
    """Train every configured method; refined variants reuse their base network."""
    trained: dict[tuple, InferenceMethod] = {}
    out = {}
    for name in cfg.inference.methods:
        family, loss, refined = METHOD_TABLE[name]
        key = (family, loss)
        if key not in trained:
            base = next(n for n, v in METHOD_TABLE.items() if v == (family, loss, False))
            trained[key] = build_method(
                base,
                ck,
                cfg.inference.iterations,
                seed,
                connection=connection_of(cfg),
                taps=taps_of(cfg, ck) if family == "dfi" else None,
                config=train_config_of(cfg, seed),
            )
        out[name] = trained[key].with_refinement(refine_of(cfg)) if refined else trained[key]
    return out


def eval_rows(
    cfg: ExperimentConfig,
    ck: GanCheckpoint,
    methods: dict[str, InferenceMethod],
    seed: int,
    experiment_id: str | None = None,
) -> list[MetricRow]:
    exp = experiment_id or cfg.experiment_id
    mix = mixture_of(cfg)
    x = held_out_samples(cfg)
    z = sample_prior(make_rng(derive_seed(cfg.eval.test_seed, "eval", "latent")), cfg.eval.test_size, ck.latent_dim)
    x_of_z = generate(ck, z)
    rows = []
    for name, method in methods.items():
        rec = reconstruct(method, x, ck)
        cov = mode_coverage(rec, mix)
        values = {}
        wanted = set(cfg.eval.metrics)
        if "modes_recovered" in wanted:
            values["modes_recovered"] = cov.modes_recovered
        if "high_quality_fraction" in wanted:
            values["high_quality_fraction"] = cov.high_quality_fraction
        if "nearest_mode_distance" in wanted:
            values["nearest_mode_distance"] = mean_nearest_mode_distance(rec, mix)
        if "reconstruction_fid" in wanted:
            values["reconstruction_fid"] = reconstruction_fid(x, rec)
        if "fidelity" in wanted:
            values["fidelity"] = fidelity(x, rec)
        if "latent_recon_error" in wanted:
            values["latent_recon_error"] = latent_recon_error(z, infer(method, x_of_z, ck))
        rows += [MetricRow(exp, name, seed, k, float(v)) for k, v in values.items()]
    return rows


def scgan_config_of(cfg: ExperimentConfig, seed: int) -> ScganConfig:
    s = cfg.scgan
    return ScganConfig(
        center_indices=(0,),
        data_dim=2,
        z_center_dim=cfg.gan.latent_dim,
        z_edge_dim=s.z_edge_dim,
        alpha=s.alpha,
        gamma=s.gamma,
        hidden=s.hidden,
        lr=s.lr,
        beta1=s.beta1,
        beta2=s.beta2,
        batch_size=s.batch_size,
        iterations=s.iterations,
        seed=seed,
    )


def run_scgan(cfg: ExperimentConfig, seed: int) -> ScganCheckpoint:
    s = cfg.scgan
    mix = mixture_of(cfg)
    center_gan = GanConfig(
        latent_dim=cfg.gan.latent_dim,
        data_dim=1,
        hidden=s.hidden,
        batch_size=s.batch_size,
        iterations=s.center_gan_iterations,
        lr=cfg.gan.lr,
        beta1=cfg.gan.beta1,
        beta2=cfg.gan.beta2,
        seed=derive_seed(seed, "center"),
    )
    cn_cfg = TrainConfig(
        s.center_cn_iterations, s.batch_size, cfg.inference.lr, cfg.inference.beta1, cfg.inference.beta2, "L2", seed
    )
    frozen = train_center_stage(
        mix, (0,), gan_config=center_gan, cn_iters=s.center_cn_iterations,
        connection=connection_of(cfg), cn_config=cn_cfg, seed=seed,
    )
    return train_scgan(frozen, scgan_config_of(cfg, seed), mix)


# -- artifact paths and IO -----------------------------------------------------


def _safe(name: str) -> str:
    return name.replace("^", "-")


def gan_path(root: Path, seed: int) -> Path:
    return root / "gan" / f"seed{seed}.ckpt"


def method_path(root: Path, seed: int, method: str) -> Path:
    return root / "inference" / f"seed{seed}_{_safe(method)}.ckpt"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing upstream checkpoint {path}; run '{producer}' first", path)
    return path


def load_gan(cfg: ExperimentConfig, root: Path, seed: int) -> GanCheckpoint:
    path = _require(gan_path(root, seed), "train-gan")
    ck = gan_from_container(CheckpointContainer.load(path))
    if ck.config.to_dict() != gan_config_of(cfg, seed).to_dict():
        raise DependencyError(f"checkpoint {path} was trained with different GAN settings; rerun 'train-gan'", path)
    return ck


def load_methods(cfg: ExperimentConfig, root: Path, seed: int) -> dict[str, InferenceMethod]:
    return {
        name: inference_from_container(CheckpointContainer.load(_require(method_path(root, seed, name), "train-inference")))
        for name in cfg.inference.methods
    }


def _comment_header(provenance: dict) -> str:
    return "".join(
        f"# {k}={json.dumps(provenance[k], sort_keys=True, separators=(',', ':'))}\n" for k in sorted(provenance)
    )


def write_loss_csv(path: Path, history: dict, provenance: dict) -> Path:
    buf = io.StringIO()
    buf.write(_comment_header(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "d_loss", "g_loss"))
    for i, (d, g) in enumerate(zip(history["d_loss"], history["g_loss"])):
        w.writerow((i + 1, repr(float(d)), repr(float(g))))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


# -- commands ------------------------------------------------------------------


def cmd_train_gan(cfg: ExperimentConfig, root: Path) -> list[Path]:
    paths = []
    for seed in cfg.seeds:
        ck = run_gan(cfg, seed)
        prov = cfg.provenance(seed)
        paths.append(gan_container(ck, prov).save(gan_path(root, seed)))
        paths.append(write_loss_csv(root / "gan" / f"seed{seed}_losses.csv", ck.history, prov))
    return paths


def cmd_train_inference(cfg: ExperimentConfig, root: Path) -> list[Path]:
    paths = []
    for seed in cfg.seeds:
        ck = load_gan(cfg, root, seed)
        for name, method in run_inference(cfg, ck, seed).items():
            paths.append(inference_container(method, cfg.provenance(seed)).save(method_path(root, seed, name)))
    return paths


def cmd_eval(cfg: ExperimentConfig, root: Path) -> list[Path]:
    rows = []
    for seed in cfg.seeds:
        ck = load_gan(cfg, root, seed)
        rows += eval_rows(cfg, ck, load_methods(cfg, root, seed), seed)
    report = ExperimentReport(rows)
    return list(report.write(root / "report" / "eval", cfg.provenance(list(cfg.seeds))))


def cmd_scgan(cfg: ExperimentConfig, root: Path) -> list[Path]:
    paths, rows = [], []
    mix = mixture_of(cfg)
    for seed in cfg.seeds:
        ck = run_scgan(cfg, seed)
        paths.append(scgan_container(ck, cfg.provenance(seed)).save(root / "scgan" / f"seed{seed}.ckpt"))
        metrics = evaluate_scgan(
            ck, mix, n_inputs=cfg.scgan.test_inputs, n_edge=cfg.scgan.edge_draws, seed=cfg.eval.test_seed
        )
        rows += [MetricRow(cfg.experiment_id, "SCGAN", seed, k, float(v)) for k, v in sorted(metrics.items())]
    paths += list(ExperimentReport(rows).write(root / "scgan" / "report", cfg.provenance(list(cfg.seeds))))
    return paths


def cmd_plot(cfg: ExperimentConfig, root: Path) -> list[Path]:
    paths = []
    mix = mixture_of(cfg)
    bounds = cfg.plot.bounds
    for seed in cfg.seeds:
        ck = load_gan(cfg, root, seed)
        real = sample(mix, cfg.plot.n_real, derive_seed(seed, "plot", "real"))
        z = sample_prior(make_rng(derive_seed(seed, "plot", "z")), cfg.plot.n_generated, ck.latent_dim)
        fake = generate(ck, z)
        meta = cfg.provenance(seed)
        panels = {"gan": [("real", real, PALETTE["real"]), ("generated", fake, PALETTE["generated"])]}
        x = held_out_samples(cfg)[: cfg.plot.n_real]
        for name, method in load_methods(cfg, root, seed).items():
            rec = reconstruct(method, x, ck)
            panels[name] = [
                ("real", x, PALETTE["real"]),
                ("generated", fake, PALETTE["generated"]),
                (f"{name} reconstructed", rec, PALETTE["reconstructed"]),
            ]
        for name, layers in panels.items():
            svg = emit_scatter_svg(layers, bounds, title=f"{name} (seed {seed})", metadata=meta)
            path = root / "plots" / f"seed{seed}_{_safe(name)}.svg"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(svg)
            paths.append(path)
    return paths


def grid_cells(grid: dict) -> list[tuple[tuple[str, object], ...]]:
    keys = sorted(grid)
    return [tuple(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def cell_id(cell) -> str:
    return ",".join(f"{k}={canonical_json(v)}" for k, v in cell) or "base"


def sweep(cfg: ExperimentConfig, grid: dict | None = None, seeds=None, *, runner=None) -> ExperimentReport:
    """Run every grid cell for every seed; failures are recorded and the sweep continues.

    ``runner(cell_cfg, seed, experiment_id)`` returns metric rows; the default
    trains the GAN and all configured inference methods and evaluates them.
    Each (cell, seed) draws only from streams derived from its own seed, so
    results do not depend on execution order.
    """
    grid = cfg.sweep.grid if grid is None else grid
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    cells = grid_cells(grid)
    cell_cfgs = []
    for cell in cells:
        c = cfg
        for key, value in cell:
            c = c.with_override(key, value)
        cell_cfgs.append((cell, c))

    gan_cache: dict[tuple[str, int], GanCheckpoint] = {}

    def default_runner(c: ExperimentConfig, seed: int, exp: str) -> list[MetricRow]:
        key = (canonical_json({"mixture": c.resolved()["mixture"], "gan": c.resolved()["gan"]}), seed)
        if key not in gan_cache:
            gan_cache[key] = run_gan(c, seed)
        ck = gan_cache[key]
        return eval_rows(c, ck, run_inference(c, ck, seed), seed, exp)

    runner = runner or default_runner
    rows, errors = [], []
    for cell, c in cell_cfgs:
        exp = f"{cfg.experiment_id}[{cell_id(cell)}]"
        for seed in seeds:
            try:
                rows += runner(c, seed, exp)
            except Exception as exc:  # recorded per cell; remaining cells still run
                log.warning("sweep cell %s seed %s failed: %s", exp, seed, exc)
                errors.append({"experiment_id": exp, "seed": seed, "error": type(exc).__name__, "message": str(exc)})
    errors.sort(key=lambda e: (e["experiment_id"], e["seed"]))
    return ExperimentReport(rows, errors)


def cmd_sweep(cfg: ExperimentConfig, root: Path) -> list[Path]:
    report = sweep(cfg)
    return list(report.write(root / "sweep" / "report", cfg.provenance(list(cfg.seeds))))


HANDLERS = {
    "train-gan": cmd_train_gan,
    "train-inference": cmd_train_inference,
    "eval": cmd_eval,
    "scgan": cmd_scgan,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def output_root(cfg: ExperimentConfig, config_path: Path | None, out=None) -> Path:
    """``out`` argument, then the environment override, then the config's ``out_dir``."""
    if out is not None:
        return Path(out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    base = Path(config_path).parent if config_path is not None else Path.cwd()
    return base / cfg.out_dir


def run_config(cfg: ExperimentConfig, command: str, root) -> list[Path]:
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {list(COMMANDS)}")
    return HANDLERS[command](cfg, Path(root))


def run(config_path, command: str, *, out=None, seed: int | None = None) -> list[Path]:
    """Load the config, apply overrides and execute one pipeline command."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {list(COMMANDS)}")
    cfg = config_mod.load(config_path)
    if seed is not None:
        cfg = cfg.with_override("seeds", [int(seed)])
    return run_config(cfg, command, output_root(cfg, config_path, out))
