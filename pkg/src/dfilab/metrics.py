"""Fréchet distance on moment summaries, mode coverage and reconstruction errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MixtureSpec, nearest_modes

SYM_TOL = 1e-12
PSD_TOL = 1e-9


@dataclass
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"cov shape {self.cov.shape} does not match mean length {d}")
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(self.cov))):
            raise ValueError("covariance is not symmetric")

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def moments(samples) -> MomentSummary:
    """Sample mean and unbiased (1/(n-1)) covariance."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("moments need at least 2 samples")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (x.shape[0] - 1)
    return MomentSummary(mu, (cov + cov.T) / 2)


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -PSD_TOL * scale:
        raise ValueError(f"{what} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet(a: MomentSummary, b: MomentSummary) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root is taken from the symmetric form
    (S_a^(1/2) S_b S_a^(1/2))^(1/2), which has the same eigenvalues.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    root_a = _psd_sqrt(a.cov, "first covariance")
    _psd_sqrt(b.cov, "second covariance")
    inner = root_a @ b.cov @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_cross
    return max(value, 0.0)


def reconstruction_fid(real, recon) -> float:
    """Fréchet distance between a real set and its index-paired reconstructions."""
    real, recon = np.atleast_2d(real), np.atleast_2d(recon)
    if real.shape != recon.shape:
        raise ValueError(f"paired sets differ in shape: {real.shape} vs {recon.shape}")
    return frechet(moments(real), moments(recon))


@dataclass
class CoverageReport:
    modes_recovered: int
    high_quality_fraction: float
    per_mode_counts: list[int]


def mode_coverage(samples, mixture: MixtureSpec, k_sigma: float = 3.0, min_count: int = 10) -> CoverageReport:
    """A sample is high quality within ``k_sigma`` std of its nearest center;
    a mode is recovered once it holds ``min_count`` high-quality samples."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[1] != mixture.d:
        raise ValueError(f"samples have {x.shape[1]} columns, mixture is {mixture.d}-D")
    idx, dist = nearest_modes(x, mixture)
    good = dist <= k_sigma * mixture.sigma
    counts = np.bincount(idx[good], minlength=mixture.n_modes)
    return CoverageReport(
        modes_recovered=int(np.sum(counts >= min_count)),
        high_quality_fraction=float(good.mean()) if len(x) else 0.0,
        per_mode_counts=[int(c) for c in counts],
    )


def mean_nearest_mode_distance(samples, mixture: MixtureSpec) -> float:
    return float(nearest_modes(np.atleast_2d(samples), mixture)[1].mean())


def _paired_check(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"paired batches differ in shape: {a.shape} vs {b.shape}")
    return a, b


def fidelity(x, x_rec) -> float:
    """Mean Euclidean distance between paired rows (a Euclidean stand-in for perceptual fidelity)."""
    x, x_rec = _paired_check(x, x_rec)
    return float(np.linalg.norm(x - x_rec, axis=1).mean())


def latent_recon_error(z, z_hat, distance: str = "L2") -> float:
    z, z_hat = _paired_check(z, z_hat)
    if distance == "L2":
        return float(np.linalg.norm(z - z_hat, axis=1).mean())
    if distance == "L1":
        return float(np.abs(z - z_hat).sum(axis=1).mean())
    raise ValueError(f"unknown distance {distance!r}")
