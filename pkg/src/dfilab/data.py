"""Isotropic Gaussian mixtures, including the eight-mode ring with under-sampled modes.

Randomness comes from numpy's Philox generator (counter-based, 64-bit keyed),
so a seed reproduces the same stream on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


@dataclass
class MixtureSpec:
    centers: np.ndarray
    sigma: float
    weights: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.centers) != len(self.weights):
            raise ValueError(f"{len(self.centers)} centers but {len(self.weights)} weights")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def n_modes(self) -> int:
        return len(self.centers)

    def marginal(self, indices) -> "MixtureSpec":
        """The same mixture restricted to a subset of coordinates."""
        return MixtureSpec(self.centers[:, list(indices)], self.sigma, self.weights)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "sigma": self.sigma, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(np.array(d["centers"]), float(d["sigma"]), np.array(d["weights"]))


MINOR_MODES = (2, 3)


def eight_gaussian_spec(radius: float = 2.0, sigma: float = 0.1, minor_factor: float = 0.1) -> MixtureSpec:
    """Eight modes on a circle at 0, 45, ..., 315 degrees.

    Modes 2 and 3 (90 and 135 degrees, the [90, 180) sector) get their weight
    multiplied by ``minor_factor`` before renormalization.
    """
    if radius <= 0 or sigma <= 0 or not 0 < minor_factor <= 1:
        raise ValueError("need radius > 0, sigma > 0 and 0 < minor_factor <= 1")
    angles = np.deg2rad(45.0 * np.arange(8))
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    weights = np.ones(8)
    weights[list(MINOR_MODES)] *= minor_factor
    return MixtureSpec(centers, sigma, weights / weights.sum())


def draw(rng: np.random.Generator, spec: MixtureSpec, n: int, *, return_modes: bool = False):
    """``n`` i.i.d. mixture draws from an existing generator."""
    modes = rng.choice(spec.n_modes, size=n, p=spec.weights)
    points = spec.centers[modes] + spec.sigma * rng.standard_normal((n, spec.d))
    return (points, modes) if return_modes else points


def sample(spec: MixtureSpec, n: int, seed: int, *, return_modes: bool = False):
    if n < 1:
        raise ValueError("n must be >= 1")
    return draw(make_rng(seed), spec, n, return_modes=return_modes)


def nearest_mode(point, spec: MixtureSpec) -> tuple[int, float]:
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (spec.d,):
        raise ValueError(f"point shape {point.shape} != ({spec.d},)")
    dist = np.linalg.norm(spec.centers - point, axis=1)
    idx = int(_first_min(dist[None, :])[0])
    return idx, float(dist[idx])


def nearest_modes(points: np.ndarray, spec: MixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`nearest_mode` over rows."""
    points = np.atleast_2d(points)
    dist = np.linalg.norm(points[:, None, :] - spec.centers[None, :, :], axis=2)
    idx = _first_min(dist)
    return idx, dist[np.arange(len(points)), idx]


TIE_RTOL = 1e-12


def _first_min(dist: np.ndarray) -> np.ndarray:
    # ring centers come from cos/sin, so equal distances can differ in the last ulp
    lo = dist.min(axis=1, keepdims=True)
    return np.argmax(dist <= lo + TIE_RTOL * np.maximum(1.0, lo), axis=1)
