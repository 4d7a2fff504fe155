import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dfilab.data import MINOR_MODES, MixtureSpec, eight_gaussian_spec, make_rng, nearest_mode, nearest_modes, sample


def test_default_ring():
    spec = eight_gaussian_spec()
    assert spec.n_modes == 8 and spec.sigma == 0.1
    np.testing.assert_allclose(np.linalg.norm(spec.centers, axis=1), 2.0)
    np.testing.assert_allclose(spec.centers[0], [2.0, 0.0])
    angles = np.rad2deg(np.arctan2(spec.centers[:, 1], spec.centers[:, 0])) % 360
    np.testing.assert_allclose(angles, 45.0 * np.arange(8), atol=1e-9)
    assert all(90 <= angles[i] < 180 for i in MINOR_MODES)


def test_minor_weights():
    assert np.allclose(eight_gaussian_spec(minor_factor=1.0).weights, 1 / 8)
    w = eight_gaussian_spec(minor_factor=0.1).weights
    assert w[2] / w[0] == pytest.approx(0.1, rel=1e-14) and w[3] / w[7] == pytest.approx(0.1, rel=1e-14)


@pytest.mark.parametrize("kwargs", [{"radius": 0}, {"sigma": -1}, {"minor_factor": 0}, {"minor_factor": 1.5}])
def test_bad_ring_parameters(kwargs):
    with pytest.raises(ValueError):
        eight_gaussian_spec(**kwargs)


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureSpec(np.zeros((2, 2)), 0.1, np.array([1.0]))
    with pytest.raises(ValueError):
        MixtureSpec(np.zeros((2, 2)), 0.1, np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        sample(eight_gaussian_spec(), 0, 0)


def test_mean_within_clt_bound():
    spec = eight_gaussian_spec(minor_factor=1.0)
    n = 10_000
    x = sample(spec, n, 7)
    spread = np.sqrt(4.0 / 2 + 0.01)  # per-coordinate std of the ring mixture
    assert np.all(np.abs(x.mean(axis=0)) < 3 * spread / np.sqrt(n))


def test_degenerate_sigma():
    spec = eight_gaussian_spec(sigma=1e-12)
    _, dist = nearest_modes(sample(spec, 500, 3), spec)
    assert dist.max() < 1e-6


@given(seed=st.integers(0, 2**64 - 1))
def test_same_seed_same_batch(seed):
    spec = eight_gaussian_spec()
    assert sample(spec, 5, seed).tobytes() == sample(spec, 5, seed).tobytes()


def test_rng_is_philox():
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_frequencies_respect_weights():
    spec = eight_gaussian_spec()
    n = 100_000
    _, modes = sample(spec, n, 11, return_modes=True)
    freq = np.bincount(modes, minlength=8) / n
    w = spec.weights
    assert np.all(np.abs(freq - w) <= 4 * np.sqrt(w * (1 - w) / n))


def test_nearest_mode_examples():
    spec = eight_gaussian_spec()
    assert nearest_mode(spec.centers[3], spec) == (3, 0.0)
    assert nearest_mode(np.zeros(2), spec)[0] == 0
    idx, dist = nearest_mode(spec.centers[5] + np.array([0.05, 0.0]), spec)
    assert idx == 5 and dist == pytest.approx(0.05, abs=1e-12)
    with pytest.raises(ValueError):
        nearest_mode(np.zeros(3), spec)


def test_samples_stay_near_their_mode():
    spec = eight_gaussian_spec()
    _, dist = nearest_modes(sample(spec, 10_000, 5), spec)
    assert np.mean(dist < 0.5) > 0.99


def test_marginal_and_round_trip():
    spec = eight_gaussian_spec()
    m = spec.marginal([1])
    assert m.d == 1 and np.allclose(m.centers[:, 0], spec.centers[:, 1])
    again = MixtureSpec.from_dict(spec.to_dict())
    assert np.array_equal(again.centers, spec.centers) and np.array_equal(again.weights, spec.weights)
