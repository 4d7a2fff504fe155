import numpy as np
import pytest

from dfilab import autodiff as ad
from dfilab.data import eight_gaussian_spec, make_rng
from dfilab.gan import (
    FeatureTap,
    GanConfig,
    checkpoint_id,
    derive_seed,
    discriminator_features,
    discriminator_score,
    discriminator_step,
    gan_losses,
    generate,
    generator_step,
    hidden_activation_indices,
    train_gan,
)
from dfilab.nn import central_difference, init_network, max_relative_error, mlp
from dfilab.optim import AdamState

import oracles


def test_gan_loss_examples():
    d_loss, g_loss = gan_losses(np.full(4, 0.5), np.full(4, 0.5))
    assert d_loss == pytest.approx(2 * np.log(2)) and g_loss == pytest.approx(np.log(2))
    assert gan_losses(np.full(3, 1 - 1e-12), np.full(3, 1e-12))[0] < 1e-6
    assert gan_losses(np.full(3, 0.5), np.full(3, 1 - 1e-12))[1] < 1e-6


def test_gan_loss_clamps_out_of_range(caplog):
    d_loss, g_loss = gan_losses(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isfinite(d_loss) and np.isfinite(g_loss)
    assert "clamped" in caplog.text


def test_gan_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    real, fake = rng.uniform(0.1, 0.9, 6), rng.uniform(0.1, 0.9, 6)
    r = ad.Tensor(real, requires_grad=True)
    f = ad.Tensor(fake, requires_grad=True)
    d_loss, g_loss = gan_losses(r, f)
    gr, gf = ad.grad(d_loss + g_loss, [r, f])
    total = lambda a, b: sum(gan_losses(a, b))
    assert max_relative_error(gr.data, central_difference(lambda v: total(v, fake), real.copy(), 1e-7)) < 1e-6
    assert max_relative_error(gf.data, central_difference(lambda v: total(real, v), fake.copy(), 1e-7)) < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        GanConfig(latent_dim=3, g_spec=mlp([2, 4, 2]))
    with pytest.raises(ValueError):
        GanConfig(d_spec=mlp([2, 4, 1]))  # no sigmoid head
    with pytest.raises(ValueError):
        GanConfig(generator_loss="wasserstein")
    cfg = GanConfig(hidden=8)
    assert GanConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_default_architecture():
    cfg = GanConfig()
    kinds_g = [layer.kind for layer in cfg.g_spec.layers]
    assert kinds_g.count("affine") == 3 and kinds_g.count("batch_norm") == 2
    kinds_d = [layer.kind for layer in cfg.d_spec.layers]
    assert kinds_d.count("affine") == 3 and kinds_d[-1] == "sigmoid" and "batch_norm" not in kinds_d
    assert "batch_norm" in [layer.kind for layer in GanConfig(d_norm="batch_norm").d_spec.layers]


def test_zero_iterations_returns_initialization():
    cfg = GanConfig(hidden=8, iterations=0, seed=3)
    ck = train_gan(cfg, eight_gaussian_spec())
    assert ck.g_params.equals(init_network(cfg.g_spec, derive_seed(3, "gan", "g_init")))
    assert ck.d_params.equals(init_network(cfg.d_spec, derive_seed(3, "gan", "d_init")))


def test_training_is_deterministic():
    cfg = GanConfig(hidden=8, batch_size=16, iterations=20, seed=5)
    a, b = train_gan(cfg, eight_gaussian_spec()), train_gan(cfg, eight_gaussian_spec())
    assert checkpoint_id(a) == checkpoint_id(b) and a.history == b.history


def test_steps_touch_only_their_network():
    cfg = GanConfig(hidden=8, batch_size=16)
    g = init_network(cfg.g_spec, 0)
    d = init_network(cfg.d_spec, 1)
    g_flat, d_flat = g.flat.copy(), d.flat.copy()
    rng = make_rng(0)
    real, z = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
    d2, _, _ = discriminator_step(cfg, g, d, AdamState.zeros(d.flat.size), real, z)
    assert np.array_equal(g.flat, g_flat) and not np.array_equal(d2.flat, d_flat)
    d2_flat = d2.flat.copy()
    g2, _, _ = generator_step(cfg, g, d2, AdamState.zeros(g.flat.size), z)
    assert np.array_equal(d2.flat, d2_flat) and not np.array_equal(g2.flat, g_flat)
    assert np.array_equal(d.flat, d_flat)


def test_generate_contract(small_gan):
    z = np.random.default_rng(0).standard_normal((7, 2))
    out = generate(small_gan, z)
    assert out.shape == (7, 2)
    assert generate(small_gan, z).tobytes() == out.tobytes()
    twin = generate(small_gan, np.vstack([z[:1], z[:1]]))
    assert np.array_equal(twin[0], twin[1])
    with pytest.raises(ValueError):
        generate(small_gan, np.ones((2, 3)))


def test_features_and_scores(small_gan):
    x = np.random.default_rng(1).standard_normal((5, 2))
    before = checkpoint_id(small_gan)
    d_spec = small_gan.config.d_spec
    assert discriminator_features(small_gan, x).shape == (5, 32)
    both = FeatureTap.all_hidden(d_spec)
    assert discriminator_features(small_gan, x, both).shape == (5, 64)
    twin = discriminator_features(small_gan, np.vstack([x[:1], x[:1]]))
    assert np.array_equal(twin[0], twin[1])
    s = discriminator_score(small_gan, x)
    assert s.shape == (5, 1) and np.all((s > 0) & (s < 1))
    assert checkpoint_id(small_gan) == before
    with pytest.raises(ValueError):
        discriminator_features(small_gan, x, FeatureTap((99,)))
    with pytest.raises(ValueError):
        discriminator_features(small_gan, x, FeatureTap((3, 1)))


def test_hidden_activation_indices():
    spec = mlp([2, 4, 4, 1], norm="batch_norm", head="sigmoid")
    assert [spec.layers[i].kind for i in hidden_activation_indices(spec)] == ["leaky_relu", "leaky_relu"]


def test_small_gan_learns_something(small_gan):
    from dfilab.metrics import mode_coverage

    z = np.random.default_rng(2).standard_normal((2000, 2))
    assert mode_coverage(generate(small_gan, z), eight_gaussian_spec()).modes_recovered >= 3


@pytest.mark.parametrize("name", ["gan_discriminator", "gan_generator", "gan_generator_minimax"])
def test_gan_composite_gradients(name):
    fn = oracles.COMPOSITES[name]
    assert max(fn(s) for s in range(10)) < 1e-4
