import numpy as np
import pytest

from dfilab.data import eight_gaussian_spec, sample
from dfilab.gan import GanCheckpoint, GanConfig, checkpoint_id, default_discriminator, derive_seed, generate
from dfilab.inference import (
    METHOD_TABLE,
    ConnectionSpec,
    CountingSampler,
    RefineConfig,
    TrainConfig,
    attribute_vector,
    build_method,
    encoder_spec,
    infer,
    latent_interpolate,
    per_sample_distance,
    reconstruct,
    refine,
    refine_objective,
    train_connection,
    train_encoder,
)
from dfilab.metrics import latent_recon_error
from dfilab.nn import LayerSpec, NetworkSpec, ParamStore, init_network

import oracles

SMALL_CN = ConnectionSpec(hidden=(16, 16), groups=2)


def identity_checkpoint() -> GanCheckpoint:
    g_spec = NetworkSpec([LayerSpec.affine(2, 2)])
    g = ParamStore(np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), g_spec.layout())
    d_spec = default_discriminator(hidden=16)
    cfg = GanConfig(g_spec=g_spec, d_spec=d_spec, hidden=16)
    return GanCheckpoint(cfg, g, init_network(d_spec, 0), mixture=eight_gaussian_spec())


def test_method_table_names():
    assert len(METHOD_TABLE) == 8
    ck = identity_checkpoint()
    for name in METHOD_TABLE:
        m = build_method(name, ck, 0, 0, connection=SMALL_CN)
        assert m.name == name
    with pytest.raises(KeyError):
        build_method("VAE", ck, 0, 0)


def test_distance_kinds():
    a, b = np.array([[0.0, 0.0]]), np.array([[3.0, -4.0]])
    assert per_sample_distance(a, b, "L2").data.tolist() == [25.0]
    assert per_sample_distance(a, b, "L1").data.tolist() == [7.0]
    with pytest.raises(ValueError):
        per_sample_distance(a, b, "cos")


def test_connection_spec_shape():
    spec = ConnectionSpec().build(128, 2)
    assert [layer.kind for layer in spec.layers] == ["affine", "group_norm", "leaky_relu"] * 2 + ["affine"]
    assert spec.output_dim == 2


def test_encoder_spec_mirrors_discriminator_then_connection(small_gan):
    spec = encoder_spec(small_gan, SMALL_CN)
    d_hidden = small_gan.config.d_spec.layers[:4]
    assert [layer.to_dict() for layer in spec.layers[:4]] == [layer.to_dict() for layer in d_hidden]
    assert spec.output_dim == 2 and [layer.kind for layer in spec.layers].count("affine") == 5


def test_zero_iterations_keep_initialization(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=0, seed=1)
    assert m.trained_params.equals(init_network(m.net_spec, derive_seed(1, "dfi/latent_recon", "init")))
    e = train_encoder(small_gan, "image_recon", iters=0, seed=1, connection=SMALL_CN)
    assert e.history == []


def test_training_never_mutates_checkpoint(small_gan):
    before = (small_gan.g_params.flat.copy(), small_gan.d_params.flat.copy(), checkpoint_id(small_gan))
    for name in ("DFI", "DFI_image", "ENC_image", "ENC_latent"):
        build_method(name, small_gan, 20, 0, connection=SMALL_CN)
    assert np.array_equal(small_gan.g_params.flat, before[0])
    assert np.array_equal(small_gan.d_params.flat, before[1])
    assert checkpoint_id(small_gan) == before[2]


def test_latent_recon_reads_no_real_data(small_gan):
    counter = CountingSampler(eight_gaussian_spec(), 0)
    train_connection(small_gan, SMALL_CN, iters=10, data=counter)
    train_encoder(small_gan, "latent_recon", iters=10, connection=SMALL_CN, data=counter)
    assert counter.reads == 0
    train_encoder(small_gan, "image_recon", iters=3, connection=SMALL_CN, data=counter, config=TrainConfig(batch_size=8))
    assert counter.reads == 24


def test_trained_connection_beats_untrained(small_gan):
    z = np.random.default_rng(9).standard_normal((1000, 2))
    x = generate(small_gan, z)
    untrained = train_connection(small_gan, SMALL_CN, iters=0, seed=2)
    trained = train_connection(small_gan, SMALL_CN, iters=1500, seed=2)
    assert latent_recon_error(z, infer(trained, x, small_gan)) < 0.25 * latent_recon_error(z, infer(untrained, x, small_gan))
    windows = np.array(trained.history).reshape(-1, 500).mean(axis=1)
    assert windows[-1] <= windows[0]


def test_infer_contract(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=5)
    x = sample(eight_gaussian_spec(), 6, 0)
    z = infer(m, x, small_gan)
    assert z.shape == (6, 2) and infer(m, x, small_gan).tobytes() == z.tobytes()
    with pytest.raises(ValueError):
        infer(m, np.ones((2, 3)), small_gan)
    with pytest.raises(ValueError):
        infer(m, x, identity_checkpoint())


def test_zero_weight_connection_returns_bias(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=0)
    flat = np.zeros_like(m.trained_params.flat)
    bias = np.array([0.25, -1.5])
    last = len(m.net_spec.layers) - 1
    params = ParamStore(flat, m.trained_params.offsets)
    params.tensor(last, "bias")[...] = bias
    m.trained_params = params
    z = infer(m, sample(eight_gaussian_spec(), 5, 1), small_gan)
    np.testing.assert_array_equal(z, np.tile(bias, (5, 1)))


def test_refine_contract(small_gan):
    rng = np.random.default_rng(4)
    z0 = rng.standard_normal((100, 2))
    assert np.array_equal(refine(small_gan, generate(small_gan, z0), z0, RefineConfig(steps=0)), z0)
    exact = refine(small_gan, generate(small_gan, z0[:5]), z0[:5])
    np.testing.assert_array_equal(exact, z0[:5])
    x = rng.uniform(-2.5, 2.5, (100, 2))
    z_star = refine(small_gan, x, z0)
    before, after = refine_objective(small_gan, x, z0), refine_objective(small_gan, x, z_star)
    assert np.all(after <= before) and np.median(before - after) > 0
    with pytest.raises(ValueError):
        RefineConfig(steps=-1)


def test_reconstruct_and_refined_method(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=5)
    x = sample(eight_gaussian_spec(), 8, 2)
    r = reconstruct(m, x, small_gan)
    assert r.shape == x.shape and reconstruct(m, x, small_gan).tobytes() == r.tobytes()
    opt = m.with_refinement()
    assert opt.name == "DFI^opt"
    assert np.all(refine_objective(small_gan, x, infer(opt, x, small_gan)) <= refine_objective(small_gan, x, infer(m, x, small_gan)))


def test_identity_generator_reconstruction():
    ck = identity_checkpoint()
    m = train_encoder(ck, "latent_recon", iters=3000, seed=0, connection=SMALL_CN, config=TrainConfig(lr=1e-3))
    x = np.random.default_rng(0).standard_normal((200, 2))
    assert np.mean(np.linalg.norm(reconstruct(m, x, ck) - x, axis=1)) < 0.1


def test_latent_interpolate_endpoints(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=5)
    x1, x2 = sample(eight_gaussian_spec(), 2, 3)
    path = latent_interpolate(m, x1, x2, small_gan, np.linspace(0, 1, 101))
    assert path.shape == (101, 2)
    assert np.array_equal(path[-1], reconstruct(m, x1, small_gan)[0])
    assert np.array_equal(path[0], reconstruct(m, x2, small_gan)[0])
    with pytest.raises(ValueError):
        latent_interpolate(m, x1, x2, small_gan, [0.5, 0.2])


def test_attribute_vector_properties(small_gan):
    m = train_connection(small_gan, SMALL_CN, iters=5)
    a, b = sample(eight_gaussian_spec(), 10, 4), sample(eight_gaussian_spec(), 10, 5)
    assert not attribute_vector(m, small_gan, a, a).any()
    np.testing.assert_allclose(attribute_vector(m, small_gan, a, b), -attribute_vector(m, small_gan, b, a))
    with pytest.raises(ValueError):
        attribute_vector(m, small_gan, a[:0], b)


@pytest.mark.parametrize("name", ["connection_latent_L2", "encoder_image"])
def test_inference_composite_gradients(name):
    assert max(oracles.COMPOSITES[name](s) for s in range(10)) < 1e-4
