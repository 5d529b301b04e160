import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirvae import autodiff as ad
from dirvae import container
from dirvae import distributions as dist
from dirvae import model as vae


def _model(variant, D=12, K=4, enc=(8,), dec=(6,), seed=0, zero=False):
    cfg = vae.ArchitectureConfig(D, K, variant, enc, dec)
    m = vae.init_model(cfg, vae.default_prior(variant, K), np.random.default_rng(seed))
    if zero:
        m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    return m


def _batch(B=5, D=12, seed=1):
    return (np.random.default_rng(seed).uniform(size=(B, D)) > 0.5).astype(float)


def test_zero_weights_dirvae_head():
    post = vae.encode(_model("dirvae", zero=True), _batch())
    np.testing.assert_allclose(post.alpha_hat.value, np.log(2) + 1e-4, rtol=1e-15)


@pytest.mark.parametrize("variant", ["gvae", "gvae-softmax"])
def test_zero_weights_gaussian_head(variant):
    post = vae.encode(_model(variant, zero=True), _batch())
    assert np.all(post.mu_hat.value == 0.0) and np.all(post.log_var_hat.value == 0.0)


@pytest.mark.parametrize("variant", ["dirvae", "sbvae", "dirvae-weibull"])
def test_positive_heads_strictly_positive(variant):
    m = _model(variant)
    m.params = {k: v * 50 for k, v in m.params.items()}  # push pre-activations far negative somewhere
    post = vae.encode(m, _batch(20))
    for t in vars(post).values():
        assert np.all(t.value > 0)


def test_decode_zero_weights_gives_bias_rows():
    m = _model("dirvae", zero=True)
    m.params["dec1.b"] = np.linspace(-1, 1, 12)
    z = dist.exact_dirichlet_sample(np.ones(4), np.random.default_rng(0), 3)
    logits = vae.decode(m, z).value
    np.testing.assert_array_equal(logits, np.tile(m.params["dec1.b"], (3, 1)))


def test_decode_distinct_columns_distinct_logits():
    m = _model("gvae", dec=())
    out = vae.decode(m, np.eye(4)).value
    for i in range(4):
        for j in range(i + 1, 4):
            assert not np.allclose(out[i], out[j])


def test_gvae_softmax_decodes_softmax_of_z():
    soft = _model("gvae-softmax", seed=3)
    plain = _model("gvae", seed=3)
    plain.params = {k: v for k, v in soft.params.items()}
    z = np.random.default_rng(2).normal(size=(3, 4))
    np.testing.assert_allclose(
        vae.decode(soft, z).value, vae.decode(plain, ad.softmax_rows(z).value).value, rtol=1e-14
    )


def test_dirvae_kl_zero_when_posterior_matches_prior():
    m = _model("dirvae", zero=True)
    m.prior = dist.DirichletPrior(np.full(4, np.log(2) + 1e-4))
    res = vae.elbo_loss(m, _batch(), rng=np.random.default_rng(0))
    assert res.kl == 0.0
    assert res.loss.item() == pytest.approx(res.recon, rel=1e-15)


def test_zero_logits_recon_is_d_ln2():
    m = _model("gvae", zero=True)
    res = vae.elbo_loss(m, _batch(), rng=np.random.default_rng(0))
    np.testing.assert_allclose(res.recon_per_instance, 12 * np.log(2), rtol=1e-14)


@pytest.mark.parametrize("variant", vae.VARIANTS)
def test_kl_telemetry_nonnegative(variant):
    m = _model(variant, seed=4)
    for seed in range(3):
        res = vae.elbo_loss(m, _batch(seed=seed), rng=np.random.default_rng(seed))
        assert np.all(res.kl_per_instance >= 0)
        assert res.loss.item() >= res.kl - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_dirvae_latents_on_simplex(seed):
    m = _model("dirvae", seed=seed % 100)
    res = vae.elbo_loss(m, _batch(seed=seed), rng=np.random.default_rng(seed))
    np.testing.assert_allclose(res.z.sum(axis=1), 1.0, atol=1e-12)


def test_trunk_shapes_identical_across_variants():
    def trunk(variant):
        shapes = vae.parameter_shapes(vae.ArchitectureConfig(30, 6, variant, (10, 9), (7,)))
        return {k: v for k, v in shapes.items() if not k.startswith("head_")}

    ref = trunk("dirvae")
    for variant in vae.VARIANTS:
        assert trunk(variant) == ref


def test_shape_mismatch_rejected():
    m = _model("dirvae")
    with pytest.raises(ad.ShapeError):
        vae.encode(m, np.zeros((2, 11)))
    with pytest.raises(ad.ShapeError):
        vae.decode(m, np.zeros((2, 5)))


def test_small_latent_rejected_for_simplex_variants():
    with pytest.raises(ValueError):
        vae.ArchitectureConfig(10, 1, "dirvae")
    vae.ArchitectureConfig(10, 1, "gvae")


@pytest.mark.parametrize("variant", vae.VARIANTS)
def test_checkpoint_round_trip(tmp_path, variant):
    m = _model(variant, seed=9)
    path = tmp_path / "m.bin"
    vae.save_checkpoint(path, m, extra={"note": "x"})
    m2, extra = vae.load_checkpoint(path)
    assert extra == {"note": "x"}
    assert m2.config == m.config
    for k, v in m.params.items():
        assert m2.params[k].tobytes() == v.tobytes()
    assert vae.checkpoint_bytes(m2, extra) == path.read_bytes()


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    m = _model("dirvae")
    header, tensors = container.loads(vae.checkpoint_bytes(m))
    tensors["dec0.W"] = np.zeros((3, 3))
    path = tmp_path / "bad.bin"
    container.save(path, header, tensors)
    with pytest.raises(vae.CheckpointError):
        vae.load_checkpoint(path)
