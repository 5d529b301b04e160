import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, stats

from dirvae import data
from dirvae import distributions as dist
from dirvae import evaluation as ev
from dirvae import model as vae
from dirvae import training as tr
from dirvae.special import log_sum_exp


def _zeroed(variant, D, K, enc=(), dec=(), alpha=None):
    cfg = vae.ArchitectureConfig(D, K, variant, enc, dec)
    m = vae.init_model(cfg, vae.default_prior(variant, K, alpha=alpha), np.random.default_rng(0))
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    return m


def _binary(B, D, seed=0):
    return (np.random.default_rng(seed).uniform(size=(B, D)) > 0.5).astype(float)


def _is_estimate(log_w):
    """Importance estimate of ln p(x) and its delta-method standard error."""
    w = np.exp(log_w - log_w.max())
    return log_sum_exp(log_w) - np.log(log_w.size), w.std() / w.mean() / np.sqrt(log_w.size)


# -- marginal likelihood -------------------------------------------------------


def test_nll_exact_for_z_independent_decoder():
    D = 10
    m = _zeroed("dirvae", D, 3, enc=(4,), dec=(5,))
    m.prior = dist.DirichletPrior(np.full(3, np.log(2) + 1e-4))  # alpha_hat forced to alpha
    bias = np.linspace(-2, 2, D)
    m.params["dec1.b"] = bias
    x = _binary(6, D)
    exact = -np.sum(np.logaddexp(0, bias) - x * bias, axis=1)
    for n in (1, 7, 100):
        est = ev.mc_marginal_log_likelihood(m, x, n, np.random.default_rng(n))
        np.testing.assert_allclose(est, exact, atol=1e-6)


def test_single_sample_is_the_importance_weight():
    m = vae.init_model(vae.ArchitectureConfig(8, 3, "dirvae", (5,), (5,)), vae.default_prior("dirvae", 3), np.random.default_rng(2))
    x = _binary(4, 8)
    a = ev.mc_marginal_log_likelihood(m, x, 1, np.random.default_rng(9))
    b = ev.importance_log_weights(m, x, 1, np.random.default_rng(9))[:, 0]
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, ev.mc_marginal_log_likelihood(m, x, 1, np.random.default_rng(9)))


def _linear_decoder(m, seed):
    rng = np.random.default_rng(seed)
    K, D = m.params["dec0.W"].shape
    m.params["dec0.W"] = rng.normal(0, 1.5, (K, D))
    m.params["dec0.b"] = rng.normal(0, 0.5, D)


def _log_bern(x, logits):
    return -np.sum(np.logaddexp(0, logits) - x * logits, axis=-1)


def test_gaussian_toy_matches_quadrature():
    D = 6
    m = _zeroed("gvae", D, 2)
    m.params["head_mu.b"] = np.array([0.3, -0.2])
    m.params["head_logvar.b"] = np.array([-0.5, 0.2])
    _linear_decoder(m, 0)
    x = _binary(1, D, seed=3)
    # probabilists' Gauss-Hermite product rule over the standard-normal prior
    t, w = hermegauss(120)
    w = w / np.sqrt(2 * np.pi)
    z = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    logits = z @ m.params["dec0.W"] + m.params["dec0.b"]
    exact = log_sum_exp(_log_bern(x, logits) + np.log(np.outer(w, w).ravel()))
    est, se = _is_estimate(ev.importance_log_weights(m, x, 4000, np.random.default_rng(1))[0])
    assert abs(est - exact) <= 3 * se


def test_dirichlet_toy_matches_quadrature_on_the_simplex():
    # small alpha_hat, where the approximate sampler tracks the posterior closely
    D = 6
    m = _zeroed("dirvae", D, 2, alpha=0.5)
    m.params["head_alpha.b"] = np.array([-3.0, -2.0])
    _linear_decoder(m, 0)
    x = _binary(1, D, seed=3)
    W, b = m.params["dec0.W"], m.params["dec0.b"]

    def integrand(z1):
        z = np.array([z1, 1 - z1])
        return np.exp(_log_bern(x[0], z @ W + b)) * stats.beta.pdf(z1, 0.5, 0.5)

    exact = np.log(integrate.quad(integrand, 0, 1, limit=200)[0])
    est, se = _is_estimate(ev.importance_log_weights(m, x, 20000, np.random.default_rng(1))[0])
    assert abs(est - exact) <= 3 * se


def test_more_samples_do_not_lower_the_estimate():
    m = vae.init_model(vae.ArchitectureConfig(12, 3, "gvae", (6,), (6,)), vae.default_prior("gvae", 3), np.random.default_rng(4))
    x = _binary(1, 12, seed=5)
    rng = np.random.default_rng(0)
    one = np.array([ev.mc_marginal_log_likelihood(m, x, 1, rng)[0] for _ in range(400)])
    hundred = np.array([ev.mc_marginal_log_likelihood(m, x, 100, rng)[0] for _ in range(40)])
    se = np.hypot(one.std() / np.sqrt(one.size), hundred.std() / np.sqrt(hundred.size))
    assert hundred.mean() >= one.mean() - 3 * se


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_weight_reports_sample():
    m = _zeroed("gvae", 4, 2)
    m.params["head_logvar.b"] = np.array([800.0, 0.0])
    with pytest.raises(ArithmeticError, match="instance 0, sample"):
        ev.importance_log_weights(m, _binary(2, 4), 3, np.random.default_rng(0))


# -- held-out metrics ---------------------------------------------------------


def test_metrics_report_and_csv(tmp_path):
    m = vae.init_model(vae.ArchitectureConfig(16, 4, "dirvae", (8,), (8,)), vae.default_prior("dirvae", 4), np.random.default_rng(0))
    x = data.synthetic_bars(60, 4, np.random.default_rng(0)).images
    rep = ev.test_metrics(m, x, np.random.default_rng(1), repeats=3, n_importance=20, max_instances=30)
    assert rep.n_instances == 30 and len(rep.rows) == 3
    assert rep.neg_elbo >= rep.recon_loss
    assert rep.dispersion("neg_elbo") >= 0
    rep.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "repeat,neg_log_likelihood,neg_elbo,recon_loss"
    assert [l.split(",")[0] for l in lines[1:]] == ["0", "1", "2", "mean", "std"]


def test_perfect_autoencoder_recon_near_zero():
    D = 9
    pattern = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1], dtype=float)
    m = _zeroed("gvae", D, 2, dec=(3,))
    m.params["dec1.b"] = np.where(pattern > 0, 40.0, -40.0)
    rep = ev.test_metrics(m, np.tile(pattern, (20, 1)), np.random.default_rng(0), repeats=3, n_importance=5)
    assert rep.recon_loss < 1e-15


def test_empty_test_set_rejected():
    m = _zeroed("gvae", 4, 2)
    with pytest.raises(ValueError):
        ev.test_metrics(m, np.zeros((0, 4)), np.random.default_rng(0))


# -- collapsing diagnostics ---------------------------------------------------


def test_identity_decoder_norms():
    m = _zeroed("gvae", 5, 5, dec=(5,))
    m.params["dec0.W"] = np.eye(5)
    norms = ev.decoder_weight_norms(m)
    np.testing.assert_array_equal(norms, np.ones(5))
    assert ev.collapsed_weight_dims(norms) == 0


def test_zero_row_counts_as_collapsed():
    W = np.random.default_rng(0).normal(size=(6, 4))
    W[2] = 0.0
    m = _zeroed("gvae", 4, 6, dec=())
    m.params["dec0.W"] = W
    assert ev.collapsed_weight_dims(ev.decoder_weight_norms(m)) == 1


def test_norms_follow_latent_permutation():
    m = vae.init_model(vae.ArchitectureConfig(10, 5, "dirvae", (7,), (6,)), vae.default_prior("dirvae", 5), np.random.default_rng(3))
    perm = np.array([3, 0, 4, 1, 2])
    pm = vae.VaeModel(m.config, m.prior, dict(m.params))
    pm.params["head_alpha.W"] = m.params["head_alpha.W"][:, perm]
    pm.params["head_alpha.b"] = m.params["head_alpha.b"][perm]
    pm.params["dec0.W"] = m.params["dec0.W"][perm]
    np.testing.assert_array_equal(ev.decoder_weight_norms(pm), ev.decoder_weight_norms(m)[perm])
    x = _binary(3, 10)
    # the encoder head permutes with the decoder rows
    np.testing.assert_allclose(ev.posterior_means(pm, x), ev.posterior_means(m, x)[:, perm], rtol=1e-14)


def test_pooled_moments_standard_normal():
    kurt, skew = ev.pooled_moments(np.random.default_rng(0).standard_normal((1000, 1000)))
    assert abs(kurt) <= 0.05 and abs(skew) <= 0.05


def test_pooled_moments_exponential():
    kurt, skew = ev.pooled_moments(np.random.default_rng(1).exponential(size=10**6))
    assert abs(kurt - 6) <= 0.2 and abs(skew - 2) <= 0.05


def test_pooled_moments_constant_sentinel():
    kurt, skew = ev.pooled_moments(np.full((50, 3), 0.25))
    assert np.isnan(kurt) and np.isnan(skew)


def test_collapsed_value_dims_threshold():
    K = 4
    mean = np.array([0.01, 0.01, 0.5, 0.02])
    var = np.array([1e-5, 1e-2, 1e-5, 1e-5])
    assert ev.collapsed_value_dims(mean, var) == 2


def test_latent_values_on_simplex_for_softmax_variant():
    m = vae.init_model(vae.ArchitectureConfig(8, 3, "gvae-softmax", (5,), (5,)), vae.default_prior("gvae", 3), np.random.default_rng(0))
    z = ev.latent_samples(m, _binary(10, 8), np.random.default_rng(0))
    np.testing.assert_allclose(z.sum(axis=1), 1.0, atol=1e-12)


def test_diagnose_report_files(tmp_path):
    m = vae.init_model(vae.ArchitectureConfig(16, 4, "sbvae", (8,), (8,)), vae.default_prior("sbvae", 4), np.random.default_rng(0))
    rep = ev.diagnose(m, _binary(30, 16), np.random.default_rng(0))
    assert np.all(rep.decoder_weight_norms >= 0) and np.all(rep.latent_var >= 0)
    rep.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "dim,weight_norm,latent_mean,latent_var" and len(lines) == 5


# -- one-hot reconstructions --------------------------------------------------


def test_onehot_zero_weights_identical():
    m = _zeroed("dirvae", 9, 4, dec=(5,))
    m.params["dec1.b"] = np.linspace(-1, 1, 9)
    imgs = ev.dimwise_onehot_reconstruction(m)
    assert imgs.shape == (4, 9)
    np.testing.assert_allclose(imgs, np.tile(1 / (1 + np.exp(-m.params["dec1.b"])), (4, 1)), rtol=1e-15)


def test_onehot_distinct_columns_distinct_images():
    m = vae.init_model(vae.ArchitectureConfig(9, 4, "dirvae", (5,), ()), vae.default_prior("dirvae", 4), np.random.default_rng(0))
    imgs = ev.dimwise_onehot_reconstruction(m)
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(imgs[i] - imgs[j]) > 0


def _mean_pairwise(imgs):
    d = np.linalg.norm(imgs[:, None] - imgs[None], axis=-1)
    return d[np.triu_indices(len(imgs), 1)].mean()


def test_trained_onehot_images_spread_more_than_zero_control():
    ds = data.synthetic_bars(400, 4, np.random.default_rng(0))
    m = vae.init_model(vae.ArchitectureConfig(16, 6, "dirvae", (20,), (20,)), vae.default_prior("dirvae", 6), np.random.default_rng(1))
    tr.train(m, ds.images, tr.TrainConfig(learning_rate=3e-3, batch_size=50, epochs=10, seed=1))
    control = _zeroed("dirvae", 16, 6, enc=(20,), dec=(20,))
    assert _mean_pairwise(ev.dimwise_onehot_reconstruction(m)) > _mean_pairwise(ev.dimwise_onehot_reconstruction(control))


def test_pgm_round_trip(tmp_path):
    imgs = np.random.default_rng(0).uniform(size=(7, 16))
    grid = ev.image_grid(imgs, 4, ncols=3)
    assert grid.shape == (3 * 5 + 1, 3 * 5 + 1)
    ev.write_pgm(tmp_path / "g.pgm", grid)
    np.testing.assert_array_equal(ev.read_pgm(tmp_path / "g.pgm"), grid)


# -- kNN -----------------------------------------------------------------------


def test_knn_duplicate_point_k1():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(50, 3))
    labels = rng.integers(0, 4, 50)
    assert ev.knn_classify(train, labels, train[17:18], labels[17:18], 1) == 0.0


def test_knn_separated_clusters():
    rng = np.random.default_rng(1)

    def clusters(n):
        y = rng.integers(0, 2, n)
        return rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, 6.0, 0.0), y

    (xa, ya), (xb, yb) = clusters(500), clusters(500)
    assert ev.knn_classify(xa, ya, xb, yb, 5) < 0.02


def test_knn_self_k1_is_zero():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 5))
    y = rng.integers(0, 10, 200)
    assert ev.knn_classify(x, y, x, y, 1) == 0.0


def test_knn_tie_goes_to_smallest_label():
    train = np.array([[-1.0], [1.0]])
    assert ev.knn_predict(train, np.array([3, 1]), np.array([[0.0]]), 2)[0] == 1


def test_knn_errors():
    with pytest.raises(ValueError):
        ev.knn_classify(np.zeros((0, 2)), np.zeros(0, int), np.zeros((1, 2)), np.zeros(1, int), 1)
    with pytest.raises(ValueError):
        ev.knn_classify(np.zeros((3, 2)), np.zeros(3, int), np.zeros((1, 3)), np.zeros(1, int), 1)


@pytest.mark.parametrize("variant", vae.VARIANTS)
def test_posterior_means_shape(variant):
    K = 4
    m = vae.init_model(vae.ArchitectureConfig(8, K, variant, (5,), (5,)), vae.default_prior(variant, K), np.random.default_rng(0))
    feats = ev.posterior_means(m, _binary(7, 8))
    assert feats.shape == (7, K) and np.all(np.isfinite(feats))
    if variant in ("dirvae", "sbvae", "dirvae-weibull"):
        np.testing.assert_allclose(feats.sum(axis=1), 1.0, atol=1e-12)
