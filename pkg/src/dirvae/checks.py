"""Self-check suites: finite-difference gradients and Monte-Carlo KL oracles.

Both suites use fixed seeds, so a report is reproducible run to run.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from . import model as vae

GRADCHECK_TOL = 1e-4
KL_REL_TOL = 0.01
KL_REL_TOL_TRUNCATED = 0.02
KL_ABS_TOL = 0.005
KL_DRAWS = 10**6
KL_SETTINGS = 20
# the truncated stick-breaking series is only 0 at a matched prior up to its remainder
MATCHED_TOL = {"kl_kumaraswamy_beta": 1e-4}


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} error={self.measured:.3e} tol={self.tolerance:.1e} ({self.seconds:.2f}s)"


# -- gradients ---------------------------------------------------------------


def tiny_problem(variant, seed=1, input_dim=20, hidden=16, latent_dim=5, batch=4):
    """Small model, binary batch and frozen noise for a deterministic ELBO."""
    rng = np.random.default_rng(seed)
    cfg = vae.ArchitectureConfig(input_dim, latent_dim, variant, (hidden, hidden), (hidden,))
    model = vae.init_model(cfg, vae.default_prior(variant, latent_dim), rng)
    # nonzero biases so no relu sits exactly at its kink
    for name in model.params:
        if name.endswith(".b"):
            model.params[name] = rng.normal(0.0, 0.1, model.params[name].shape)
    x = (rng.uniform(size=(batch, input_dim)) > 0.5).astype(np.float64)
    noise = vae.draw_noise(model, batch, rng)
    return model, x, noise


def gradcheck_variant(variant, tol=GRADCHECK_TOL, seed=1):
    model, x, noise = tiny_problem(variant, seed)
    start = time.perf_counter()
    report = ad.grad_check(lambda tape, p: vae.elbo_loss(model, x, noise=noise, params=p).loss, model.params, tol=tol)
    return CheckResult(f"gradcheck[{variant}]", report.max_error, tol, report.passed, time.perf_counter() - start)


def gradcheck_suite(tol=GRADCHECK_TOL, seed=1):
    return [gradcheck_variant(v, tol, seed) for v in vae.VARIANTS]


# -- KL divergences ------------------------------------------------------------


def _kl_error(closed, samples_log_ratio, rel_tol):
    mc = float(np.mean(samples_log_ratio))
    err = abs(closed - mc)
    allowed = max(rel_tol * abs(mc), KL_ABS_TOL)
    return err / allowed


def _settings_multigamma(rng):
    return rng.uniform(0.5, 3.0, size=3), rng.uniform(0.5, 3.0, size=3)


def kl_multigamma_error(alpha_hat, alpha, rng, n_draws=KL_DRAWS):
    closed = float(dist.kl_multigamma(alpha_hat, alpha).value)
    log_v = np.log(dist.exact_gamma_sample(alpha_hat, rng=rng, size=(n_draws, alpha_hat.size)))
    ratio = dist.gamma_log_pdf(log_v, alpha_hat) - dist.gamma_log_pdf(log_v, alpha)
    return closed, _kl_error(closed, ratio, KL_REL_TOL)


def kl_gaussian_error(mu, log_var, rng, n_draws=KL_DRAWS):
    closed = float(dist.kl_gaussian_standard(mu, log_var).value)
    z = mu + np.exp(0.5 * log_var) * rng.standard_normal((n_draws, mu.size))
    zeros = np.zeros_like(mu)
    ratio = dist.gaussian_log_pdf(z, mu, log_var) - dist.gaussian_log_pdf(z, zeros, zeros)
    return closed, _kl_error(closed, ratio, KL_REL_TOL)


def kl_weibull_error(k, lam, alpha, beta, rng, n_draws=KL_DRAWS):
    closed = float(dist.kl_weibull_gamma(k, lam, alpha, beta).value)
    # Weibull inverse CDF is exact
    log_v = dist.weibull_log_reparam(k, lam, rng.uniform(size=(n_draws, 1))).value
    ratio = dist.weibull_log_pdf(log_v, k, lam) - dist.gamma_log_pdf(log_v, alpha, beta)
    return closed, _kl_error(closed, ratio, KL_REL_TOL)


def kl_kumaraswamy_error(a, b, prior_beta, rng, n_draws=KL_DRAWS):
    closed = float(dist.kl_kumaraswamy_beta(np.array([a]), np.array([b]), 1.0, prior_beta).value)
    u = dist.clamp_uniform(rng.uniform(size=(n_draws, 1)))
    s = (1.0 - (1.0 - u) ** (1.0 / b)) ** (1.0 / a)
    s = np.clip(s, 1e-300, dist.STICK_MAX)
    ratio = dist.kumaraswamy_log_pdf(s, a, b) - dist.beta_log_pdf(s, 1.0, prior_beta)
    return closed, _kl_error(closed, ratio, KL_REL_TOL_TRUNCATED)


def klcheck_suite(n_draws=KL_DRAWS, n_settings=KL_SETTINGS, seed=0):
    """One result per KL family; ``measured`` is the worst error as a fraction of its allowance.

    A family passes when every setting is within max(rel_tol * |MC|, 0.005),
    every closed form is >= 0, and the matched-distribution KL is 0.
    """
    rng = np.random.default_rng(seed)
    families = {
        "kl_multigamma": (
            lambda: kl_multigamma_error(*_settings_multigamma(rng), rng, n_draws),
            lambda: float(dist.kl_multigamma(np.array([0.7, 2.0]), np.array([0.7, 2.0])).value),
        ),
        "kl_gaussian_standard": (
            lambda: kl_gaussian_error(rng.uniform(-2, 2, 3), rng.uniform(-1.5, 1.5, 3), rng, n_draws),
            lambda: float(dist.kl_gaussian_standard(np.zeros(3), np.zeros(3)).value),
        ),
        "kl_weibull_gamma": (
            lambda: kl_weibull_error(*rng.uniform(0.5, 3.0, 2), *rng.uniform(0.5, 3.0, 2), rng, n_draws),
            # Weibull(1, 1/beta) is Gamma(1, beta)
            lambda: float(dist.kl_weibull_gamma(1.0, 0.5, 1.0, 2.0).value),
        ),
        "kl_kumaraswamy_beta": (
            lambda: kl_kumaraswamy_error(*rng.uniform(0.5, 3.0, 2), 5.0, rng, n_draws),
            # Kumaraswamy(1, b) is Beta(1, b)
            lambda: float(dist.kl_kumaraswamy_beta(np.array([1.0]), np.array([5.0]), 1.0, 5.0).value),
        ),
    }
    results = []
    for name, (one_setting, matched) in families.items():
        start = time.perf_counter()
        worst, nonneg = 0.0, True
        for _ in range(n_settings):
            closed, err = one_setting()
            worst = max(worst, err)
            nonneg &= closed >= 0.0
        at_match = abs(matched())
        passed = worst <= 1.0 and nonneg and at_match <= MATCHED_TOL.get(name, 1e-12)
        results.append(CheckResult(name, worst, 1.0, passed, time.perf_counter() - start))
    return results
