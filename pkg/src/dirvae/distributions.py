"""Priors, posteriors, reparameterized samplers and closed-form KL divergences.

Sampler and KL functions take tensors or arrays and return
:class:`~dirvae.autodiff.Tensor` results, so the same code runs on a tape
during training and tape-free during evaluation. Uniform and Gaussian noise
are plain arrays (constants on the tape): only the pathwise derivative flows.

The ``exact_*`` samplers are independent Marsaglia-Tsang draws used as
oracles; nothing in training depends on them.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .special import EULER_GAMMA, digamma, ln_gamma

U_MIN = 1e-6
STICK_MAX = 1.0 - 1e-12
KUMARASWAMY_TERMS = 10


# -- prior / posterior containers ------------------------------------------


@dataclass
class DirichletPrior:
    alpha: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1 or np.any(self.alpha <= 0):
            raise ValueError("Dirichlet alpha must be a positive vector")
        if self.beta != 1.0:
            raise ValueError("the Gamma composition uses a shared rate beta = 1")


@dataclass
class StandardGaussianPrior:
    dim: int


@dataclass
class GEMPrior:
    concentration: float = 5.0

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("GEM concentration must be > 0")


@dataclass
class DirichletAlphaHat:
    alpha_hat: ad.Tensor


@dataclass
class GaussianMoments:
    mu_hat: ad.Tensor
    log_var_hat: ad.Tensor


@dataclass
class Kumaraswamy:
    a: ad.Tensor
    b: ad.Tensor


@dataclass
class WeibullShapeScale:
    k: ad.Tensor
    lam: ad.Tensor


def clamp_uniform(u):
    return np.clip(np.asarray(u, dtype=np.float64), U_MIN, 1.0 - U_MIN)


# -- inverse-Gamma-CDF approximation and the Dirichlet composition ---------


def gamma_icdf_approx(u, alpha, beta=1.0):
    """Approximate Gamma(alpha, beta) quantile: (u * alpha * Gamma(alpha))**(1/alpha) / beta.

    Evaluated as exp((ln u + ln Gamma(alpha + 1)) / alpha) / beta, using
    alpha * Gamma(alpha) = Gamma(alpha + 1). Accurate for small alpha only.
    """
    alpha = ad.as_tensor(alpha)
    log_u = np.log(clamp_uniform(u))
    log_v = (log_u + ad.ln_gamma(alpha + 1.0)) / alpha
    return ad.exp(log_v) / beta


@dataclass
class DirichletDraw:
    z: ad.Tensor
    log_v: ad.Tensor

    @property
    def v(self):
        return ad.exp(self.log_v)

    @property
    def log_z(self):
        return ad.log_softmax_rows(self.log_v)


def sample_dirichlet_reparam(alpha_hat, rng=None, u=None):
    """Draw z ~ approx Dirichlet(alpha_hat) by normalizing approximate Gamma draws.

    Normalization happens in the log domain (softmax of ln v), which is the
    same simplex point as v / sum(v) but survives underflow of v for tiny
    alpha_hat.
    """
    alpha_hat = ad.as_tensor(alpha_hat)
    if u is None:
        u = rng.uniform(size=alpha_hat.shape)
    log_u = np.log(clamp_uniform(u))
    log_v = (log_u + ad.ln_gamma(alpha_hat + 1.0)) / alpha_hat
    return DirichletDraw(ad.softmax_rows(log_v), log_v)


def kl_multigamma(alpha_hat, alpha):
    """KL(MultiGamma(alpha_hat, 1) || MultiGamma(alpha, 1)), summed over the last axis."""
    alpha_hat = ad.as_tensor(alpha_hat)
    alpha = np.asarray(alpha, dtype=np.float64)
    terms = ln_gamma(alpha) - ad.ln_gamma(alpha_hat) + (alpha_hat - alpha) * ad.digamma(alpha_hat)
    return ad.sum(terms, axis=-1)


# -- Gaussian family -------------------------------------------------------


def gaussian_reparam(mu_hat, log_var_hat, rng=None, eps=None):
    mu_hat = ad.as_tensor(mu_hat)
    if eps is None:
        eps = rng.standard_normal(mu_hat.shape)
    return mu_hat + ad.exp(ad.as_tensor(log_var_hat) * 0.5) * eps


def kl_gaussian_standard(mu_hat, log_var_hat):
    mu_hat, log_var_hat = ad.as_tensor(mu_hat), ad.as_tensor(log_var_hat)
    terms = ad.exp(log_var_hat) + mu_hat * mu_hat - 1.0 - log_var_hat
    return ad.sum(terms, axis=-1) * 0.5


def softmax_gaussian_map(alpha):
    """Laplace-approximation moments (mu, diagonal Sigma) matching Dirichlet(alpha)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ad.DomainError("softmax_gaussian_map: alpha must be > 0")
    K = alpha.shape[-1]
    log_a = np.log(alpha)
    mu = log_a - log_a.mean(axis=-1, keepdims=True)
    sigma = (1.0 / alpha) * (1.0 - 2.0 / K) + np.sum(1.0 / alpha, axis=-1, keepdims=True) / K**2
    return mu, sigma


def unit_variance_alpha(K):
    """Symmetric alpha whose softmax-Gaussian match is mu = 0, Sigma = 1."""
    if K < 2:
        raise ValueError("need K >= 2")
    return 1.0 - 1.0 / K


# -- Weibull approximation to Gamma ----------------------------------------


def weibull_log_reparam(k, lam, u):
    """ln of lam * (-ln(1 - u))**(1/k)."""
    k, lam = ad.as_tensor(k), ad.as_tensor(lam)
    u = clamp_uniform(u)
    return ad.log(lam) + np.log(-np.log1p(-u)) / k


def weibull_reparam(k, lam, u):
    return ad.exp(weibull_log_reparam(k, lam, u))


def kl_weibull_gamma(k, lam, alpha, beta=1.0):
    """Elementwise KL(Weibull(k, lam) || Gamma(alpha, beta))."""
    k, lam = ad.as_tensor(k), ad.as_tensor(lam)
    alpha = np.asarray(alpha, dtype=np.float64)
    # Gamma(1 + 1/k) via its log keeps the op set closed
    gamma_term = ad.exp(ad.ln_gamma(1.0 / k + 1.0))
    return (
        EULER_GAMMA * alpha / k
        - alpha * ad.log(lam)
        + ad.log(k)
        + beta * lam * gamma_term
        - EULER_GAMMA
        - 1.0
        - alpha * np.log(beta)
        + ln_gamma(alpha)
    )


# -- stick breaking with Kumaraswamy sticks --------------------------------


@dataclass
class StickDraw:
    pi: ad.Tensor
    fractions: ad.Tensor


def _stick_matrices(n_sticks):
    K = n_sticks + 1
    pad = np.eye(n_sticks, K)
    last = np.zeros(K)
    last[-1] = 1.0
    # strictly-before-j cumulative sum: column j sums sticks i < j
    before = np.triu(np.ones((n_sticks, K)), k=1)
    return pad, last, before


def stick_breaking_reparam(a, b, rng=None, u=None):
    """Kumaraswamy stick fractions and the K = len(a) + 1 proportions they break off."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    vector = a.value.ndim == 1
    if vector:
        a, b = ad.reshape(a, (1, -1)), ad.reshape(b, (1, -1))
    if u is None:
        u = rng.uniform(size=a.shape)
    u = np.reshape(clamp_uniform(u), a.shape)
    # s = (1 - (1 - u)^(1/b))^(1/a)
    inner = 1.0 - ad.exp(np.log1p(-u) / b)
    s = ad.clip(ad.exp(ad.log(inner) / a), 0.0, STICK_MAX)
    pad, last, before = _stick_matrices(a.shape[1])
    remaining = ad.exp(ad.log(1.0 - s) @ before)
    pi = (s @ pad + last) * remaining
    if vector:
        pi, s = ad.reshape(pi, (-1,)), ad.reshape(s, (-1,))
    return StickDraw(pi, s)


def _ln_beta_fn(x, y):
    return ad.ln_gamma(x) + ad.ln_gamma(y) - ad.ln_gamma(x + y)


def kl_kumaraswamy_beta(a, b, prior_alpha=1.0, prior_beta=5.0, n_terms=KUMARASWAMY_TERMS, tail=True):
    """KL(Kumaraswamy(a, b) || Beta(prior_alpha, prior_beta)) summed over sticks.

    The E[ln(1 - v)] series is truncated at ``n_terms``. With ``tail`` the
    remainder sum_{m > n} B(m/a, b) / (m + ab) is added in its asymptotic
    form Gamma(b) a^b (n + 1/2 + ab/2)^(-b) / b; without it the truncation
    error reaches tens of percent when b < 1.
    """
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    ab = a * b
    # all n_terms terms at once: flatten sticks to a column, terms along rows
    shape = a.shape
    col_a, col_b = ad.reshape(a, (-1, 1)), ad.reshape(b, (-1, 1))
    m = np.arange(1.0, n_terms + 1.0)[None, :]
    m_over_a = m / col_a
    ln_b_terms = ad.ln_gamma(m_over_a) + ad.ln_gamma(col_b) - ad.ln_gamma(m_over_a + col_b)
    terms = ad.exp(ln_b_terms) / (col_a * col_b + m)
    series = ad.reshape(ad.sum(terms, axis=1), shape)
    if tail:
        log_tail = ad.ln_gamma(b) + b * ad.log(a) - b * ad.log(ab * 0.5 + (n_terms + 0.5))
        series = series + ad.exp(log_tail) / b
    ln_beta_prior = float(ln_gamma(prior_alpha) + ln_gamma(prior_beta) - ln_gamma(prior_alpha + prior_beta))
    kl = (
        (a - prior_alpha) / a * (-EULER_GAMMA - ad.digamma(b) - 1.0 / b)
        + ad.log(ab)
        + ln_beta_prior
        - (b - 1.0) / b
        + (prior_beta - 1.0) * b * series
    )
    return ad.sum(kl, axis=-1)


def expected_stick_proportions(a, b):
    """E[pi] under independent Kumaraswamy sticks (numpy, no tape)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    # E[s] = b * B(1 + 1/a, b)
    mean_s = np.exp(np.log(b) + ln_gamma(1.0 + 1.0 / a) + ln_gamma(b) - ln_gamma(1.0 + 1.0 / a + b))
    keep = np.cumprod(1.0 - mean_s, axis=-1)
    ones = np.ones(mean_s.shape[:-1] + (1,))
    return np.concatenate([mean_s, ones], axis=-1) * np.concatenate([ones, keep], axis=-1)


# -- exact oracle samplers --------------------------------------------------


def _log_gamma_variates(alpha, rng):
    """ln of Gamma(alpha, 1) draws, Marsaglia-Tsang with the alpha < 1 boost."""
    alpha = np.asarray(alpha, dtype=np.float64)
    flat = alpha.reshape(-1)
    boost = flat < 1.0
    shape_param = np.where(boost, flat + 1.0, flat)
    d = shape_param - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(flat)
    pending = np.arange(flat.size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.uniform(size=pending.size)
        dp, cp = d[pending], c[pending]
        v = (1.0 + cp * x) ** 3
        positive = v > 0
        log_v = np.log(np.where(positive, v, 1.0))
        squeeze = u < 1.0 - 0.0331 * x**4
        full = np.log(u) < 0.5 * x * x + dp - dp * v + dp * log_v
        ok = positive & (squeeze | full)
        out[pending[ok]] = np.log(dp[ok]) + log_v[ok]
        pending = pending[~ok]
    if boost.any():
        u = rng.uniform(size=int(boost.sum()))
        out[boost] += np.log(u) / flat[boost]
    return out.reshape(alpha.shape)


def exact_gamma_sample(alpha, beta=1.0, rng=None, size=None):
    if rng is None:
        raise ValueError("an explicit rng is required")
    alpha = np.asarray(alpha, dtype=np.float64)
    if size is not None:
        alpha = np.broadcast_to(alpha, size)
    return np.exp(_log_gamma_variates(alpha, rng)) / beta


def exact_dirichlet_sample(alpha, rng=None, size=None):
    """Dirichlet draws as normalized exact Gammas; rows are samples."""
    if rng is None:
        raise ValueError("an explicit rng is required")
    alpha = np.asarray(alpha, dtype=np.float64)
    shape = alpha.shape if size is None else (size,) + alpha.shape
    logs = _log_gamma_variates(np.broadcast_to(alpha, shape), rng)
    logs -= logs.max(axis=-1, keepdims=True)
    w = np.exp(logs)
    return w / w.sum(axis=-1, keepdims=True)


# -- log densities (numpy, evaluation only) --------------------------------


def dirichlet_log_pdf(log_z, alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    norm = ln_gamma(alpha.sum(axis=-1)) - np.sum(ln_gamma(alpha), axis=-1)
    return norm + np.sum((alpha - 1.0) * log_z, axis=-1)


def gaussian_log_pdf(z, mu, log_var):
    return -0.5 * np.sum(np.log(2 * np.pi) + log_var + (z - mu) ** 2 / np.exp(log_var), axis=-1)


def gamma_log_pdf(log_v, alpha, beta=1.0):
    return np.sum(alpha * np.log(beta) - ln_gamma(alpha) + (alpha - 1.0) * log_v - beta * np.exp(log_v), axis=-1)


def weibull_log_pdf(log_v, k, lam):
    log_ratio = log_v - np.log(lam)
    return np.sum(np.log(k) - np.log(lam) + (k - 1.0) * log_ratio - np.exp(k * log_ratio), axis=-1)


def kumaraswamy_log_pdf(s, a, b):
    return np.sum(np.log(a * b) + (a - 1.0) * np.log(s) + (b - 1.0) * np.log1p(-(s**a)), axis=-1)


def beta_log_pdf(s, alpha, beta):
    norm = ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta)
    return np.sum(norm + (alpha - 1.0) * np.log(s) + (beta - 1.0) * np.log1p(-s), axis=-1)
