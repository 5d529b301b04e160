"""MLP encoder/decoder, posterior heads and the per-batch ELBO loss for each variant.

Variants differ only in the posterior head, the sampler and the KL term;
encoder and decoder trunks have identical shapes for a fixed
:class:`ArchitectureConfig`. The decoder emits Bernoulli logits.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import container
from . import distributions as dist

VARIANTS = ("dirvae", "gvae", "gvae-softmax", "sbvae", "dirvae-weibull")
SIMPLEX_VARIANTS = ("dirvae", "gvae-softmax", "sbvae", "dirvae-weibull")
POSITIVE_FLOOR = 1e-4

_HEADS = {
    "dirvae": ("alpha",),
    "gvae": ("mu", "logvar"),
    "gvae-softmax": ("mu", "logvar"),
    "sbvae": ("a", "b"),
    "dirvae-weibull": ("k", "lam"),
}


class CheckpointError(ValueError):
    category = "checkpoint"


@dataclass
class ArchitectureConfig:
    input_dim: int
    latent_dim: int
    variant: str = "dirvae"
    encoder_hidden: tuple = (500, 500)
    decoder_hidden: tuple = (500,)

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ValueError("input_dim and latent_dim must be positive")
        if self.variant in SIMPLEX_VARIANTS and self.latent_dim < 2:
            raise ValueError(f"{self.variant} needs latent_dim >= 2")

    @property
    def head_dim(self):
        return self.latent_dim - 1 if self.variant == "sbvae" else self.latent_dim


@dataclass
class VaeModel:
    config: ArchitectureConfig
    prior: object
    params: dict = field(default_factory=dict)


def default_prior(variant, latent_dim, alpha=None, gem_concentration=5.0):
    """Prior for a variant; Dirichlet variants default to alpha_k = 1 - 1/K."""
    if variant in ("dirvae", "dirvae-weibull"):
        value = dist.unit_variance_alpha(latent_dim) if alpha is None else alpha
        return dist.DirichletPrior(np.full(latent_dim, float(value)))
    if variant in ("gvae", "gvae-softmax"):
        return dist.StandardGaussianPrior(latent_dim)
    if variant == "sbvae":
        return dist.GEMPrior(gem_concentration)
    raise ValueError(f"unknown variant {variant!r}")


def parameter_shapes(config):
    """Ordered {name: shape} for every weight and bias."""
    shapes = {}
    width = config.input_dim
    for i, h in enumerate(config.encoder_hidden):
        shapes[f"enc{i}.W"] = (width, h)
        shapes[f"enc{i}.b"] = (h,)
        width = h
    for head in _HEADS[config.variant]:
        shapes[f"head_{head}.W"] = (width, config.head_dim)
        shapes[f"head_{head}.b"] = (config.head_dim,)
    width = config.latent_dim
    for i, h in enumerate(config.decoder_hidden + (config.input_dim,)):
        shapes[f"dec{i}.W"] = (width, h)
        shapes[f"dec{i}.b"] = (h,)
        width = h
    return shapes


def xavier_init(fan_in, fan_out, rng):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_model(config, prior, rng):
    params = {}
    for name, shape in parameter_shapes(config).items():
        params[name] = xavier_init(*shape, rng) if len(shape) == 2 else np.zeros(shape)
    return VaeModel(config, prior, params)


def bind(model, tape):
    """Register every model parameter on ``tape``; returns {name: Tensor}."""
    return {name: tape.param(name, value) for name, value in model.params.items()}


def _weights(model, params):
    return model.params if params is None else params


def _dense(h, params, prefix):
    return ad.add_bias(ad.matmul(h, params[prefix + ".W"]), params[prefix + ".b"])


def _positive_head(h, params, head):
    return ad.softplus(_dense(h, params, f"head_{head}")) + POSITIVE_FLOOR


def encode(model, x, params=None):
    """Posterior parameters for a (B, D) batch."""
    cfg = model.config
    params = _weights(model, params)
    x = ad.as_tensor(x)
    if x.value.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ad.ShapeError(f"encode: expected (B, {cfg.input_dim}) input, got {x.shape}")
    h = x
    for i in range(len(cfg.encoder_hidden)):
        h = ad.relu(_dense(h, params, f"enc{i}"))
    v = cfg.variant
    if v == "dirvae":
        return dist.DirichletAlphaHat(_positive_head(h, params, "alpha"))
    if v in ("gvae", "gvae-softmax"):
        return dist.GaussianMoments(_dense(h, params, "head_mu"), _dense(h, params, "head_logvar"))
    if v == "sbvae":
        return dist.Kumaraswamy(_positive_head(h, params, "a"), _positive_head(h, params, "b"))
    return dist.WeibullShapeScale(_positive_head(h, params, "k"), _positive_head(h, params, "lam"))


def decode(model, z, params=None):
    """Bernoulli logits (B, D); the softmax variant squashes z first."""
    cfg = model.config
    params = _weights(model, params)
    z = ad.as_tensor(z)
    if z.value.ndim != 2 or z.shape[1] != cfg.latent_dim:
        raise ad.ShapeError(f"decode: expected (B, {cfg.latent_dim}) latents, got {z.shape}")
    h = ad.softmax_rows(z) if cfg.variant == "gvae-softmax" else z
    n = len(cfg.decoder_hidden)
    for i in range(n):
        h = ad.relu(_dense(h, params, f"dec{i}"))
    return _dense(h, params, f"dec{n}")


def reconstruction_probs(model, z):
    return ad.sigmoid(decode(model, z)).value


def draw_noise(model, batch_size, rng):
    """Parameter-free noise for one latent draw per instance."""
    cfg = model.config
    shape = (batch_size, cfg.head_dim)
    if cfg.variant in ("gvae", "gvae-softmax"):
        return rng.standard_normal(shape)
    return rng.uniform(size=shape)


@dataclass
class LatentDraw:
    z: ad.Tensor  # decoder input
    aux: ad.Tensor  # log z (dirvae), s (sbvae), log v (weibull), z (gaussian)


def sample_latent(model, post, noise):
    v = model.config.variant
    if v == "dirvae":
        draw = dist.sample_dirichlet_reparam(post.alpha_hat, u=noise)
        return LatentDraw(draw.z, draw.log_z)
    if v in ("gvae", "gvae-softmax"):
        z = dist.gaussian_reparam(post.mu_hat, post.log_var_hat, eps=noise)
        return LatentDraw(z, z)
    if v == "sbvae":
        draw = dist.stick_breaking_reparam(post.a, post.b, u=noise)
        return LatentDraw(draw.pi, draw.fractions)
    log_v = dist.weibull_log_reparam(post.k, post.lam, noise)
    return LatentDraw(ad.softmax_rows(log_v), log_v)


def kl_divergence(model, post):
    """Per-instance KL(q || p), shape (B,)."""
    v = model.config.variant
    prior = model.prior
    if v == "dirvae":
        return dist.kl_multigamma(post.alpha_hat, prior.alpha)
    if v in ("gvae", "gvae-softmax"):
        return dist.kl_gaussian_standard(post.mu_hat, post.log_var_hat)
    if v == "sbvae":
        return dist.kl_kumaraswamy_beta(post.a, post.b, 1.0, prior.concentration)
    return ad.sum(dist.kl_weibull_gamma(post.k, post.lam, prior.alpha, prior.beta), axis=-1)


def log_prior_ratio(model, post, draw):
    """ln p(z) - ln q(z | x) per instance, evaluated in numpy."""
    v = model.config.variant
    prior = model.prior
    aux = draw.aux.value
    if v == "dirvae":
        return dist.dirichlet_log_pdf(aux, prior.alpha) - dist.dirichlet_log_pdf(aux, post.alpha_hat.value)
    if v in ("gvae", "gvae-softmax"):
        zeros = np.zeros_like(aux)
        return dist.gaussian_log_pdf(aux, zeros, zeros) - dist.gaussian_log_pdf(
            aux, post.mu_hat.value, post.log_var_hat.value
        )
    if v == "sbvae":
        return dist.beta_log_pdf(aux, 1.0, prior.concentration) - dist.kumaraswamy_log_pdf(
            aux, post.a.value, post.b.value
        )
    return dist.gamma_log_pdf(aux, prior.alpha, prior.beta) - dist.weibull_log_pdf(
        aux, post.k.value, post.lam.value
    )


def bernoulli_nll(logits, x):
    """Per-instance -sum_d ln Bern(x_d | sigmoid(logit_d)), shape (B,)."""
    return ad.sum(ad.softplus(logits) - ad.as_tensor(x) * logits, axis=1)


@dataclass
class ElboResult:
    loss: ad.Tensor
    recon: float
    kl: float
    z: np.ndarray
    recon_per_instance: np.ndarray
    kl_per_instance: np.ndarray


def elbo_loss(model, x, rng=None, noise=None, params=None):
    """Negative ELBO averaged over the batch, one latent sample per instance."""
    x = np.asarray(x, dtype=np.float64)
    if noise is None:
        noise = draw_noise(model, x.shape[0], rng)
    post = encode(model, x, params)
    draw = sample_latent(model, post, noise)
    recon = bernoulli_nll(decode(model, draw.z, params), x)
    kl = kl_divergence(model, post)
    loss = ad.mean(recon + kl)
    return ElboResult(
        loss=loss,
        recon=float(recon.value.mean()),
        kl=float(kl.value.mean()),
        z=draw.z.value,
        recon_per_instance=recon.value,
        kl_per_instance=kl.value,
    )


# -- persistence -------------------------------------------------------------


def _prior_header(prior):
    if isinstance(prior, dist.DirichletPrior):
        return {"type": "dirichlet", "beta": prior.beta}, {"prior/alpha": prior.alpha}
    if isinstance(prior, dist.StandardGaussianPrior):
        return {"type": "standard_gaussian", "dim": prior.dim}, {}
    return {"type": "gem", "concentration": prior.concentration}, {}


def _prior_from(header, tensors):
    kind = header["type"]
    if kind == "dirichlet":
        return dist.DirichletPrior(tensors["prior/alpha"], header["beta"])
    if kind == "standard_gaussian":
        return dist.StandardGaussianPrior(header["dim"])
    if kind == "gem":
        return dist.GEMPrior(header["concentration"])
    raise CheckpointError(f"unknown prior type {kind!r}")


def checkpoint_bytes(model, extra=None):
    prior_head, prior_tensors = _prior_header(model.prior)
    cfg = asdict(model.config)
    cfg["encoder_hidden"] = list(cfg["encoder_hidden"])
    cfg["decoder_hidden"] = list(cfg["decoder_hidden"])
    header = {"kind": "vae_model", "config": cfg, "variant": model.config.variant, "prior": prior_head}
    if extra:
        header["extra"] = extra
    return container.dumps(header, {**model.params, **prior_tensors})


def save_checkpoint(path, model, extra=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, extra))


def load_checkpoint(path):
    """Returns (model, extra). Rejects wrong kind, version or tensor shapes."""
    header, tensors = container.load(path)
    if header.get("kind") != "vae_model":
        raise CheckpointError(f"{path}: not a model checkpoint")
    try:
        config = ArchitectureConfig(**header["config"])
        prior = _prior_from(header["prior"], tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header: {exc}") from None
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
        params[name] = tensors[name]
    return VaeModel(config, prior, params), header.get("extra", {})
