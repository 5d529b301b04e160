"""Adam training loop with global-norm clipping and optional MME prior learning."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as vae
from .model import xavier_init  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

ALPHA_BOUNDS = (1e-3, 1e3)
EPOCH_LOG_HEADER = ("epoch", "loss", "recon", "kl", "alpha_min", "alpha_max")


class TrainingError(RuntimeError):
    category = "training"


def default_learning_rate(variant):
    return 3e-4 if variant == "sbvae" else 5e-4


@dataclass
class MmeSchedule:
    burn_in_fraction: float = 0.5
    alternate_fraction: float = 0.3
    fixed_fraction: float = 0.2
    update_every: int = 1

    def __post_init__(self):
        fr = (self.burn_in_fraction, self.alternate_fraction, self.fixed_fraction)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"MME phase fractions must be >= 0 and sum to 1, got {fr}")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")

    def phase_bounds(self, epochs):
        """(first alternate epoch, first fixed epoch), 0-based."""
        burn = int(round(self.burn_in_fraction * epochs))
        alt = int(round(self.alternate_fraction * epochs))
        return burn, min(epochs, burn + alt)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 100
    epochs: int = 30
    clip_norm: float = 5.0
    seed: int = 0
    mme: MmeSchedule = None


@dataclass
class MmeState:
    buffer: list = field(default_factory=list)
    mu1: np.ndarray = None
    mu2: np.ndarray = None
    concentration: float = None


class RunStreams:
    """Independent generators per purpose, all derived from one seed."""

    PURPOSES = ("init", "sample", "shuffle", "eval")

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(len(self.PURPOSES))
        for purpose, child in zip(self.PURPOSES, children):
            setattr(self, purpose, np.random.default_rng(child))


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update; returns a new parameter dict."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads, clip_norm):
    if not clip_norm > 0:
        raise ValueError("clip_norm must be > 0")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


def mme_update(samples, K=None, state=None):
    """Method-of-moments Dirichlet concentration from simplex samples.

    Returns the new alpha, or None when the buffer is degenerate (a per-dimension
    variance at or below 1e-10), in which case the caller keeps its alpha.
    """
    p = np.asarray(samples, dtype=np.float64)
    if p.ndim != 2 or (K is not None and p.shape[1] != K):
        raise ValueError(f"expected (N, {K}) samples, got {p.shape}")
    if p.shape[0] < 100:
        raise ValueError(f"MME needs at least 100 samples, got {p.shape[0]}")
    mu1 = p.mean(axis=0)
    mu2 = (p * p).mean(axis=0)
    denom = mu2 - mu1 * mu1
    if np.any(denom <= 1e-10):
        log.warning("MME update skipped: degenerate sample variance (min %.3g)", denom.min())
        return None
    s = float(np.mean((mu1 - mu2) / denom))
    if state is not None:
        state.mu1, state.mu2, state.concentration = mu1, mu2, s
    return np.clip(s * mu1, *ALPHA_BOUNDS)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recon: float
    kl: float
    alpha_min: float
    alpha_max: float

    def row(self):
        return [str(self.epoch)] + [f"{x:.9g}" for x in (self.loss, self.recon, self.kl, self.alpha_min, self.alpha_max)]


def _alpha_range(model):
    alpha = getattr(model.prior, "alpha", None)
    if alpha is None:
        return float("nan"), float("nan")
    return float(alpha.min()), float(alpha.max())


def train(model, data, config, streams=None):
    """Optimize ``model`` in place on the rows of ``data``; returns the epoch log."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a nonempty (N, D) matrix")
    if config.mme is not None and model.config.variant != "dirvae":
        raise ValueError("MME prior learning applies to the dirvae variant only")
    streams = streams or RunStreams(config.seed)
    adam = AdamState(model.params)
    mme_state = MmeState()
    alt_start, fixed_start = config.mme.phase_bounds(config.epochs) if config.mme else (None, None)
    n = data.shape[0]
    history = []
    for epoch in range(config.epochs):
        alternate = config.mme is not None and alt_start <= epoch < fixed_start
        mme_state.buffer = []
        order = streams.shuffle.permutation(n)
        sums = np.zeros(3)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            x = data[order[start : start + config.batch_size]]
            tape = ad.Tape()
            try:
                res = vae.elbo_loss(model, x, rng=streams.sample, params=vae.bind(model, tape))
                grads = tape.backward(res.loss)
            except (ad.NonFiniteError, ad.DomainError) as exc:
                raise TrainingError(f"epoch {epoch + 1}, batch {batch_index}: {exc}") from exc
            grads = clip_global_norm(grads, config.clip_norm)
            model.params = adam_step(model.params, grads, adam, config.learning_rate)
            if any(not np.all(np.isfinite(p)) for p in model.params.values()):
                raise TrainingError(f"epoch {epoch + 1}, batch {batch_index}: non-finite parameters after update")
            sums += np.array([res.loss.item(), res.recon, res.kl]) * x.shape[0]
            if alternate:
                mme_state.buffer.append(res.z)
        if alternate and (epoch - alt_start + 1) % config.mme.update_every == 0:
            alpha = mme_update(np.concatenate(mme_state.buffer), model.config.latent_dim, mme_state)
            if alpha is not None:
                model.prior.alpha = alpha
        loss, recon, kl = sums / n
        history.append(EpochRecord(epoch + 1, loss, recon, kl, *_alpha_range(model)))
        log.info("epoch %d loss %.4f recon %.4f kl %.4f", epoch + 1, loss, recon, kl)
    return history


def write_epoch_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_LOG_HEADER)
        for rec in history:
            w.writerow(rec.row())
