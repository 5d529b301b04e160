"""Desk-scale MNIST comparison across variants and seeds."""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data
from . import evaluation as ev
from . import model as vae
from . import training

DESK_LATENT_DIM = 20
DESK_EPOCHS = 30
DESK_SEEDS = (1, 2, 3)
DESK_VARIANTS = ("dirvae", "gvae-softmax", "gvae", "sbvae")
SPLIT_SEED = 0
KNN_KS = (3, 5, 10)


@dataclass
class DeskRun:
    variant: str
    seed: int
    losses: list
    knn_error: dict
    collapsed_weight_dims: int
    collapsed_value_dims: int
    fisher_kurtosis: float
    skewness: float
    seconds: float
    weight_norms: list = field(default_factory=list)
    latent_mean: list = field(default_factory=list)

    def row(self):
        d = asdict(self)
        for k, v in d.pop("knn_error").items():
            d[f"knn{k}"] = v
        return d


def trailing_moving_average(values, window=10):
    """Mean of the last ``window`` values at each position (shorter at the start)."""
    v = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


def desk_split(root=None, split_seed=SPLIT_SEED):
    train, _, test = data.make_split(data.load_mnist(root), data.DESK_SIZES, split_seed)
    return train, test


def run_one(variant, seed, train_set, test_set, epochs=DESK_EPOCHS, latent_dim=DESK_LATENT_DIM, hidden=None):
    arch = {} if hidden is None else {"encoder_hidden": (hidden, hidden), "decoder_hidden": (hidden,)}
    cfg = vae.ArchitectureConfig(train_set.images.shape[1], latent_dim, variant, **arch)
    streams = training.RunStreams(seed)
    model = vae.init_model(cfg, vae.default_prior(variant, latent_dim), streams.init)
    tc = training.TrainConfig(learning_rate=training.default_learning_rate(variant), epochs=epochs, seed=seed)
    start = time.perf_counter()
    history = training.train(model, train_set.images, tc, streams)
    seconds = time.perf_counter() - start
    f_train = ev.posterior_means(model, train_set.images, streams.eval)
    f_test = ev.posterior_means(model, test_set.images, streams.eval)
    knn = {k: ev.knn_classify(f_train, train_set.labels, f_test, test_set.labels, k) for k in KNN_KS}
    diag = ev.diagnose(model, test_set.images, streams.eval)
    return DeskRun(
        variant=variant,
        seed=seed,
        losses=[float(r.loss) for r in history],
        knn_error=knn,
        collapsed_weight_dims=diag.collapsed_weight_dims,
        collapsed_value_dims=diag.collapsed_value_dims,
        fisher_kurtosis=diag.fisher_kurtosis,
        skewness=diag.skewness,
        seconds=seconds,
        weight_norms=diag.decoder_weight_norms.tolist(),
        latent_mean=diag.latent_mean.tolist(),
    )


def median_over_seeds(runs, variant, key):
    vals = [getattr(r, key) if key != "knn5" else r.knn_error[5] for r in runs if r.variant == variant]
    return float(np.median(vals))
