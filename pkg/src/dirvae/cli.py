"""Command-line entry point: train, eval, diagnose, knn, gradcheck, klcheck.

Settings resolve as dataclass defaults, then a ``--config`` key=value file,
then explicit flags. Every command writes the resolved settings next to its
outputs so a run can be replayed with ``--config``. Failures print one line
``error[<category>]: <message>`` to stderr and exit nonzero.
"""

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checks, data
from . import distributions as dist
from . import evaluation as ev
from . import model as vae
from . import training

log = logging.getLogger("dirvae")

EXIT_FAILED_CHECK = 1
EXIT_USAGE = 2
EXIT_ERROR = 3


class ConfigError(ValueError):
    category = "config"


class DimensionMismatchError(ValueError):
    category = "dim-mismatch"


@dataclass
class RunConfig:
    variant: str = "dirvae"
    dataset: str = "mnist"
    split: str = "desk"
    split_seed: int = 0
    bars_side: int = 8
    bars_n: int = 2000
    latent_dim: int = 50
    encoder_hidden: tuple = (500, 500)
    decoder_hidden: tuple = (500,)
    epochs: int = 30
    learning_rate: float = None
    batch_size: int = 100
    clip_norm: float = 5.0
    seed: int = 0
    alpha: float = None
    gem_concentration: float = 5.0
    mme: bool = False
    mme_burn_in: float = 0.5
    mme_alternate: float = 0.3
    mme_fixed: float = 0.2
    mme_update_every: int = 1
    out: str = "runs/latest"

    def resolved(self):
        """Copy with variant-dependent defaults filled in and values checked."""
        if self.variant not in vae.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(vae.VARIANTS)}")
        if self.dataset not in ("mnist", "bars"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.split not in ("desk", "full"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.mme and self.variant != "dirvae":
            raise ConfigError("--mme applies to the dirvae variant only")
        lr = training.default_learning_rate(self.variant) if self.learning_rate is None else self.learning_rate
        alpha = self.alpha
        if self.variant == "gvae-softmax":
            # N(0, I) is the softmax-Gaussian match of a symmetric Dirichlet(1 - 1/K)
            matched = dist.unit_variance_alpha(self.latent_dim)
            if alpha is not None and abs(alpha - matched) > 1e-12:
                raise ConfigError(f"gvae-softmax uses N(0, I), which matches alpha={matched:g}; got --alpha {alpha:g}")
            alpha = matched
        elif self.variant in ("dirvae", "dirvae-weibull"):
            alpha = dist.unit_variance_alpha(self.latent_dim) if alpha is None else alpha
            if not alpha > 0:
                raise ConfigError("--alpha must be > 0")
        elif alpha is not None:
            raise ConfigError(f"--alpha does not apply to {self.variant}")
        for name in ("epochs", "batch_size", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not lr > 0 or not self.clip_norm > 0:
            raise ConfigError("learning rate and clip norm must be > 0")
        return dataclasses.replace(self, learning_rate=float(lr), alpha=alpha)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        for key in ("encoder_hidden", "decoder_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


_FIELD_TYPES = {
    "variant": str,
    "dataset": str,
    "split": str,
    "out": str,
    "learning_rate": float,
    "clip_norm": float,
    "alpha": float,
    "gem_concentration": float,
    "mme_burn_in": float,
    "mme_alternate": float,
    "mme_fixed": float,
    "mme": bool,
    "encoder_hidden": tuple,
    "decoder_hidden": tuple,
}


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key, text):
    kind = _FIELD_TYPES.get(key, int)
    text = text.strip()
    if text.lower() == "none" and key in ("learning_rate", "alpha"):
        return None
    try:
        if kind is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind is tuple:
            return tuple(int(x) for x in text.split(",") if x.strip())
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text):
    """{field: value} from flat key=value lines; '#' starts a comment."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, value)
    return values


# -- argument parsing --------------------------------------------------------

_FLAG_FIELDS = {
    "variant": "variant",
    "dataset": "dataset",
    "split": "split",
    "split_seed": "split_seed",
    "bars_side": "bars_side",
    "bars_n": "bars_n",
    "k": "latent_dim",
    "encoder_hidden": "encoder_hidden",
    "decoder_hidden": "decoder_hidden",
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch": "batch_size",
    "clip": "clip_norm",
    "seed": "seed",
    "alpha": "alpha",
    "mme": "mme",
    "out": "out",
}


def _hidden(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _add_run_flags(p, latent=True, training_flags=True):
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--variant", choices=vae.VARIANTS)
    p.add_argument("--dataset", choices=("mnist", "bars"))
    p.add_argument("--split", choices=("desk", "full"), help="desk 5000/500/1000 or full 45000/5000/10000")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--bars-side", type=int)
    p.add_argument("--bars-n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if latent:
        p.add_argument("--k", type=int, help="latent dimension K")
    if training_flags:
        p.add_argument("--encoder-hidden", type=_hidden, help="comma-separated widths, e.g. 500,500")
        p.add_argument("--decoder-hidden", type=_hidden, help="comma-separated widths, e.g. 500")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--clip", type=float, help="global gradient-norm clip")
        p.add_argument("--alpha", type=float, help="symmetric Dirichlet prior value")
        p.add_argument("--mme", action="store_true", default=None, help="learn alpha by moment matching")


def build_parser():
    ap = argparse.ArgumentParser(prog="dirvae", description="Dirichlet VAE desk laboratory")
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint.bin, epochs.csv, config.txt")
    _add_run_flags(p)

    for name, text in (
        ("eval", "negative log-likelihood, negative ELBO and reconstruction loss"),
        ("diagnose", "collapsing diagnostics and one-hot reconstructions"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        _add_run_flags(p, latent=False, training_flags=False)
        p.add_argument("--deterministic", action="store_true", help="accepted for compatibility; runs are single-threaded")
        if name == "eval":
            p.add_argument("--repeats", type=int, default=3)
            p.add_argument("--importance-samples", type=int, default=100)
            p.add_argument("--max-instances", type=int, default=1000)

    p = sub.add_parser("knn", help="kNN error of latent posterior means (or raw pixels)")
    p.add_argument("--checkpoint")
    p.add_argument("--raw", action="store_true", help="classify raw pixels instead of latents")
    _add_run_flags(p, latent=False, training_flags=False)
    p.add_argument("--k", type=int, nargs="+", default=[3, 5, 10], help="neighbour counts")
    p.add_argument("--deterministic", action="store_true", help="accepted for compatibility; runs are single-threaded")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check of every variant")
    p.add_argument("--tol", type=float, default=checks.GRADCHECK_TOL)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("klcheck", help="closed-form KL divergences against Monte-Carlo estimates")
    p.add_argument("--draws", type=int, default=checks.KL_DRAWS)
    p.add_argument("--settings", type=int, default=checks.KL_SETTINGS)
    p.add_argument("--seed", type=int, default=0)
    return ap


def resolve_config(args, base=None):
    """Defaults <- base (e.g. from a checkpoint) <- --config file <- explicit flags."""
    values = dataclasses.asdict(base) if base is not None else {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for flag, field_name in _FLAG_FIELDS.items():
        if flag == "k" and args.command == "knn":
            continue
        v = getattr(args, flag, None)
        if v is not None:
            values[field_name] = v
    return RunConfig(**values).resolved()


# -- datasets ------------------------------------------------------------------


def load_splits(cfg):
    if cfg.dataset == "bars":
        ds = data.synthetic_bars(cfg.bars_n, cfg.bars_side, np.random.default_rng(cfg.split_seed))
        n_train = int(0.7 * cfg.bars_n)
        n_valid = int(0.1 * cfg.bars_n)
        sizes = (n_train, n_valid, cfg.bars_n - n_train - n_valid)
    else:
        ds = data.load_mnist()
        sizes = data.DESK_SIZES if cfg.split == "desk" else data.FULL_SIZES
        if sum(sizes) > len(ds):
            raise ConfigError(f"{cfg.split} split needs {sum(sizes)} images, dataset has {len(ds)}")
    return data.make_split(ds, sizes, cfg.split_seed)


def _check_dims(model, dataset):
    if dataset.images.shape[1] != model.config.input_dim:
        raise DimensionMismatchError(
            f"dataset has D={dataset.images.shape[1]}, checkpoint expects D={model.config.input_dim}"
        )


def _prepare_out(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run(args):
    model, extra = vae.load_checkpoint(args.checkpoint)
    base = RunConfig.from_dict(extra.get("run_config", {}))
    cfg = resolve_config(args, base)
    if cfg.variant != model.config.variant:
        raise ConfigError(f"--variant {cfg.variant} does not match the checkpoint's {model.config.variant}")
    return model, cfg


# -- commands ------------------------------------------------------------------


def cmd_train(cfg):
    out = _prepare_out(cfg)
    (out / "config.txt").write_text(cfg.to_text())
    train_set, _, _ = load_splits(cfg)
    arch = vae.ArchitectureConfig(
        train_set.images.shape[1], cfg.latent_dim, cfg.variant, cfg.encoder_hidden, cfg.decoder_hidden
    )
    streams = training.RunStreams(cfg.seed)
    alpha = cfg.alpha if cfg.variant in ("dirvae", "dirvae-weibull") else None
    model = vae.init_model(arch, vae.default_prior(cfg.variant, cfg.latent_dim, alpha, cfg.gem_concentration), streams.init)
    schedule = None
    if cfg.mme:
        schedule = training.MmeSchedule(cfg.mme_burn_in, cfg.mme_alternate, cfg.mme_fixed, cfg.mme_update_every)
    tc = training.TrainConfig(cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.clip_norm, cfg.seed, schedule)
    history = training.train(model, train_set.images, tc, streams)
    training.write_epoch_log(out / "epochs.csv", history)
    vae.save_checkpoint(out / "checkpoint.bin", model, {"run_config": cfg.to_dict()})
    print(f"trained {cfg.variant} for {cfg.epochs} epochs; final loss {history[-1].loss:.4f}; wrote {out}")
    return model, history


def cmd_eval(model, cfg, repeats=3, importance_samples=100, max_instances=1000, out=None):
    out = Path(out) if out else _prepare_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _, _, test_set = load_splits(cfg)
    _check_dims(model, test_set)
    rng = training.RunStreams(cfg.seed).eval
    report = ev.test_metrics(model, test_set.images, rng, repeats, importance_samples, max_instances)
    report.write_csv(out / "eval.csv")
    (out / "eval_config.txt").write_text(
        cfg.to_text() + f"repeats={repeats}\nimportance_samples={importance_samples}\nmax_instances={max_instances}\n"
    )
    print(
        f"nll {report.neg_log_likelihood:.4f} (+/- {report.dispersion('neg_log_likelihood'):.4f})  "
        f"neg_elbo {report.neg_elbo:.4f}  recon {report.recon_loss:.4f}"
    )
    return report


def cmd_diagnose(model, cfg, out=None):
    out = Path(out) if out else _prepare_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _, _, test_set = load_splits(cfg)
    _check_dims(model, test_set)
    rng = training.RunStreams(cfg.seed).eval
    report = ev.diagnose(model, test_set.images, rng)
    report.write_csv(out / "diagnostics.csv")
    report.write_summary(out / "diagnostics_summary.csv")
    # per-sample latent values, for distribution plots of individual dimensions
    z = ev.latent_samples(model, test_set.images, rng)
    np.savetxt(out / "latent_values.csv", z, delimiter=",", fmt="%.9g",
               header=",".join(f"z{k}" for k in range(z.shape[1])), comments="")
    side = test_set.meta.get("side") or int(round(np.sqrt(model.config.input_dim)))
    ev.write_pgm(out / "onehot.pgm", ev.image_grid(ev.dimwise_onehot_reconstruction(model), side))
    (out / "diagnose_config.txt").write_text(cfg.to_text())
    print(
        f"collapsed weight dims {report.collapsed_weight_dims}/{model.config.latent_dim}  "
        f"collapsed value dims {report.collapsed_value_dims}/{model.config.latent_dim}  "
        f"kurtosis {report.fisher_kurtosis:.3f}  skewness {report.skewness:.3f}"
    )
    return report


def cmd_knn(model, cfg, ks=(3, 5, 10), raw=False, out=None):
    out = Path(out) if out else _prepare_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    train_set, _, test_set = load_splits(cfg)
    if raw:
        f_train, f_test, source = train_set.images, test_set.images, "raw"
    else:
        _check_dims(model, test_set)
        rng = training.RunStreams(cfg.seed).eval
        f_train = ev.posterior_means(model, train_set.images, rng)
        f_test = ev.posterior_means(model, test_set.images, rng)
        source = model.config.variant
    errors = {k: ev.knn_classify(f_train, train_set.labels, f_test, test_set.labels, k) for k in ks}
    header = "features," + ",".join(f"k={k}" for k in ks)
    row = source + "," + ",".join(f"{errors[k]:.6f}" for k in ks)
    (out / "knn.csv").write_text(header + "\n" + row + "\n")
    (out / "knn_config.txt").write_text(cfg.to_text() + f"knn_k={','.join(map(str, ks))}\nraw={str(raw).lower()}\n")
    print(header)
    print(row)
    return errors


def _report(results):
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"error[check-failed]: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAILED_CHECK
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "gradcheck":
            return _report(checks.gradcheck_suite(args.tol, args.seed))
        if args.command == "klcheck":
            return _report(checks.klcheck_suite(args.draws, args.settings, args.seed))
        if args.command == "train":
            cmd_train(resolve_config(args))
        elif args.command == "knn" and args.raw:
            cmd_knn(None, resolve_config(args), tuple(args.k), raw=True)
        else:
            if not getattr(args, "checkpoint", None):
                raise ConfigError(f"{args.command} needs --checkpoint")
            model, cfg = _load_run(args)
            out = args.out or str(Path(args.checkpoint).parent)
            if args.command == "eval":
                cmd_eval(model, cfg, args.repeats, args.importance_samples, args.max_instances, out)
            elif args.command == "diagnose":
                cmd_diagnose(model, cfg, out)
            else:
                cmd_knn(model, cfg, tuple(args.k), out=out)
        return 0
    except Exception as exc:  # noqa: BLE001  (every failure becomes one diagnostic line)
        category = getattr(exc, "category", None)
        if category is None:
            category = "io" if isinstance(exc, OSError) else type(exc).__name__.lower()
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error[{category}]: {message}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
