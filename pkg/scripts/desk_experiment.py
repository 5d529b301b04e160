"""Train every desk variant on the MNIST 5k subset for each seed and tabulate the results.

    python scripts/desk_experiment.py [--out results/desk] [--variants dirvae gvae] [--seeds 1 2 3]

Writes one JSON line per run to runs.jsonl and prints a summary table of
median kNN error and collapsed-dimension counts.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dirvae import experiments as ex  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--variants", nargs="+", default=list(ex.DESK_VARIANTS))
    ap.add_argument("--seeds", nargs="+", type=int, default=list(ex.DESK_SEEDS))
    ap.add_argument("--epochs", type=int, default=ex.DESK_EPOCHS)
    ap.add_argument("--hidden", type=int, default=None, help="shrink all hidden widths to this value")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = ex.desk_split()
    runs = []
    with open(out / "runs.jsonl", "w") as fh:
        for variant in args.variants:
            for seed in args.seeds:
                run = ex.run_one(variant, seed, train, test, epochs=args.epochs, hidden=args.hidden)
                runs.append(run)
                fh.write(json.dumps(run.row()) + "\n")
                fh.flush()
                print(
                    f"{variant:13s} seed={seed} loss={run.losses[-1]:.2f} knn5={run.knn_error[5]:.3f} "
                    f"cw={run.collapsed_weight_dims} cv={run.collapsed_value_dims} {run.seconds:.0f}s",
                    flush=True,
                )
    print(f"\n{'variant':13s} {'knn5':>7s} {'cw':>4s} {'cv':>4s}")
    for variant in args.variants:
        print(
            f"{variant:13s} {ex.median_over_seeds(runs, variant, 'knn5'):7.3f} "
            f"{ex.median_over_seeds(runs, variant, 'collapsed_weight_dims'):4.0f} "
            f"{ex.median_over_seeds(runs, variant, 'collapsed_value_dims'):4.0f}"
        )


if __name__ == "__main__":
    main()
