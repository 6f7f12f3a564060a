#!/usr/bin/env python3
"""Training-set-size ablation: retrain on nested fractions of one pool.

All fractions share a single held-out test set, so score differences
come only from how much labeled data the model saw.
"""

import argparse

from sheetseg.data_io import make_fraction_plan, read_manifest
from sheetseg.model import ModelConfig
from sheetseg.pipeline import TrainSpec, run_experiment


def fmt(agg) -> str:
    if agg["median"] is None:
        return "n/a"
    return f"{agg['median']:.3f} [{agg['q1']:.3f}, {agg['q3']:.3f}]"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True, help="cohort manifest CSV")
    ap.add_argument("--out", default="runs/fraction")
    ap.add_argument("--steps", default="0.2,0.4,0.6,0.8,1.0")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--learning-rate", type=float, default=1e-3)
    ap.add_argument("--views", default="axial")
    ap.add_argument("--widths", default="16,32,64")
    ap.add_argument("--input-size", default="64,64")
    ap.add_argument("--no-volumes", action="store_true")
    args = ap.parse_args()

    manifest = read_manifest(args.manifest)
    steps = [float(v) for v in args.steps.split(",")]
    plan = make_fraction_plan(manifest, steps, args.seed)
    spec = TrainSpec(
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        views=tuple(args.views.split(",")),
        model=ModelConfig(
            input_size=tuple(int(v) for v in args.input_size.split(",")),
            channel_widths=tuple(int(v) for v in args.widths.split(",")),
        ),
    )
    report = run_experiment(
        manifest, plan, spec, args.out, save_volumes=not args.no_volumes
    )
    print("\nheld-out DSC by training fraction (same test set throughout):")
    for fs in report.fold_summaries:
        print(f"  {int(fs['fraction'] * 100):>3}% ({fs['n_train']:>3} train): "
              f"DSC {fmt(fs['summary']['dsc'])}  VS {fmt(fs['summary']['vs'])}")
    print(f"\nmetrics: {args.out}/metrics.csv")


if __name__ == "__main__":
    main()
