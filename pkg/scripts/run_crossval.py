#!/usr/bin/env python3
"""Stratified k-fold cross-validation on a labeled cohort.

Defaults are sized for 64^3 phantom cohorts (see make_phantom_cohort.py);
point --manifest at any cohort CSV and raise --epochs / --widths /
--input-size for real data.
"""

import argparse

from sheetseg.data_io import make_stratified_kfold, read_manifest
from sheetseg.model import ModelConfig
from sheetseg.pipeline import TrainSpec, run_experiment


def build_spec(args) -> TrainSpec:
    return TrainSpec(
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        views=tuple(args.views.split(",")),
        model=ModelConfig(
            input_size=tuple(int(v) for v in args.input_size.split(",")),
            channel_widths=tuple(int(v) for v in args.widths.split(",")),
        ),
    )


def fmt(agg) -> str:
    if agg["median"] is None:
        return "n/a"
    return f"{agg['median']:.3f} [{agg['q1']:.3f}, {agg['q3']:.3f}]"


def print_summary(report):
    o = report.overall
    print(f"\nsubjects scored: {o['n']}  errors: {o['errors']}")
    print(f"  VS      median [IQR]: {fmt(o['vs'])}")
    print(f"  HD95 mm median [IQR]: {fmt(o['hd95_mm'])}")
    print(f"  DSC     median [IQR]: {fmt(o['dsc'])}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True, help="cohort manifest CSV")
    ap.add_argument("--out", default="runs/crossval")
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--learning-rate", type=float, default=1e-3)
    ap.add_argument("--views", default="axial,coronal")
    ap.add_argument("--widths", default="16,32,64")
    ap.add_argument("--input-size", default="64,64")
    ap.add_argument("--no-volumes", action="store_true")
    args = ap.parse_args()

    manifest = read_manifest(args.manifest)
    plan = make_stratified_kfold(manifest, args.folds, args.seed)
    report = run_experiment(
        manifest, plan, build_spec(args), args.out, save_volumes=not args.no_volumes
    )
    print_summary(report)
    for fs in report.fold_summaries:
        print(f"  fold {fs['fold']}: DSC {fmt(fs['summary']['dsc'])} "
              f"({fs['n_train']} train / {fs['n_test']} test)")
    print(f"\nmetrics: {args.out}/metrics.csv")


if __name__ == "__main__":
    main()
