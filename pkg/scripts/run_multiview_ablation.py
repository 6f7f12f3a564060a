#!/usr/bin/env python3
"""Compare single-view models with their fused ensemble on common folds.

Prints per-configuration scores plus paired signed-rank tests of each
single view against the axial+coronal fusion.
"""

import argparse

from sheetseg.data_io import make_stratified_kfold, read_manifest
from sheetseg.model import ModelConfig
from sheetseg.pipeline import TrainSpec, run_multiview_ablation


def fmt(agg) -> str:
    if agg["median"] is None:
        return "n/a"
    return f"{agg['median']:.3f} [{agg['q1']:.3f}, {agg['q3']:.3f}]"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True, help="cohort manifest CSV")
    ap.add_argument("--out", default="runs/multiview")
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--learning-rate", type=float, default=1e-3)
    ap.add_argument("--views", default="axial,coronal")
    ap.add_argument("--widths", default="16,32,64")
    ap.add_argument("--input-size", default="64,64")
    args = ap.parse_args()

    manifest = read_manifest(args.manifest)
    plan = make_stratified_kfold(manifest, args.folds, args.seed)
    spec = TrainSpec(
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        views=tuple(args.views.split(",")),
        model=ModelConfig(
            input_size=tuple(int(v) for v in args.input_size.split(",")),
            channel_widths=tuple(int(v) for v in args.widths.split(",")),
        ),
    )
    report = run_multiview_ablation(manifest, plan, spec, args.out)
    print("\nper-configuration held-out scores:")
    for label, agg in sorted(report.configs.items()):
        print(f"  {label:>14}: DSC {fmt(agg['dsc'])}  VS {fmt(agg['vs'])}  "
              f"HD95 {fmt(agg['hd95_mm'])} mm")
    if report.tests:
        print("\npaired tests (fused as reference):")
        for label, t in sorted(report.tests.items()):
            print(f"  {label}: W={t['statistic']:.1f}  p={t['p_value']:.4f}"
                  f"{' (exact)' if t['exact'] else ''}")
    print(f"\nper-config CSVs under {args.out}/")


if __name__ == "__main__":
    main()
