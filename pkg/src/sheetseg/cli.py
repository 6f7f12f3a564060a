"""Command-line interface for the whole workflow.

Subcommands: phantom, preprocess, train, predict, evaluate, experiment.
Every command takes an --out directory and refuses to overwrite existing
outputs unless --force is given. All randomness is controlled by --seed.
Exit codes: 0 success, 1 subject-level errors in the results, 2 usage or
stage failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data_io, phantom, pipeline
from .errors import SheetsegError
from .metrics import evaluate_subject
from .model import load_checkpoint, param_count_report
from .stats import median_iqr


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _claim_out(out_dir, force: bool, markers: list[str]):
    existing = [m for m in markers if os.path.exists(os.path.join(out_dir, m))]
    if existing and not force:
        raise SheetsegError(
            f"{out_dir} already contains {existing[0]}; pass --force to overwrite"
        )
    os.makedirs(out_dir, exist_ok=True)


def _build_spec(args) -> pipeline.TrainSpec:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            base = json.load(f)
    model = dict(base.pop("model", {}))
    overrides = {
        "fusion_lambda": getattr(args, "fusion_lambda", None),
        "threshold": getattr(args, "threshold", None),
        "postproc_fraction": getattr(args, "postproc_fraction", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "max_epochs": getattr(args, "epochs", None),
        "torch_threads": getattr(args, "torch_threads", None),
        "n_starts": getattr(args, "starts", None),
        "probe_epochs": getattr(args, "probe_epochs", None),
    }
    for key, val in overrides.items():
        if val is not None:
            base[key] = val
    if getattr(args, "views", None):
        base["views"] = tuple(v.strip() for v in args.views.split(","))
    if getattr(args, "halve_fused", False):
        base["halve_fused"] = True
    if getattr(args, "input_size", None):
        model["input_size"] = _ints(args.input_size)
    if getattr(args, "widths", None):
        model["channel_widths"] = _ints(args.widths)
    if model:
        base["model"] = model
    return pipeline.TrainSpec.from_json_dict(base)


def _spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with TrainSpec fields; flags override it")
    p.add_argument("--views", help="comma list from axial,coronal,sagittal")
    p.add_argument("--lambda", dest="fusion_lambda", type=float, help="fusion weight for the axial view")
    p.add_argument("--threshold", type=float, help="probability threshold tau")
    p.add_argument("--postproc-fraction", type=float, help="axial slab fraction zeroed at each end")
    p.add_argument("--halve-fused", action="store_true", help="halve fused probabilities (literal fusion variant)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int, help="maximum training epochs")
    p.add_argument("--starts", type=int, help="seeded inits probed per view before full training")
    p.add_argument("--probe-epochs", type=int, help="epochs each probe start runs")
    p.add_argument("--torch-threads", type=int, help="torch intra-op threads (1 = deterministic)")
    p.add_argument("--input-size", help="network input H,W (e.g. 64,64)")
    p.add_argument("--widths", help="encoder/bottleneck channel widths (e.g. 16,32,64)")


def cmd_phantom(args) -> int:
    counts = _ints(args.counts)
    styles = sorted(phantom.STYLES)
    if len(counts) != len(styles):
        raise SheetsegError(f"--counts needs {len(styles)} values (for {', '.join(styles)})")
    _claim_out(args.out, args.force, ["manifest.csv"])
    manifest_path = phantom.generate_cohort(
        args.out,
        dict(zip(styles, counts)),
        seed=args.seed,
        shape=_ints(args.shape),
        spacing=_floats(args.spacing),
    )
    n = sum(counts)
    print(f"wrote {n} subjects to {manifest_path}")
    return 0


def cmd_preprocess(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    _claim_out(args.out, args.force, ["manifest.csv"])
    img_dir = os.path.join(args.out, "images")
    os.makedirs(img_dir, exist_ok=True)

    def one(rec):
        subj = pipeline.load_subject(rec, with_label=False)
        out_path = os.path.join(img_dir, f"{rec.subject_id}.nii.gz")
        data_io.save_volume(subj.image, out_path)
        return data_io.SubjectRecord(
            subject_id=rec.subject_id,
            scanner_id=rec.scanner_id,
            image_path=out_path,
            label_path=rec.label_path,
        )

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(one, manifest))
    else:
        records = [one(rec) for rec in manifest]
    data_io.write_manifest(records, os.path.join(args.out, "manifest.csv"))
    print(f"normalized {len(records)} images into {img_dir}")
    return 0


def cmd_train(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    spec = _build_spec(args)
    _claim_out(args.out, args.force, [f"model_{v}.npz" for v in spec.views])
    pool = sorted(r.subject_id for r in manifest)
    rng = np.random.default_rng(data_io.derive_seed(args.seed, 1, 0))
    train_ids, val_ids = data_io._carve_validation(pool, rng)
    cache = pipeline._SubjectCache(manifest)
    for view in spec.views:
        print(f"training {view} ({len(train_ids)} train / {len(val_ids)} val)", flush=True)
        mdl = pipeline.train_view(
            view,
            [cache.get(s) for s in train_ids],
            [cache.get(s) for s in val_ids],
            spec,
            seed=data_io.derive_seed(args.seed, 31, 0, view),
            curve_path=os.path.join(args.out, f"curve_{view}.csv"),
        )
        print(param_count_report(mdl), flush=True)
        pipeline.save_checkpoint(mdl, os.path.join(args.out, f"model_{view}.npz"))
    with open(os.path.join(args.out, "train_spec.json"), "w") as f:
        json.dump(spec.to_json_dict(), f, indent=2, sort_keys=True)
    return 0


def cmd_predict(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    spec = _build_spec(args)
    _claim_out(args.out, args.force, ["mask"])
    models = {}
    for view in spec.views:
        path = os.path.join(args.models, f"model_{view}.npz")
        if not os.path.exists(path):
            raise SheetsegError(f"no checkpoint for view {view}: {path}")
        models[view] = load_checkpoint(path)
    prob_dir = os.path.join(args.out, "prob")
    mask_dir = os.path.join(args.out, "mask")
    os.makedirs(prob_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    failures = 0
    for rec in manifest:
        try:
            image = data_io.load_volume(rec.image_path, kind="image")
            res = pipeline.segment_subject(models, image, spec, subject_id=rec.subject_id)
            data_io.save_volume(res.prob_fused, os.path.join(prob_dir, f"{rec.subject_id}.nii.gz"))
            data_io.save_volume(res.mask, os.path.join(mask_dir, f"{rec.subject_id}.nii.gz"))
        except SheetsegError as e:
            failures += 1
            print(f"error: {rec.subject_id}: {e}", file=sys.stderr)
    print(f"segmented {len(manifest) - failures}/{len(manifest)} subjects into {args.out}")
    return 1 if failures else 0


def cmd_evaluate(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    _claim_out(args.out, args.force, ["metrics.csv"])

    def one(rec):
        if not rec.label_path:
            return pipeline.MetricRow(rec.subject_id, rec.scanner_id, None, None, None, None, "error: no label")
        try:
            label = data_io.load_volume(rec.label_path, kind="mask")
            pred_path = os.path.join(args.pred, "mask", f"{rec.subject_id}.nii.gz")
            if not os.path.exists(pred_path):
                pred_path = os.path.join(args.pred, f"{rec.subject_id}.nii.gz")
            pred = data_io.load_volume(pred_path, kind="mask")
            triple = evaluate_subject(label, pred, label.spacing)
            return pipeline.MetricRow(
                rec.subject_id, rec.scanner_id, None, triple.vs, triple.hd95_mm, triple.dsc, triple.status
            )
        except (SheetsegError, FileNotFoundError) as e:
            return pipeline.MetricRow(rec.subject_id, rec.scanner_id, None, None, None, None, f"error: {e}")

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, manifest))
    else:
        rows = [one(rec) for rec in manifest]
    pipeline.write_metric_rows(os.path.join(args.out, "metrics.csv"), rows)
    summary = pipeline._summarize(rows)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    for name in ("vs", "hd95_mm", "dsc"):
        agg = summary[name]
        if agg["n"]:
            print(f"{name}: median {agg['median']:.4f} IQR [{agg['q1']:.4f}, {agg['q3']:.4f}] (n={agg['n']})")
        else:
            print(f"{name}: no valid values")
    return 1 if any(r.status != "ok" for r in rows) else 0


def cmd_experiment(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    spec = _build_spec(args)
    _claim_out(args.out, args.force, ["metrics.csv", "report.json"])
    if args.protocol == "crossval":
        plan = data_io.make_stratified_kfold(manifest, k=args.folds, seed=args.seed)
        report = pipeline.run_experiment(manifest, plan, spec, args.out, save_volumes=not args.no_volumes)
    elif args.protocol == "loso":
        plan = data_io.make_loso(manifest)
        report = pipeline.run_experiment(manifest, plan, spec, args.out, save_volumes=not args.no_volumes)
    elif args.protocol == "multiview-ablation":
        if not getattr(args, "views", None):
            spec = pipeline.TrainSpec.from_json_dict(
                {**spec.to_json_dict(), "views": ("axial", "coronal", "sagittal")}
            )
        plan = data_io.make_stratified_kfold(manifest, k=args.folds, seed=args.seed)
        report = pipeline.run_multiview_ablation(manifest, plan, spec, args.out)
    elif args.protocol == "fraction-ablation":
        steps = _floats(args.fraction_steps)
        plan = data_io.make_fraction_plan(manifest, steps, seed=args.seed)
        report = pipeline.run_experiment(manifest, plan, spec, args.out, save_volumes=not args.no_volumes)
    else:  # pragma: no cover - argparse restricts choices
        raise SheetsegError(f"unknown protocol {args.protocol}")
    bad = sum(1 for r in report.rows if r.status != "ok")
    med = report.overall["dsc"]["median"]
    med_txt = f"{med:.4f}" if med is not None else "n/a"
    print(f"{args.protocol}: {len(report.rows)} result rows, {bad} with errors, median DSC {med_txt}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sheetseg",
        description="Multi-view 2D CNN segmentation of thin sheet structures in 3D volumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", default="5,5,5,5", help="subjects per style, in style-name order")
    p.add_argument("--shape", default="64,64,64")
    p.add_argument("--spacing", default="1,1,1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="brain-mask + z-score a manifest of volumes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model per view on a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    _spec_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment a manifest with trained checkpoints")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, help="directory holding model_<view>.npz")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _spec_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against manifest labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="prediction directory (from predict/experiment)")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full training/evaluation protocol")
    p.add_argument(
        "protocol", choices=["crossval", "loso", "multiview-ablation", "fraction-ablation"]
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5, help="fold count for crossval protocols")
    p.add_argument("--fraction-steps", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--no-volumes", action="store_true", help="skip writing probability/mask volumes")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; training runs sequentially")
    p.add_argument("--force", action="store_true")
    _spec_flags(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SheetsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
