"""Per-view training, inference, fusion, post-processing, and experiments.

Training minimizes the Dice loss with adaptive-moment gradient descent and
keeps the weights of the epoch with the best validation DSC (computed on
full per-subject 3D reconstructions, not on slices). Inference runs each
view's model over its slice stack, reassembles a probability volume, fuses
the views voxel-wise, thresholds, and zeroes the outer axial slabs.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .data_io import SplitPlan, SubjectRecord, Volume, derive_seed, load_volume, save_volume
from .errors import ConfigurationError, ContractError, SheetsegError
from .metrics import dice_coefficient, evaluate_subject, volumetric_similarity
from .model import (
    ModelConfig,
    TrainedModel,
    build_model,
    dice_loss,
    dice_loss_grad,
    forward,
    param_count_report,
    save_checkpoint,
)
from .preprocess import compute_brain_mask, crop_pad_inplane, invert_crop_pad, zscore_normalize
from .stats import median_iqr, wilcoxon_signed_rank
from .views import ViewAxis, from_view, to_view

CANONICAL_VIEWS = ("axial", "coronal", "sagittal")
METRIC_CSV_COLUMNS = ("subject_id", "scanner_id", "fold", "vs", "hd95_mm", "dsc", "status")


@dataclass
class TrainSpec:
    """Hyperparameters and pipeline constants for one training/inference run."""

    batch_size: int = 30
    learning_rate: float = 2e-4
    max_epochs: int = 200
    fusion_lambda: float = 0.5
    threshold: float = 0.5
    postproc_fraction: float = 0.20
    views: tuple[str, ...] = ("axial", "coronal")
    model: ModelConfig = field(default_factory=ModelConfig)
    smoothing: float = 1.0
    halve_fused: bool = False  # literal half-prefactor fusion variant
    torch_threads: int = 1
    n_starts: int = 2  # independent seeded inits probed before committing to one
    probe_epochs: int = 2  # epochs each start runs before the strongest is kept

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_json_dict(self.model)
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise ConfigurationError(f"fusion_lambda must be in [0, 1], got {self.fusion_lambda}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must be in (0, 1), got {self.threshold}")
        if not 0.0 <= self.postproc_fraction < 0.5:
            raise ConfigurationError(
                f"postproc_fraction must be in [0, 0.5), got {self.postproc_fraction}"
            )
        if self.smoothing <= 0:
            raise ConfigurationError("smoothing must be > 0")
        if self.torch_threads < 1:
            raise ConfigurationError("torch_threads must be >= 1")
        if self.n_starts < 1 or self.probe_epochs < 1:
            raise ConfigurationError("n_starts and probe_epochs must be >= 1")
        views = tuple(ViewAxis.parse(v).value for v in self.views)
        if not views or len(set(views)) != len(views):
            raise ConfigurationError(f"views must be a nonempty set of distinct axes, got {self.views}")
        self.views = tuple(v for v in CANONICAL_VIEWS if v in views)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainSpec":
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_json_dict(d["model"])
        for key in ("views",):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class LoadedSubject:
    record: SubjectRecord
    image: Volume  # z-score normalized
    label: Volume | None
    brain_voxels: int


def load_subject(record: SubjectRecord, with_label: bool = True) -> LoadedSubject:
    """Load one subject from disk and apply brain-mask + z-score preprocessing."""
    raw = load_volume(record.image_path, kind="image")
    brain = compute_brain_mask(raw)
    norm = zscore_normalize(raw, brain)
    label = None
    if with_label and record.label_path:
        label = load_volume(record.label_path, kind="mask")
        if label.shape != norm.shape:
            raise ContractError(
                f"{record.subject_id}: label shape {label.shape} != image shape {norm.shape}"
            )
    return LoadedSubject(record=record, image=norm, label=label, brain_voxels=brain.voxel_count)


@dataclass
class SegmentationResult:
    prob_fused: Volume
    mask: Volume
    per_view_probs: dict
    subject_id: str = ""


def _view_slices(v: Volume, view: str, input_size) -> np.ndarray:
    padded, _ = crop_pad_inplane(v, input_size, view)
    return to_view(padded, view).slices


def _write_curve(path, curve: list[dict]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss", "val_vs", "val_dsc"])
        for row in curve:
            w.writerow([row["epoch"], repr(row["loss"]), repr(row["val_vs"]), repr(row["val_dsc"])])


def _mean_validation_scores(m: TrainedModel, val_subjects, spec: "TrainSpec"):
    vss, dscs = [], []
    for s in val_subjects:
        prob = predict_view(m, s.image, batch_size=spec.batch_size, check_normalized=False)
        pred = (prob.data >= spec.threshold).astype(np.uint8)
        vss.append(volumetric_similarity(s.label.data, pred))
        dscs.append(dice_coefficient(s.label.data, pred))
    return float(np.mean(vss)), float(np.mean(dscs))


def train_view(
    view,
    train_subjects: list[LoadedSubject],
    val_subjects: list[LoadedSubject],
    spec: TrainSpec,
    seed: int,
    curve_path=None,
) -> TrainedModel:
    """Train one single-view model; returns the best-validation-DSC epoch's weights.

    Slices from all training subjects are pooled and reshuffled every epoch
    (seeded). Batch-level Dice from an unlucky init can slam into a saturated
    all-background or all-foreground corner, or settle into a timid
    partial-detection basin, so spec.n_starts independent seeded inits each
    run spec.probe_epochs epochs and only the start with the highest
    validation DSC gets the remaining budget. Validation reconstructs each
    subject in 3D and thresholds at spec.threshold (no slab post-processing)
    to score VS/DSC. The winning start's per-epoch curve is written to
    curve_path when given.
    """
    view = ViewAxis.parse(view).value
    if not train_subjects:
        raise ConfigurationError("empty training set")
    if not val_subjects:
        raise ConfigurationError("empty validation set; epoch selection needs one")
    for s in train_subjects + val_subjects:
        if s.label is None:
            raise ConfigurationError(f"subject {s.record.subject_id} has no label")
    torch.set_num_threads(spec.torch_threads)
    xs, ys = [], []
    for s in train_subjects:
        xs.append(_view_slices(s.image, view, spec.model.input_size).astype(np.float32))
        ys.append(_view_slices(s.label, view, spec.model.input_size).astype(np.float32))
    x_all = np.concatenate(xs)
    y_all = np.concatenate(ys)
    n = len(x_all)

    def run_epochs(mk, optk, k, lo, hi, rows, tracker):
        for epoch in range(lo, hi):
            mk.net.train()
            order = np.random.default_rng(derive_seed(seed, 5, k, epoch)).permutation(n)
            losses = []
            for start in range(0, n, spec.batch_size):
                idx = order[start : start + spec.batch_size]
                xb = torch.from_numpy(x_all[idx]).unsqueeze(1)
                gb = y_all[idx]
                optk.zero_grad()
                fg = mk.net(xb)[:, 1]
                p = fg.detach().numpy().astype(np.float64)
                losses.append(dice_loss(p, gb, spec.smoothing))
                grad = dice_loss_grad(p, gb, spec.smoothing)
                fg.backward(torch.from_numpy(grad.astype(np.float32)))
                optk.step()
            mk.net.eval()
            val_vs, val_dsc = _mean_validation_scores(mk, val_subjects, spec)
            rows.append(
                {"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_vs": val_vs, "val_dsc": val_dsc}
            )
            if val_dsc > tracker["dsc"]:
                tracker["dsc"] = val_dsc
                tracker["state"] = {key: v.clone() for key, v in mk.net.state_dict().items()}

    probe = min(spec.probe_epochs, spec.max_epochs)
    best = None
    for k in range(spec.n_starts):
        cfg = replace(spec.model, seed=derive_seed(seed, 101, k))
        mk = build_model(cfg, view=view)
        optk = torch.optim.Adam(mk.net.parameters(), lr=spec.learning_rate)
        rows: list[dict] = []
        tracker = {"dsc": -1.0, "state": None}
        run_epochs(mk, optk, k, 0, probe, rows, tracker)
        # ties keep the earliest start, so the outcome never depends on dict order
        if best is None or rows[-1]["val_dsc"] > best["rows"][-1]["val_dsc"]:
            best = {"k": k, "m": mk, "opt": optk, "rows": rows, "tracker": tracker}
    m, curve, tracker = best["m"], best["rows"], best["tracker"]
    run_epochs(m, best["opt"], best["k"], probe, spec.max_epochs, curve, tracker)
    m.net.load_state_dict(tracker["state"])
    m.net.eval()
    if curve_path:
        _write_curve(curve_path, curve)
    return m


def predict_view(
    m: TrainedModel, image: Volume, batch_size: int = 30, check_normalized: bool = True
) -> Volume:
    """Probability volume for one view's model, aligned with the input volume."""
    if m.view is None:
        raise ContractError("model has no view assigned")
    if check_normalized:
        mx = float(image.data.max())
        if mx > 0:
            rough_brain = image.data > 0.05 * mx
            sd = float(image.data[rough_brain].std())
            if abs(sd - 1.0) > 0.1:
                warnings.warn(
                    f"input does not look z-score normalized (within-mask std {sd:.3f})",
                    stacklevel=2,
                )
    padded, rec = crop_pad_inplane(image, m.config.input_size, m.view)
    stack = to_view(padded, m.view)
    outs = []
    for start in range(0, stack.slices.shape[0], batch_size):
        chunk = np.ascontiguousarray(stack.slices[start : start + batch_size], dtype=np.float32)
        outs.append(forward(m, chunk)[..., 1])
    fg = np.concatenate(outs)
    prob_stack = replace(stack, slices=fg, kind="probability")
    return invert_crop_pad(from_view(prob_stack), rec)


def fuse_views(probs: dict, fusion_lambda: float, halve: bool = False) -> Volume:
    """Voxel-wise fusion of per-view probability volumes.

    Two views: the convex combination lam*P_first + (1-lam)*P_second with
    views taken in canonical (axial, coronal, sagittal) order. Three views:
    unweighted mean. ``halve`` multiplies the result by 1/2, the literal
    variant of the fusion rule (pair it with threshold/2).

    The two-view arithmetic is written so the endpoint (lam=1), fixed-point
    (equal inputs), and lam=0.5 swap-symmetry cases are exact in floating
    point, not just approximate.
    """
    if not probs:
        raise ConfigurationError("no view probabilities to fuse")
    if not 0.0 <= fusion_lambda <= 1.0:
        raise ConfigurationError(f"fusion lambda must be in [0, 1], got {fusion_lambda}")
    keyed = {ViewAxis.parse(k).value: v for k, v in probs.items()}
    if len(keyed) != len(probs):
        raise ContractError("duplicate views in fusion input")
    vols = [keyed[k] for k in CANONICAL_VIEWS if k in keyed]
    first = vols[0]
    for v in vols[1:]:
        if v.shape != first.shape:
            raise ContractError(f"view shapes differ: {v.shape} vs {first.shape}")
        if v.spacing != first.spacing:
            raise ContractError(f"view spacings differ: {v.spacing} vs {first.spacing}")
    if len(vols) == 1:
        out = first.data.copy()
    elif len(vols) == 2:
        a, c = vols[0].data, vols[1].data
        if fusion_lambda == 1.0:
            out = a.copy()
        elif fusion_lambda == 0.0:
            out = c.copy()
        else:
            # midpoint + signed offset: exact under input swap with lam=0.5
            out = 0.5 * (a + c) + (fusion_lambda - 0.5) * (a - c)
            np.clip(out, 0.0, 1.0, out=out)
    else:
        out = (vols[0].data + vols[1].data + vols[2].data) / 3.0
        np.clip(out, 0.0, 1.0, out=out)
    if halve:
        out = 0.5 * out
    return first.with_data(out, kind="probability")


def postprocess(prob: Volume, threshold: float = 0.5, fraction: float = 0.20) -> Volume:
    """Threshold at >= tau, then zero floor(fraction * n_axial) slices at each axial end."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must be in (0, 1), got {threshold}")
    if not 0.0 <= fraction < 0.5:
        raise ConfigurationError(f"fraction must be in [0, 0.5), got {fraction}")
    mask = (prob.data >= threshold).astype(np.uint8)
    ax = prob.axis_index("axial")
    n = mask.shape[ax]
    margin = int(math.floor(fraction * n))
    if margin:
        sl = [slice(None)] * 3
        sl[ax] = slice(0, margin)
        mask[tuple(sl)] = 0
        sl[ax] = slice(n - margin, n)
        mask[tuple(sl)] = 0
    return prob.with_data(mask, kind="mask")


def _segment_normalized(models: dict, norm: Volume, spec: TrainSpec, subject_id="") -> SegmentationResult:
    keyed = {}
    for k, m in models.items():
        view = ViewAxis.parse(k).value
        if m.view is not None and m.view != view:
            raise ContractError(f"model for {view} was trained on {m.view}")
        keyed[view] = m
    per_view = {}
    for view in (v for v in CANONICAL_VIEWS if v in keyed):
        per_view[view] = predict_view(
            keyed[view], norm, batch_size=spec.batch_size, check_normalized=False
        )
    if len(per_view) == 1:
        fused = next(iter(per_view.values()))
        if spec.halve_fused:
            fused = fused.with_data(0.5 * fused.data)
    else:
        fused = fuse_views(per_view, spec.fusion_lambda, halve=spec.halve_fused)
    mask = postprocess(fused, spec.threshold, spec.postproc_fraction)
    return SegmentationResult(prob_fused=fused, mask=mask, per_view_probs=per_view, subject_id=subject_id)


def segment_subject(models: dict, image: Volume, spec: TrainSpec, subject_id: str = "") -> SegmentationResult:
    """Preprocess a raw image and segment it with one model per view."""
    if not models:
        raise ConfigurationError("no models supplied")
    brain = compute_brain_mask(image)
    norm = zscore_normalize(image, brain)
    return _segment_normalized(models, norm, spec, subject_id=subject_id)


@dataclass
class MetricRow:
    subject_id: str
    scanner_id: str
    fold: "int | None"
    vs: "float | None"
    hd95_mm: "float | None"
    dsc: "float | None"
    status: str = "ok"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metric_rows(path, rows: list[MetricRow]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_CSV_COLUMNS)
        for r in rows:
            w.writerow([r.subject_id, r.scanner_id, _cell(r.fold), _cell(r.vs), _cell(r.hd95_mm), _cell(r.dsc), r.status])


def read_metric_rows(path) -> list[MetricRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_CSV_COLUMNS:
            raise ContractError(f"{path}: unexpected metric CSV columns {reader.fieldnames}")
        for rec in reader:
            rows.append(
                MetricRow(
                    subject_id=rec["subject_id"],
                    scanner_id=rec["scanner_id"],
                    fold=int(rec["fold"]) if rec["fold"] else None,
                    vs=float(rec["vs"]) if rec["vs"] else None,
                    hd95_mm=float(rec["hd95_mm"]) if rec["hd95_mm"] else None,
                    dsc=float(rec["dsc"]) if rec["dsc"] else None,
                    status=rec["status"],
                )
            )
    return rows


def _summarize(rows: list[MetricRow]) -> dict:
    def agg(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return {"median": None, "q1": None, "q3": None, "mean": None, "n": 0}
        med, q1, q3 = median_iqr(vals)
        return {"median": med, "q1": q1, "q3": q3, "mean": float(np.mean(vals)), "n": len(vals)}

    return {
        "n": len(rows),
        "errors": sum(1 for r in rows if r.status != "ok"),
        "vs": agg([r.vs for r in rows]),
        "hd95_mm": agg([r.hd95_mm for r in rows]),
        "dsc": agg([r.dsc for r in rows]),
    }


@dataclass
class EvalReport:
    strategy: str
    seed: int
    rows: list[MetricRow]
    fold_summaries: list[dict]
    overall: dict
    per_scanner: dict
    tests: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "overall": self.overall,
            "per_scanner": self.per_scanner,
            "fold_summaries": self.fold_summaries,
            "tests": self.tests,
            "configs": self.configs,
            "notes": self.notes,
            "rows": [asdict(r) for r in self.rows],
        }


def write_report(report: EvalReport, path):
    with open(path, "w") as f:
        json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def _check_plan(manifest: list[SubjectRecord], plan: SplitPlan):
    known = {r.subject_id for r in manifest}
    for i, fold in enumerate(plan.folds):
        ids = list(fold.train_ids) + list(fold.validation_ids) + list(fold.test_ids)
        missing = sorted(set(ids) - known)
        if missing:
            raise ConfigurationError(f"fold {i} references unknown subjects: {missing}")


def _fold_dir_name(index: int, fraction) -> str:
    if fraction is None:
        return f"fold_{index:02d}"
    return f"frac_{int(round(fraction * 100)):03d}"


class _SubjectCache:
    def __init__(self, manifest: list[SubjectRecord]):
        self.by_id = {r.subject_id: r for r in manifest}
        self._cache: dict = {}

    def get(self, subject_id: str) -> LoadedSubject:
        if subject_id not in self._cache:
            self._cache[subject_id] = load_subject(self.by_id[subject_id])
        return self._cache[subject_id]


def run_experiment(
    manifest: list[SubjectRecord],
    plan: SplitPlan,
    spec: TrainSpec,
    out_dir,
    save_volumes: bool = True,
    verbose: bool = True,
) -> EvalReport:
    """Train and evaluate every fold of a split plan.

    Writes per-fold checkpoints, training curves and output volumes, one
    metrics.csv with a row per tested subject, and report.json with medians
    and IQRs overall, per fold, and per scanner.
    """
    _check_plan(manifest, plan)
    torch.set_num_threads(spec.torch_threads)
    os.makedirs(out_dir, exist_ok=True)
    cache = _SubjectCache(manifest)
    rows: list[MetricRow] = []
    fold_summaries = []
    said_params = False
    for i, fold in enumerate(plan.folds):
        fold_dir = os.path.join(out_dir, _fold_dir_name(i, fold.fraction))
        os.makedirs(fold_dir, exist_ok=True)
        models = {}
        for view in spec.views:
            if verbose:
                print(f"[{_fold_dir_name(i, fold.fraction)}] training {view} "
                      f"({len(fold.train_ids)} train / {len(fold.validation_ids)} val)", flush=True)
            mdl = train_view(
                view,
                [cache.get(s) for s in fold.train_ids],
                [cache.get(s) for s in fold.validation_ids],
                spec,
                seed=derive_seed(plan.seed, 31, i, view),
                curve_path=os.path.join(fold_dir, f"curve_{view}.csv"),
            )
            if verbose and not said_params:
                print(param_count_report(mdl), flush=True)
                said_params = True
            save_checkpoint(mdl, os.path.join(fold_dir, f"model_{view}.npz"))
            models[view] = mdl
        fold_rows = _evaluate_fold(models, fold.test_ids, cache, spec, i, fold_dir, save_volumes)
        rows.extend(fold_rows)
        fold_summaries.append(
            {
                "fold": i,
                "fraction": fold.fraction,
                "n_train": len(fold.train_ids),
                "n_val": len(fold.validation_ids),
                "n_test": len(fold.test_ids),
                "summary": _summarize(fold_rows),
            }
        )
    write_metric_rows(os.path.join(out_dir, "metrics.csv"), rows)
    scanners = sorted({r.scanner_id for r in rows})
    report = EvalReport(
        strategy=plan.strategy,
        seed=plan.seed,
        rows=rows,
        fold_summaries=fold_summaries,
        overall=_summarize(rows),
        per_scanner={sc: _summarize([r for r in rows if r.scanner_id == sc]) for sc in scanners},
    )
    write_report(report, os.path.join(out_dir, "report.json"))
    return report


def _evaluate_fold(models, test_ids, cache, spec, fold_index, fold_dir, save_volumes) -> list[MetricRow]:
    prob_dir = os.path.join(fold_dir, "prob")
    mask_dir = os.path.join(fold_dir, "mask")
    if save_volumes:
        os.makedirs(prob_dir, exist_ok=True)
        os.makedirs(mask_dir, exist_ok=True)
    fold_rows = []
    for sid in test_ids:
        rec = cache.by_id[sid]
        try:
            s = cache.get(sid)
            res = _segment_normalized(models, s.image, spec, subject_id=sid)
            if save_volumes:
                save_volume(res.prob_fused, os.path.join(prob_dir, f"{sid}.nii.gz"))
                save_volume(res.mask, os.path.join(mask_dir, f"{sid}.nii.gz"))
            triple = evaluate_subject(s.label, res.mask, s.label.spacing)
            fold_rows.append(
                MetricRow(sid, rec.scanner_id, fold_index, triple.vs, triple.hd95_mm, triple.dsc, triple.status)
            )
        except SheetsegError as e:
            fold_rows.append(MetricRow(sid, rec.scanner_id, fold_index, None, None, None, f"error: {e}"))
    return fold_rows


def _ablation_configs(views: tuple[str, ...]) -> list[tuple[str, ...]]:
    configs = [(v,) for v in views]
    if {"axial", "coronal"} <= set(views):
        configs.append(("axial", "coronal"))
    if len(views) == 3:
        configs.append(tuple(views))
    return configs


def _config_label(config: tuple[str, ...]) -> str:
    return "+".join(config)


def run_multiview_ablation(
    manifest: list[SubjectRecord],
    plan: SplitPlan,
    spec: TrainSpec,
    out_dir,
    verbose: bool = True,
) -> EvalReport:
    """Compare single-view models against view ensembles on the same folds.

    Trains one model per view in spec.views per fold, then scores every
    test subject under each configuration (each single view, axial+coronal,
    and the full triple when three views are trained), reusing the per-view
    probability volumes. Paired Wilcoxon signed-rank tests compare the
    axial+coronal ensemble's per-subject DSC against the alternatives.
    """
    _check_plan(manifest, plan)
    torch.set_num_threads(spec.torch_threads)
    os.makedirs(out_dir, exist_ok=True)
    cache = _SubjectCache(manifest)
    configs = _ablation_configs(spec.views)
    rows_by_config: dict[str, list[MetricRow]] = {_config_label(c): [] for c in configs}
    said_params = False
    for i, fold in enumerate(plan.folds):
        fold_dir = os.path.join(out_dir, _fold_dir_name(i, fold.fraction))
        os.makedirs(fold_dir, exist_ok=True)
        models = {}
        for view in spec.views:
            if verbose:
                print(f"[{_fold_dir_name(i, fold.fraction)}] training {view}", flush=True)
            models[view] = train_view(
                view,
                [cache.get(s) for s in fold.train_ids],
                [cache.get(s) for s in fold.validation_ids],
                spec,
                seed=derive_seed(plan.seed, 31, i, view),
                curve_path=os.path.join(fold_dir, f"curve_{view}.csv"),
            )
            if verbose and not said_params:
                print(param_count_report(models[view]), flush=True)
                said_params = True
            save_checkpoint(models[view], os.path.join(fold_dir, f"model_{view}.npz"))
        for sid in fold.test_ids:
            rec = cache.by_id[sid]
            try:
                s = cache.get(sid)
                per_view = {
                    v: predict_view(models[v], s.image, batch_size=spec.batch_size, check_normalized=False)
                    for v in spec.views
                }
            except SheetsegError as e:
                for c in configs:
                    rows_by_config[_config_label(c)].append(
                        MetricRow(sid, rec.scanner_id, i, None, None, None, f"error: {e}")
                    )
                continue
            for c in configs:
                label = _config_label(c)
                sub = {v: per_view[v] for v in c}
                fused = sub[c[0]] if len(c) == 1 else fuse_views(sub, spec.fusion_lambda, halve=spec.halve_fused)
                mask = postprocess(fused, spec.threshold, spec.postproc_fraction)
                triple = evaluate_subject(s.label, mask, s.label.spacing)
                rows_by_config[label].append(
                    MetricRow(sid, rec.scanner_id, i, triple.vs, triple.hd95_mm, triple.dsc, triple.status)
                )
    for label, rows in rows_by_config.items():
        write_metric_rows(os.path.join(out_dir, f"metrics_{label.replace('+', '_')}.csv"), rows)
    tests = {}
    ref_label = "axial+coronal"
    if ref_label in rows_by_config:
        ref = {(r.subject_id, r.fold): r.dsc for r in rows_by_config[ref_label]}
        for label, rows in rows_by_config.items():
            if label == ref_label:
                continue
            other = {(r.subject_id, r.fold): r.dsc for r in rows}
            pairs = [
                (ref[k], other[k])
                for k in sorted(ref)
                if k in other and ref[k] is not None and other[k] is not None
            ]
            if not pairs:
                continue
            diffs = [x - y for x, y in pairs]
            tests[f"dsc {ref_label} vs {label}"] = asdict(wilcoxon_signed_rank(diffs))
    ref_rows = rows_by_config.get(ref_label) or rows_by_config[_config_label(configs[0])]
    report = EvalReport(
        strategy=plan.strategy,
        seed=plan.seed,
        rows=ref_rows,
        fold_summaries=[],
        overall=_summarize(ref_rows),
        per_scanner={},
        tests=tests,
        configs={label: _summarize(rows) for label, rows in rows_by_config.items()},
    )
    write_report(report, os.path.join(out_dir, "report.json"))
    return report
