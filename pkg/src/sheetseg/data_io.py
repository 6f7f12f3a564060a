"""Volumes on disk, dataset manifests, and deterministic split plans.

Volumes are stored as NIfTI-1 (.nii / .nii.gz). The reader/writer below
covers the single-frame 3D subset of the format: dim, datatype, pixdim,
scl slope/intercept and a diagonal sform. Masks are written as uint8,
images and probability maps as float32.

All randomized split generation goes through numpy's PCG64
(``numpy.random.default_rng`` seeded via ``SeedSequence``) so plans are
reproducible from (manifest, strategy, seed) alone.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, FormatError

CANONICAL_AXES = ("sagittal", "coronal", "axial")

VOLUME_KINDS = ("image", "mask", "probability")


@dataclass
class Volume:
    """A 3D scalar grid with voxel spacing in mm and anatomical axis order.

    ``axes[i]`` names the anatomical direction along which array axis ``i``
    varies; the default matches RAS-ordered NIfTI data (sagittal, coronal,
    axial).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = "image"
    axes: tuple[str, str, str] = CANONICAL_AXES

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ContractError(f"Volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ContractError(f"spacing must be three positive floats, got {self.spacing}")
        if self.kind not in VOLUME_KINDS:
            raise ContractError(f"kind must be one of {VOLUME_KINDS}, got {self.kind!r}")
        if sorted(self.axes) != sorted(CANONICAL_AXES):
            raise ContractError(f"axes must be a permutation of {CANONICAL_AXES}, got {self.axes}")
        if self.kind == "mask":
            vals = np.unique(self.data)
            if not np.isin(vals, (0, 1)).all():
                raise ContractError("mask volumes must contain only {0, 1}")
        elif self.kind == "probability":
            if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
                raise ContractError("probability volumes must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def axis_index(self, anatomical: str) -> int:
        """Array axis along which the given anatomical direction varies."""
        try:
            return self.axes.index(anatomical)
        except ValueError:
            raise ContractError(f"volume has no {anatomical!r} axis (axes={self.axes})") from None

    def with_data(self, data: np.ndarray, kind: str | None = None) -> "Volume":
        """New volume sharing spacing/axes metadata."""
        return Volume(data, spacing=self.spacing, kind=kind or self.kind, axes=self.axes)


# ---------------------------------------------------------------------------
# NIfTI-1 I/O
# ---------------------------------------------------------------------------

_HDR_SIZE = 348
_VOX_OFFSET = 352.0

_DTYPE_CODES = {
    np.dtype(np.uint8): (2, 8),
    np.dtype(np.int16): (4, 16),
    np.dtype(np.int32): (8, 32),
    np.dtype(np.float32): (16, 32),
    np.dtype(np.float64): (64, 64),
    np.dtype(np.int8): (256, 8),
    np.dtype(np.uint16): (512, 16),
}
_CODE_DTYPES = {code: dt for dt, (code, _) in _DTYPE_CODES.items()}


def _open_maybe_gz(path: Path, mode: str):
    if path.name.endswith(".gz"):
        if "w" in mode:
            # mtime pinned so identical volumes give identical bytes
            return gzip.GzipFile(path, mode, mtime=0)
        return gzip.open(path, mode)
    return open(path, mode)


def _pack_header(shape, spacing, dtype) -> bytes:
    code, bitpix = _DTYPE_CODES[np.dtype(dtype)]
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, _VOX_OFFSET)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<h", hdr, 254, 1)  # sform_code: scanner
    struct.pack_into("<4f", hdr, 280, spacing[0], 0, 0, 0)
    struct.pack_into("<4f", hdr, 296, 0, spacing[1], 0, 0)
    struct.pack_into("<4f", hdr, 312, 0, 0, spacing[2], 0)
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    return bytes(hdr) + b"\x00\x00\x00\x00"  # no header extensions


def save_volume(v: Volume, path: str | Path) -> None:
    """Write a volume as NIfTI-1; gzip-compressed when the name ends in .gz.

    Masks are stored as uint8, everything else as float32. The parent
    directory must already exist.
    """
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"cannot write {path}: directory {path.parent} does not exist")
    dtype = np.uint8 if v.kind == "mask" else np.float32
    data = np.ascontiguousarray(v.data, dtype=dtype)
    with _open_maybe_gz(path, "wb") as f:
        f.write(_pack_header(v.shape, v.spacing, dtype))
        f.write(data.tobytes(order="F"))


def load_volume(path: str | Path, kind: str = "image") -> Volume:
    """Read a 3D NIfTI-1 volume.

    ``kind`` declares how to interpret the payload: "mask" binarizes any
    nonzero voxel to 1, "probability" validates the [0, 1] range, "image"
    casts to float32.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    with _open_maybe_gz(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HDR_SIZE:
        raise FormatError(f"{path}: too short for a NIfTI-1 header")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr == _HDR_SIZE:
            break
    else:
        raise FormatError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad NIfTI magic {magic!r}")
    dim = struct.unpack_from(order + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4 : 1 + ndim]):
        raise FormatError(f"{path}: expected 3D data, header dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])
    (datatype,) = struct.unpack_from(order + "h", raw, 70)
    if datatype not in _CODE_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = _CODE_DTYPES[datatype].newbyteorder(order)
    pixdim = struct.unpack_from(order + "8f", raw, 76)
    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise FormatError(f"{path}: nonpositive voxel spacing {spacing}")
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    offset = int(vox_offset) if vox_offset else _HDR_SIZE
    slope, inter = struct.unpack_from(order + "2f", raw, 112)

    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float32) * slope + inter

    if kind == "mask":
        data = (data != 0).astype(np.uint8)
    elif kind == "image":
        data = np.asarray(data, dtype=np.float32)
    else:
        data = np.asarray(data, dtype=np.float32)
    return Volume(data, spacing=spacing, kind=kind)


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("subject_id", "scanner_id", "image_path", "label_path")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    scanner_id: str
    image_path: str
    label_path: str | None = None


def read_manifest(path: str | Path) -> list[SubjectRecord]:
    """Read a manifest CSV; relative paths are resolved against its directory."""
    path = Path(path)
    base = path.parent
    records = []
    seen = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{path}: manifest missing columns {sorted(missing)}")
        for row in reader:
            sid = row["subject_id"].strip()
            if sid in seen:
                raise FormatError(f"{path}: duplicate subject_id {sid!r}")
            seen.add(sid)
            img = row["image_path"].strip()
            lbl = row["label_path"].strip()
            records.append(
                SubjectRecord(
                    subject_id=sid,
                    scanner_id=row["scanner_id"].strip(),
                    image_path=str(base / img) if not Path(img).is_absolute() else img,
                    label_path=(str(base / lbl) if not Path(lbl).is_absolute() else lbl) if lbl else None,
                )
            )
    return records


def write_manifest(records: list[SubjectRecord], path: str | Path) -> None:
    """Write a manifest CSV, storing paths relative to its directory when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: str | None) -> str:
        if not p:
            return ""
        rp = Path(p).resolve()
        try:
            return str(rp.relative_to(base))
        except ValueError:
            return str(rp)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([r.subject_id, r.scanner_id, rel(r.image_path), rel(r.label_path)])


# ---------------------------------------------------------------------------
# Split plans
# ---------------------------------------------------------------------------


@dataclass
class Fold:
    train_ids: list[str]
    validation_ids: list[str]
    test_ids: list[str]
    fraction: float | None = None


@dataclass
class SplitPlan:
    folds: list[Fold]
    strategy: str
    seed: int

    def to_json(self) -> str:
        doc = {
            "strategy": self.strategy,
            "seed": self.seed,
            "folds": [
                {
                    "train": f.train_ids,
                    "validation": f.validation_ids,
                    "test": f.test_ids,
                    **({"fraction": f.fraction} if f.fraction is not None else {}),
                }
                for f in self.folds
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        doc = json.loads(text)
        folds = [
            Fold(
                train_ids=list(f["train"]),
                validation_ids=list(f["validation"]),
                test_ids=list(f["test"]),
                fraction=f.get("fraction"),
            )
            for f in doc["folds"]
        ]
        return cls(folds=folds, strategy=doc["strategy"], seed=int(doc["seed"]))


def derive_seed(*parts) -> int:
    """Deterministic child seed from integer or string parts (SeedSequence).

    Strings are folded in through a stable hash; builtin hash() is salted
    per process and must not leak into anything reproducible.
    """
    entropy = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.blake2s(p.encode("utf-8"), digest_size=8).digest()
            entropy.append(int.from_bytes(digest, "little"))
        else:
            entropy.append(int(p))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def _by_scanner(manifest: list[SubjectRecord]) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for rec in manifest:
        groups.setdefault(rec.scanner_id, []).append(rec.subject_id)
    return {k: sorted(v) for k, v in sorted(groups.items())}


def _carve_validation(pool: list[str], rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Split a training pool into (train, validation); 10% of the pool, at least 1."""
    n_val = max(1, len(pool) // 10)
    order = rng.permutation(len(pool))
    val = [pool[i] for i in order[:n_val]]
    train = [pool[i] for i in order[n_val:]]
    return sorted(train), sorted(val)


def make_stratified_kfold(manifest: list[SubjectRecord], k: int, seed: int) -> SplitPlan:
    """Per-scanner shuffled k-fold partition; fold i tests on chunk i of every scanner."""
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    groups = _by_scanner(manifest)
    for scanner, ids in groups.items():
        if len(ids) < k:
            raise ConfigurationError(f"scanner {scanner!r} has {len(ids)} subjects, fewer than k={k}")
    rng = np.random.default_rng(seed)
    chunks: dict[str, list[list[str]]] = {}
    for scanner, ids in groups.items():
        perm = [ids[i] for i in rng.permutation(len(ids))]
        chunks[scanner] = [list(c) for c in np.array_split(perm, k)]
    folds = []
    for i in range(k):
        test = sorted(sid for scanner in groups for sid in chunks[scanner][i])
        pool = sorted(sid for scanner in groups for j in range(k) if j != i for sid in chunks[scanner][j])
        train, val = _carve_validation(pool, np.random.default_rng(derive_seed(seed, 1, i)))
        folds.append(Fold(train_ids=train, validation_ids=val, test_ids=test))
    return SplitPlan(folds=folds, strategy="stratified-kfold", seed=seed)


def make_loso(manifest: list[SubjectRecord]) -> SplitPlan:
    """Leave-one-scanner-out: one fold per scanner, testing on that scanner."""
    groups = _by_scanner(manifest)
    if len(groups) < 2:
        raise ConfigurationError("leave-one-scanner-out needs at least 2 distinct scanners")
    folds = []
    for i, (scanner, test_ids) in enumerate(groups.items()):
        pool = sorted(sid for other, ids in groups.items() if other != scanner for sid in ids)
        train, val = _carve_validation(pool, np.random.default_rng(derive_seed(0, 2, i)))
        folds.append(Fold(train_ids=train, validation_ids=val, test_ids=sorted(test_ids)))
    return SplitPlan(folds=folds, strategy="leave-one-scanner-out", seed=0)


def make_fraction_plan(
    manifest: list[SubjectRecord], steps: list[float], seed: int
) -> SplitPlan:
    """Training-set-size study: nested training subsets over one fixed 4:1 split.

    A stratified 4:1 train/test split is drawn once (per scanner, ceil(0.8 n)
    subjects to the training pool). The pool is shuffled once; the fold for
    fraction f trains on the first ceil(f * |pool|) subjects of that order,
    so larger fractions are supersets of smaller ones. A 10% validation
    carve-out for epoch selection is taken from the tail of each subset,
    which keeps the nesting property on the train sets.
    """
    if not steps:
        raise ConfigurationError("fraction steps must be non-empty")
    if any(not (0 < f <= 1) for f in steps):
        raise ConfigurationError(f"fractions must lie in (0, 1], got {steps}")
    if sorted(steps) != list(steps):
        raise ConfigurationError("fractions must be sorted ascending")
    groups = _by_scanner(manifest)
    rng = np.random.default_rng(seed)
    pool: list[str] = []
    test: list[str] = []
    for scanner, ids in groups.items():
        perm = [ids[i] for i in rng.permutation(len(ids))]
        n_train = math.ceil(0.8 * len(ids))
        pool.extend(perm[:n_train])
        test.extend(perm[n_train:])
    order = rng.permutation(len(pool))
    pool = [pool[i] for i in order]
    test = sorted(test)

    folds = []
    for f in steps:
        n = math.ceil(f * len(pool))
        if n < 2:
            raise ConfigurationError(f"fraction {f} selects only {n} subject(s); need at least 2")
        n_val = max(1, n // 10)
        folds.append(
            Fold(
                train_ids=sorted(pool[: n - n_val]),
                validation_ids=sorted(pool[n - n_val : n]),
                test_ids=test,
                fraction=float(f),
            )
        )
    return SplitPlan(folds=folds, strategy="fraction-ablation", seed=seed)
