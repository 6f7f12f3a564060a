"""Synthetic volumes with thin curved sheet targets and known ground truth.

Each phantom is a skull-stripped brain analogue: an ellipsoid filled with a
two-tissue texture (grey/white analogue levels), plus two mirrored thin
sheets running predominantly parallel to the sagittal plane, at an intensity
between the two tissue levels so the target is low-contrast. Four "scanner
styles" vary the contrast gap and the noise level, standing in for a
multi-site cohort. Labels are extracted before noise injection, so the mask
depends only on the geometry seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data_io import SubjectRecord, Volume, derive_seed, save_volume, write_manifest
from .errors import ConfigurationError

GM_LEVEL = 100.0
WM_LEVEL = 140.0

# scanner style -> (sheet contrast gap above grey matter, noise sigma)
STYLES = {
    "style_A": (24.0, 3.0),  # high contrast
    "style_B": (16.0, 5.0),  # medium
    "style_C": (12.0, 7.0),  # low contrast, noisiest
    "style_D": (16.0, 4.0),  # medium
}

# sheets stay in the middle band of axial slices, clear of the zeroed slabs
AXIAL_BAND = (0.22, 0.78)
SHEET_Y_EXTENT = 0.19  # half-extent along the coronal axis, fraction of Y


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sheet_thickness: float = 1.5  # mm
    sheet_count: int = 2
    background_tissues: tuple[float, float] = (GM_LEVEL, WM_LEVEL)
    scanner_style: str = "style_A"
    seed: int = 0
    noise_seed: int | None = None  # defaults to a value derived from seed

    def __post_init__(self):
        if self.scanner_style not in STYLES:
            raise ConfigurationError(
                f"unknown scanner_style {self.scanner_style!r}; expected one of {sorted(STYLES)}"
            )
        if self.sheet_count not in (1, 2):
            raise ConfigurationError("sheet_count must be 1 or 2")
        if len(self.shape) != 3 or any(s < 16 for s in self.shape):
            raise ConfigurationError(f"shape must be three dims >= 16, got {self.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigurationError(f"spacing must be positive, got {self.spacing}")
        # the sheet normal is the sagittal (first) axis
        if self.sheet_thickness < self.spacing[0]:
            raise ConfigurationError(
                f"sheet_thickness {self.sheet_thickness}mm is under one voxel "
                f"({self.spacing[0]}mm) along the sheet normal"
            )
        lo, hi = self.background_tissues
        if not lo < hi:
            raise ConfigurationError("background_tissues must be (low, high) with low < high")


def _ellipsoid(shape, center, semi) -> np.ndarray:
    grids = np.indices(shape, dtype=np.float64)
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, a in zip(grids, center, semi):
        acc += ((g - c) / a) ** 2
    return acc <= 1.0


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Build one (image, label) pair, deterministic per spec."""
    rng = np.random.default_rng(derive_seed(spec.seed, 11))
    nx, ny, nz = spec.shape
    gm, wm = spec.background_tissues
    gap, sigma = STYLES[spec.scanner_style]

    center = np.array([nx, ny, nz]) / 2.0 + rng.uniform(-1.5, 1.5, size=3)
    semi = np.array([0.40 * nx, 0.44 * ny, 0.40 * nz]) * rng.uniform(0.95, 1.05, size=3)
    brain = _ellipsoid(spec.shape, center, semi)

    # blobby two-tissue texture
    texture_field = ndimage.gaussian_filter(rng.standard_normal(spec.shape), sigma=6.0)
    tissue = np.where(texture_field > 0, wm, gm)

    # mirrored sheets: x = cx +/- (offset + smooth sinusoidal perturbation)
    xs = np.arange(nx, dtype=np.float64)[:, None, None]
    ys = np.arange(ny, dtype=np.float64)[None, :, None]
    zs = np.arange(nz, dtype=np.float64)[None, None, :]
    offset = 0.20 * nx + rng.uniform(-1.0, 1.0)
    amp_y, amp_z = rng.uniform(1.5, 3.0, size=2)
    freq_y, freq_z = rng.uniform(0.8, 1.6, size=2)
    phase_y, phase_z = rng.uniform(0.0, 2 * np.pi, size=2)
    wobble = amp_y * np.sin(2 * np.pi * freq_y * (ys - center[1]) / ny + phase_y) + (
        amp_z * np.sin(2 * np.pi * freq_z * (zs - center[2]) / nz + phase_z)
    )
    half = spec.sheet_thickness / 2.0
    sides = (1.0, -1.0)[: spec.sheet_count]
    sheet = np.zeros(spec.shape, dtype=bool)
    for side in sides:
        surf = center[0] + side * (offset + wobble)
        sheet |= np.abs(xs - surf) * spec.spacing[0] <= half

    interior = _ellipsoid(spec.shape, center, semi * 0.92)
    band = (zs >= AXIAL_BAND[0] * nz) & (zs <= AXIAL_BAND[1] * nz)
    y_extent = np.abs(ys - center[1]) <= SHEET_Y_EXTENT * ny
    label = sheet & interior & (band & y_extent)

    image = np.zeros(spec.shape, dtype=np.float64)
    image[brain] = tissue[brain]
    image[label] = gm + gap

    noise_seed = spec.noise_seed if spec.noise_seed is not None else derive_seed(spec.seed, 13)
    noise_rng = np.random.default_rng(noise_seed)
    noise = noise_rng.normal(0.0, sigma, size=spec.shape)
    image[brain] += noise[brain]  # background stays exactly zero

    img = Volume(data=image.astype(np.float32), spacing=spec.spacing, kind="image")
    lbl = Volume(data=label.astype(np.uint8), spacing=spec.spacing, kind="mask")
    return img, lbl


def generate_cohort(
    out_dir,
    n_per_style: dict,
    seed: int = 0,
    shape: tuple[int, int, int] = (64, 64, 64),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> str:
    """Write a phantom cohort (images, labels, manifest CSV) to disk.

    scanner_id in the manifest is the style name. Returns the manifest path.
    """
    unknown = set(n_per_style) - set(STYLES)
    if unknown:
        raise ConfigurationError(f"unknown styles: {sorted(unknown)}")
    if any(int(n) < 0 for n in n_per_style.values()):
        raise ConfigurationError("per-style counts must be >= 0")
    img_dir = os.path.join(out_dir, "images")
    lbl_dir = os.path.join(out_dir, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lbl_dir, exist_ok=True)
    records = []
    for style in sorted(n_per_style):
        for i in range(int(n_per_style[style])):
            sid = f"{style}_{i:03d}"
            spec = PhantomSpec(
                shape=shape,
                spacing=spacing,
                scanner_style=style,
                seed=derive_seed(seed, style, i),
            )
            img, lbl = generate_phantom(spec)
            img_path = os.path.join(img_dir, f"{sid}.nii.gz")
            lbl_path = os.path.join(lbl_dir, f"{sid}.nii.gz")
            save_volume(img, img_path)
            save_volume(lbl, lbl_path)
            records.append(
                SubjectRecord(
                    subject_id=sid, scanner_id=style, image_path=img_path, label_path=lbl_path
                )
            )
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(records, manifest_path)
    return manifest_path
