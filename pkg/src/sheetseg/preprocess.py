"""Intensity normalization and geometric standardization of input volumes.

The pipeline assumes skull-stripped inputs (background near zero): a brain
mask is recovered by relative thresholding plus morphology, intensities are
z-scored using statistics from inside that mask, and slices are center
cropped/padded to the network input size with an invertible record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data_io import Volume
from .errors import ContractError, PreprocessingError
from .views import ViewAxis

DEFAULT_THRESHOLD_FRAC = 0.05
DEFAULT_CLOSING_RADIUS = 2


@dataclass
class BrainMask:
    mask: Volume
    voxel_count: int


def _ball(radius: int) -> np.ndarray:
    r = int(radius)
    grid = np.indices((2 * r + 1,) * 3) - r
    return (grid**2).sum(axis=0) <= r * r


def compute_brain_mask(
    image: Volume,
    threshold: float | None = None,
    threshold_frac: float = DEFAULT_THRESHOLD_FRAC,
    closing_radius: int = DEFAULT_CLOSING_RADIUS,
) -> BrainMask:
    """Threshold -> binary closing -> largest 6-connected component.

    The threshold defaults to ``threshold_frac`` of the volume maximum, which
    makes the mask invariant to positive rescaling of the image; pass an
    absolute ``threshold`` to override.
    """
    data = image.data
    theta = float(threshold) if threshold is not None else threshold_frac * float(data.max())
    binary = data > theta
    if closing_radius > 0:
        binary = ndimage.binary_closing(binary, structure=_ball(closing_radius))
    labels, n = ndimage.label(binary, structure=ndimage.generate_binary_structure(3, 1))
    if n == 0:
        raise PreprocessingError("no brain voxels above threshold")
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    largest = int(counts.argmax())
    mask = (labels == largest).astype(np.uint8)
    return BrainMask(mask=image.with_data(mask, kind="mask"), voxel_count=int(mask.sum()))


def zscore_normalize(image: Volume, brain: BrainMask) -> Volume:
    """Standardize all voxels using mean/std of the brain voxels only.

    Uses the population standard deviation. The whole volume is transformed
    (not just the mask) so that full slices can be fed to the network.
    """
    if brain.voxel_count < 2:
        raise PreprocessingError(f"brain mask has {brain.voxel_count} voxel(s); need at least 2")
    inside = image.data[brain.mask.data > 0].astype(np.float64)
    mu = inside.mean()
    sigma = inside.std()  # ddof=0
    if sigma == 0:
        raise PreprocessingError("constant brain intensity; z-score undefined")
    out = ((image.data.astype(np.float64) - mu) / sigma).astype(np.float32)
    return image.with_data(out, kind="image")


@dataclass
class CropPadRecord:
    """Bookkeeping to undo an in-plane center crop/pad.

    ``offsets[i]`` is (low, high) for array axis i: positive amounts were
    padded on, negative amounts were cropped off. The view axis is untouched.
    """

    original_shape: tuple[int, int, int]
    target_inplane: tuple[int, int]
    axis: str
    offsets: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    @property
    def result_shape(self) -> tuple[int, int, int]:
        return tuple(
            d + lo + hi for d, (lo, hi) in zip(self.original_shape, self.offsets)
        )


def _split_amount(diff: int) -> tuple[int, int]:
    # odd differences put the extra voxel on the high-index side
    low = abs(diff) // 2
    high = abs(diff) - low
    if diff >= 0:
        return low, high
    return -low, -high


def crop_pad_inplane(
    v: Volume, target: tuple[int, int], axis: "ViewAxis | str"
) -> tuple[Volume, CropPadRecord]:
    """Center crop or zero-pad every slice perpendicular to ``axis`` to H x W."""
    if len(target) != 2 or any(t < 1 for t in target):
        raise ContractError(f"target in-plane size must be two positive ints, got {target}")
    axis = ViewAxis.parse(axis)
    ax = v.axis_index(axis.value)
    inplane = [i for i in range(3) if i != ax]
    offsets = [(0, 0), (0, 0), (0, 0)]
    for t, i in zip(target, inplane):
        offsets[i] = _split_amount(t - v.shape[i])
    data = v.data
    for i, (lo, hi) in enumerate(offsets):
        if lo == 0 and hi == 0:
            continue
        if lo >= 0 and hi >= 0:
            pad = [(0, 0)] * 3
            pad[i] = (lo, hi)
            data = np.pad(data, pad)
        else:
            sl = [slice(None)] * 3
            sl[i] = slice(-lo, data.shape[i] + hi)
            data = data[tuple(sl)]
    rec = CropPadRecord(
        original_shape=v.shape,
        target_inplane=tuple(int(t) for t in target),
        axis=axis.value,
        offsets=tuple(tuple(o) for o in offsets),
    )
    return v.with_data(np.ascontiguousarray(data)), rec


def invert_crop_pad(v: Volume, rec: CropPadRecord) -> Volume:
    """Undo :func:`crop_pad_inplane`; cropped borders come back zero-filled."""
    if tuple(v.shape) != tuple(rec.result_shape):
        raise ContractError(
            f"volume shape {v.shape} does not match crop/pad record target {rec.result_shape}"
        )
    data = v.data
    for i, (lo, hi) in enumerate(rec.offsets):
        if lo == 0 and hi == 0:
            continue
        if lo >= 0 and hi >= 0:
            sl = [slice(None)] * 3
            sl[i] = slice(lo, data.shape[i] - hi)
            data = data[tuple(sl)]
        else:
            pad = [(0, 0)] * 3
            pad[i] = (-lo, -hi)
            data = np.pad(data, pad)
    return v.with_data(np.ascontiguousarray(data))
