"""Axis transforms between 3D volumes and per-view 2D slice stacks.

Slicing is a pure index permutation (no interpolation), so the inverse
transform reconstructs the source volume bit-exactly. Anisotropic volumes
are accepted with a warning: slices then mix two different in-plane
resolutions, which the downstream 2D models ignore.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data_io import Volume
from .errors import ContractError


class ViewAxis(str, Enum):
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"

    @classmethod
    def parse(cls, name: "str | ViewAxis") -> "ViewAxis":
        if isinstance(name, ViewAxis):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise ContractError(f"unknown view axis {name!r}") from None


@dataclass
class ViewStack:
    """Ordered 2D slices taken perpendicular to one anatomical axis.

    ``slices[k]`` is the slice at voxel coordinate k along the view axis;
    the two in-plane axes keep their original relative order. Carries the
    metadata needed to invert the extraction exactly.
    """

    slices: np.ndarray  # (n, h, w)
    axis: ViewAxis
    source_shape: tuple[int, int, int]
    source_axes: tuple[str, str, str]
    spacing: tuple[float, float, float]
    kind: str

    @property
    def n(self) -> int:
        return self.slices.shape[0]

    def __post_init__(self):
        self.slices = np.asarray(self.slices)
        if self.slices.ndim != 3:
            raise ContractError(f"ViewStack slices must be (n, h, w), got shape {self.slices.shape}")
        ax = self.source_axes.index(self.axis.value)
        expected = (
            self.source_shape[ax],
            *(d for i, d in enumerate(self.source_shape) if i != ax),
        )
        if tuple(self.slices.shape) != expected:
            raise ContractError(
                f"inconsistent ViewStack: slices {self.slices.shape} vs expected {expected} "
                f"for {self.axis.value} view of {self.source_shape}"
            )


def to_view(v: Volume, axis: "ViewAxis | str") -> ViewStack:
    """Reorder a volume into the slice stack for one anatomical view."""
    axis = ViewAxis.parse(axis)
    ax = v.axis_index(axis.value)
    if len(set(round(s, 9) for s in v.spacing)) > 1:
        warnings.warn(
            f"anisotropic spacing {v.spacing}: {axis.value} slices are extracted "
            "without resampling",
            stacklevel=2,
        )
    slices = np.ascontiguousarray(np.moveaxis(v.data, ax, 0))
    return ViewStack(
        slices=slices,
        axis=axis,
        source_shape=v.shape,
        source_axes=v.axes,
        spacing=v.spacing,
        kind=v.kind,
    )


def from_view(s: ViewStack) -> Volume:
    """Invert :func:`to_view`, reconstructing the source volume exactly."""
    ax = s.source_axes.index(s.axis.value)
    data = np.moveaxis(s.slices, 0, ax)
    if tuple(data.shape) != tuple(s.source_shape):
        raise ContractError(f"stack reassembles to {data.shape}, expected {s.source_shape}")
    return Volume(np.ascontiguousarray(data), spacing=s.spacing, kind=s.kind, axes=s.source_axes)
