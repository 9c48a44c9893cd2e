"""Raster containers shared by the simulator, scan IO, and preprocessing."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError

ACQUISITION_AXES = ("v1", "v2")


class StateLabel(enum.IntEnum):
    """Charge state of the device at one point in plunger-voltage space.

    The integer codes are also the on-disk representation of label
    rasters (see ``scans.save_scan``), so they must never be renumbered.
    """

    NO_DOT = 0
    SINGLE_LEFT = 1
    SINGLE_CENTRAL = 2
    SINGLE_RIGHT = 3
    DOUBLE_DOT = 4


#: Codes counted as "single dot" by the probability oracle: a dot under
#: the left plunger, a merged central dot, or a dot under the right plunger.
SINGLE_DOT_CODES = (
    int(StateLabel.SINGLE_LEFT),
    int(StateLabel.SINGLE_CENTRAL),
    int(StateLabel.SINGLE_RIGHT),
)


@dataclass(frozen=True)
class ScanMeta:
    """Acquisition metadata attached to every scan raster."""

    resolution: float
    acquisition_axis: str = "v1"

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigurationError(f"resolution must be positive, got {self.resolution}")
        if self.acquisition_axis not in ACQUISITION_AXES:
            raise ConfigurationError(
                f"acquisition_axis must be one of {ACQUISITION_AXES}, got {self.acquisition_axis!r}"
            )


def _check_axis(name: str, axis: np.ndarray, resolution: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or axis.size < 1:
        raise ShapeError(f"{name} must be a non-empty 1-d array")
    if axis.size > 1:
        steps = np.diff(axis)
        if not np.all(steps > 0):
            raise ShapeError(f"{name} must be strictly increasing")
        if not np.allclose(steps, resolution, rtol=1e-9, atol=1e-9):
            raise ShapeError(f"{name} spacing does not match resolution {resolution}")
    return axis


@dataclass(eq=False)
class ScanGrid:
    """A charge-sensor raster: ``values[i, j]`` measured at ``(v1_axis[i], v2_axis[j])``."""

    values: np.ndarray
    v1_axis: np.ndarray
    v2_axis: np.ndarray
    meta: ScanMeta

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ShapeError(f"scan values must be 2-d, got ndim={self.values.ndim}")
        self.v1_axis = _check_axis("v1_axis", self.v1_axis, self.meta.resolution)
        self.v2_axis = _check_axis("v2_axis", self.v2_axis, self.meta.resolution)
        if self.values.shape != (self.v1_axis.size, self.v2_axis.size):
            raise ShapeError(
                f"values shape {self.values.shape} does not match axes "
                f"({self.v1_axis.size}, {self.v2_axis.size})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "ScanGrid":
        """Same axes and metadata, different sample values."""
        return ScanGrid(values, self.v1_axis, self.v2_axis, self.meta)


@dataclass(eq=False)
class LabelGrid:
    """Ground-truth state codes on the same raster as a companion ScanGrid."""

    labels: np.ndarray
    v1_axis: np.ndarray
    v2_axis: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ShapeError(f"labels must be 2-d, got ndim={self.labels.ndim}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ShapeError("labels must be an integer array of StateLabel codes")
        valid = [int(lab) for lab in StateLabel]
        if self.labels.size and not np.isin(self.labels, valid).all():
            raise ShapeError("labels contain codes outside the StateLabel table")
        self.v1_axis = np.asarray(self.v1_axis, dtype=float)
        self.v2_axis = np.asarray(self.v2_axis, dtype=float)
        if self.labels.shape != (self.v1_axis.size, self.v2_axis.size):
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match axes "
                f"({self.v1_axis.size}, {self.v2_axis.size})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape
