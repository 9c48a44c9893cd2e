"""Window acquisition with sandbox enforcement, plus scan file IO.

Acquisition goes through one chokepoint, :func:`acquire`: every window a
tuning run asks for is checked against the safety sandbox first, and
windows the source cannot deliver come back as :class:`Blocked` instead
of raising, so the optimizer can treat them as a fixed bad fitness.

Scan files are a single JSON document: a self-describing header plus
base64 blobs of little-endian float64 (values, axes) and int8 (labels)
in row-major order. Label codes follow :class:`~qdtune.grids.StateLabel`.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass

import numpy as np

from . import device as device_model
from .device import DeviceParams
from .errors import (
    ConfigurationError,
    DomainError,
    ScanFormatError,
    ScanVersionError,
    ShapeError,
    UnsupportedResolutionError,
)
from .grids import ACQUISITION_AXES, LabelGrid, ScanGrid, ScanMeta, StateLabel

SCAN_SCHEMA_VERSION = "1"
SCAN_SUFFIX = ".qdscan.json"


@dataclass(frozen=True)
class Sandbox:
    """Gate-voltage safety limits; windows may not cross them."""

    v1_range: tuple[float, float] = device_model.DOMAIN_MV
    v2_range: tuple[float, float] = device_model.DOMAIN_MV
    blocked_fitness: float = 2.0

    def __post_init__(self):
        for name, (lo, hi) in (("v1_range", self.v1_range), ("v2_range", self.v2_range)):
            if not lo < hi:
                raise ConfigurationError(f"sandbox {name} must have lo < hi, got ({lo}, {hi})")
        if not self.blocked_fitness > 0:
            raise ConfigurationError("blocked_fitness must be positive")

    def contains_window(self, center: tuple[float, float], span: tuple[float, float]) -> bool:
        """True when all four window corners are inside the limits."""
        for (lo, hi), c, s in zip((self.v1_range, self.v2_range), center, span):
            if c - s / 2.0 < lo or c + s / 2.0 > hi:
                return False
        return True


@dataclass(frozen=True)
class Blocked:
    """Signal that a window was refused; carries the reason for logs."""

    reason: str = "sandbox"


@dataclass(frozen=True)
class SimulatedDevice:
    """Measurement source backed by the synthetic device model."""

    params: DeviceParams
    with_noise: bool = False
    noise_seed: int = 0


@dataclass(eq=False)
class PremeasuredScan:
    """Measurement source backed by one full-range stored raster."""

    scan: ScanGrid
    labels: LabelGrid | None = None

    def __post_init__(self):
        if self.labels is not None:
            if self.labels.shape != self.scan.shape:
                raise ShapeError("label raster shape does not match the scan")


MeasurementSource = SimulatedDevice | PremeasuredScan


def _crop_indices(axis: np.ndarray, center: float, count: int, stride: int) -> np.ndarray | None:
    """Stored indices for a window of ``count`` pixels around ``center``.

    The window center snaps to the nearest stored pixel center; there is
    no resampling. Returns None when the window runs off the raster.
    """
    nearest = int(np.argmin(np.abs(axis - center)))
    start = nearest - (count * stride) // 2
    idx = start + stride * np.arange(count)
    if idx[0] < 0 or idx[-1] >= axis.size:
        return None
    return idx


def _acquire_with_labels(
    source: MeasurementSource,
    center: tuple[float, float],
    span: tuple[float, float],
    resolution: float,
    sandbox: Sandbox,
) -> tuple[ScanGrid, LabelGrid | None] | Blocked:
    if not sandbox.contains_window(center, span):
        return Blocked("window crosses the sandbox limits")

    if isinstance(source, SimulatedDevice):
        try:
            scan, labels = device_model.render_scan(
                source.params,
                center,
                span,
                resolution,
                with_noise=source.with_noise,
                noise_seed=source.noise_seed,
            )
        except DomainError:
            return Blocked("window exceeds the device domain")
        return scan, labels

    if isinstance(source, PremeasuredScan):
        native = source.scan.meta.resolution
        if resolution < native * (1.0 - 1e-9):
            raise UnsupportedResolutionError(
                f"requested {resolution} mV/px is finer than the stored raster ({native} mV/px)"
            )
        ratio = resolution / native
        if abs(ratio - round(ratio)) > 1e-9:
            raise UnsupportedResolutionError(
                f"requested {resolution} mV/px is not an integer multiple of {native} mV/px"
            )
        stride = int(round(ratio))

        counts = []
        for extent in span:
            n = extent / resolution
            if abs(n - round(n)) > 1e-9:
                raise ConfigurationError(
                    f"span {extent} is not an integer number of {resolution} mV pixels"
                )
            counts.append(int(round(n)))

        i1 = _crop_indices(source.scan.v1_axis, center[0], counts[0], stride)
        i2 = _crop_indices(source.scan.v2_axis, center[1], counts[1], stride)
        if i1 is None or i2 is None:
            return Blocked("window falls outside the stored raster")

        v1 = source.scan.v1_axis[i1]
        v2 = source.scan.v2_axis[i2]
        meta = ScanMeta(resolution=native * stride, acquisition_axis=source.scan.meta.acquisition_axis)
        scan = ScanGrid(source.scan.values[np.ix_(i1, i2)], v1, v2, meta)
        labels = None
        if source.labels is not None:
            labels = LabelGrid(source.labels.labels[np.ix_(i1, i2)], v1, v2)
        return scan, labels

    raise ConfigurationError(f"unknown measurement source type {type(source).__name__}")


def acquire(
    source: MeasurementSource,
    center: tuple[float, float],
    span: tuple[float, float],
    resolution: float,
    sandbox: Sandbox | None = None,
) -> ScanGrid | Blocked:
    """Measure one window, or refuse it.

    Returns Blocked when any window corner leaves the sandbox, when a
    simulated window exceeds the device domain, or when a premeasured
    window runs off the stored raster.
    """
    result = _acquire_with_labels(source, center, span, resolution, sandbox or Sandbox())
    if isinstance(result, Blocked):
        return result
    return result[0]


def acquire_with_labels(
    source: MeasurementSource,
    center: tuple[float, float],
    span: tuple[float, float],
    resolution: float,
    sandbox: Sandbox | None = None,
) -> tuple[ScanGrid, LabelGrid | None] | Blocked:
    """Like :func:`acquire` but keeps the ground-truth labels when the source has them."""
    return _acquire_with_labels(source, center, span, resolution, sandbox or Sandbox())


def inject_sensor_flip(scan: ScanGrid) -> ScanGrid:
    """Return the scan with the sensor sign inverted (axes unchanged)."""
    return scan.with_values(-scan.values)


# --- file format ----------------------------------------------------------

_LABEL_CODE_TABLE = {label.name: int(label) for label in StateLabel}


def _encode(arr: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).astype(dtype).tobytes()).decode("ascii")


def _decode(field: str, text, dtype: str, expected: int) -> np.ndarray:
    if not isinstance(text, str):
        raise ScanFormatError(f"field {field!r} must be a base64 string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ScanFormatError(f"field {field!r} is not valid base64") from exc
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != expected * itemsize:
        raise ScanFormatError(
            f"field {field!r} holds {len(raw)} bytes, expected {expected * itemsize}"
        )
    return np.frombuffer(raw, dtype=dtype)


def save_scan(scan: ScanGrid, path, labels: LabelGrid | None = None) -> None:
    """Write a scan (and optional ground-truth labels) as one JSON document."""
    if labels is not None and labels.shape != scan.shape:
        raise ShapeError("label raster shape does not match the scan")
    doc = {
        "format": "qdscan",
        "version": SCAN_SCHEMA_VERSION,
        "resolution_mv": scan.meta.resolution,
        "acquisition_axis": scan.meta.acquisition_axis,
        "shape": list(scan.shape),
        "origin_mv": [float(scan.v1_axis[0]), float(scan.v2_axis[0])],
        "units": {"axes": "mV", "values": "sensor signal (arb.)"},
        "v1_axis": _encode(scan.v1_axis, "<f8"),
        "v2_axis": _encode(scan.v2_axis, "<f8"),
        "values": _encode(scan.values, "<f8"),
    }
    if labels is not None:
        doc["labels"] = _encode(labels.labels, "<i1")
        doc["label_codes"] = _LABEL_CODE_TABLE
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scan(path) -> tuple[ScanGrid, LabelGrid | None]:
    """Read a scan file written by :func:`save_scan`; bit-exact round trip."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScanFormatError(f"cannot read scan file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScanFormatError(f"scan file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScanFormatError("scan file must contain a JSON object")
    if doc.get("format") != "qdscan":
        raise ScanFormatError(f"field 'format' is {doc.get('format')!r}, expected 'qdscan'")
    version = doc.get("version")
    if version != SCAN_SCHEMA_VERSION:
        raise ScanVersionError(
            f"scan version {version!r} not supported (expected {SCAN_SCHEMA_VERSION!r})"
        )

    shape = doc.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 2
        or not all(isinstance(n, int) and n > 0 for n in shape)
    ):
        raise ScanFormatError("field 'shape' must be a pair of positive integers")
    n1, n2 = shape

    resolution = doc.get("resolution_mv")
    if not isinstance(resolution, (int, float)) or not resolution > 0:
        raise ScanFormatError("field 'resolution_mv' must be a positive number")
    axis_name = doc.get("acquisition_axis")
    if axis_name not in ACQUISITION_AXES:
        raise ScanFormatError(f"field 'acquisition_axis' must be one of {ACQUISITION_AXES}")

    for field in ("v1_axis", "v2_axis", "values"):
        if field not in doc:
            raise ScanFormatError(f"scan file missing field {field!r}")
    v1 = _decode("v1_axis", doc["v1_axis"], "<f8", n1)
    v2 = _decode("v2_axis", doc["v2_axis"], "<f8", n2)
    values = _decode("values", doc["values"], "<f8", n1 * n2).reshape(n1, n2)
    meta = ScanMeta(resolution=float(resolution), acquisition_axis=axis_name)
    try:
        scan = ScanGrid(values, v1, v2, meta)
    except ShapeError as exc:
        raise ScanFormatError(f"scan file is inconsistent: {exc}") from exc

    labels = None
    if "labels" in doc:
        codes = _decode("labels", doc["labels"], "<i1", n1 * n2).reshape(n1, n2)
        try:
            labels = LabelGrid(codes, v1, v2)
        except ShapeError as exc:
            raise ScanFormatError(f"label raster is inconsistent: {exc}") from exc
    return scan, labels
