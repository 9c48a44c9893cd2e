"""Phenomenological double quantum dot device model.

The model is geometric rather than self-consistent: the plunger plane
``(V1, V2)`` in millivolts is partitioned into five charge-state regions,
and the charge-sensor signal is built from thermally broadened
charge-addition steps whose positions follow the same geometry.

Region layout, in terms of the excess voltages ``e_i = V_i - V_i_on`` and
the detuning ``a = e1 - e2``:

* ``NO_DOT``         both plungers below their formation thresholds,
* ``SINGLE_LEFT``    only the left dot formed, or both formed with the
                     detuning above the double-dot band (``a > band upper``),
* ``SINGLE_RIGHT``   the mirror image (``a < band lower``),
* ``DOUBLE_DOT``     both dots formed with the detuning inside the band,
* ``SINGLE_CENTRAL`` both plungers at or above ``merge_threshold``; the
                     dots merge into one dot under the central barrier.

Walking up the main diagonal therefore passes NO_DOT, one of the single
dots, DOUBLE_DOT, and finally SINGLE_CENTRAL, which is the high-voltage
plateau where tuning runs tend to strand.

The sensor signal sums the occupation of each dot weighted by its lever
arm, plus a linear background. Occupations are sums of logistic steps of
width ``THERMAL_WIDTH_MV`` spaced ``line_spacing`` apart along each dot's
chemical-potential coordinate; each dot's potential is shifted by the
other dot's occupation (``interdot_coupling``), which produces the
honeycomb anticrossings, and the two potentials are blended into a common
one above the merge threshold so the merged region shows a single family
of diagonal transition lines.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError, ScanFormatError, ScanVersionError
from .grids import LabelGrid, ScanGrid, ScanMeta, StateLabel

#: Plunger-voltage domain of every simulated device, in millivolts.
DOMAIN_MV = (0.0, 600.0)

#: Width of a thermally broadened charge-addition step.
THERMAL_WIDTH_MV = 2.0

#: Softness of the detuning-band edges in the sensor signal.
BAND_EDGE_WIDTH_MV = 10.0

#: Width of the crossover between separate-dot and merged-dot potentials.
MERGE_BLEND_WIDTH_MV = 4.0

DEVICE_SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class DeviceParams:
    """Parameters of one synthetic device realization."""

    seed: int
    formation_thresholds: tuple[float, float]
    merge_threshold: float
    dd_band: tuple[float, float]
    lever_arms: tuple[float, float]
    line_spacing: float
    line_slopes: tuple[float, float]
    interdot_coupling: float
    noise_sigma: float
    background_gradient: float

    def __post_init__(self):
        lo, hi = DOMAIN_MV
        for name, value in zip(("v1_on", "v2_on"), self.formation_thresholds):
            if not lo < value < hi:
                raise ConfigurationError(f"{name}={value} outside open domain ({lo}, {hi})")
        if not self.dd_band[0] < self.dd_band[1]:
            raise ConfigurationError(f"dd_band lower bound must be below upper, got {self.dd_band}")
        if not self.line_spacing > 0:
            raise ConfigurationError(f"line_spacing must be positive, got {self.line_spacing}")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"noise_sigma must be non-negative, got {self.noise_sigma}")

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc["schema_version"] = DEVICE_SCHEMA_VERSION
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DeviceParams":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != DEVICE_SCHEMA_VERSION:
            raise ScanVersionError(
                f"device schema_version {version!r} not supported (expected {DEVICE_SCHEMA_VERSION!r})"
            )
        try:
            return cls(
                seed=int(doc["seed"]),
                formation_thresholds=tuple(float(x) for x in doc["formation_thresholds"]),
                merge_threshold=float(doc["merge_threshold"]),
                dd_band=tuple(float(x) for x in doc["dd_band"]),
                lever_arms=tuple(float(x) for x in doc["lever_arms"]),
                line_spacing=float(doc["line_spacing"]),
                line_slopes=tuple(float(x) for x in doc["line_slopes"]),
                interdot_coupling=float(doc["interdot_coupling"]),
                noise_sigma=float(doc["noise_sigma"]),
                background_gradient=float(doc["background_gradient"]),
            )
        except KeyError as exc:
            raise ScanFormatError(f"device document missing field {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class VariationConfig:
    """Uniform sampling ranges for each device parameter.

    A zero-width range pins the parameter to that value, so a config of
    midpoints reproduces one fixed device for any seed.
    """

    v1_on: tuple[float, float] = (170.0, 250.0)
    v2_on: tuple[float, float] = (190.0, 270.0)
    merge_threshold: tuple[float, float] = (355.0, 415.0)
    dd_band_lower: tuple[float, float] = (-125.0, -80.0)
    dd_band_upper: tuple[float, float] = (80.0, 125.0)
    lever_arm: tuple[float, float] = (0.8, 1.2)
    line_spacing: tuple[float, float] = (18.0, 28.0)
    line_slope: tuple[float, float] = (0.08, 0.22)
    interdot_coupling: tuple[float, float] = (4.0, 12.0)
    noise_sigma: tuple[float, float] = (0.005, 0.02)
    background_gradient: tuple[float, float] = (0.0005, 0.002)

    def __post_init__(self):
        for name, (lo, hi) in asdict(self).items():
            if lo > hi:
                raise ConfigurationError(f"variation range {name} has lower bound above upper")


def sample_device(seed: int, variation: VariationConfig | None = None) -> DeviceParams:
    """Draw one device realization, deterministic in ``seed``."""
    variation = variation or VariationConfig()
    rng = np.random.default_rng(seed)

    def draw(bounds):
        lo, hi = bounds
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    return DeviceParams(
        seed=int(seed),
        formation_thresholds=(draw(variation.v1_on), draw(variation.v2_on)),
        merge_threshold=draw(variation.merge_threshold),
        dd_band=(draw(variation.dd_band_lower), draw(variation.dd_band_upper)),
        lever_arms=(draw(variation.lever_arm), draw(variation.lever_arm)),
        line_spacing=draw(variation.line_spacing),
        line_slopes=(draw(variation.line_slope), draw(variation.line_slope)),
        interdot_coupling=draw(variation.interdot_coupling),
        noise_sigma=draw(variation.noise_sigma),
        background_gradient=draw(variation.background_gradient),
    )


def reference_device() -> DeviceParams:
    """The fixed device used by the offline experiments and the test suite.

    Its geometry mirrors the double-dot band and the single-dot plateau
    above 375 mV that the tuning experiments probe.
    """
    return DeviceParams(
        seed=0,
        formation_thresholds=(200.0, 220.0),
        merge_threshold=375.0,
        dd_band=(-90.0, 90.0),
        lever_arms=(1.0, 0.95),
        line_spacing=22.0,
        line_slopes=(0.15, 0.12),
        interdot_coupling=8.0,
        noise_sigma=0.01,
        background_gradient=0.001,
    )


def _check_domain(v1, v2):
    lo, hi = DOMAIN_MV
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if (v1 < lo).any() or (v1 > hi).any() or (v2 < lo).any() or (v2 > hi).any():
        raise DomainError(f"plunger voltages outside device domain [{lo}, {hi}] mV")
    return v1, v2


def _state_codes(params: DeviceParams, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Vectorized region lookup; returns int8 StateLabel codes."""
    v1_on, v2_on = params.formation_thresholds
    band_lo, band_hi = params.dd_band
    e1 = v1 - v1_on
    e2 = v2 - v2_on
    a = e1 - e2

    no_dot = (e1 < 0) & (e2 < 0)
    central = (v1 >= params.merge_threshold) & (v2 >= params.merge_threshold)
    left_only = (e1 >= 0) & (e2 < 0)
    right_only = (e2 >= 0) & (e1 < 0)
    codes = np.select(
        [no_dot, central, left_only, right_only, a > band_hi, a < band_lo],
        [
            int(StateLabel.NO_DOT),
            int(StateLabel.SINGLE_CENTRAL),
            int(StateLabel.SINGLE_LEFT),
            int(StateLabel.SINGLE_RIGHT),
            int(StateLabel.SINGLE_LEFT),
            int(StateLabel.SINGLE_RIGHT),
        ],
        default=int(StateLabel.DOUBLE_DOT),
    )
    return codes.astype(np.int8)


def state_at(params: DeviceParams, v1: float, v2: float) -> StateLabel:
    """Ground-truth charge state at a single plunger-voltage point."""
    a1, a2 = _check_domain(v1, v2)
    return StateLabel(int(_state_codes(params, a1, a2)))


def _occupation(mu: np.ndarray, spacing: float) -> np.ndarray:
    """Electron count for a dot: broadened steps at mu = (k + 1/2) * spacing."""
    top = float(np.max(mu, initial=0.0))
    n_levels = max(1, int(np.ceil(top / spacing)) + 2)
    occ = np.zeros_like(mu)
    for k in range(n_levels):
        occ += expit((mu - (k + 0.5) * spacing) / THERMAL_WIDTH_MV)
    return occ


def _sensor_grid(params: DeviceParams, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Noiseless sensor signal on broadcastable voltage arrays."""
    v1_on, v2_on = params.formation_thresholds
    band_lo, band_hi = params.dd_band
    s_left, s_right = params.line_slopes
    arm1, arm2 = params.lever_arms

    e1 = v1 - v1_on
    e2 = v2 - v2_on
    a = e1 - e2

    mu1 = e1 + s_left * e2
    mu2 = e2 + s_right * e1

    # Above the merge threshold the two potentials collapse onto their
    # mean, rotating both line families onto the diagonal.
    merged = expit((np.minimum(v1, v2) - params.merge_threshold) / MERGE_BLEND_WIDTH_MV)
    mu_avg = 0.5 * (mu1 + mu2)
    mu1 = (1.0 - merged) * mu1 + merged * mu_avg
    mu2 = (1.0 - merged) * mu2 + merged * mu_avg

    # Mutual capacitive shift, one pass: each dot sees the other's
    # uncorrected occupation. Suppressed in the merged regime where the
    # two coordinates are no longer distinct.
    n1_bare = _occupation(mu1, params.line_spacing)
    n2_bare = _occupation(mu2, params.line_spacing)
    shift = params.interdot_coupling * (1.0 - merged)
    n1 = _occupation(mu1 - shift * n2_bare, params.line_spacing)
    n2 = _occupation(mu2 - shift * n1_bare, params.line_spacing)

    # Far outside the double-dot band the weaker dot empties into the
    # stronger one, leaving a single family of transition lines.
    w1 = expit((a - band_lo) / BAND_EDGE_WIDTH_MV)
    w2 = expit((band_hi - a) / BAND_EDGE_WIDTH_MV)

    return arm1 * n1 * w1 + arm2 * n2 * w2 + params.background_gradient * (v1 + v2)


def sensor_response(
    params: DeviceParams,
    v1: float,
    v2: float,
    with_noise: bool = False,
    noise_seed: int = 0,
) -> float:
    """Charge-sensor signal at one point, optionally with Gaussian noise."""
    a1, a2 = _check_domain(v1, v2)
    value = float(_sensor_grid(params, a1, a2))
    if with_noise and params.noise_sigma > 0:
        value += float(np.random.default_rng(noise_seed).normal(0.0, params.noise_sigma))
    return value


def render_scan(
    params: DeviceParams,
    center: tuple[float, float],
    span: tuple[float, float],
    resolution: float,
    with_noise: bool = False,
    noise_seed: int = 0,
) -> tuple[ScanGrid, LabelGrid]:
    """Measure a rectangular window and return the raster plus ground truth.

    Pixel centers sit at ``lo + (i + 1/2) * resolution`` so the requested
    window edges bound the raster. The whole window must lie inside
    ``DOMAIN_MV``; anything else raises DomainError.
    """
    if not resolution > 0:
        raise ConfigurationError(f"resolution must be positive, got {resolution}")
    c1, c2 = float(center[0]), float(center[1])
    s1, s2 = float(span[0]), float(span[1])
    if s1 <= 0 or s2 <= 0:
        raise ConfigurationError(f"span must be positive, got {span}")

    counts = []
    for name, extent in (("v1", s1), ("v2", s2)):
        n = extent / resolution
        if abs(n - round(n)) > 1e-9:
            raise ConfigurationError(
                f"{name} span {extent} is not an integer number of {resolution} mV pixels"
            )
        counts.append(int(round(n)))
    n1, n2 = counts

    lo1, hi1 = c1 - s1 / 2.0, c1 + s1 / 2.0
    lo2, hi2 = c2 - s2 / 2.0, c2 + s2 / 2.0
    dlo, dhi = DOMAIN_MV
    if lo1 < dlo or hi1 > dhi or lo2 < dlo or hi2 > dhi:
        raise DomainError(
            f"window ({lo1}, {hi1}) x ({lo2}, {hi2}) mV exceeds device domain [{dlo}, {dhi}]"
        )

    v1_axis = lo1 + (np.arange(n1) + 0.5) * resolution
    v2_axis = lo2 + (np.arange(n2) + 0.5) * resolution
    g1, g2 = np.meshgrid(v1_axis, v2_axis, indexing="ij")

    values = _sensor_grid(params, g1, g2)
    if with_noise and params.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        values = values + rng.normal(0.0, params.noise_sigma, size=values.shape)
    labels = _state_codes(params, g1, g2)

    meta = ScanMeta(resolution=resolution, acquisition_axis="v1")
    return ScanGrid(values, v1_axis, v2_axis, meta), LabelGrid(labels, v1_axis, v2_axis)


def save_device(params: DeviceParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_device(path) -> DeviceParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScanFormatError(f"cannot read device file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScanFormatError(f"device file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScanFormatError("device file must contain a JSON object")
    return DeviceParams.from_json_dict(doc)
