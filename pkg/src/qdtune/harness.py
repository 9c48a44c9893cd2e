"""Offline evaluation harness for tuning policies.

Success is judged against ground truth: a run counts as ideal when the
double-dot fraction of the window around its final center reaches
``theta_ideal``, as close when it reaches ``theta_close``, and the
aggregate success rate weights them 1 and 1/2::

    P = (1 * n_ideal + 0.5 * n_close) / n_runs

The experiments mirror the offline protocol: 9x9-pixel neighborhoods of
handpicked starting points (81 runs each), coarse start grids over a
whole premeasured scan, and exhaustive fitness landscapes. Runs within
an experiment are independent and may be farmed out to a process pool;
results are aggregated in start order, so reports do not depend on the
worker count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np

from .classifier import OracleClassifier, ProbabilityVector, oracle_probability
from .errors import ConfigurationError, ShapeError
from .grids import LabelGrid, ScanGrid, SINGLE_DOT_CODES, StateLabel
from .scans import Blocked, MeasurementSource, PremeasuredScan, Sandbox, acquire_with_labels
from .tuner import (
    DynamicSimplex,
    FitnessConfig,
    FixedSimplex,
    SimplexPolicy,
    TerminationConfig,
    TuningRun,
    autotune,
    fitness,
)

REPORT_SCHEMA_VERSION = "1"

NEIGHBORHOOD_SIDE = 9  # 9x9 pixel grid of starts around each point


@dataclass(frozen=True)
class SuccessRegions:
    """Ground-truth thresholds for scoring where a run ended up."""

    theta_ideal: float = 0.8
    theta_close: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.theta_close < self.theta_ideal <= 1.0:
            raise ConfigurationError("need 0 < theta_close < theta_ideal <= 1")

    def weight(self, dd_fraction: float | None) -> float:
        """1 for ideal, 0.5 for close, 0 otherwise (None means unmeasurable)."""
        if dd_fraction is None:
            return 0.0
        if dd_fraction >= self.theta_ideal:
            return 1.0
        if dd_fraction >= self.theta_close:
            return 0.5
        return 0.0


def ground_truth_dd_fraction(
    source: MeasurementSource,
    center: tuple[float, float],
    span: tuple[float, float],
    resolution: float,
    sandbox: Sandbox | None = None,
) -> float | None:
    """Double-dot pixel fraction of one window, or None if it cannot be measured."""
    result = acquire_with_labels(source, center, span, resolution, sandbox or Sandbox())
    if isinstance(result, Blocked):
        return None
    _, labels = result
    if labels is None:
        raise ConfigurationError("success scoring needs a source with ground-truth labels")
    return oracle_probability(labels).p_dd


def run_weight(
    run: TuningRun,
    source: MeasurementSource,
    span: tuple[float, float],
    resolution: float,
    sandbox: Sandbox | None,
    regions: SuccessRegions,
) -> float:
    center = run.best_center()
    if center is None:
        return 0.0
    return regions.weight(ground_truth_dd_fraction(source, center, span, resolution, sandbox))


def success_rate(
    runs: list[TuningRun],
    regions: SuccessRegions,
    source: MeasurementSource,
    span: tuple[float, float] = (60.0, 60.0),
    resolution: float = 2.0,
    sandbox: Sandbox | None = None,
) -> float:
    """Weighted success rate over a batch of completed runs."""
    if not runs:
        raise ConfigurationError("cannot compute a success rate over zero runs")
    total = sum(run_weight(run, source, span, resolution, sandbox, regions) for run in runs)
    return total / len(runs)


# --- experiment plumbing -----------------------------------------------------


def _run_one(args) -> TuningRun:
    source, classifier, start, span, resolution, fitness_config, policy, term, sandbox = args
    return autotune(
        source,
        classifier,
        start,
        span=span,
        resolution=resolution,
        fitness_config=fitness_config,
        policy=policy,
        term=term,
        sandbox=sandbox,
    )


def _run_batch(
    starts,
    source,
    classifier,
    span,
    resolution,
    fitness_config,
    policy,
    term,
    sandbox,
    workers: int,
) -> list[TuningRun]:
    jobs = [
        (source, classifier, start, span, resolution, fitness_config, policy, term, sandbox)
        for start in starts
    ]
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with Pool(processes=workers) as pool:
        return pool.map(_run_one, jobs)


@dataclass(eq=False)
class ExperimentReport:
    """Aggregate of one batch of runs sharing a policy and a start region."""

    point: tuple[float, float]
    policy_name: str
    n_runs: int
    success_rate: float
    n_ideal: int
    n_close: int
    n_fail: int
    outcome_counts: dict[str, int]
    iteration_mean: float
    iteration_sd: float
    iteration_counts: list[int]
    run_summaries: list[dict]
    runs: list[TuningRun] | None = None

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "point": list(self.point),
            "policy": self.policy_name,
            "n_runs": self.n_runs,
            "success_rate": self.success_rate,
            "counts": {"ideal": self.n_ideal, "close": self.n_close, "fail": self.n_fail},
            "outcomes": dict(sorted(self.outcome_counts.items())),
            "iterations": {
                "mean": self.iteration_mean,
                "sd": self.iteration_sd,
                "per_run": list(self.iteration_counts),
            },
            "runs": self.run_summaries,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentReport":
        counts = doc["counts"]
        iterations = doc["iterations"]
        return cls(
            point=tuple(doc["point"]),
            policy_name=doc["policy"],
            n_runs=int(doc["n_runs"]),
            success_rate=float(doc["success_rate"]),
            n_ideal=int(counts["ideal"]),
            n_close=int(counts["close"]),
            n_fail=int(counts["fail"]),
            outcome_counts={k: int(v) for k, v in doc["outcomes"].items()},
            iteration_mean=float(iterations["mean"]),
            iteration_sd=float(iterations["sd"]),
            iteration_counts=[int(n) for n in iterations["per_run"]],
            run_summaries=list(doc["runs"]),
        )


def _aggregate(
    point,
    policy_name,
    runs: list[TuningRun],
    weights: list[float],
) -> ExperimentReport:
    counts = np.array([run.iteration_count for run in runs], dtype=float)
    outcome_counts: dict[str, int] = {}
    for run in runs:
        outcome_counts[run.outcome.kind] = outcome_counts.get(run.outcome.kind, 0) + 1
    n_ideal = sum(1 for w in weights if w == 1.0)
    n_close = sum(1 for w in weights if w == 0.5)
    summaries = [
        {
            "start": list(run.start),
            "best_center": list(run.best_center()) if run.best_center() else None,
            "iterations": run.iteration_count,
            "weight": weight,
            "outcome": run.outcome.kind,
        }
        for run, weight in zip(runs, weights)
    ]
    return ExperimentReport(
        point=(float(point[0]), float(point[1])),
        policy_name=policy_name,
        n_runs=len(runs),
        success_rate=float(sum(weights) / len(runs)),
        n_ideal=n_ideal,
        n_close=n_close,
        n_fail=len(runs) - n_ideal - n_close,
        outcome_counts=outcome_counts,
        iteration_mean=float(counts.mean()),
        iteration_sd=float(counts.std(ddof=1)) if len(counts) > 1 else 0.0,
        iteration_counts=[run.iteration_count for run in runs],
        run_summaries=summaries,
        runs=runs,
    )


def neighborhood_experiment(
    source: MeasurementSource,
    classifier,
    point: tuple[float, float],
    policy: SimplexPolicy,
    span: tuple[float, float] = (60.0, 60.0),
    resolution: float = 2.0,
    fitness_config: FitnessConfig | None = None,
    term: TerminationConfig | None = None,
    sandbox: Sandbox | None = None,
    regions: SuccessRegions | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """Tune from every pixel of the 9x9 neighborhood around ``point``.

    Start spacing follows the native raster of the source. The whole
    neighborhood must lie inside the sandbox; that is checked before any
    run starts.
    """
    sandbox = sandbox or Sandbox()
    regions = regions or SuccessRegions()
    fitness_config = fitness_config or FitnessConfig()
    term = term or TerminationConfig()

    native = source.scan.meta.resolution if isinstance(source, PremeasuredScan) else resolution
    offsets = (np.arange(NEIGHBORHOOD_SIDE) - NEIGHBORHOOD_SIDE // 2) * native
    starts = [
        (float(point[0] + d1), float(point[1] + d2)) for d1 in offsets for d2 in offsets
    ]
    for start in starts:
        if not (
            sandbox.v1_range[0] <= start[0] <= sandbox.v1_range[1]
            and sandbox.v2_range[0] <= start[1] <= sandbox.v2_range[1]
        ):
            raise ConfigurationError(
                f"neighborhood start {start} lies outside the sandbox; nothing was run"
            )

    runs = _run_batch(
        starts, source, classifier, span, resolution, fitness_config, policy, term, sandbox, workers
    )
    weights = [run_weight(run, source, span, resolution, sandbox, regions) for run in runs]
    policy_name = runs[0].policy_name if runs else ""
    return _aggregate(point, policy_name, runs, weights)


# --- heatmap -----------------------------------------------------------------


@dataclass(eq=False)
class HeatmapResult:
    """Per-start success weights on a coarse grid over a full scan."""

    v1_starts: np.ndarray
    v2_starts: np.ndarray
    weights: np.ndarray
    policy_name: str
    grid_step: float

    @property
    def n_starts(self) -> int:
        return self.weights.size

    def to_json_dict(self) -> dict:
        return {
            "format": "qdtune-heatmap",
            "version": REPORT_SCHEMA_VERSION,
            "policy": self.policy_name,
            "grid_step_mv": self.grid_step,
            "v1_starts": [float(v) for v in self.v1_starts],
            "v2_starts": [float(v) for v in self.v2_starts],
            "weights": [[float(w) for w in row] for row in self.weights],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _coverage(source: MeasurementSource, sandbox: Sandbox) -> tuple[tuple[float, float], tuple[float, float]]:
    """Outer voltage rectangle the source can deliver windows from."""
    if isinstance(source, PremeasuredScan):
        half = source.scan.meta.resolution / 2.0
        return (
            (float(source.scan.v1_axis[0]) - half, float(source.scan.v1_axis[-1]) + half),
            (float(source.scan.v2_axis[0]) - half, float(source.scan.v2_axis[-1]) + half),
        )
    return sandbox.v1_range, sandbox.v2_range


def policy_reach(policy: SimplexPolicy) -> float:
    """Largest initial-simplex step the policy can take."""
    return policy.delta if isinstance(policy, FixedSimplex) else policy.delta_max


def heatmap(
    source: MeasurementSource,
    classifier,
    policy: SimplexPolicy | None = None,
    grid_step: float = 10.0,
    span: tuple[float, float] = (30.0, 30.0),
    resolution: float | None = None,
    fitness_config: FitnessConfig | None = None,
    term: TerminationConfig | None = None,
    sandbox: Sandbox | None = None,
    regions: SuccessRegions | None = None,
    workers: int = 1,
) -> HeatmapResult:
    """One tuning run per start on a grid covering the whole source.

    The grid leaves a margin so that every window of every initial
    simplex vertex stays on the raster: the low edge keeps the policy's
    largest step plus half a window clear, the high edge half a window.
    """
    policy = policy or FixedSimplex(100.0)
    sandbox = sandbox or Sandbox()
    regions = regions or SuccessRegions()
    fitness_config = fitness_config or FitnessConfig()
    term = term or TerminationConfig()
    if resolution is None:
        resolution = source.scan.meta.resolution if isinstance(source, PremeasuredScan) else 2.0

    (lo1, hi1), (lo2, hi2) = _coverage(source, sandbox)
    reach = policy_reach(policy)
    axes = []
    for lo, hi, half in ((lo1, hi1, span[0] / 2.0), (lo2, hi2, span[1] / 2.0)):
        first = lo + reach + half
        last = hi - half
        if first > last:
            raise ConfigurationError("scan too small for the heatmap margins")
        axes.append(first + grid_step * np.arange(int(np.floor((last - first) / grid_step + 1e-9)) + 1))
    v1_starts, v2_starts = axes

    starts = [(float(a), float(b)) for a in v1_starts for b in v2_starts]
    runs = _run_batch(
        starts, source, classifier, span, resolution, fitness_config, policy, term, sandbox, workers
    )
    weights = np.array(
        [run_weight(run, source, span, resolution, sandbox, regions) for run in runs]
    ).reshape(v1_starts.size, v2_starts.size)
    return HeatmapResult(
        v1_starts=v1_starts,
        v2_starts=v2_starts,
        weights=weights,
        policy_name=runs[0].policy_name if runs else "",
        grid_step=grid_step,
    )


# --- fitness landscape -------------------------------------------------------


@dataclass(eq=False)
class LandscapeResult:
    """Fitness of the window centered at every admissible raster position."""

    values: np.ndarray
    center_v1: np.ndarray
    center_v2: np.ndarray
    window_px: tuple[int, int]

    def argmin_center(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return float(self.center_v1[i]), float(self.center_v2[j])

    def save_json(self, path) -> None:
        import base64

        doc = {
            "format": "qdtune-landscape",
            "version": REPORT_SCHEMA_VERSION,
            "shape": list(self.values.shape),
            "window_px": list(self.window_px),
            "center_v1": base64.b64encode(self.center_v1.astype("<f8").tobytes()).decode("ascii"),
            "center_v2": base64.b64encode(self.center_v2.astype("<f8").tobytes()).decode("ascii"),
            "values": base64.b64encode(
                np.ascontiguousarray(self.values).astype("<f8").tobytes()
            ).decode("ascii"),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")


def _window_counts(mask: np.ndarray, w1: int, w2: int) -> np.ndarray:
    """Sliding-window sums of a boolean mask via an integral image (exact)."""
    n1, n2 = mask.shape
    ii = np.zeros((n1 + 1, n2 + 1), dtype=np.int64)
    ii[1:, 1:] = mask.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return ii[w1:, w2:] - ii[:-w1, w2:] - ii[w1:, :-w2] + ii[:-w1, :-w2]


def fitness_landscape(
    source: PremeasuredScan,
    classifier=None,
    window_span: tuple[float, float] = (60.0, 60.0),
    fitness_config: FitnessConfig | None = None,
) -> LandscapeResult:
    """Exhaustive fitness map of a stored scan for one window size.

    With the default oracle classifier the probability vectors come from
    exact pixel counts over ground-truth labels; any other classifier is
    evaluated window by window.
    """
    if not isinstance(source, PremeasuredScan):
        raise ConfigurationError("fitness_landscape needs a premeasured full-range scan")
    classifier = classifier or OracleClassifier()
    fitness_config = fitness_config or FitnessConfig()

    native = source.scan.meta.resolution
    w1 = int(round(window_span[0] / native))
    w2 = int(round(window_span[1] / native))
    n1, n2 = source.scan.shape
    if w1 < 1 or w2 < 1:
        raise ConfigurationError(f"window span {window_span} is below one pixel")
    if w1 > n1 or w2 > n2:
        raise ShapeError(f"window {w1}x{w2} px exceeds the {n1}x{n2} px scan")

    center_v1 = 0.5 * (source.scan.v1_axis[: n1 - w1 + 1] + source.scan.v1_axis[w1 - 1 :])
    center_v2 = 0.5 * (source.scan.v2_axis[: n2 - w2 + 1] + source.scan.v2_axis[w2 - 1 :])

    if isinstance(classifier, OracleClassifier):
        if source.labels is None:
            raise ConfigurationError("oracle landscape needs ground-truth labels")
        codes = source.labels.labels
        n_px = w1 * w2
        sd = _window_counts(np.isin(codes, SINGLE_DOT_CODES), w1, w2)
        dd = _window_counts(codes == int(StateLabel.DOUBLE_DOT), w1, w2)
        values = np.empty(sd.shape)
        for i in range(sd.shape[0]):
            for j in range(sd.shape[1]):
                p = ProbabilityVector(
                    (n_px - int(sd[i, j]) - int(dd[i, j])) / n_px,
                    int(sd[i, j]) / n_px,
                    int(dd[i, j]) / n_px,
                )
                values[i, j] = fitness(p, fitness_config)
        return LandscapeResult(values, center_v1, center_v2, (w1, w2))

    from .grids import ScanMeta

    meta = source.scan.meta
    values = np.empty((n1 - w1 + 1, n2 - w2 + 1))
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            crop = ScanGrid(
                source.scan.values[i : i + w1, j : j + w2],
                source.scan.v1_axis[i : i + w1],
                source.scan.v2_axis[j : j + w2],
                meta,
            )
            labels = None
            if source.labels is not None:
                labels = LabelGrid(
                    source.labels.labels[i : i + w1, j : j + w2],
                    source.scan.v1_axis[i : i + w1],
                    source.scan.v2_axis[j : j + w2],
                )
            values[i, j] = fitness(classifier.probabilities(crop, labels), fitness_config)
    return LandscapeResult(values, center_v1, center_v2, (w1, w2))


# --- iteration statistics ----------------------------------------------------


@dataclass(frozen=True)
class IterationRow:
    point: tuple[float, float]
    policy_name: str
    n_runs: int
    mean: float
    sd: float


@dataclass(eq=False)
class IterationStats:
    rows: list[IterationRow]
    pooled: dict[str, tuple[float, float]]  # policy -> (mean, pooled sd)


def iteration_stats(reports: list[ExperimentReport]) -> IterationStats:
    """Per-point means and s.d. plus per-policy pooled statistics.

    The pooled s.d. combines within-point variances weighted by their
    degrees of freedom; the pooled mean averages over every run.
    """
    if not reports:
        raise ConfigurationError("no reports to summarize")
    rows = [
        IterationRow(
            point=report.point,
            policy_name=report.policy_name,
            n_runs=report.n_runs,
            mean=report.iteration_mean,
            sd=report.iteration_sd,
        )
        for report in reports
    ]
    pooled: dict[str, tuple[float, float]] = {}
    for policy_name in sorted({r.policy_name for r in reports}):
        counts = np.concatenate(
            [np.asarray(r.iteration_counts, dtype=float) for r in reports if r.policy_name == policy_name]
        )
        groups = [r for r in reports if r.policy_name == policy_name]
        dof = sum(r.n_runs - 1 for r in groups)
        if dof > 0:
            pooled_var = (
                sum((r.n_runs - 1) * r.iteration_sd**2 for r in groups) / dof
            )
        else:
            pooled_var = 0.0
        pooled[policy_name] = (float(counts.mean()), float(np.sqrt(pooled_var)))
    return IterationStats(rows=rows, pooled=pooled)


# --- tabular report writers --------------------------------------------------


def write_success_csv(reports: list[ExperimentReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["point_v1", "point_v2", "policy", "n_runs", "success_rate", "n_ideal", "n_close", "n_fail"]
        )
        for r in reports:
            writer.writerow(
                [
                    repr(r.point[0]),
                    repr(r.point[1]),
                    r.policy_name,
                    r.n_runs,
                    repr(r.success_rate),
                    r.n_ideal,
                    r.n_close,
                    r.n_fail,
                ]
            )


def write_iteration_csv(stats: IterationStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_v1", "point_v2", "policy", "n_runs", "iter_mean", "iter_sd"])
        for row in stats.rows:
            writer.writerow(
                [
                    repr(row.point[0]),
                    repr(row.point[1]),
                    row.policy_name,
                    row.n_runs,
                    repr(row.mean),
                    repr(row.sd),
                ]
            )
        for policy_name, (mean, sd) in stats.pooled.items():
            writer.writerow(["pooled", "pooled", policy_name, "", repr(mean), repr(sd)])


def write_summary_text(reports: list[ExperimentReport], stats: IterationStats, path) -> None:
    lines = ["tuning policy summary", "====================", ""]
    for policy_name in sorted({r.policy_name for r in reports}):
        subset = [r for r in reports if r.policy_name == policy_name]
        total = sum(r.n_runs for r in subset)
        overall = sum(r.success_rate * r.n_runs for r in subset) / total
        mean, sd = stats.pooled[policy_name]
        lines.append(
            f"{policy_name}: success {overall:.3f} over {total} runs, "
            f"iterations {mean:.1f} (pooled s.d. {sd:.1f})"
        )
        for r in subset:
            lines.append(
                f"  point ({r.point[0]:g}, {r.point[1]:g}): "
                f"P={r.success_rate:.3f} ideal/close/fail {r.n_ideal}/{r.n_close}/{r.n_fail}, "
                f"iterations {r.iteration_mean:.1f} ({r.iteration_sd:.1f})"
            )
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
