"""
Evaluator module - reads rollout metrics, summarizes drift per method and
checks whether one method dominates another.
"""
import csv
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError, ReportParseError
from .rollout import DriftCurve, RunComparison, compare_runs, drift_slope
from .utils import claim_output, format_curve, format_float, format_table, format_verdict

logger = logging.getLogger(__name__)

METRICS_HEADER = ("run_id", "mode", "seed", "clip_index", "norm_drift", "step_drift", "loss_final")
COMPARISON_HEADER = (
    "mode_a", "mode_b", "seeds", "terminal_a", "terminal_b",
    "slope_a", "slope_b", "wins_a", "wins_b", "ties",
)


@dataclass(frozen=True)
class MetricRow:
    run_id: str
    mode: str
    seed: int
    clip_index: int
    norm_drift: float
    step_drift: float
    loss_final: Optional[float]

    def as_csv(self) -> List[str]:
        return [
            self.run_id,
            self.mode,
            str(self.seed),
            str(self.clip_index),
            repr(self.norm_drift),
            repr(self.step_drift),
            "" if self.loss_final is None else repr(self.loss_final),
        ]


@dataclass
class MethodSummary:
    """Drift statistics of one method across seeds."""

    mode: str
    curves: Dict[int, DriftCurve]
    loss_final: Optional[float] = None

    @property
    def seeds(self) -> List[int]:
        return sorted(self.curves)

    @property
    def num_clips(self) -> int:
        return len(next(iter(self.curves.values())).metrics)

    def mean_curve(self, column: int = 0) -> np.ndarray:
        return np.array(
            [[m[column] for m in self.curves[s].metrics] for s in self.seeds]
        ).mean(axis=0)

    @property
    def terminal_mean(self) -> float:
        return float(self.mean_curve()[-1])

    @property
    def slope(self) -> float:
        return drift_slope(self.mean_curve())

    def terminal_by_seed(self) -> Dict[int, float]:
        return {s: self.curves[s].metrics[-1][0] for s in self.seeds}


@dataclass
class DriftReport:
    summaries: Dict[str, MethodSummary]
    comparisons: List[Tuple[str, str, List[int], RunComparison]] = field(default_factory=list)


@dataclass
class DominanceResult:
    better: str
    worse: str
    wins: int
    seeds: int
    slope_better: float
    slope_worse: float
    failures: List[str] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.failures

    @property
    def verdict(self) -> str:
        return "holds" if self.holds else "fails"


def _parse_row(path: str, number: int, raw: List[str]) -> MetricRow:
    if len(raw) != len(METRICS_HEADER):
        raise ReportParseError(path, number, f"expected {len(METRICS_HEADER)} columns, got {len(raw)}")
    run_id, mode, seed, clip_index, norm_drift, step_drift, loss_final = raw
    try:
        row = MetricRow(
            run_id=run_id,
            mode=mode,
            seed=int(seed),
            clip_index=int(clip_index),
            norm_drift=float(norm_drift),
            step_drift=float(step_drift),
            loss_final=float(loss_final) if loss_final.strip() else None,
        )
    except ValueError as e:
        raise ReportParseError(path, number, str(e)) from e
    if not mode:
        raise ReportParseError(path, number, "empty mode")
    if row.clip_index < 1:
        raise ReportParseError(path, number, f"clip_index must be >= 1, got {row.clip_index}")
    if not (np.isfinite(row.norm_drift) and np.isfinite(row.step_drift)):
        raise ReportParseError(path, number, "non-finite drift value")
    return row


def read_metrics_csv(path: Union[str, Path]) -> List[MetricRow]:
    """
    Parse a rollout metrics CSV.

    Raises:
        ReportParseError: with the 1-based line number of the bad row
    """
    path = Path(path)
    if not path.is_file():
        raise ReportParseError(str(path), 0, "file not found")
    rows = []
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ReportParseError(str(path), 1, f"expected header {','.join(METRICS_HEADER)}")
        for raw in reader:
            if not raw:
                continue
            rows.append(_parse_row(str(path), reader.line_num, raw))
    return rows


def write_metrics_csv(path: Union[str, Path], rows: Sequence[MetricRow]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())
    return path


def summarize(rows: Sequence[MetricRow]) -> Dict[str, MethodSummary]:
    """
    Group metric rows into per-method, per-seed drift curves.

    Rows of one (mode, seed) must cover clip indices 1..K exactly once, and
    every seed of a method must have the same K.
    """
    grouped: Dict[str, Dict[int, Dict[int, MetricRow]]] = {}
    for row in rows:
        clips = grouped.setdefault(row.mode, {}).setdefault(row.seed, {})
        if row.clip_index in clips:
            raise InvalidArgumentError(
                f"duplicate row for mode={row.mode} seed={row.seed} clip={row.clip_index}"
            )
        clips[row.clip_index] = row

    summaries = {}
    for mode, by_seed in grouped.items():
        curves, losses = {}, []
        for seed, clips in by_seed.items():
            if sorted(clips) != list(range(1, len(clips) + 1)):
                raise InvalidArgumentError(f"mode={mode} seed={seed}: clip indices are not 1..{len(clips)}")
            ordered = [clips[i] for i in range(1, len(clips) + 1)]
            curves[seed] = DriftCurve(seed=seed, metrics=[(r.norm_drift, r.step_drift) for r in ordered])
            if ordered[0].loss_final is not None:
                losses.append(ordered[0].loss_final)
        lengths = {len(c.metrics) for c in curves.values()}
        if len(lengths) != 1:
            raise InvalidArgumentError(f"mode={mode}: clip counts differ across seeds {sorted(lengths)}")
        summaries[mode] = MethodSummary(
            mode=mode, curves=curves, loss_final=float(np.mean(losses)) if losses else None
        )
    return summaries


def compare_methods(a: MethodSummary, b: MethodSummary) -> Tuple[List[int], Optional[RunComparison]]:
    """Compare two methods over their shared seeds, paired by seed."""
    seeds = sorted(set(a.curves) & set(b.curves))
    if not seeds:
        return seeds, None
    return seeds, compare_runs([a.curves[s] for s in seeds], [b.curves[s] for s in seeds])


def build_report(rows: Sequence[MetricRow]) -> DriftReport:
    summaries = summarize(rows)
    report = DriftReport(summaries=summaries)
    for mode_a, mode_b in combinations(sorted(summaries), 2):
        seeds, comparison = compare_methods(summaries[mode_a], summaries[mode_b])
        if comparison is None:
            logger.warning("No shared seeds between %s and %s; skipping comparison", mode_a, mode_b)
            continue
        report.comparisons.append((mode_a, mode_b, seeds, comparison))
    return report


def check_dominance(
    report: DriftReport,
    better: str,
    worse: str,
    min_wins: int = 4,
    slope_ratio: float = 0.5,
) -> DominanceResult:
    """
    Check that ``better`` drifts less than ``worse``.

    Criteria: ``better`` has lower terminal norm drift in at least ``min_wins``
    shared seeds, ``worse`` has a positive drift slope, and the slope of
    ``better`` is at most ``slope_ratio`` times that of ``worse``.
    """
    for mode in (better, worse):
        if mode not in report.summaries:
            raise InvalidArgumentError(f"mode {mode!r} not present in the metrics")
    seeds, comparison = compare_methods(report.summaries[better], report.summaries[worse])
    if comparison is None:
        raise InvalidArgumentError(f"{better} and {worse} share no seeds")
    result = DominanceResult(
        better=better,
        worse=worse,
        wins=comparison.wins_a,
        seeds=len(seeds),
        slope_better=comparison.slope_a,
        slope_worse=comparison.slope_b,
    )
    if comparison.wins_a < min_wins:
        result.failures.append(f"{better} wins {comparison.wins_a}/{len(seeds)} seeds, need {min_wins}")
    if comparison.slope_b <= 0:
        result.failures.append(f"{worse} slope {comparison.slope_b:.4g} is not positive")
    elif comparison.slope_a > slope_ratio * comparison.slope_b:
        result.failures.append(
            f"{better} slope {comparison.slope_a:.4g} exceeds {slope_ratio} x {comparison.slope_b:.4g}"
        )
    return result


def write_comparison_csv(path: Union[str, Path], report: DriftReport) -> Path:
    path = claim_output(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(COMPARISON_HEADER)
        for mode_a, mode_b, seeds, c in report.comparisons:
            writer.writerow([
                mode_a, mode_b, len(seeds),
                repr(c.terminal_a), repr(c.terminal_b),
                repr(c.slope_a), repr(c.slope_b),
                c.wins_a, c.wins_b, c.ties,
            ])
    return path


def format_report(report: DriftReport, dominance: Optional[DominanceResult] = None) -> str:
    """Plain-text summary: per-method table, curves, pairwise comparisons."""
    lines = ["Per-method drift (norm_drift, mean over seeds)"]
    lines += format_table(
        ("mode", "seeds", "clips", "terminal", "slope", "loss_final"),
        (
            (s.mode, len(s.seeds), s.num_clips, format_float(s.terminal_mean),
             format_float(s.slope, 5), format_float(s.loss_final, 6))
            for s in report.summaries.values()
        ),
    )
    lines.append("")
    for s in report.summaries.values():
        lines.append(f"{s.mode} curve: {format_curve(s.mean_curve())}")
    if report.comparisons:
        lines += ["", "Comparisons (wins = lower terminal drift on a shared seed)"]
        lines += format_table(
            ("a", "b", "seeds", "terminal a", "terminal b", "wins a", "wins b", "ties"),
            (
                (a, b, len(seeds), format_float(c.terminal_a), format_float(c.terminal_b),
                 c.wins_a, c.wins_b, c.ties)
                for a, b, seeds, c in report.comparisons
            ),
        )
    if dominance is not None:
        lines += ["", f"{format_verdict(dominance.verdict)}: {dominance.better} over {dominance.worse}"]
        lines += [f"  - {failure}" for failure in dominance.failures]
    return "\n".join(lines)


def run_report(
    paths: Sequence[Union[str, Path]],
    dominance: Optional[Tuple[str, str]] = None,
    min_wins: int = 4,
    slope_ratio: float = 0.5,
    comparison_out: Optional[Union[str, Path]] = None,
) -> Tuple[str, DriftReport, Optional[DominanceResult]]:
    """
    Summarize one or more metrics CSVs.

    Args:
        paths: Metrics CSVs; rows of all files are pooled
        dominance: Optional (better, worse) modes to check
        min_wins: Seeds ``better`` must win
        slope_ratio: Allowed ratio of ``better``'s slope to ``worse``'s
        comparison_out: Where to write the comparison CSV

    Returns:
        (summary text, report, dominance result or None)
    """
    if not paths:
        raise InvalidArgumentError("no metrics files given")
    if comparison_out is not None:
        claim_output(comparison_out)
    rows: List[MetricRow] = []
    for path in paths:
        rows.extend(read_metrics_csv(path))
    if not rows:
        raise InvalidArgumentError("metrics files contain no rows")
    report = build_report(rows)
    result = None
    if dominance is not None:
        result = check_dominance(report, dominance[0], dominance[1], min_wins, slope_ratio)
    if comparison_out is not None and report.comparisons:
        write_comparison_csv(comparison_out, report)
    return format_report(report, result), report, result
