"""Trajectory metrics, Pareto flags and report export.

CSV report columns, in order::

    label, n_trajectories, success_rate, mean_steps, total_latency,
    speedup_vs_baseline, switching_ratio, switching_pct, large_token_ratio,
    quality, per_step_tps

Ratio columns (success_rate, switching_ratio, large_token_ratio, quality)
are written with 4 decimal places and switching_pct with 2; other numbers
use their shortest exact repr. per_step_tps is ``;``-joined. Undefined
cells are written as ``undefined``. The JSONL report stores the same
fields losslessly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .trajectory import Tier, Trajectory, atomic_write_text

UNDEFINED = "undefined"

CSV_COLUMNS = [
    "label",
    "n_trajectories",
    "success_rate",
    "mean_steps",
    "total_latency",
    "speedup_vs_baseline",
    "switching_ratio",
    "switching_pct",
    "large_token_ratio",
    "quality",
    "per_step_tps",
]
RATIO_COLUMNS = {"success_rate", "switching_ratio", "large_token_ratio", "quality"}


class UndefinedMetric(ValueError):
    """A metric has no defined value for its input (e.g. 0/0)."""


@dataclass
class MetricSummary:
    label: str
    n_trajectories: int
    success_rate: float
    mean_steps: float
    total_latency: float
    speedup_vs_baseline: Optional[float] = None
    switching_ratio: Optional[float] = None
    large_token_ratio: Optional[float] = None
    quality: Optional[float] = None
    per_step_tps: list = field(default_factory=list)

    @property
    def mean_latency(self) -> float:
        return self.total_latency / self.n_trajectories if self.n_trajectories else 0.0

    @property
    def quality_score(self) -> float:
        return self.success_rate if self.quality is None else self.quality


# -- per-trajectory metrics ----------------------------------------------


def switching_counts(trajectories: Iterable[Trajectory], exclude_warmup: bool = False) -> tuple[int, int]:
    """(tier changes, adjacent step pairs) pooled over multi-step trajectories."""
    switches = pairs = 0
    for traj in trajectories:
        steps = traj.steps
        if exclude_warmup:
            steps = [s for s in steps if s.phase.value != "Warmup"]
        if len(steps) < 2:
            continue
        pairs += len(steps) - 1
        switches += sum(a.tier != b.tier for a, b in zip(steps, steps[1:]))
    return switches, pairs


def switching_ratio_exact(trajectories: Iterable[Trajectory], exclude_warmup: bool = False) -> Fraction:
    switches, pairs = switching_counts(trajectories, exclude_warmup)
    if pairs == 0:
        raise UndefinedMetric("switching ratio needs at least one trajectory with two or more steps")
    return Fraction(switches, pairs)


def switching_ratio(trajectories: Iterable[Trajectory], exclude_warmup: bool = False) -> float:
    """Fraction of adjacent step pairs whose tiers differ, pooled over trajectories.

    Single-step trajectories contribute nothing; if nothing remains the
    ratio is undefined and UndefinedMetric is raised.
    """
    return float(switching_ratio_exact(trajectories, exclude_warmup))


def speedup(baseline_total_latency: float, method_total_latency: float) -> float:
    if baseline_total_latency <= 0 or method_total_latency <= 0:
        raise ValueError(
            f"latencies must be positive, got baseline={baseline_total_latency}, method={method_total_latency}"
        )
    return baseline_total_latency / method_total_latency


def _token_totals(trajectories: Iterable[Trajectory]) -> tuple[int, int]:
    large = total = 0
    for traj in trajectories:
        for s in traj.steps:
            total += s.completion_tokens
            if s.tier is Tier.LARGE:
                large += s.completion_tokens
    return large, total


def large_token_ratio(trajectory: Trajectory | Sequence[Trajectory]) -> float:
    trajs = [trajectory] if isinstance(trajectory, Trajectory) else list(trajectory)
    large, total = _token_totals(trajs)
    if total == 0:
        raise UndefinedMetric("large-token ratio needs a positive completion-token total")
    return large / total


@dataclass
class TpsSeries:
    tps: list  # float, or an UndefinedMetric for zero-latency steps
    staircase: list[float]

    @property
    def undefined_steps(self) -> list[int]:
        return [i + 1 for i, v in enumerate(self.tps) if isinstance(v, UndefinedMetric)]


def per_step_tps(trajectory: Trajectory) -> TpsSeries:
    tps, stairs, running = [], [], 0.0
    for s in trajectory.steps:
        if s.latency > 0:
            tps.append(s.completion_tokens / s.latency)
        else:
            tps.append(UndefinedMetric(f"step {s.index} has zero latency"))
        running += s.latency
        stairs.append(running)
    return TpsSeries(tps, stairs)


# -- aggregation ---------------------------------------------------------


def _mean_tps_by_position(trajectories: Sequence[Trajectory]) -> list[float]:
    sums: list[float] = []
    counts: list[int] = []
    for traj in trajectories:
        for i, v in enumerate(per_step_tps(traj).tps):
            if isinstance(v, UndefinedMetric):
                continue
            while len(sums) <= i:
                sums.append(0.0)
                counts.append(0)
            sums[i] += v
            counts[i] += 1
    return [s / c if c else 0.0 for s, c in zip(sums, counts)]


def summarize(
    label: str,
    trajectories: Sequence[Trajectory],
    baseline_total_latency: float | None = None,
    quality_scores: dict | None = None,
    exclude_warmup: bool = False,
) -> MetricSummary:
    """Aggregate a policy's trajectories into one MetricSummary.

    ``quality_scores`` maps trajectory id to an externally judged score;
    when given, the summary's quality is the mean score over trajectories
    that have one.
    """
    n = len(trajectories)
    if n == 0:
        raise UndefinedMetric(f"{label}: no trajectories to summarize")
    total_latency = sum(t.total_latency for t in trajectories)
    try:
        sw = switching_ratio(trajectories, exclude_warmup)
    except UndefinedMetric:
        sw = None
    try:
        ltr = large_token_ratio(trajectories)
    except UndefinedMetric:
        ltr = None
    sp = None
    if baseline_total_latency is not None and total_latency > 0:
        sp = speedup(baseline_total_latency, total_latency)
    quality = None
    if quality_scores:
        scores = [float(quality_scores[t.id]) for t in trajectories if t.id in quality_scores]
        quality = sum(scores) / len(scores) if scores else None
    return MetricSummary(
        label=label,
        n_trajectories=n,
        success_rate=sum(t.succeeded for t in trajectories) / n,
        mean_steps=sum(len(t.steps) for t in trajectories) / n,
        total_latency=total_latency,
        speedup_vs_baseline=sp,
        switching_ratio=sw,
        large_token_ratio=ltr,
        quality=quality,
        per_step_tps=_mean_tps_by_position(trajectories),
    )


def load_quality_scores(path) -> dict:
    """Read external scores: a JSON object ``{id: score}`` or a CSV with
    ``trajectory_id,score`` columns."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return {str(k): float(v) for k, v in json.loads(text).items()}
    return {row["trajectory_id"]: float(row["score"]) for row in csv.DictReader(io.StringIO(text))}


# -- Pareto --------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    speedup: float
    quality: float
    dominated: bool


def dominated_flags(points: Sequence[tuple[float, float]]) -> list[bool]:
    """A point is dominated iff another is >= in both coordinates and > in one."""
    flags = []
    for i, (x, y) in enumerate(points):
        flags.append(
            any(
                j != i and ox >= x and oy >= y and (ox > x or oy > y)
                for j, (ox, oy) in enumerate(points)
            )
        )
    return flags


def pareto_points(summaries: Sequence[MetricSummary]) -> list[ParetoPoint]:
    pts = [(s.speedup_vs_baseline or 0.0, s.quality_score) for s in summaries]
    flags = dominated_flags(pts)
    out = [ParetoPoint(s.label, x, y, f) for s, (x, y), f in zip(summaries, pts, flags)]
    return sorted(out, key=lambda p: p.speedup)


# -- export --------------------------------------------------------------


def _fmt(col: str, value) -> str:
    if value is None:
        return UNDEFINED
    if col in RATIO_COLUMNS:
        return f"{value:.4f}"
    if col == "switching_pct":
        return f"{value:.2f}"
    if col == "per_step_tps":
        return ";".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _summary_row(s: MetricSummary) -> dict:
    row = asdict(s)
    row["switching_pct"] = None if s.switching_ratio is None else 100.0 * s.switching_ratio
    return {col: _fmt(col, row[col]) for col in CSV_COLUMNS}


def dumps_csv(summaries: Iterable[MetricSummary]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for s in summaries:
        writer.writerow(_summary_row(s))
    return buf.getvalue()


def dumps_jsonl(summaries: Iterable[MetricSummary]) -> str:
    return "".join(json.dumps(asdict(s), sort_keys=True) + "\n" for s in summaries)


def export_report(summaries: Iterable[MetricSummary], path, format: str = "csv") -> Path:
    if format == "csv":
        text = dumps_csv(summaries)
    elif format == "jsonl":
        text = dumps_jsonl(summaries)
    else:
        raise ValueError(f"unknown report format {format!r}; expected csv or jsonl")
    path = Path(path)
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def _opt_float(text: str) -> Optional[float]:
    return None if text == UNDEFINED else float(text)


def loads_csv(text: str) -> list[MetricSummary]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        tps = row["per_step_tps"]
        out.append(
            MetricSummary(
                label=row["label"],
                n_trajectories=int(row["n_trajectories"]),
                success_rate=float(row["success_rate"]),
                mean_steps=float(row["mean_steps"]),
                total_latency=float(row["total_latency"]),
                speedup_vs_baseline=_opt_float(row["speedup_vs_baseline"]),
                switching_ratio=_opt_float(row["switching_ratio"]),
                large_token_ratio=_opt_float(row["large_token_ratio"]),
                quality=_opt_float(row["quality"]),
                per_step_tps=[float(v) for v in tps.split(";")] if tps else [],
            )
        )
    return out


def loads_jsonl(text: str) -> list[MetricSummary]:
    return [MetricSummary(**json.loads(line)) for line in text.splitlines() if line.strip()]


def import_report(path) -> list[MetricSummary]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read report {path}: {exc}") from exc
    return loads_jsonl(text) if path.suffix == ".jsonl" else loads_csv(text)


def write_series(path, pairs: Iterable[tuple], header: tuple[str, ...] = ("x", "y")) -> Path:
    """Write plot-ready rows (first row is ``header``) as CSV."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in pairs:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path = Path(path)
    atomic_write_text(path, buf.getvalue())
    return path
