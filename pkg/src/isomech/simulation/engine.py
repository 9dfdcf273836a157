"""Block-parallel Monte Carlo accumulation and experiment reports."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from isomech.errors import IsomechError, ParameterError, SimulationError
from isomech.isotonic import FloatArray
from isomech.simulation.noise import BLOCK, NoiseModel, n_blocks

# statistic(noise_block, first_draw) -> (rows, K) per-draw values
Statistic = Callable[[FloatArray, int], FloatArray]


@dataclass(frozen=True)
class RunningStats:
    """Count, mean and centered sum of squares for K columns."""

    count: int
    mean: FloatArray
    m2: FloatArray

    @classmethod
    def of(cls, values: FloatArray) -> "RunningStats":
        mean = values.mean(axis=0)
        return cls(values.shape[0], mean, np.square(values - mean).sum(axis=0))

    def merge(self, other: "RunningStats") -> "RunningStats":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + np.square(delta) * (self.count * other.count / n)
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> FloatArray:
        return self.m2 / (self.count - 1)

    @property
    def std_error(self) -> FloatArray:
        return np.sqrt(np.maximum(self.variance, 0.0) / self.count)

    def estimate(self, column: int) -> "UtilityEstimate":
        return UtilityEstimate(float(self.mean[column]), float(self.std_error[column]), self.count)


@dataclass(frozen=True)
class UtilityEstimate:
    mean: float
    std_error: float
    replications: int

    def __post_init__(self):
        if self.replications < 2:
            raise ParameterError("an estimate needs at least two replications")
        if not self.std_error >= 0:
            raise ParameterError("standard error must be nonnegative")


def monte_carlo(
    statistic: Statistic,
    noise: NoiseModel,
    n: int,
    replications: int,
    threads: int = 1,
) -> RunningStats:
    """Evaluate ``statistic`` on ``replications`` noise draws of length ``n``.

    Draws are processed in fixed blocks and block summaries are merged in block
    order, so the result does not depend on ``threads``.
    """
    if replications < 2:
        raise ParameterError(f"need at least 2 replications, got {replications}")

    def run_block(b: int) -> RunningStats:
        rows = min(BLOCK, replications - b * BLOCK)
        z = noise.block(n, b)[:rows]
        first = b * BLOCK
        try:
            values = np.asarray(statistic(z, first), dtype=np.float64)
        except IsomechError as exc:
            draw = _first_failing_draw(statistic, z, first)
            raise SimulationError(f"{exc} (draw {draw})", draw=draw) from exc
        if values.ndim == 1:
            values = values[:, None]
        return RunningStats.of(values)

    blocks = range(n_blocks(replications))
    if threads <= 1:
        parts = [run_block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_block, blocks))
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return total


def _first_failing_draw(statistic: Statistic, z: FloatArray, first: int) -> int | None:
    for t in range(z.shape[0]):
        try:
            statistic(z[t : t + 1], first + t)
        except IsomechError:
            return first + t
    return None


@dataclass(frozen=True)
class ReportRow:
    report_id: str
    mean: float
    std_error: float
    n_reps: int


@dataclass
class ExperimentReport:
    """Table of estimates plus verdicts that are computed from that table."""

    experiment_id: str
    config: dict[str, Any]
    rows: list[ReportRow] = field(default_factory=list)
    verdicts: dict[str, bool] = field(default_factory=dict)
    wall_clock: float = 0.0
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def add(self, report_id: str, mean: float, std_error: float, n_reps: int) -> ReportRow:
        row = ReportRow(report_id, float(mean), float(std_error), int(n_reps))
        self.rows.append(row)
        return row

    def add_estimate(self, report_id: str, est: UtilityEstimate) -> ReportRow:
        return self.add(report_id, est.mean, est.std_error, est.replications)

    def row(self, report_id: str) -> ReportRow:
        for row in self.rows:
            if row.report_id == report_id:
                return row
        raise KeyError(report_id)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["report_id", "mean", "std_error", "n_reps"])
        for r in self.rows:
            writer.writerow([r.report_id, _fmt(r.mean), _fmt(r.std_error), r.n_reps])
        return buf.getvalue()

    def summary(self, timing: bool = True) -> dict[str, Any]:
        """Structured record; ``timing=False`` drops the wall clock so reruns compare equal."""
        out = {
            "format": "isomech-summary",
            "version": 1,
            "experiment_id": self.experiment_id,
            "verdict": "PASS" if self.passed else "FAIL",
            "criteria": dict(self.verdicts),
            "config": self.config,
            "notes": self.notes,
        }
        if timing:
            out["wall_clock_seconds"] = round(self.wall_clock, 3)
        return out

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        """Write ``<prefix>.csv`` and ``<prefix>.summary.json`` (without the wall clock)."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        csv_path = prefix.with_name(prefix.name + ".csv")
        json_path = prefix.with_name(prefix.name + ".summary.json")
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.csv_text())
        with open(json_path, "w", newline="") as fh:
            json.dump(self.summary(timing=False), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return csv_path, json_path


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))
