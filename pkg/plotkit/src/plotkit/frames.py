"""CSV readers for the experiment tables.

Both readers validate the header byte-for-byte against the declared schema
and sort rows on load, so a reshuffled file produces the same frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

RATES_HEADER = (
    "experiment", "alpha", "n", "estimator", "rho", "beta", "p",
    "rep", "seed", "op_error", "degenerate", "wall_ms",
)
BLOCK_HEADER = ("m", "a_m", "bias", "variance")


class SchemaError(ValueError):
    """The file does not match the declared CSV schema."""


class NoDataError(ValueError):
    """The file parses but carries no usable data rows."""


def _read_csv(path: str, expected: tuple[str, ...]) -> list[list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {','.join(expected)}")
        if header != expected:
            raise SchemaError(
                f"{path}: unexpected header {','.join(header)!r}; "
                f"expected {','.join(expected)!r}"
            )
        return [row for row in reader if row]


@dataclass(frozen=True)
class RatesFrame:
    """Replication table aggregated to (alpha, estimator) series of mean errors."""

    alphas: tuple[float, ...]
    estimators: tuple[str, ...]
    # (alpha, estimator) -> ((n, mean op_error), ...) sorted by n
    series: dict[tuple[float, str], tuple[tuple[int, float], ...]]

    @classmethod
    def read(cls, path: str) -> "RatesFrame":
        rows = _read_csv(path, RATES_HEADER)
        if not rows:
            raise NoDataError(f"{path}: no data rows")
        groups: dict[tuple[float, str, int], list[float]] = {}
        for row in rows:
            if len(row) != len(RATES_HEADER):
                raise SchemaError(f"{path}: row has {len(row)} cells, expected {len(RATES_HEADER)}")
            try:
                alpha = float(row[1])
                n = int(row[2])
                err = float(row[9]) if row[9] else math.nan
            except ValueError as exc:
                raise SchemaError(f"{path}: unparseable row {row!r}") from exc
            if math.isfinite(err):
                groups.setdefault((alpha, row[3], n), []).append(err)
        if not groups:
            raise NoDataError(f"{path}: no finite error values")
        series: dict[tuple[float, str], list[tuple[int, float]]] = {}
        for (alpha, est, n), errs in groups.items():
            series.setdefault((alpha, est), []).append((n, float(np.mean(errs))))
        packed = {key: tuple(sorted(pts)) for key, pts in series.items()}
        return cls(
            alphas=tuple(sorted({a for a, _ in packed})),
            estimators=tuple(sorted({e for _, e in packed})),
            series=packed,
        )


@dataclass(frozen=True)
class BlockRow:
    m: int
    a_m: int
    bias: float
    variance: float


@dataclass(frozen=True)
class BlockFrame:
    """Per-block bias/variance table, sorted by block index."""

    rows: tuple[BlockRow, ...]

    @classmethod
    def read(cls, path: str) -> "BlockFrame":
        raw = _read_csv(path, BLOCK_HEADER)
        if not raw:
            raise NoDataError(f"{path}: no data rows")
        rows = []
        for cells in raw:
            if len(cells) != len(BLOCK_HEADER):
                raise SchemaError(f"{path}: row has {len(cells)} cells, expected {len(BLOCK_HEADER)}")
            try:
                rows.append(BlockRow(int(cells[0]), int(cells[1]), float(cells[2]), float(cells[3])))
            except ValueError as exc:
                raise SchemaError(f"{path}: unparseable row {cells!r}") from exc
        rows.sort(key=lambda r: r.m)
        for left, right in zip(rows, rows[1:]):
            if right.m <= left.m:
                raise SchemaError(f"{path}: block index {right.m} repeats")
        return cls(rows=tuple(rows))


def ols_decay(ns, means) -> float:
    """Decay exponent of a power law: minus the OLS slope of log(mean) on log(n).

    Deliberately a separate least-squares route (polyfit) from the harness's
    centered-moment fit, so the two implementations cross-check each other.
    """
    ns = np.asarray(ns, dtype=float)
    means = np.asarray(means, dtype=float)
    if ns.size < 2:
        raise ValueError("need at least 2 points to fit a slope")
    if np.any(means <= 0.0) or np.any(ns <= 0.0):
        raise ValueError("slope fit needs positive sizes and errors")
    slope, _ = np.polyfit(np.log(ns), np.log(means), 1)
    return float(-slope)
