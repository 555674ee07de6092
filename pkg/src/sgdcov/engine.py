"""Vectorized replication engine for Monte Carlo experiments.

Runs many independent SGD trajectories side by side, each fed from its own
numbered random stream, and evaluates a set of covariance estimators at a
list of sample-size checkpoints.  The per-step arithmetic mirrors the
scalar path in :mod:`sgdcov.sgd` operation for operation, so a replication
simulated here is the same trajectory the scalar runner would produce from
the same stream (bit for bit when the Hessian and noise factor are
diagonal, where the vectorized products reduce to the identical scalar
operations; to rounding otherwise).

Block bookkeeping mirrors :class:`sgdcov.batchmeans.BmState`, including the
window add/drop sequence per burn-in fraction, so batch-means queries also
reproduce the scalar estimator on identical trajectories.  Regression
accumulators are summed segment-wise (associativity differs from the
scalar single-pass order at the last bits only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .batchmeans import _FLOOR_EPS, BlockSchedule, block_size
from .matstat import RngStream, operator_norm
from .regression import RegState
from .sgd import (
    QuadraticProblem,
    Schedule,
    check_stepsize_condition,
    stepsize,
    true_covariance,
)

_SEGMENT = 4096

BM_LABELS = ("bm_original", "bm_optimal", "bm_burnin", "bm_weighted")
ALL_LABELS = BM_LABELS + ("regression", "oracle")


@dataclass(frozen=True)
class EstimatorSpec:
    """Resolved estimator description used by the engine and the harness.

    kind is one of "bm", "bm_weighted", "regression", "oracle"; the bm kinds
    carry the block growth constant, the block exponent, the window fraction
    rho, and (weighted only) the weight exponent p.
    """

    label: str
    kind: str
    rho: float | None = None
    beta: float | None = None
    growth: float | None = None
    p: float | None = None

    def block_schedule(self) -> BlockSchedule:
        if self.kind not in ("bm", "bm_weighted"):
            raise ValueError(f"estimator {self.label} has no block schedule")
        return BlockSchedule(growth=self.growth, exponent=self.beta)


class _Window:
    """Per-rho window aggregates; mirrors BmState's add/drop sequence."""

    __slots__ = ("rho", "m2", "u", "a_sum", "drop_at")

    def __init__(self, rho: float, reps: int, dimension: int):
        self.rho = rho
        self.m2 = np.zeros((reps, dimension, dimension))
        self.u = np.zeros((reps, dimension))
        self.a_sum = 0
        self.drop_at = 0  # number of leading records already dropped


class VectorBm:
    """Batch-means state for a stack of replications sharing one schedule.

    All replications see iterates at the same times, so the block structure
    is common and each sealed block stores an (reps, d) array of per-rep
    sums.  One aggregate set is kept per requested window fraction rho,
    updated with the same add/subtract sequence as the scalar state.
    """

    def __init__(self, reps: int, dimension: int, schedule: BlockSchedule, rhos):
        self.reps = reps
        self.dimension = dimension
        self.schedule = schedule
        self.records: list[tuple[int, int, np.ndarray]] = []  # (index, size, total)
        self.partial = np.zeros((reps, dimension))
        self.partial_count = 0
        self.complete = 0
        self._next_size = block_size(schedule, 1)
        self.windows = {float(r): _Window(float(r), reps, dimension) for r in set(rhos)}

    def add(self, x: np.ndarray) -> None:
        self.partial += x
        self.partial_count += 1
        if self.partial_count == self._next_size:
            self._seal()

    def _seal(self) -> None:
        m = self.complete + 1
        total = self.partial.copy()
        size = self.partial_count
        self.records.append((m, size, total))
        self.complete = m
        self.partial = np.zeros((self.reps, self.dimension))
        self.partial_count = 0
        self._next_size = block_size(self.schedule, m + 1)
        outer = np.einsum("ri,rj->rij", total, total) / size
        for win in self.windows.values():
            win.m2 += outer
            win.u += total
            win.a_sum += size
            k = max(1, math.floor(win.rho * self.complete + _FLOOR_EPS))
            start = self.complete - k + 1
            while self.records[win.drop_at][0] < start:
                idx, old_size, old_total = self.records[win.drop_at]
                win.m2 -= np.einsum("ri,rj->rij", old_total, old_total) / old_size
                win.u -= old_total
                win.a_sum -= old_size
                win.drop_at += 1

    def window_size(self, rho: float) -> int:
        return max(1, math.floor(rho * self.complete + _FLOOR_EPS))

    def query(self, rho: float, mean: np.ndarray) -> np.ndarray:
        """Per-rep covariance estimates, (reps, d, d)."""
        if self.complete < 1:
            raise ValueError("insufficient data: no complete block yet")
        win = self.windows[float(rho)]
        k = self.window_size(rho)
        mu = np.einsum("ri,rj->rij", mean, win.u)
        mm = np.einsum("ri,rj->rij", mean, mean)
        sigma = (win.m2 - mu - mu.transpose(0, 2, 1) + win.a_sum * mm) / k
        return (sigma + sigma.transpose(0, 2, 1)) / 2.0

    def block_deviations(self, mean: np.ndarray) -> np.ndarray:
        """Scaled centered block sums, (complete, reps, d)."""
        if self.complete < 1:
            raise ValueError("insufficient data: no complete block yet")
        out = np.empty((self.complete, self.reps, self.dimension))
        for i, (_, size, total) in enumerate(self.records):
            out[i] = (total - size * mean) / math.sqrt(size)
        return out

    def query_weighted(self, p: float, mean: np.ndarray) -> np.ndarray:
        if not p > 0.0:
            raise ValueError("weight exponent p must be positive")
        if self.complete < 1:
            raise ValueError("insufficient data: no complete block yet")
        ys = self.block_deviations(mean)
        weights = np.array([float(idx) ** p for idx, _, _ in self.records])
        sigma = np.einsum("b,bri,brj->rij", weights, ys, ys) / weights.sum()
        return (sigma + sigma.transpose(0, 2, 1)) / 2.0


@dataclass
class ChunkResult:
    """Estimates and errors for one stack of replications.

    Dictionaries are keyed by checkpoint (means, block_deviations) or by
    (checkpoint, estimator label).  Failed replications carry NaN estimates,
    NaN op_error, and a True degenerate flag.
    """

    stream_ids: tuple[int, ...]
    checkpoints: tuple[int, ...]
    means: dict[int, np.ndarray] = field(default_factory=dict)
    final_iterate: np.ndarray | None = None
    estimates: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    hessian_estimates: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    op_error: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    degenerate: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    block_deviations: dict[int, np.ndarray] = field(default_factory=dict)


def _apply_linear(x: np.ndarray, matrix: np.ndarray, diag: np.ndarray | None):
    """matrix @ row for every row; elementwise when the matrix is diagonal."""
    if diag is not None:
        return x * diag
    return x @ matrix.T


def _diag_or_none(matrix: np.ndarray) -> np.ndarray | None:
    d = np.diag(np.diag(matrix))
    return np.diag(matrix).copy() if np.array_equal(matrix, d) else None


def run_chunk(
    problem: QuadraticProblem,
    schedule: Schedule,
    base_seed: int,
    stream_ids,
    checkpoints,
    estimators,
    x0=None,
    collect_blocks: bool = False,
) -> ChunkResult:
    """Simulate one stack of replications and evaluate estimators at checkpoints.

    Each replication draws its noise from RngStream(base_seed, stream_id) in
    trajectory order, so results are independent of how replications are
    grouped into chunks.
    """
    ids = tuple(int(s) for s in stream_ids)
    ckpts = tuple(sorted(set(int(n) for n in checkpoints)))
    if not ckpts or ckpts[0] < 1:
        raise ValueError("checkpoints must be positive")
    specs = tuple(estimators)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("estimator labels must be unique")
    check_stepsize_condition(problem, schedule)

    reps = len(ids)
    d = problem.d
    max_n = ckpts[-1]
    v_true = true_covariance(problem)

    h_diag = _diag_or_none(problem.hessian)
    l_diag = _diag_or_none(problem.noise_factor)
    x_star = problem.x_star
    shift = bool(np.any(x_star != 0.0))

    # One VectorBm per distinct block schedule; windows per requested rho.
    bm_groups: dict[tuple[float, float], VectorBm] = {}
    for spec in specs:
        if spec.kind in ("bm", "bm_weighted"):
            key = (float(spec.growth), float(spec.beta))
            rho = 1.0 if spec.kind == "bm_weighted" else float(spec.rho)
            if key in bm_groups:
                bm_groups[key].windows.setdefault(rho, _Window(rho, reps, d))
            else:
                bm_groups[key] = VectorBm(reps, d, spec.block_schedule(), [rho])
    want_regression = any(s.kind == "regression" for s in specs)
    collect_group = None
    if collect_blocks:
        if len(bm_groups) != 1:
            raise ValueError("block collection needs exactly one block schedule")
        collect_group = next(iter(bm_groups.values()))

    if x0 is None:
        x = np.zeros((reps, d))
    else:
        x = np.tile(np.asarray(x0, dtype=float), (reps, 1))
    mean = np.zeros((reps, d))
    streams = [RngStream(base_seed, sid) for sid in ids]

    sxx = np.zeros((reps, d, d))
    syx = np.zeros((reps, d, d))
    syy = np.zeros((reps, d, d))
    sum_x = np.zeros((reps, d))
    sum_y = np.zeros((reps, d))
    n_pairs = 0

    result = ChunkResult(stream_ids=ids, checkpoints=ckpts)

    cuts = sorted(set(ckpts) | {s for s in range(_SEGMENT, max_n, _SEGMENT)})
    slab = None
    t0 = 0
    for t1 in cuts:
        seg = t1 - t0
        if slab is None or slab.shape[0] != seg + 1:
            slab = np.empty((seg + 1, reps, d))
        slab[0] = x
        noise = np.empty((reps, seg, d))
        for r, stream in enumerate(streams):
            noise[r] = stream.normals((seg, d))
        if l_diag is not None:
            if np.any(l_diag != 1.0):
                noise *= l_diag
        else:
            noise = noise @ problem.noise_factor.T

        etas = [stepsize(schedule, t) for t in range(t0, t1)]
        for i in range(seg):
            dev = x - x_star if shift else x
            grad = _apply_linear(dev, problem.hessian, h_diag) + noise[:, i, :]
            x = x - etas[i] * grad
            mean = mean + (x - mean) / (t0 + i + 1)
            for vb in bm_groups.values():
                vb.add(x)
            slab[i + 1] = x

        if want_regression:
            lo = 1 if t0 == 0 else 0
            if seg - lo > 0:
                xs = slab[lo:-1]
                xn = slab[lo + 1 :]
                eta_arr = np.array(etas[lo:])[:, None, None]
                ys = (xs - xn) / eta_arr
                sxx += np.einsum("tri,trj->rij", xs, xs)
                syx += np.einsum("tri,trj->rij", ys, xs)
                syy += np.einsum("tri,trj->rij", ys, ys)
                sum_x += xs.sum(axis=0)
                sum_y += ys.sum(axis=0)
                n_pairs += seg - lo

        if t1 in ckpts:
            result.means[t1] = mean.copy()
            if collect_group is not None and collect_group.complete >= 1:
                result.block_deviations[t1] = collect_group.block_deviations(mean)
            for spec in specs:
                _evaluate(
                    result, spec, t1, reps, d, v_true, mean, bm_groups,
                    (sxx, syx, syy, sum_x, sum_y, n_pairs),
                )
        t0 = t1
    result.final_iterate = x.copy()
    return result


def _evaluate(result, spec, ckpt, reps, d, v_true, mean, bm_groups, reg_acc) -> None:
    key = (ckpt, spec.label)
    estimates = np.full((reps, d, d), np.nan)
    errors = np.full(reps, np.nan)
    degenerate = np.zeros(reps, dtype=bool)

    if spec.kind == "oracle":
        estimates[:] = v_true
        errors[:] = 0.0
    elif spec.kind in ("bm", "bm_weighted"):
        vb = bm_groups[(float(spec.growth), float(spec.beta))]
        try:
            if spec.kind == "bm":
                estimates = vb.query(float(spec.rho), mean)
            else:
                estimates = vb.query_weighted(float(spec.p), mean)
        except ValueError:
            degenerate[:] = True
        else:
            for r in range(reps):
                errors[r] = operator_norm(estimates[r] - v_true)
    else:  # regression
        sxx, syx, syy, sum_x, sum_y, n_pairs = reg_acc
        h_hats = np.full((reps, d, d), np.nan)
        for r in range(reps):
            state = RegState(d)
            state.n_pairs = n_pairs
            state.sxx = sxx[r].copy()
            state.syx = syx[r].copy()
            state.syy = syy[r].copy()
            state.sum_x = sum_x[r].copy()
            state.sum_y = sum_y[r].copy()
            try:
                h_hat, _, v_hat = state.finalize()
            except ValueError:
                degenerate[r] = True
            else:
                estimates[r] = v_hat
                h_hats[r] = h_hat
                errors[r] = operator_norm(v_hat - v_true)
        result.hessian_estimates[key] = h_hats

    result.estimates[key] = estimates
    result.op_error[key] = errors
    result.degenerate[key] = degenerate
