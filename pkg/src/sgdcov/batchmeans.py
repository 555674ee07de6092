"""Streaming batch-means covariance estimation with growing blocks.

Iterates are grouped into consecutive blocks of size a_m = max(1, floor(C m^beta)).
With b_n complete blocks seen so far, the estimator averages the outer products
of the scaled centered block sums Y_m = (s_m - a_m xbar_n)/sqrt(a_m) over the
most recent K_n = max(1, floor(rho b_n)) blocks. rho < 1 discards early blocks
(whose within-block law is far from stationary) as burn-in; rho = 1 keeps all.

Centering uses the exact global running mean applied retroactively through the
stored per-block sums, so a query reproduces the offline estimator bit-for-bit
up to rounding. Storage is the retained window only: O(K_n d + d^2).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .matstat import operator_norm

# Protects floor() against decimal parameters that are not binary-representable.
_FLOOR_EPS = 1e-9

_BETA_VARIANTS = ("original", "variance_limited", "optimal")


@dataclass(frozen=True)
class BlockSchedule:
    """Polynomial block growth: block m holds max(1, floor(growth * m^exponent)) iterates."""

    growth: float
    exponent: float

    def __post_init__(self) -> None:
        if not self.growth >= 1.0:
            raise ValueError("growth constant must be at least 1")
        if not self.exponent > 0.0:
            raise ValueError("block exponent must be positive")


def block_size(schedule: BlockSchedule, m: int) -> int:
    if m < 1:
        raise ValueError("block index starts at 1")
    return max(1, math.floor(schedule.growth * float(m) ** schedule.exponent + _FLOOR_EPS))


def num_complete_blocks(schedule: BlockSchedule, n: int) -> int:
    """Largest b with cumulative block endpoints t_b <= n; 0 when n < t_1."""
    if n < 0:
        raise ValueError("n must be non-negative")
    total = 0
    m = 0
    while True:
        nxt = total + block_size(schedule, m + 1)
        if nxt > n:
            return m
        total = nxt
        m += 1


@dataclass
class BlockRecord:
    """Sealed block: index, size, and the un-centered iterate sum."""

    index: int
    size: int
    total: np.ndarray


class BmState:
    """Single-pass batch-means accumulator for one trajectory.

    Maintains the retained window of BlockRecords plus running aggregates
    (M2 = sum (1/a_m) s_m s_m^T, u = sum s_m, A_sum = sum a_m) so a query is
    O(d^2) regardless of how many iterates each block absorbed. The partial
    trailing block feeds the running mean but never the estimator.
    """

    def __init__(self, dimension: int, schedule: BlockSchedule, rho: float = 1.0):
        if dimension < 1:
            raise ValueError("dimension must be at least 1")
        if not 0.0 < rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        self.dimension = dimension
        self.schedule = schedule
        self.rho = rho
        self.n = 0
        self.mean = np.zeros(dimension)
        self.retained: deque[BlockRecord] = deque()
        self.m2 = np.zeros((dimension, dimension))
        self.u = np.zeros(dimension)
        self.a_sum = 0
        self.complete_blocks = 0
        self.partial_sum = np.zeros(dimension)
        self.partial_count = 0
        self._next_size = block_size(schedule, 1)

    # -- streaming update ------------------------------------------------

    def update(self, t: int, x: np.ndarray) -> "BmState":
        if t != self.n + 1:
            raise ValueError(f"iterates must arrive in order: expected t={self.n + 1}, got {t}")
        self.n = t
        self.mean += (x - self.mean) / t
        self.partial_sum += x
        self.partial_count += 1
        if self.partial_count == self._next_size:
            self._seal_block()
        return self

    def _seal_block(self) -> None:
        m = self.complete_blocks + 1
        record = BlockRecord(index=m, size=self.partial_count, total=self.partial_sum.copy())
        self.retained.append(record)
        self.m2 += np.outer(record.total, record.total) / record.size
        self.u += record.total
        self.a_sum += record.size
        self.complete_blocks = m
        self.partial_sum = np.zeros(self.dimension)
        self.partial_count = 0
        self._next_size = block_size(self.schedule, m + 1)
        start = self.window_start
        while self.retained[0].index < start:
            old = self.retained.popleft()
            self.m2 -= np.outer(old.total, old.total) / old.size
            self.u -= old.total
            self.a_sum -= old.size

    # -- window bookkeeping ------------------------------------------------

    @property
    def window_size(self) -> int:
        """K_n = max(1, floor(rho * b_n))."""
        return max(1, math.floor(self.rho * self.complete_blocks + _FLOOR_EPS))

    @property
    def window_start(self) -> int:
        return self.complete_blocks - self.window_size + 1

    # -- queries ------------------------------------------------------------

    def query(self) -> np.ndarray:
        """Covariance estimate from the retained window, centered at the running mean."""
        if self.complete_blocks < 1:
            raise ValueError("insufficient data: no complete block yet")
        k = self.window_size
        xbar = self.mean
        sigma = (
            self.m2
            - np.outer(xbar, self.u)
            - np.outer(self.u, xbar)
            + self.a_sum * np.outer(xbar, xbar)
        ) / k
        return (sigma + sigma.T) / 2.0

    def block_deviations(self) -> np.ndarray:
        """Y_m rows for every retained block, centered at the current mean."""
        if self.complete_blocks < 1:
            raise ValueError("insufficient data: no complete block yet")
        rows = np.empty((len(self.retained), self.dimension))
        for i, rec in enumerate(self.retained):
            rows[i] = (rec.total - rec.size * self.mean) / math.sqrt(rec.size)
        return rows

    def query_weighted(self, p: float = 1.0) -> np.ndarray:
        """Soft-weighted variant: blocks weighted by m^p instead of a hard cutoff."""
        if self.rho != 1.0:
            raise ValueError("weighted query requires rho=1 (full block list)")
        if not p > 0.0:
            raise ValueError("weight exponent p must be positive")
        if self.complete_blocks < 1:
            raise ValueError("insufficient data: no complete block yet")
        ys = self.block_deviations()
        weights = np.array([float(rec.index) ** p for rec in self.retained])
        sigma = (ys.T * weights) @ ys / weights.sum()
        return (sigma + sigma.T) / 2.0


class BmSink:
    """Adapter feeding a trajectory into a BmState as a run_trajectory sink."""

    def __init__(self, dimension: int, schedule: BlockSchedule, rho: float = 1.0):
        self.state = BmState(dimension, schedule, rho=rho)

    def __call__(self, t: int, x: np.ndarray, eta_prev: float) -> None:
        self.state.update(t, x)


# --- growth-exponent selectors and the mixing guard -----------------------------


def choose_beta(alpha: float, variant: str) -> float:
    """Closed-form block-growth exponents for a given step decay alpha.

    original        2/(1-alpha): variance-limited historical choice
    variance_limited (1+alpha)/(1-alpha): no-burn-in compromise
    optimal         (1+2*alpha)/(2*(1-alpha)): balances bias against variance
    """
    if not 0.5 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0.5 and 1")
    if variant == "original":
        return 2.0 / (1.0 - alpha)
    if variant == "variance_limited":
        return (1.0 + alpha) / (1.0 - alpha)
    if variant == "optimal":
        return (1.0 + 2.0 * alpha) / (2.0 * (1.0 - alpha))
    raise ValueError(f"unknown variant {variant!r}; expected one of {_BETA_VARIANTS}")


def mixing_ok(alpha: float, beta: float) -> tuple[bool, float]:
    """Check beta > alpha/(1-alpha) (strict); returns the flag and the margin
    gamma = beta*(1-alpha) - alpha that controls block-correlation decay."""
    gamma = beta * (1.0 - alpha) - alpha
    return gamma > 0.0, gamma


# --- leave-one-block-out selection of the burn-in fraction ------------------------


def cross_validate_rho(state: BmState, candidates) -> float:
    """Pick a burn-in fraction by leave-one-block-out prediction error.

    For each candidate rho, every block in that candidate's window is held
    out in turn and scored by the squared operator-norm distance between its
    outer product and the estimate from the remaining blocks. Ties break
    toward the larger rho (less data discarded).
    """
    if state.rho != 1.0:
        raise ValueError("cross-validation needs a state with rho=1")
    if state.complete_blocks < 3:
        raise ValueError("need at least 3 complete blocks to cross-validate")
    return cross_validate_rows(state.block_deviations(), candidates)


def cross_validate_rows(ys: np.ndarray, candidates) -> float:
    """Leave-one-block-out selection from precomputed deviation rows Y_1..Y_b."""
    cand = sorted(set(float(r) for r in candidates))
    if not cand or not all(0.0 < r <= 1.0 for r in cand):
        raise ValueError("candidates must lie in (0, 1]")

    ys = np.asarray(ys, dtype=float)
    b = ys.shape[0]
    if b < 3:
        raise ValueError("need at least 3 complete blocks to cross-validate")
    outers = np.einsum("mi,mj->mij", ys, ys)

    best_rho = None
    best_loss = math.inf
    any_scored = False
    for rho in cand:
        k = max(1, math.floor(rho * b + _FLOOR_EPS))
        if k < 2:
            continue
        any_scored = True
        window = outers[b - k :]
        total = window.sum(axis=0)
        loss = 0.0
        for held in window:
            rest = (total - held) / (k - 1)
            loss += operator_norm(held - rest) ** 2
        loss /= k
        if loss <= best_loss:  # ascending order, so ties land on larger rho
            best_loss = loss
            best_rho = rho
    if not any_scored:
        raise ValueError("every candidate window was too small (fewer than 2 blocks)")
    return best_rho
