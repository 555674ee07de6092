"""Hessian-free covariance estimation by regressing SGD increments on iterates.

Each consumed pair contributes y_t = (x_t - x_{t+1})/eta_t, which for a
quadratic objective equals H x_t plus noise. Ordinary least squares on the
centered stream recovers H-hat, the residual second moment gives S-hat, and
the plug-in V-hat = H-hat^{-1} S-hat H-hat^{-T} estimates the limiting
covariance. Everything is accumulated in five O(d^2) sufficient statistics,
so the estimator is single-pass and mergeable across stream segments.
"""

from __future__ import annotations

import numpy as np

from .matstat import solve, sym_eigen

_GRAM_FLOOR_SCALE = 1e-10


class RegState:
    """Sufficient statistics of the increment-on-iterate regression."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be at least 1")
        self.dimension = dimension
        self.n_pairs = 0
        self.sxx = np.zeros((dimension, dimension))
        self.syx = np.zeros((dimension, dimension))
        self.syy = np.zeros((dimension, dimension))
        self.sum_x = np.zeros(dimension)
        self.sum_y = np.zeros(dimension)
        self.floored_gram = 0  # diagnostics from the most recent finalize

    def update(self, x_t: np.ndarray, x_next: np.ndarray, eta_t: float) -> "RegState":
        """Consume one transition; O(d^2) work, no history kept."""
        if not eta_t > 0.0:
            raise ValueError("eta_t must be positive")
        y = (x_t - x_next) / eta_t
        self.n_pairs += 1
        self.sxx += np.outer(x_t, x_t)
        self.syx += np.outer(y, x_t)
        self.syy += np.outer(y, y)
        self.sum_x += x_t
        self.sum_y += y
        return self

    def merge(self, other: "RegState") -> "RegState":
        """Combine statistics from a disjoint stream segment."""
        if other.dimension != self.dimension:
            raise ValueError("cannot merge states of different dimension")
        out = RegState(self.dimension)
        out.n_pairs = self.n_pairs + other.n_pairs
        out.sxx = self.sxx + other.sxx
        out.syx = self.syx + other.syx
        out.syy = self.syy + other.syy
        out.sum_x = self.sum_x + other.sum_x
        out.sum_y = self.sum_y + other.sum_y
        return out

    def finalize(
        self, symmetrize: bool = True, eig_floor: float | None = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Solve the regression and return (H_hat, S_hat, V_hat).

        The centered Gram is inverted with an eigenvalue floor (default
        1e-10 * trace/d); more than one floored eigenvalue means the design
        does not span the space and raises "rank-deficient design".
        """
        d = self.dimension
        n = self.n_pairs
        if n < d + 1:
            raise ValueError(
                f"rank-deficient design: {n} pairs cannot identify a {d}x{d} map"
            )
        x_bar = self.sum_x / n
        y_bar = self.sum_y / n
        gram = self.sxx - n * np.outer(x_bar, x_bar)
        gram = (gram + gram.T) / 2.0
        cross = self.syx - n * np.outer(y_bar, x_bar)

        if eig_floor is None:
            eig_floor = _GRAM_FLOOR_SCALE * float(gram.trace()) / d
        vals, vecs = sym_eigen(gram)
        floored = int(np.count_nonzero(vals < eig_floor))
        self.floored_gram = floored
        if floored > 1 or vals[0] <= 0.0:
            raise ValueError("rank-deficient design: centered Gram is singular")
        clipped = np.maximum(vals, eig_floor)
        gram_inv = (vecs / clipped) @ vecs.T

        h_hat = cross @ gram_inv
        if symmetrize:
            h_hat = (h_hat + h_hat.T) / 2.0
        s_hat = (
            self.syy - h_hat @ self.syx.T - self.syx @ h_hat.T + h_hat @ self.sxx @ h_hat.T
        ) / n
        s_hat = (s_hat + s_hat.T) / 2.0
        # V = H^-1 S H^-T through two solves; works for the raw asymmetric mode too.
        try:
            half = solve(h_hat, s_hat)
            v_hat = solve(h_hat, half.T).T
        except ValueError as err:
            raise ValueError(f"rank-deficient design: {err}") from err
        if symmetrize:
            v_hat = (v_hat + v_hat.T) / 2.0
        return h_hat, s_hat, v_hat


class RegressionSink:
    """run_trajectory adapter: buffers one iterate to form consecutive pairs.

    The first delivered iterate is only buffered, so n iterates yield n-1
    pairs; the step size attached to each delivery is exactly the one that
    produced it, which is the eta_t of the pair ending there.
    """

    def __init__(self, dimension: int):
        self.state = RegState(dimension)
        self._prev: np.ndarray | None = None

    def __call__(self, t: int, x: np.ndarray, eta_prev: float) -> None:
        if self._prev is not None:
            self.state.update(self._prev, x, eta_prev)
        self._prev = x.copy()
