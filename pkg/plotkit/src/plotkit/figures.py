"""Figure rendering for the rate curves and the bias-variance decomposition.

Rendering is pinned for reproducibility: Agg backend, fixed figure
geometry, SVG text kept as text with a fixed hash salt, and no date
metadata, so regenerating a figure from the same CSV gives identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg", force=True)
matplotlib.rcParams["svg.hashsalt"] = "plotkit"
matplotlib.rcParams["svg.fonttype"] = "none"

import matplotlib.pyplot as plt  # noqa: E402 (backend must be set first)
import numpy as np  # noqa: E402

from .frames import BlockFrame, RatesFrame, ols_decay  # noqa: E402

_MARKERS = {
    "regression": "o",
    "bm_burnin": "s",
    "bm_optimal": "^",
    "bm_original": "D",
    "bm_weighted": "v",
    "oracle": "*",
}
_SERIES_ORDER = tuple(_MARKERS)

# Reference decay exponents and the series whose rightmost point anchors each
# line; the first present estimator in the tuple wins.
_REFERENCES = (
    (lambda a: (1.0 - a) / 2.0, ("regression",)),
    (lambda a: (1.0 - a) / 3.0, ("bm_optimal", "bm_burnin")),
    (lambda a: (1.0 - a) / 4.0, ("bm_original",)),
)


def _series_order(estimators) -> list[str]:
    known = [e for e in _SERIES_ORDER if e in estimators]
    return known + sorted(set(estimators) - set(known))


def _save(fig, out_image: str) -> None:
    if out_image.endswith(".svg"):
        fig.savefig(out_image, metadata={"Date": None})
    else:
        fig.savefig(out_image)
    plt.close(fig)


def plot_rates(rates_csv: str, out_image: str) -> dict[tuple[float, str], float]:
    """Render log-log error curves, one panel per alpha; returns the slope
    annotations keyed by (alpha, estimator)."""
    frame = RatesFrame.read(rates_csv)
    for (alpha, est), points in frame.series.items():
        if len(points) < 2:
            raise ValueError(
                f"estimator {est!r} at alpha={alpha:g} has {len(points)} size(s); need at least 2"
            )
    panels = len(frame.alphas)
    fig, axes = plt.subplots(
        1, panels, figsize=(4.4 * panels, 3.6), dpi=120, squeeze=False
    )
    slopes: dict[tuple[float, str], float] = {}
    for ax, alpha in zip(axes[0], frame.alphas):
        present = [e for e in _series_order(frame.estimators) if (alpha, e) in frame.series]
        for est in present:
            points = [(n, y) for n, y in frame.series[(alpha, est)] if y > 0.0]
            if len(points) < 2:
                continue
            ns = [n for n, _ in points]
            ys = [y for _, y in points]
            decay = ols_decay(ns, ys)
            slopes[(alpha, est)] = decay
            ax.loglog(
                ns, ys, marker=_MARKERS.get(est, "x"), markersize=4,
                linewidth=1.0, label=f"{est} (slope {decay:.3f})",
            )
        for exponent_of, anchors in _REFERENCES:
            anchor = next((e for e in anchors if (alpha, e) in slopes), None)
            if anchor is None:
                continue
            points = [(n, y) for n, y in frame.series[(alpha, anchor)] if y > 0.0]
            ns = np.array([n for n, _ in points], dtype=float)
            y_right = points[-1][1]
            decay = exponent_of(alpha)
            ref = y_right * (ns / ns[-1]) ** (-decay)
            ax.loglog(
                ns, ref, linestyle=":", linewidth=1.0, color="0.45",
                label=f"reference slope {decay:.4g}",
            )
        ax.set_title(f"alpha = {alpha:g}")
        ax.set_xlabel("n")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel("operator-norm error")
    fig.tight_layout()
    _save(fig, out_image)
    return slopes


@dataclass(frozen=True)
class BiasVarianceRender:
    cutoff: float
    log_scale: bool


def plot_bias_variance(block_csv: str, rho: float, out_image: str) -> BiasVarianceRender:
    """Render per-block bias and variance with the burn-in cutoff marker at
    m = (1 - rho) * b_n."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    frame = BlockFrame.read(block_csv)
    ms = [row.m for row in frame.rows]
    bias = [row.bias for row in frame.rows]
    variance = [row.variance for row in frame.rows]
    cutoff = (1.0 - rho) * ms[-1]
    log_scale = all(v > 0.0 for v in bias + variance)
    fig, ax = plt.subplots(figsize=(5.2, 3.8), dpi=120)
    ax.plot(ms, bias, marker="o", markersize=4, linewidth=1.0, label="bias")
    ax.plot(ms, variance, marker="s", markersize=4, linewidth=1.0, label="variance")
    if log_scale:
        ax.set_yscale("log")  # falls back to linear when a value is zero
    if cutoff > 0.0:
        ax.axvline(cutoff, linestyle=":", color="0.45", linewidth=1.0)
        ax.annotate(
            f"burn-in cutoff (rho={rho:g})", xy=(cutoff, 1.0),
            xycoords=("data", "axes fraction"), xytext=(4, -12),
            textcoords="offset points", fontsize=7, color="0.3",
        )
    ax.set_xlabel("block index m")
    ax.set_ylabel("operator norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_image)
    return BiasVarianceRender(cutoff=cutoff, log_scale=log_scale)
