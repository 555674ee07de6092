"""Dense symmetric linear algebra, chi-squared quantiles, seeded Gaussian streams.

Everything here is self-contained: eigendecompositions use cyclic Jacobi
rotations, quantiles invert a hand-rolled regularized incomplete gamma, and
random numbers come from keyed counter-based bit streams. numpy is used only
as the array carrier. Dimensions are small (tens), so robustness beats speed.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "RngStream",
    "as_square_matrix",
    "as_vector",
    "chi2_quantile",
    "gaussian_vector",
    "operator_norm",
    "regularized_gamma_p",
    "solve",
    "spd_inverse",
    "sym_eigen",
]

# Relative off-diagonal Frobenius mass at which a Jacobi sweep stops.
_JACOBI_TOL = 1e-13
_MAX_SWEEPS = 100
# Relative asymmetry tolerated before an input stops counting as symmetric.
_SYM_TOL = 1e-8


# --- array validation ---------------------------------------------------------


def as_vector(x, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def as_square_matrix(m, name: str = "M") -> np.ndarray:
    """Return ``m`` as a finite square float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def _is_symmetric(a: np.ndarray) -> bool:
    scale = 1.0 + np.abs(a).max(initial=0.0)
    return float(np.abs(a - a.T).max(initial=0.0)) <= _SYM_TOL * scale


# --- symmetric eigendecomposition ----------------------------------------------


def sym_eigen(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    m : array_like
        Symmetric square matrix.

    Returns
    -------
    (eigenvalues, eigenvectors)
        Eigenvalues sorted descending; eigenvector ``k`` is column ``k`` of
        the returned orthogonal matrix.
    """
    a = as_square_matrix(m).copy()
    if not _is_symmetric(a):
        raise ValueError("sym_eigen requires a symmetric matrix")
    d = a.shape[0]
    q = np.eye(d)
    if d == 1:
        return a.diagonal().copy(), q

    fro = float(np.sqrt((a * a).sum()))
    threshold = _JACOBI_TOL * max(fro, np.finfo(np.float64).tiny)
    diag_idx = np.arange(d)

    for _ in range(_MAX_SWEEPS):
        # Off-diagonal Frobenius mass summed directly (no cancellation).
        sq = a * a
        sq[diag_idx, diag_idx] = 0.0
        off = math.sqrt(float(sq.sum()))
        if off <= threshold:
            break
        for p in range(d - 1):
            for r in range(p + 1, d):
                apr = a[p, r]
                if apr == 0.0:
                    continue
                # Rotation angle that annihilates a[p, r].
                theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                if abs(theta) > 1e153:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (
                        abs(theta) + math.sqrt(theta * theta + 1.0)
                    )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, r]
                rot_r = s * a[:, p] + c * a[:, r]
                a[:, p], a[:, r] = rot_p, rot_r
                rot_p = c * a[p, :] - s * a[r, :]
                rot_r = s * a[p, :] + c * a[r, :]
                a[p, :], a[r, :] = rot_p, rot_r
                a[p, r] = a[r, p] = 0.0
                rot_p = c * q[:, p] - s * q[:, r]
                rot_r = s * q[:, p] + c * q[:, r]
                q[:, p], q[:, r] = rot_p, rot_r
    else:
        raise RuntimeError("Jacobi sweep did not converge")

    vals = a.diagonal().copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], q[:, order]


def operator_norm(m) -> float:
    """Spectral norm: max |eigenvalue| for symmetric input, otherwise the
    largest singular value obtained from the Gram matrix."""
    a = as_square_matrix(m)
    if _is_symmetric(a):
        sym = (a + a.T) / 2.0
        vals, _ = sym_eigen(sym)
        return float(np.abs(vals).max())
    vals, _ = sym_eigen(a.T @ a)
    return float(math.sqrt(max(float(vals[0]), 0.0)))


def spd_inverse(m, eig_floor: float | None = None) -> tuple[np.ndarray, int]:
    """Invert a symmetric PSD-intent matrix with eigenvalue flooring.

    Eigenvalues below ``eig_floor`` (default ``1e-10 * trace(M)/d``) are
    lifted to the floor before reciprocation. Returns the inverse and the
    number of floored eigenvalues so callers can flag degenerate estimates.
    """
    a = as_square_matrix(m)
    d = a.shape[0]
    if eig_floor is None:
        eig_floor = 1e-10 * float(a.trace()) / d
    vals, vecs = sym_eigen(a)
    floored = int(np.count_nonzero(vals < eig_floor))
    clipped = np.maximum(vals, eig_floor)
    if clipped[-1] <= 0.0:
        raise ValueError("matrix is singular at the requested eigenvalue floor")
    inv = (vecs / clipped) @ vecs.T
    return (inv + inv.T) / 2.0, floored


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting."""
    lhs = as_square_matrix(a, name="a").copy()
    rhs = np.array(b, dtype=np.float64, copy=True)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    d = lhs.shape[0]
    if rhs.shape[0] != d:
        raise ValueError("incompatible shapes in solve")
    scale = np.abs(lhs).max(initial=0.0)
    for col in range(d):
        pivot = col + int(np.abs(lhs[col:, col]).argmax())
        if abs(lhs[pivot, col]) <= 1e-13 * max(scale, 1e-300):
            raise ValueError("singular matrix in solve")
        if pivot != col:
            lhs[[col, pivot]] = lhs[[pivot, col]]
            rhs[[col, pivot]] = rhs[[pivot, col]]
        inv_p = 1.0 / lhs[col, col]
        for row in range(col + 1, d):
            f = lhs[row, col] * inv_p
            if f != 0.0:
                lhs[row, col:] -= f * lhs[col, col:]
                rhs[row] -= f * rhs[col]
    for col in range(d - 1, -1, -1):
        rhs[col] /= lhs[col, col]
        for row in range(col):
            rhs[row] -= lhs[row, col] * rhs[col]
    return rhs[:, 0] if squeeze else rhs


# --- chi-squared quantiles ------------------------------------------------------

_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 600
_QUANTILE_FTOL = 1e-10


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion for x < a + 1, Lentz continued fraction for the upper
    tail otherwise; both follow the classical formulation.
    """
    if a <= 0.0:
        raise ValueError("shape parameter must be positive")
    if x < 0.0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 0.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        # P via its power series.
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(_GAMMA_MAX_ITER):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * _GAMMA_EPS:
                break
        return min(1.0, math.exp(log_prefix) * total)
    # Q via the continued fraction, then P = 1 - Q.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return max(0.0, 1.0 - math.exp(log_prefix) * h)


def chi2_quantile(dof: int, prob: float) -> float:
    """Quantile of the chi-squared law with ``dof`` degrees of freedom.

    Inverts the CDF ``P(dof/2, q/2)`` by bracketing plus bisection until the
    CDF at the returned point matches ``prob`` to 1e-10.
    """
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie strictly between 0 and 1")
    a = dof / 2.0

    def cdf(x: float) -> float:
        return regularized_gamma_p(a, x / 2.0)

    lo, hi = 0.0, float(dof) + 10.0 * math.sqrt(2.0 * dof) + 10.0
    while cdf(hi) < prob:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket chi-squared quantile")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        err = cdf(mid) - prob
        if abs(err) <= _QUANTILE_FTOL and hi - lo <= 1e-9 * (1.0 + mid):
            return mid
        if err < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- seeded Gaussian streams -----------------------------------------------------

_KEY_MASK = (1 << 64) - 1


class RngStream:
    """Reproducible Gaussian stream keyed by (base_seed, stream_id).

    Streams with the same key always emit the same values; distinct
    stream_ids give statistically independent streams, so replication ``r``
    of an experiment can own stream_id ``r`` regardless of scheduling. The
    core is a counter-based generator, and draws are stable under call
    partitioning: one (n, d) block equals n successive d-draws bitwise.
    """

    __slots__ = ("base_seed", "stream_id", "_gen")

    def __init__(self, base_seed: int, stream_id: int = 0):
        self.base_seed = int(base_seed)
        self.stream_id = int(stream_id)
        key = [self.base_seed & _KEY_MASK, self.stream_id & _KEY_MASK]
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normals(self, shape) -> np.ndarray:
        """Draw standard normals of the given shape, advancing the stream."""
        return self._gen.standard_normal(shape)

    def clone(self) -> "RngStream":
        """Fresh stream restarted at the beginning of the same sequence."""
        return RngStream(self.base_seed, self.stream_id)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(base_seed={self.base_seed}, stream_id={self.stream_id})"


def gaussian_vector(stream: RngStream, d: int) -> np.ndarray:
    """Next d-dimensional standard Gaussian vector from ``stream``."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return stream.normals(d)
