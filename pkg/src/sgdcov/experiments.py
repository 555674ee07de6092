"""Experiment drivers, configuration, and result serialization.

Each driver returns (header, rows) where rows are plain dicts; the CSV and
JSON writers render them deterministically (floats at 17 significant
digits, fixed column order, sorted rows), so identical configurations
produce byte-identical output files.  Replication-level work is split into
fixed-size chunks whose composition never depends on the worker count,
which makes parallel and serial runs emit the same numbers.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .batchmeans import (
    BlockSchedule,
    block_size,
    choose_beta,
    cross_validate_rows,
    mixing_ok,
)
from .engine import EstimatorSpec, run_chunk
from .inference import coverage_experiment
from .matstat import RngStream, operator_norm, sym_eigen
from .minimax import TwoPointConfig, build_report
from .sgd import QuadraticProblem, Schedule, true_covariance

_CHUNK = 64
_STREAM_STRIDE = 1_000_003

RATES_HEADER = (
    "experiment", "alpha", "n", "estimator", "rho", "beta", "p",
    "rep", "seed", "op_error", "degenerate", "wall_ms",
)
BLOCK_HEADER = ("m", "a_m", "bias", "variance")
COVERAGE_HEADER = (
    "experiment", "alpha", "n", "estimator", "level",
    "rep", "seed", "covered", "degenerate", "wall_ms",
)
MINIMAX_HEADER = (
    "experiment", "alpha", "n", "delta_n", "kappa_hat", "separation_exact",
    "separation_lower", "kl_exact", "tv_bound", "risk_floor", "kl_mc", "kl_mc_se",
)
IID_HEADER = ("experiment", "d", "n", "rep", "seed", "op_error", "reference")


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


class NumericalFailure(RuntimeError):
    """Every replication failed at some grid point; maps to CLI exit code 3."""


# --- configuration -----------------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad float list {text!r}") from exc


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(float(x)) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _parse_int(text: str) -> int:
    try:
        return int(str(text).strip())
    except ValueError as exc:
        raise ConfigError(f"bad integer {text!r}") from exc


def _parse_float(text: str) -> float:
    try:
        return float(str(text).strip())
    except ValueError as exc:
        raise ConfigError(f"bad float {text!r}") from exc


def _parse_optional_float(text: str):
    s = str(text).strip()
    return None if s in ("", "none") else _parse_float(s)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat bag of experiment parameters; unused keys are simply ignored
    by drivers that do not need them."""

    experiment: str
    d: int = 10
    hessian: str = "equispaced:1:5"
    noise: str = "identity"
    sigma: str = "identity"
    eta0: float = 1.0
    alphas: tuple[float, ...] = (0.55, 0.6, 0.7)
    ns: tuple[int, ...] = (1000, 3000, 10_000, 30_000, 100_000, 300_000, 1_000_000)
    reps: int = 200
    reps_large: int = 50
    large_n_cutoff: int = 3_000_000
    estimators: tuple[str, ...] = ("regression", "bm_burnin", "bm_optimal", "bm_original")
    growth: float = 5.0
    base_seed: int = 0
    workers: int = 1
    out: str = ""
    format: str = "csv"
    timing: bool = False
    allow_unmixed: bool = False
    x0: str = "zeros"
    level: float = 0.95
    alpha: float = 0.55
    n: int = 100_000
    beta_variant: str = "optimal"
    candidates: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    mc_reps: int = 2000
    mc_points: int = 2
    delta: float | None = None


_KEY_PARSERS = {
    "d": _parse_int,
    "hessian": str,
    "noise": str,
    "sigma": str,
    "eta0": _parse_float,
    "alphas": _parse_float_list,
    "ns": _parse_int_list,
    "reps": _parse_int,
    "reps_large": _parse_int,
    "large_n_cutoff": _parse_int,
    "estimators": _parse_str_list,
    "growth": _parse_float,
    "base_seed": _parse_int,
    "workers": _parse_int,
    "out": str,
    "format": str,
    "timing": _parse_bool,
    "allow_unmixed": _parse_bool,
    "x0": str,
    "level": _parse_float,
    "alpha": _parse_float,
    "n": _parse_int,
    "beta_variant": str,
    "candidates": _parse_float_list,
    "mc_reps": _parse_int,
    "mc_points": _parse_int,
    "delta": _parse_optional_float,
}

EXPERIMENT_KINDS = (
    "rates", "bias_variance", "coverage", "minimax", "iid_baseline", "cv_rho",
)

# Per-experiment defaults layered over the dataclass defaults.
_KIND_DEFAULTS = {
    "bias_variance": {"reps": 500},
    "coverage": {"reps": 500, "estimators": ("regression", "oracle")},
    "cv_rho": {"reps": 100, "estimators": ("bm_optimal",), "n": 10_000},
    "iid_baseline": {"ns": (1000, 10_000)},
}


def load_config(path: str) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blank lines ignored."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def build_config(experiment: str, mapping: dict) -> ExperimentConfig:
    """Validate a key mapping and materialize the config for one experiment."""
    if experiment not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    values: dict = dict(_KIND_DEFAULTS.get(experiment, {}))
    for key, raw in mapping.items():
        if key == "experiment":
            continue  # the subcommand decides the experiment kind
        if key not in _KEY_PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _KEY_PARSERS[key](raw) if isinstance(raw, str) else raw
    config = ExperimentConfig(experiment=experiment, **values)
    if config.format not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {config.format!r}")
    if config.d < 1:
        raise ConfigError("d must be positive")
    if config.reps < 1:
        raise ConfigError("reps must be positive")
    if config.workers < 1:
        raise ConfigError("workers must be positive")
    if not config.ns or any(n < 1 for n in config.ns):
        raise ConfigError("ns must be positive")
    try:
        for alpha in set(config.alphas) | {config.alpha}:
            Schedule(eta0=config.eta0, alpha=alpha)
        build_problem(config)
        parse_x0(config.x0, config.d)
        for alpha in config.alphas:
            resolve_estimators(config, alpha)
        resolve_estimators(config, config.alpha)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def parse_matrix_spec(spec: str, d: int) -> np.ndarray:
    """Diagonal matrix specs: identity | zero | equispaced:lo:hi | eigs:a,b,..."""
    text = spec.strip()
    if text == "identity":
        return np.eye(d)
    if text == "zero":
        return np.zeros((d, d))
    if text.startswith("equispaced:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad matrix spec {spec!r}")
        lo, hi = _parse_float(parts[1]), _parse_float(parts[2])
        return np.diag(np.linspace(lo, hi, d))
    if text.startswith("eigs:"):
        eigs = _parse_float_list(text[len("eigs:"):])
        if len(eigs) != d:
            raise ConfigError(f"matrix spec {spec!r} needs {d} eigenvalues")
        return np.diag(np.array(eigs))
    raise ConfigError(f"bad matrix spec {spec!r}")


def parse_x0(spec: str, d: int):
    text = spec.strip()
    if text == "zeros":
        return None
    if text == "ones":
        return np.ones(d)
    values = _parse_float_list(text)
    if len(values) != d:
        raise ConfigError(f"x0 spec {spec!r} needs {d} coordinates")
    return np.array(values)


def build_problem(config: ExperimentConfig) -> QuadraticProblem:
    try:
        return QuadraticProblem(
            parse_matrix_spec(config.hessian, config.d),
            parse_matrix_spec(config.noise, config.d),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


_LABEL_KINDS = {
    "bm_original": ("bm", "original", 1.0),
    "bm_optimal": ("bm", "optimal", 1.0),
    "bm_burnin": ("bm", "optimal", 0.5),
    "bm_weighted": ("bm_weighted", "optimal", 1.0),
    "regression": ("regression", None, None),
    "oracle": ("oracle", None, None),
}


def resolve_estimators(config: ExperimentConfig, alpha: float) -> list[EstimatorSpec]:
    """Expand estimator tokens (label[:key=value]*) at a given alpha.

    Block exponents come from the closed-form selectors unless overridden;
    every (alpha, beta) pair must satisfy the mixing condition unless
    allow_unmixed is set.
    """
    specs: list[EstimatorSpec] = []
    seen = set()
    for token in config.estimators:
        parts = token.split(":")
        label = parts[0].strip()
        if label not in _LABEL_KINDS:
            raise ConfigError(
                f"unknown estimator {label!r}; expected one of {sorted(_LABEL_KINDS)}"
            )
        if label in seen:
            raise ConfigError(f"duplicate estimator label {label!r}")
        seen.add(label)
        kind, variant, rho = _LABEL_KINDS[label]
        overrides: dict[str, float] = {}
        for part in parts[1:]:
            if "=" not in part:
                raise ConfigError(f"bad estimator option {part!r} in {token!r}")
            key, value = part.split("=", 1)
            if key not in ("rho", "beta", "p", "growth"):
                raise ConfigError(f"unknown estimator option {key!r} in {token!r}")
            overrides[key] = _parse_float(value)
        if kind in ("bm", "bm_weighted"):
            beta = overrides.get("beta", choose_beta(alpha, variant))
            spec = EstimatorSpec(
                label=label,
                kind=kind,
                rho=overrides.get("rho", rho),
                beta=beta,
                growth=overrides.get("growth", config.growth),
                p=overrides.get("p", 1.0) if kind == "bm_weighted" else None,
            )
            ok, gamma = mixing_ok(alpha, beta)
            if not ok and not config.allow_unmixed:
                raise ConfigError(
                    f"estimator {label} with beta={beta:g} fails the mixing condition "
                    f"at alpha={alpha:g} (gamma={gamma:g} <= 0); "
                    "set allow_unmixed=1 to override"
                )
            if not 0.0 < spec.rho <= 1.0:
                raise ConfigError(f"estimator {label}: rho must lie in (0, 1]")
            if spec.growth < 1.0:
                raise ConfigError(f"estimator {label}: growth must be at least 1")
        else:
            if overrides:
                raise ConfigError(f"estimator {label} takes no options")
            spec = EstimatorSpec(label=label, kind=kind)
        specs.append(spec)
    if not specs:
        raise ConfigError("estimator list is empty")
    return specs


# --- serialization -------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def render_rows(header, rows, fmt: str) -> str:
    """Deterministic text rendering of result rows (csv or json lines)."""
    if fmt == "csv":
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(row.get(col)) for col in header))
        return "\n".join(lines) + "\n"
    if fmt == "json":
        lines = []
        for row in rows:
            clean = {}
            for key, value in row.items():
                if value is None:
                    continue
                if isinstance(value, (bool, np.bool_)):
                    clean[key] = bool(value)
                elif isinstance(value, (int, np.integer)):
                    clean[key] = int(value)
                elif isinstance(value, (float, np.floating)):
                    clean[key] = float(value)
                else:
                    clean[key] = value
            lines.append(json.dumps(clean, sort_keys=True))
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown output format {fmt!r}")


def write_output(path: str, header, rows, fmt: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(render_rows(header, rows, fmt))


def default_out(config: ExperimentConfig) -> str:
    if config.out:
        return config.out
    suffix = "csv" if config.format == "csv" else "jsonl"
    return f"{config.experiment}.{suffix}"


# --- shared helpers -------------------------------------------------------------------


def _parallel_map(fn, payloads, workers: int):
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, payloads))
    return [fn(p) for p in payloads]


def _chunk_ranges(start: int, stop: int, size: int = _CHUNK):
    return [(a, min(a + size, stop)) for a in range(start, stop, size)]


def _check_all_degenerate(rows, keys) -> None:
    groups: dict[tuple, list[bool]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(bool(row["degenerate"]))
    for key, flags in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        if all(flags):
            detail = ", ".join(f"{k}={v}" for k, v in zip(keys, key))
            raise NumericalFailure(f"all replications degenerate at {detail}")


# --- rates ------------------------------------------------------------------------------


def _rates_payloads(config: ExperimentConfig):
    ns = tuple(sorted(set(config.ns)))
    payloads = []
    for alpha_idx, alpha in enumerate(sorted(set(config.alphas))):
        small = tuple(n for n in ns if n < config.large_n_cutoff)
        has_large = len(small) < len(ns)
        if has_large and config.reps > config.reps_large:
            groups = [(0, min(config.reps_large, config.reps), ns)]
            if small:
                groups.append((config.reps_large, config.reps, small))
        else:
            groups = [(0, config.reps, ns)]
        for rep_start, rep_stop, ckpts in groups:
            for a, b in _chunk_ranges(rep_start, rep_stop):
                payloads.append((config, alpha_idx, alpha, a, b, ckpts))
    return payloads


def _rates_task(payload) -> list[dict]:
    config, alpha_idx, alpha, rep_start, rep_stop, ckpts = payload
    problem = build_problem(config)
    schedule = Schedule(eta0=config.eta0, alpha=alpha)
    specs = resolve_estimators(config, alpha)
    stream_ids = [alpha_idx * _STREAM_STRIDE + r for r in range(rep_start, rep_stop)]
    started = time.perf_counter()
    result = run_chunk(
        problem, schedule, config.base_seed, stream_ids, ckpts, specs,
        x0=parse_x0(config.x0, config.d),
    )
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    reps_here = rep_stop - rep_start
    per_row_ms = (
        elapsed_ms / (reps_here * len(ckpts) * len(specs)) if config.timing else 0.0
    )
    rows = []
    for n in ckpts:
        for spec in specs:
            key = (n, spec.label)
            errors = result.op_error[key]
            flags = result.degenerate[key]
            ok, gamma = (
                mixing_ok(alpha, spec.beta) if spec.beta is not None else (None, None)
            )
            for i, rep in enumerate(range(rep_start, rep_stop)):
                rows.append({
                    "experiment": config.experiment,
                    "alpha": alpha,
                    "n": n,
                    "estimator": spec.label,
                    "rho": spec.rho,
                    "beta": spec.beta,
                    "p": spec.p,
                    "rep": rep,
                    "seed": stream_ids[i],
                    "op_error": float(errors[i]),
                    "degenerate": bool(flags[i]),
                    "wall_ms": per_row_ms,
                    "mixing_ok": ok,
                    "gamma": gamma,
                })
    return rows


def run_rates(config: ExperimentConfig):
    """Replicated operator-norm errors over the (alpha, n, estimator) grid."""
    rows = []
    for chunk_rows in _parallel_map(_rates_task, _rates_payloads(config), config.workers):
        rows.extend(chunk_rows)
    rows.sort(key=lambda r: (r["alpha"], r["n"], r["estimator"], r["rep"]))
    _check_all_degenerate(rows, ("alpha", "n", "estimator"))
    return RATES_HEADER, rows


def fit_slope(rows, estimator: str, alpha: float):
    """OLS of log(mean op_error) on log(n); returns (decay slope, intercept, r2).

    The slope is reported as a positive decay exponent.  Degenerate
    replications are excluded from the per-n means.
    """
    by_n: dict[int, list[float]] = {}
    for row in rows:
        if row.get("estimator") != estimator or float(row.get("alpha")) != float(alpha):
            continue
        err = float(row["op_error"])
        if math.isfinite(err):
            by_n.setdefault(int(row["n"]), []).append(err)
    if len(by_n) < 3:
        raise ValueError("need at least 3 distinct n values to fit a slope")
    ns = sorted(by_n)
    means = [float(np.mean(by_n[n])) for n in ns]
    if any(m <= 0.0 for m in means):
        raise ValueError("mean errors must be positive to fit a log-log slope")
    x = np.log(np.array(ns, dtype=float))
    y = np.log(np.array(means))
    xc = x - x.mean()
    yc = y - y.mean()
    denom = float(xc @ xc)
    slope = float(xc @ yc) / denom
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return -slope, intercept, r2


# --- bias-variance -------------------------------------------------------------------


def run_bias_variance(config: ExperimentConfig):
    """Per-block bias and variance of the scaled centered block sums."""
    if config.reps < 100:
        raise ConfigError("bias-variance needs at least 100 replications")
    problem = build_problem(config)
    schedule = Schedule(eta0=config.eta0, alpha=config.alpha)
    beta = choose_beta(config.alpha, config.beta_variant)
    spec = EstimatorSpec(
        "bm_optimal", "bm", rho=1.0, beta=beta, growth=config.growth
    )
    x0 = parse_x0(config.x0, config.d)
    n = int(config.n)
    devs = []
    for a, b in _chunk_ranges(0, config.reps):
        result = run_chunk(
            problem, schedule, config.base_seed, range(a, b), (n,), (spec,),
            x0=x0, collect_blocks=True,
        )
        if n not in result.block_deviations:
            raise NumericalFailure(f"no complete block at n={n}")
        devs.append(result.block_deviations[n])
    ys = np.concatenate(devs, axis=1)  # (blocks, reps, d)
    v_true = true_covariance(problem)
    block_schedule = BlockSchedule(growth=config.growth, exponent=beta)
    rows = []
    for i in range(ys.shape[0]):
        outers = np.einsum("ri,rj->rij", ys[i], ys[i])
        mean_outer = outers.mean(axis=0)
        bias = operator_norm(mean_outer - v_true)
        variance = float(
            np.mean([operator_norm(outers[r] - mean_outer) for r in range(outers.shape[0])])
        )
        rows.append({
            "m": i + 1,
            "a_m": block_size(block_schedule, i + 1),
            "bias": bias,
            "variance": variance,
        })
    return BLOCK_HEADER, rows


# --- coverage ----------------------------------------------------------------------------


def run_coverage(config: ExperimentConfig):
    """Empirical ellipsoid coverage of the minimizer, one row per replication."""
    problem = build_problem(config)
    schedule = Schedule(eta0=config.eta0, alpha=config.alpha)
    specs = resolve_estimators(config, config.alpha)
    x0 = parse_x0(config.x0, config.d)
    if not 0.0 < config.level < 1.0:
        raise ConfigError("level must lie strictly between 0 and 1")
    rows = []
    for spec in specs:
        started = time.perf_counter()
        result = coverage_experiment(
            problem, schedule, spec, int(config.n), config.reps,
            config.level, config.base_seed, x0=x0,
        )
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        per_row_ms = elapsed_ms / config.reps if config.timing else 0.0
        for rep in range(config.reps):
            rows.append({
                "experiment": config.experiment,
                "alpha": config.alpha,
                "n": int(config.n),
                "estimator": spec.label,
                "level": config.level,
                "rep": rep,
                "seed": rep,
                "covered": bool(result.covered[rep]),
                "degenerate": bool(result.degenerate[rep]),
                "wall_ms": per_row_ms,
            })
    rows.sort(key=lambda r: (r["estimator"], r["rep"]))
    _check_all_degenerate(rows, ("estimator",))
    return COVERAGE_HEADER, rows


# --- minimax grid -----------------------------------------------------------------------


def run_minimax(config: ExperimentConfig):
    """Two-point construction over the (alpha, n) grid."""
    if config.d < 2:
        raise ConfigError("minimax needs d >= 2")
    rows = []
    for alpha in sorted(set(config.alphas)):
        for n_idx, n in enumerate(sorted(set(config.ns))):
            cfg = TwoPointConfig(
                dimension=config.d,
                schedule=Schedule(eta0=config.eta0, alpha=alpha),
                n=int(n),
                delta=config.delta,
            )
            mc_reps = config.mc_reps if n_idx < config.mc_points else 0
            report = build_report(
                cfg, mc_reps=mc_reps, base_seed=config.base_seed + 101 * n_idx
            )
            rows.append({
                "experiment": config.experiment,
                "alpha": alpha,
                "n": int(n),
                "delta_n": report.delta_n,
                "kappa_hat": report.kappa_hat,
                "separation_exact": report.separation_exact,
                "separation_lower": report.separation_lower,
                "kl_exact": report.kl_exact,
                "tv_bound": report.tv_bound,
                "risk_floor": report.risk_floor,
                "kl_mc": report.kl_mc,
                "kl_mc_se": report.kl_mc_se,
            })
    return MINIMAX_HEADER, rows


# --- i.i.d. baseline -----------------------------------------------------------------------


def _iid_task(payload) -> list[dict]:
    config, n_idx, n, rep_start, rep_stop = payload
    sigma = parse_matrix_spec(config.sigma, config.d)
    vals, vecs = sym_eigen(sigma)
    if vals[-1] < 0.0:
        raise ConfigError("sigma must be positive semidefinite")
    factor = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    identity = np.array_equal(sigma, np.eye(config.d))
    reference = math.sqrt(config.d / n)
    rows = []
    for rep in range(rep_start, rep_stop):
        sid = n_idx * _STREAM_STRIDE + rep
        draws = RngStream(config.base_seed, sid).normals((n, config.d))
        if not identity:
            draws = draws @ factor.T
        sample = draws.T @ draws / n
        rows.append({
            "experiment": config.experiment,
            "d": config.d,
            "n": int(n),
            "rep": rep,
            "seed": sid,
            "op_error": operator_norm(sample - sigma),
            "reference": reference,
        })
    return rows


def run_iid_baseline(config: ExperimentConfig):
    """Operator-norm error of the sample covariance from i.i.d. Gaussian draws."""
    payloads = []
    for n_idx, n in enumerate(sorted(set(config.ns))):
        for a, b in _chunk_ranges(0, config.reps):
            payloads.append((config, n_idx, int(n), a, b))
    rows = []
    for chunk_rows in _parallel_map(_iid_task, payloads, config.workers):
        rows.extend(chunk_rows)
    rows.sort(key=lambda r: (r["n"], r["rep"]))
    return IID_HEADER, rows


# --- burn-in fraction selection ---------------------------------------------------------------


def run_cv_rho(config: ExperimentConfig):
    """Leave-one-block-out choice of the window fraction, one row per replication."""
    problem = build_problem(config)
    schedule = Schedule(eta0=config.eta0, alpha=config.alpha)
    beta = choose_beta(config.alpha, config.beta_variant)
    spec = EstimatorSpec("bm_optimal", "bm", rho=1.0, beta=beta, growth=config.growth)
    if not config.candidates or not all(0.0 < r <= 1.0 for r in config.candidates):
        raise ConfigError("candidates must lie in (0, 1]")
    x0 = parse_x0(config.x0, config.d)
    v_true = true_covariance(problem)
    n = int(config.n)
    rows = []
    for a, b in _chunk_ranges(0, config.reps):
        result = run_chunk(
            problem, schedule, config.base_seed, range(a, b), (n,), (spec,),
            x0=x0, collect_blocks=True,
        )
        devs = result.block_deviations.get(n)
        for i, rep in enumerate(range(a, b)):
            row = {
                "experiment": config.experiment,
                "alpha": config.alpha,
                "n": n,
                "estimator": "bm_cv",
                "rho": None,
                "beta": beta,
                "p": None,
                "rep": rep,
                "seed": rep,
                "op_error": float("nan"),
                "degenerate": True,
                "wall_ms": 0.0,
            }
            if devs is not None:
                ys = devs[:, i, :]
                try:
                    rho_hat = cross_validate_rows(ys, config.candidates)
                except ValueError:
                    pass
                else:
                    blocks = ys.shape[0]
                    k = max(1, math.floor(rho_hat * blocks + 1e-9))
                    window = ys[blocks - k:]
                    sigma = window.T @ window / k
                    sigma = (sigma + sigma.T) / 2.0
                    row.update(
                        rho=rho_hat,
                        op_error=operator_norm(sigma - v_true),
                        degenerate=False,
                    )
            rows.append(row)
    rows.sort(key=lambda r: r["rep"])
    _check_all_degenerate(rows, ("alpha", "n", "estimator"))
    return RATES_HEADER, rows


RUNNERS = {
    "rates": run_rates,
    "bias_variance": run_bias_variance,
    "coverage": run_coverage,
    "minimax": run_minimax,
    "iid_baseline": run_iid_baseline,
    "cv_rho": run_cv_rho,
}
