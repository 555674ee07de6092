"""Tests for the experiment drivers, configuration, serialization, and CLI."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from sgdcov.batchmeans import BlockSchedule, block_size, choose_beta
from sgdcov.cli import main
from sgdcov.experiments import (
    ConfigError,
    RATES_HEADER,
    build_config,
    fit_slope,
    load_config,
    parse_matrix_spec,
    render_rows,
    resolve_estimators,
    run_bias_variance,
    run_coverage,
    run_cv_rho,
    run_iid_baseline,
    run_minimax,
    run_rates,
)
from sgdcov.matstat import regularized_gamma_p


def _tiny_mapping(**overrides) -> dict:
    mapping = {
        "d": "3",
        "hessian": "equispaced:1:3",
        "alphas": "0.6",
        "ns": "200,400,800",
        "reps": "4",
        "estimators": "regression,bm_optimal,oracle",
        "growth": "2",
    }
    mapping.update(overrides)
    return mapping


# --- configuration ------------------------------------------------------------


def test_config_file_parsing_skips_comments_and_blanks(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("# header comment\n\nd = 4\nns = 100,200  # trailing comment\n")
    mapping = load_config(str(path))
    assert mapping == {"d": "4", "ns": "100,200"}


def test_config_file_rejects_non_assignment_lines(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_unknown_config_key_rejected() -> None:
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config("rates", {"wat": "7"})


def test_bad_config_values_rejected() -> None:
    with pytest.raises(ConfigError):
        build_config("rates", {"alphas": "fast"})
    with pytest.raises(ConfigError):
        build_config("rates", {"reps": "0"})
    with pytest.raises(ConfigError):
        build_config("rates", {"format": "xml"})
    # alpha outside the valid decay range surfaces as a config error
    with pytest.raises(ConfigError):
        build_config("rates", {"alphas": "0.4"})


def test_matrix_specs() -> None:
    assert np.array_equal(parse_matrix_spec("identity", 3), np.eye(3))
    assert np.array_equal(parse_matrix_spec("zero", 2), np.zeros((2, 2)))
    assert np.array_equal(
        parse_matrix_spec("equispaced:1:5", 10), np.diag(np.linspace(1.0, 5.0, 10))
    )
    assert np.array_equal(parse_matrix_spec("eigs:2,3", 2), np.diag([2.0, 3.0]))
    with pytest.raises(ConfigError):
        parse_matrix_spec("eigs:1,2,3", 2)
    with pytest.raises(ConfigError):
        parse_matrix_spec("hilbert", 2)


def test_estimator_tokens_resolve_selectors() -> None:
    config = build_config(
        "rates",
        _tiny_mapping(estimators="bm_original,bm_burnin,bm_optimal:rho=0.25", growth="3"),
    )
    specs = {s.label: s for s in resolve_estimators(config, 0.55)}
    assert specs["bm_original"].beta == pytest.approx(2.0 / 0.45)
    assert specs["bm_original"].rho == 1.0
    assert specs["bm_burnin"].beta == pytest.approx(2.1 / 0.9)
    assert specs["bm_burnin"].rho == 0.5
    assert specs["bm_optimal"].rho == 0.25
    assert all(s.growth == 3.0 for s in specs.values())


def test_estimator_token_errors() -> None:
    with pytest.raises(ConfigError, match="unknown estimator"):
        build_config("rates", _tiny_mapping(estimators="bm_magic"))
    with pytest.raises(ConfigError, match="duplicate"):
        build_config("rates", _tiny_mapping(estimators="oracle,oracle"))
    with pytest.raises(ConfigError, match="unknown estimator option"):
        build_config("rates", _tiny_mapping(estimators="bm_optimal:q=2"))
    with pytest.raises(ConfigError, match="takes no options"):
        build_config("rates", _tiny_mapping(estimators="oracle:rho=0.5"))


def test_mixing_violation_rejected_unless_allowed() -> None:
    # beta = 1.0 at alpha = 0.55 gives gamma = 0.45 - 0.55 < 0
    with pytest.raises(ConfigError, match="mixing"):
        build_config("rates", _tiny_mapping(alphas="0.55", estimators="bm_optimal:beta=1.0"))
    config = build_config(
        "rates",
        _tiny_mapping(alphas="0.55", estimators="bm_optimal:beta=1.0", allow_unmixed="1"),
    )
    (spec,) = resolve_estimators(config, 0.55)
    assert spec.beta == 1.0


# --- slope fitting --------------------------------------------------------------


def test_fit_slope_recovers_exact_power_law() -> None:
    rows = [
        {"alpha": 0.55, "n": n, "estimator": "bm_optimal", "op_error": 2.0 * n**-0.15}
        for n in (1000, 3000, 10_000, 30_000)
    ]
    slope, intercept, r2 = fit_slope(rows, "bm_optimal", 0.55)
    assert slope == pytest.approx(0.15, abs=1e-10)
    assert intercept == pytest.approx(math.log(2.0), abs=1e-10)
    assert r2 == pytest.approx(1.0, abs=1e-10)


def test_fit_slope_constant_errors_give_zero() -> None:
    rows = [
        {"alpha": 0.55, "n": n, "estimator": "x", "op_error": 0.7}
        for n in (100, 1000, 10_000)
    ]
    slope, _, r2 = fit_slope(rows, "x", 0.55)
    assert slope == pytest.approx(0.0, abs=1e-12)
    assert r2 == 1.0


def test_fit_slope_averages_reps_and_filters() -> None:
    rows = []
    for n in (100, 1000, 10_000):
        # two finite reps averaging to n^-0.5 plus one NaN that must be dropped
        rows.append({"alpha": 0.6, "n": n, "estimator": "x", "op_error": 0.5 * n**-0.5})
        rows.append({"alpha": 0.6, "n": n, "estimator": "x", "op_error": 1.5 * n**-0.5})
        rows.append({"alpha": 0.6, "n": n, "estimator": "x", "op_error": float("nan")})
        rows.append({"alpha": 0.6, "n": n, "estimator": "y", "op_error": 99.0})
    slope, _, _ = fit_slope(rows, "x", 0.6)
    assert slope == pytest.approx(0.5, abs=1e-10)


def test_fit_slope_needs_three_sizes() -> None:
    rows = [
        {"alpha": 0.6, "n": n, "estimator": "x", "op_error": 1.0 / n} for n in (10, 100)
    ]
    with pytest.raises(ValueError, match="3 distinct"):
        fit_slope(rows, "x", 0.6)


# --- rates driver ------------------------------------------------------------------


def test_rates_rows_schema_and_oracle_zero() -> None:
    config = build_config("rates", _tiny_mapping(base_seed="5"))
    header, rows = run_rates(config)
    assert header == RATES_HEADER
    assert len(rows) == 3 * 3 * 4  # ns x estimators x reps
    # sorted by (alpha, n, estimator, rep)
    keys = [(r["alpha"], r["n"], r["estimator"], r["rep"]) for r in rows]
    assert keys == sorted(keys)
    for row in rows:
        if row["estimator"] == "oracle":
            assert row["op_error"] == 0.0
            assert row["rho"] is None and row["beta"] is None
        else:
            assert math.isfinite(row["op_error"]) and row["op_error"] > 0.0
        assert row["seed"] == row["rep"]  # single alpha: stream id is the rep
        assert row["wall_ms"] == 0.0


def test_rates_rerun_and_parallel_runs_match_bitwise() -> None:
    mapping = _tiny_mapping(ns="200,400", reps="70", estimators="bm_optimal,oracle")
    serial = build_config("rates", mapping)
    parallel = build_config("rates", dict(mapping, workers="2"))
    header, rows_a = run_rates(serial)
    _, rows_b = run_rates(serial)
    _, rows_c = run_rates(parallel)
    text_a = render_rows(header, rows_a, "csv")
    assert text_a == render_rows(header, rows_b, "csv")
    assert text_a == render_rows(header, rows_c, "csv")


def test_rates_reduced_reps_above_cutoff() -> None:
    config = build_config(
        "rates",
        _tiny_mapping(
            ns="200,600", reps="6", reps_large="2", large_n_cutoff="500",
            estimators="bm_optimal",
        ),
    )
    _, rows = run_rates(config)
    pairs = {(r["n"], r["rep"]) for r in rows}
    expected = {(200, r) for r in range(6)} | {(600, 0), (600, 1)}
    assert pairs == expected
    # replications shared between the two rep groups come from the same streams,
    # so the small-n rows must agree with a plain run capped at reps_large
    capped = build_config(
        "rates", _tiny_mapping(ns="200,600", reps="2", estimators="bm_optimal")
    )
    _, rows_capped = run_rates(capped)
    errs = {(r["n"], r["rep"]): r["op_error"] for r in rows}
    for row in rows_capped:
        assert errs[(row["n"], row["rep"])] == row["op_error"]


# --- bias-variance driver -------------------------------------------------------------


def test_bias_variance_zero_noise_collapses_variance() -> None:
    config = build_config(
        "bias_variance",
        {
            "d": "2", "hessian": "eigs:1,2", "noise": "zero", "x0": "ones",
            "alpha": "0.6", "n": "2000", "reps": "100", "growth": "2",
        },
    )
    header, rows = run_bias_variance(config)
    assert header == ("m", "a_m", "bias", "variance")
    assert [r["m"] for r in rows] == list(range(1, len(rows) + 1))
    schedule = BlockSchedule(growth=2.0, exponent=choose_beta(0.6, "optimal"))
    for row in rows:
        assert row["a_m"] == block_size(schedule, row["m"])
        assert row["variance"] <= 1e-10  # no noise, identical replications
    assert rows[0]["bias"] > 0.0  # early blocks still carry the start-point drift


def test_bias_variance_requires_enough_reps() -> None:
    config = build_config("bias_variance", {"d": "2", "n": "500", "reps": "50"})
    with pytest.raises(ConfigError, match="100"):
        run_bias_variance(config)


# --- coverage driver -------------------------------------------------------------------


def test_coverage_rows_schema_and_determinism() -> None:
    mapping = {
        "d": "2", "hessian": "eigs:1,2", "alpha": "0.6", "n": "600",
        "reps": "30", "estimators": "oracle,regression", "level": "0.9",
    }
    config = build_config("coverage", mapping)
    header, rows = run_coverage(config)
    assert len(rows) == 60
    assert {r["estimator"] for r in rows} == {"oracle", "regression"}
    for row in rows:
        assert row["covered"] in (True, False)
        assert row["level"] == 0.9
    frac = sum(r["covered"] for r in rows if r["estimator"] == "oracle") / 30
    assert 0.5 < frac <= 1.0
    _, again = run_coverage(build_config("coverage", mapping))
    assert render_rows(header, rows, "csv") == render_rows(header, again, "csv")


# --- minimax driver ----------------------------------------------------------------------


def test_minimax_grid_rows() -> None:
    config = build_config(
        "minimax",
        {"alphas": "0.55,0.7", "ns": "1000,3000", "mc_points": "1", "mc_reps": "500"},
    )
    _, rows = run_minimax(config)
    assert len(rows) == 4
    for row in rows:
        assert row["tv_bound"] == pytest.approx(0.25, abs=1e-9)
        assert row["kl_exact"] == pytest.approx(0.0625, abs=1e-9)
        assert row["risk_floor"] == pytest.approx(0.375 * row["delta_n"], rel=1e-12)
        if row["n"] == 1000:  # the cross-check sub-grid
            assert abs(row["kl_mc"] - 0.0625) <= 4.0 * row["kl_mc_se"]
        else:
            assert row["kl_mc"] is None and row["kl_mc_se"] is None


# --- i.i.d. baseline driver ------------------------------------------------------------------


def test_iid_baseline_matches_scalar_oracle() -> None:
    # d = 1: op error is |chi2_n / n - 1| with mean 2(P(n/2, n/2) - P(n/2+1, n/2))
    n, reps = 400, 300
    config = build_config("iid_baseline", {"d": "1", "ns": str(n), "reps": str(reps)})
    _, rows = run_iid_baseline(config)
    errs = np.array([r["op_error"] for r in rows])
    oracle = 2.0 * (regularized_gamma_p(n / 2, n / 2) - regularized_gamma_p(n / 2 + 1, n / 2))
    se = errs.std(ddof=1) / math.sqrt(reps)
    assert abs(errs.mean() - oracle) <= 3.0 * se
    assert rows[0]["reference"] == pytest.approx(math.sqrt(1.0 / n))


def test_iid_baseline_tracks_dimension_reference() -> None:
    config = build_config("iid_baseline", {"d": "10", "ns": "1000", "reps": "50"})
    _, rows = run_iid_baseline(config)
    mean = np.mean([r["op_error"] for r in rows])
    reference = math.sqrt(10.0 / 1000.0)
    assert reference / 3.0 <= mean <= 3.0 * reference


# --- burn-in selection driver ------------------------------------------------------------------


def test_cv_rho_rows() -> None:
    config = build_config(
        "cv_rho",
        {
            "d": "3", "hessian": "equispaced:1:3", "alpha": "0.6", "n": "3000",
            "reps": "20", "candidates": "0.5,1.0", "growth": "2",
        },
    )
    header, rows = run_cv_rho(config)
    assert header == RATES_HEADER
    assert len(rows) == 20
    for row in rows:
        assert row["estimator"] == "bm_cv"
        assert row["rho"] in (0.5, 1.0)
        assert math.isfinite(row["op_error"])
        assert not row["degenerate"]


# --- serialization -----------------------------------------------------------------------------


def test_csv_leaves_missing_fields_empty() -> None:
    rows = [{"experiment": "rates", "alpha": 0.6, "n": 10, "estimator": "oracle",
             "rho": None, "beta": None, "p": None, "rep": 0, "seed": 0,
             "op_error": 0.0, "degenerate": False, "wall_ms": 0.0}]
    text = render_rows(RATES_HEADER, rows, "csv")
    assert text.splitlines()[1] == "rates,0.59999999999999998,10,oracle,,,,0,0,0,0,0"


def test_float_cells_round_trip_exactly() -> None:
    value = 0.1234567890123456789
    rows = [{"m": 1, "a_m": 2, "bias": value, "variance": value}]
    line = render_rows(("m", "a_m", "bias", "variance"), rows, "csv").splitlines()[1]
    assert float(line.split(",")[2]) == value


# --- command-line interface ---------------------------------------------------------------------


def _write_cfg(tmp_path, **overrides):
    mapping = _tiny_mapping(**overrides)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in mapping.items()))
    return str(path)


def test_cli_rates_writes_pinned_header(tmp_path) -> None:
    out = tmp_path / "rates.csv"
    rc = main(["rates", "--config", _write_cfg(tmp_path), "--out", str(out), "--seed", "3"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "experiment,alpha,n,estimator,rho,beta,p,rep,seed,op_error,degenerate,wall_ms"
    assert len(lines) == 1 + 3 * 3 * 4


def test_cli_rerun_is_byte_identical(tmp_path) -> None:
    cfg = _write_cfg(tmp_path, ns="200,400", reps="8")
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["rates", "--config", cfg, "--out", str(out_a)]) == 0
    assert main(["rates", "--config", cfg, "--out", str(out_b), "--workers", "2"]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_cli_flag_overrides_config(tmp_path) -> None:
    cfg = _write_cfg(tmp_path)  # reps = 4 in the file
    out = tmp_path / "r.csv"
    assert main(["rates", "--config", cfg, "--out", str(out), "--reps", "2",
                 "--ns", "200", "--estimators", "oracle"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2


def test_cli_config_errors_exit_2(tmp_path) -> None:
    bad = tmp_path / "bad.cfg"
    bad.write_text("wat = 7\n")
    assert main(["rates", "--config", str(bad)]) == 2
    assert main(["rates", "--reps", "zero", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["rates", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_all_degenerate_exits_3(tmp_path) -> None:
    # regression cannot be identified from 3 iterates in dimension 4
    rc = main(["coverage", "--d", "4", "--n", "3", "--reps", "2",
               "--estimators", "regression", "--alpha", "0.6",
               "--out", str(tmp_path / "c.csv")])
    assert rc == 3


def test_cli_json_rows_carry_mixing_fields(tmp_path) -> None:
    out = tmp_path / "rates.jsonl"
    rc = main(["rates", "--config", _write_cfg(tmp_path, ns="200", reps="2"),
               "--out", str(out), "--format", "json"])
    assert rc == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    bm = [r for r in rows if r["estimator"] == "bm_optimal"]
    assert bm and all(r["mixing_ok"] is True and r["gamma"] > 0.0 for r in bm)
    oracle = [r for r in rows if r["estimator"] == "oracle"]
    assert oracle and all("mixing_ok" not in r and "rho" not in r for r in oracle)


def test_cli_timing_flag_populates_wall_times(tmp_path) -> None:
    out = tmp_path / "rates.csv"
    cfg = _write_cfg(tmp_path, ns="200", reps="2", estimators="bm_optimal")
    assert main(["rates", "--config", cfg, "--out", str(out), "--timing"]) == 0
    wall = [float(line.split(",")[-1]) for line in out.read_text().splitlines()[1:]]
    assert all(w > 0.0 for w in wall)
