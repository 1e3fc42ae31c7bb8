"""Experiment execution and artifact emission.

Each experiment writes CSV artifacts (17 significant digits, bit-identical
across identical runs), a JSON manifest echoing the configuration with its
hash and the package version, and a plain-text pass/fail summary of every
enabled check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .levy import build_quadrature, truncated_mass_reference
from .oracles import evaluate_oracle
from .risk import apriori_bound_check, entropic, exponential_moment_check
from .scheme import Schedule, run_triple_scheme
from .semimartingale import (check_q_structure, exponential_transform,
                             martingale_regression_test, submartingale_test)
from .solver import decompose, simulate_forward, solve_lipschitz

FLOAT_FMT = "%.17g"


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_manifest(out_dir: Path, cfg: ExperimentConfig, artifacts: list[str]) -> None:
    blob = json.dumps(cfg.raw, sort_keys=True).encode()
    manifest = dict(config=cfg.raw,
                    config_sha256=hashlib.sha256(blob).hexdigest(),
                    package="qebsdej",
                    version=__version__,
                    artifacts=sorted(artifacts))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")


def write_summary(out_dir: Path, checks: list[CheckResult]) -> bool:
    lines = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status} {c.name} value={_fmt(c.value)} "
                     f"tol={_fmt(c.tolerance)} {c.detail}".rstrip())
    all_ok = all(c.passed for c in checks) if checks else True
    lines.append(f"OVERALL {'PASS' if all_ok else 'FAIL'} "
                 f"({sum(c.passed for c in checks)}/{len(checks)} checks)")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return all_ok


def _build_setting(cfg: ExperimentConfig):
    model = cfg.build_model()
    structure = cfg.build_structure()
    kappa = float(cfg.quadrature.get("kappa", 8.0))
    q_nodes = int(cfg.quadrature.get("q_nodes", 12))
    quad = build_quadrature(model, kappa, q_nodes)
    driver = cfg.build_driver(structure, quad_mass_hint=quad.total_mass)
    ensemble = simulate_forward(
        model, quad, cfg.ensemble.get("dynamics", "brownian_jumps"),
        cfg.time_grid(), int(cfg.ensemble["n_paths"]), cfg.seed,
        x0=float(cfg.ensemble.get("x0", 0.0)),
        jump_impact=cfg.ensemble.get("jump_impact", "unit"),
        d=int(cfg.ensemble.get("d", 1)))
    return model, structure, quad, driver, ensemble


def _solution_rows(solution, ensemble, max_paths: int):
    rows = []
    n_show = (solution.n_paths if max_paths <= 0
              else min(solution.n_paths, max_paths))
    for k in range(solution.n_steps + 1):
        u_now = (solution.u_values(ensemble, k) if k < solution.n_steps
                 else np.zeros((solution.n_paths, ensemble.quad.n_nodes)))
        for p in range(n_show):
            row = dict(path_id=p, t=float(ensemble.time_grid[k]),
                       y=float(solution.y[p, k]),
                       z=float(solution.z[p, min(k, solution.n_steps - 1), 0]))
            for i in range(ensemble.quad.n_nodes):
                row[f"u_node_{i + 1}"] = float(u_now[p, i])
            rows.append(row)
    return rows


def _jump_rows(ensemble):
    jumps = ensemble.jumps
    return [dict(path_id=int(jumps.path_index[i]),
                 interval_index=int(jumps.interval_index[i]),
                 jump_time=float(jumps.time[i]),
                 mark_index=int(jumps.mark_index[i]))
            for i in range(jumps.n_jumps)]


def run_solve(cfg: ExperimentConfig, out_dir: Path):
    model, structure, quad, driver, ensemble = _build_setting(cfg)
    zeta0 = quad.zeta_at(model, 0.0)
    view = driver.at_quadrature(quad, zeta0)
    solution = solve_lipschitz(view, cfg.terminal_fn(), ensemble,
                               basis_degree=int(cfg.solver.get("basis_degree", 3)),
                               picard_max=int(cfg.solver.get("picard_max", 50)),
                               picard_tol=float(cfg.solver.get("picard_tol", 1e-10)))
    dec = decompose(solution, ensemble)
    checks = [CheckResult("terminal_match",
                          bool(np.array_equal(solution.y[:, -1], solution.terminal)),
                          0.0, 0.0),
              CheckResult("reconstruction_identity",
                          float(np.max(np.abs(solution.y - (solution.y[:, :1]
                                                            - dec.v + dec.m_total)))) <= 1e-10,
                          float(np.max(np.abs(solution.y - (solution.y[:, :1]
                                                            - dec.v + dec.m_total)))),
                          1e-10)]
    mart = martingale_regression_test(np.diff(dec.m_c + dec.m_d, axis=1), ensemble)
    checks.append(CheckResult("martingale_coefficients", mart <= 4.0, mart, 4.0))
    summary_rows = [dict(y0=solution.y0, y0_se=solution.y0_se,
                         s2_norm=solution.s2_norm(),
                         max_condition=float(solution.cond_numbers.max()),
                         max_picard=int(solution.picard_iterations.max()),
                         jump_mass=quad.total_mass,
                         jump_mass_reference=truncated_mass_reference(
                             model, quad.kappa))]
    write_csv(out_dir / "solution_summary.csv", summary_rows)
    export_paths = int(cfg.solver.get("export_paths", 50))
    write_csv(out_dir / "solution_paths.csv",
              _solution_rows(solution, ensemble, export_paths))
    artifacts = ["solution_summary.csv", "solution_paths.csv"]
    if cfg.solver.get("export_jumps", False):
        write_csv(out_dir / "jump_table.csv", _jump_rows(ensemble))
        artifacts.append("jump_table.csv")
    return checks, artifacts


def run_scheme(cfg: ExperimentConfig, out_dir: Path):
    model = cfg.build_model()
    structure = cfg.build_structure()
    schedule = Schedule(tuple(tuple(t) for t in cfg.schedule["triples"]), cfg.seed)
    driver = cfg.build_driver(structure)
    result = run_triple_scheme(
        driver, cfg.terminal_fn(), model, schedule,
        t_end=float(cfg.grid["t_end"]), k_steps=int(cfg.grid["k_steps"]),
        n_paths=int(cfg.ensemble["n_paths"]),
        q_nodes=int(cfg.quadrature.get("q_nodes", 12)),
        dynamics=cfg.ensemble.get("dynamics", "brownian_jumps"),
        x0=float(cfg.ensemble.get("x0", 0.0)),
        jump_impact=cfg.ensemble.get("jump_impact", "unit"),
        basis_degree=int(cfg.solver.get("basis_degree", 3)))
    rep = result.report
    write_csv(out_dir / "convergence_report.csv", rep.rows())
    checks = [CheckResult("y0_monotone", rep.monotone_y0,
                          float(rep.monotone_y0), 0.0),
              CheckResult("gaps_decreasing", rep.gaps_decreasing,
                          float(rep.gaps_decreasing), 0.0),
              CheckResult("stability_decreasing", rep.stability_decreasing,
                          float(rep.stability_decreasing), 0.0)]
    for i, frac in enumerate(rep.comparison_violations):
        checks.append(CheckResult(f"comparison_link_{i}", frac < 0.01, frac, 0.01))
    for rec in rep.records:
        tag = f"{rec.n}_{rec.m}_{int(rec.kappa)}"
        if rec.error:
            checks.append(CheckResult(f"triple_{tag}", False, math.nan, 0.0,
                                      rec.error))
            continue
        checks.append(CheckResult(f"corridor_{tag}", rec.corridor.ok,
                                  rec.corridor.violation_fraction, 0.01))
        checks.append(CheckResult(f"apriori_{tag}", rec.apriori.ok,
                                  rec.apriori.lhs, rec.apriori.rhs))
        checks.append(CheckResult(f"submartingale_{tag}",
                                  rec.submartingale.verdict,
                                  rec.submartingale.fraction_below, 0.01))
        checks.append(CheckResult(f"chebyshev_{tag}",
                                  rec.region_fraction <= rec.chebyshev_bound + 0.01,
                                  rec.region_fraction, rec.chebyshev_bound))
    return checks, ["convergence_report.csv"]


def run_audit(cfg: ExperimentConfig, out_dir: Path):
    model, structure, quad, driver, ensemble = _build_setting(cfg)
    zeta0 = quad.zeta_at(model, 0.0)
    view = driver.at_quadrature(quad, zeta0)
    solution = solve_lipschitz(view, cfg.terminal_fn(), ensemble,
                               basis_degree=int(cfg.solver.get("basis_degree", 3)))
    dec = decompose(solution, ensemble)
    k_steps = solution.n_steps
    tol = np.array([3.0 * solution.regression_se(k) for k in range(k_steps)])
    corridor = check_q_structure(dec, solution, ensemble, structure, quad,
                                 tol=tol[None, :])
    x_bar = exponential_transform(solution.y, structure, ensemble.time_grid)
    submart = submartingale_test(x_bar, ensemble, k_steps // 4, k_steps // 2)
    apriori = apriori_bound_check(solution, structure, ensemble, 0)
    rows = [dict(corridor_violation=corridor.violation_fraction,
                 submartingale_fraction=submart.fraction_below,
                 apriori_lhs=apriori.lhs, apriori_rhs=apriori.rhs,
                 y0=solution.y0, y0_se=solution.y0_se)]
    write_csv(out_dir / "audit_report.csv", rows)
    checks = [CheckResult("corridor", corridor.ok,
                          corridor.violation_fraction, 0.01),
              CheckResult("submartingale", submart.verdict,
                          submart.fraction_below, 0.01),
              CheckResult("apriori_bound", apriori.ok, apriori.lhs,
                          apriori.rhs)]
    return checks, ["audit_report.csv"]


def run_risk(cfg: ExperimentConfig, out_dir: Path):
    model, structure, quad, driver, ensemble = _build_setting(cfg)
    xi = cfg.terminal_fn()(ensemble.state[:, -1])
    times = cfg.risk.get("times", [0])
    rows = []
    for k in times:
        for direction in ("upper", "lower"):
            est = entropic(ensemble, xi, int(k), direction,
                           int(cfg.solver.get("basis_degree", 3)))
            rows.append(dict(t=float(ensemble.time_grid[int(k)]),
                             direction=direction, value=est.value,
                             stderr=est.stderr,
                             heavy_tail=int(est.heavy_tail_warning)))
    write_csv(out_dir / "risk_table.csv", rows)
    gammas = [float(g) for g in cfg.risk.get("gammas", [1.0, 2.0])]
    moment_rows = exponential_moment_check(xi, structure, ensemble.time_grid,
                                           gammas)
    write_csv(out_dir / "moment_table.csv",
              [dict(gamma=r.gamma, mean=r.mean, half_mean=r.half_mean,
                    stable=int(r.stable)) for r in moment_rows])
    checks = [CheckResult(f"moment_stable_gamma_{r.gamma:g}", r.stable,
                          r.mean, 0.10) for r in moment_rows]
    upper = next(r for r in rows if r["direction"] == "upper" and r["t"] == 0.0)
    lower = next(r for r in rows if r["direction"] == "lower" and r["t"] == 0.0)
    spread = 3.0 * math.hypot(upper["stderr"], lower["stderr"])
    checks.append(CheckResult("jensen_order",
                              lower["value"] <= upper["value"] + spread,
                              upper["value"] - lower["value"], spread))
    return checks, ["risk_table.csv", "moment_table.csv"]


def run_oracle(cfg: ExperimentConfig, out_dir: Path):
    name = cfg.oracle["name"]
    try:
        value = evaluate_oracle(name, cfg.oracle)
    except KeyError as exc:
        raise ConfigError("oracle.name", str(exc)) from None
    write_csv(out_dir / "oracle_values.csv",
              [dict(name=value.name, value=value.value, stderr=value.stderr)])
    return [], ["oracle_values.csv"]


_RUNNERS = dict(solve=run_solve, scheme=run_scheme, audit=run_audit,
                risk=run_risk, oracle=run_oracle)

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_CRASH = 70


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checks, artifacts = _RUNNERS[cfg.experiment](cfg, out_dir)
    all_ok = write_summary(out_dir, checks)
    write_manifest(out_dir, cfg, artifacts + ["summary.txt"])
    return EXIT_OK if all_ok else EXIT_CHECK_FAILURE
