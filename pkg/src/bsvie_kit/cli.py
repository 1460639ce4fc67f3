"""Command-line front end.

Exit codes: 0 on success, 1 when the solver does not converge or a check
fails, 2 on configuration errors.
"""
from __future__ import annotations

import dataclasses
import math
import sys
import time
import warnings
from pathlib import Path

import click
import numpy as np

from . import __version__, norms
from .config import ConfigError, RunConfig, parse_config
from .constants import KAPPA_BSVIE, KAPPA_SYSTEM, ConstantsError
from .lemmas import verify_appendix_lemmas
from .paths import PathEnsemble, PathError, TimeGrid, simulate_forward, tree_ensemble
from .presets import TERMINALS, PresetError, build_preset, build_ti_system
from .regression import BasisSpec, Regressor
from .report import dump_ensemble, dump_family, dump_policy, dump_trace, node_diagnostics, trace_rows, write_json
from .system import certify_system, gradient_diagonal_bound, picard_solve, residual_check
from .tree import OracleError, controlled_tree_dp, tree_oracle
from .volterra import CertificationWarning, build_system, flow_residual, solve_bsvie

ORACLE_TOL = 1e-12
CONTROL_ORACLE_TOL = 1e-10
ORACLE_PICARD_TOL = 1e-14
ORACLE_MAX_ITER = 500

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class RunError(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _ensemble(cfg: RunConfig, threads: int) -> PathEnsemble:
    grid = TimeGrid.uniform(cfg.grid.horizon, cfg.grid.steps)
    e = cfg.ensemble
    if e.tree:
        return tree_ensemble(e.x0, e.sigma, grid)
    return simulate_forward(e.x0, e.sigma, grid, e.n_paths, e.seed, threads=threads)


def _regressor(cfg: RunConfig, ensemble: PathEnsemble) -> Regressor:
    b = cfg.basis
    return Regressor(ensemble, BasisSpec(b.kind, b.degree, b.n_bins, cfg.solver.truncation))


def _tolerance(ensemble: PathEnsemble) -> float:
    return 5.0 * (ensemble.grid.max_dt + 1.0 / math.sqrt(ensemble.n_paths))


def _system_for(cfg: RunConfig, preset, ensemble: PathEnsemble):
    """System spec plus its default kappa."""
    if preset.kind == "bsvie":
        system, kappa = build_system(preset.spec, cfg.grid.horizon), KAPPA_BSVIE
    elif preset.kind == "control":
        system, kappa = build_ti_system(preset.spec, cfg.grid.horizon, ensemble.grid.max_dt), KAPPA_SYSTEM
    else:
        system, kappa = preset.spec, KAPPA_SYSTEM
    if cfg.certification.mode is not None and cfg.certification.mode != system.mode:
        policy = getattr(system, "policy", None)
        system = dataclasses.replace(system, mode=cfg.certification.mode)
        if policy is not None:
            system.policy = policy
    return system, kappa


def _certificate(cfg: RunConfig, system, ensemble, default_kappa):
    c = cfg.certification
    kappa = c.kappa if c.kappa is not None else default_kappa
    return certify_system(system, ensemble, kappa, c.eps, c.gamma, c.radius_sq, c.c)


def _dump(cfg: RunConfig, out: Path, ensemble: PathEnsemble, trace=None, family=None, policy=None) -> dict:
    written = {}
    dumps = set(cfg.output.dumps)
    if "ensemble" in dumps:
        written["ensemble"] = str(dump_ensemble(out / "ensemble.csv", ensemble))
    if "trace" in dumps and trace is not None:
        written["trace"] = str(dump_trace(out / "trace.csv", trace))
    if "family" in dumps and family is not None:
        written["family"] = str(dump_family(out / "family.csv", family))
    if "policy" in dumps and policy is not None:
        written["policy"] = str(dump_policy(out / "policy.csv", policy))
    return written


def _energy(it, grid, reg, c: float) -> dict:
    e1 = norms.energy_check(it.Z, grid, reg, c, 1)
    e2 = norms.energy_check(it.Z, grid, reg, c, 2)
    de = norms.diagonal_energy_check(it.V, it.dV, grid, c, 1.0)
    return {
        "p1": dataclasses.asdict(e1),
        "p2": dataclasses.asdict(e2),
        "diagonal": {"passed": de.passed, "worst_gap": de.worst_gap},
    }


def _residuals(it, system, ensemble, reg, scheme) -> dict:
    res = residual_check(it, system, ensemble, reg, scheme)
    return {
        "y": dataclasses.asdict(res.y),
        "u": dataclasses.asdict(res.u),
        "du": dataclasses.asdict(res.du),
        "worst_projected": res.worst_projected,
    }


def _solve_bsvie(cfg, preset, ensemble, reg, tol=None, max_iter=None):
    system, kappa = _system_for(cfg, preset, ensemble)
    cert = _certificate(cfg, system, ensemble, kappa)
    c_weight = cert.c
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationWarning)
        sol = solve_bsvie(
            preset.spec,
            ensemble,
            reg,
            c=c_weight,
            tol=tol if tol is not None else cfg.solver.tol,
            max_iter=max_iter if max_iter is not None else cfg.solver.max_iter,
            scheme=cfg.solver.scheme,
            variant=cfg.solver.variant,
            certify=False,
        )
    return system, cert, sol


def cmd_check_assumptions(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    system, kappa = _system_for(cfg, preset, ensemble)
    cert = _certificate(cfg, system, ensemble, kappa)
    return (EXIT_OK if cert.certified else EXIT_FAIL), {"certificate": cert.to_dict()}


def cmd_verify_lemmas(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    rep = verify_appendix_lemmas(cfg.lemmas.resolution)
    return (EXIT_OK if rep.passed else EXIT_FAIL), {"lemmas": rep.to_dict()}


def _bsvie_payload(cfg, system, cert, sol, preset, ensemble, reg) -> dict:
    it = sol.picard.iterate
    grid = ensemble.grid
    gap_y, gap_z = sol.diagonal_gap()
    return {
        "certificate": cert.to_dict(),
        "converged": sol.converged,
        "iterations": sol.picard.iterations,
        "trace": trace_rows(sol.picard.trace),
        "final_norms": sol.picard.trace[-1].norms if sol.picard.trace else {},
        "residuals": _residuals(it, system, ensemble, reg, cfg.solver.scheme),
        "diagonal_gap": {"y": gap_y, "z": gap_z},
        "energy": _energy(it, grid, reg, cert.c),
        "gradient_diagonal_bound": dataclasses.asdict(gradient_diagonal_bound(it, system, ensemble, reg, cert.c)),
        "diagonal_series": {"y0": float(ensemble.mean(sol.diag.u[0])[0]), "node_diagnostics": node_diagnostics(sol.diag.u, sol.diag.v, grid)},
        "rank_deficient_nodes": sorted(reg.rank_deficient),
    }


def cmd_solve_bsvie(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    if preset.kind != "bsvie":
        raise RunError(f"preset {preset.name!r} is not a BSVIE; use solve-system", EXIT_CONFIG)
    system, cert, sol = _solve_bsvie(cfg, preset, ensemble, reg)
    payload = _bsvie_payload(cfg, system, cert, sol, preset, ensemble, reg)
    fr = flow_residual(sol.diag, preset.spec, ensemble, pairs=_pairs(cfg))
    payload["flow"] = dataclasses.asdict(fr)
    payload["files"] = _dump(cfg, out, ensemble, trace=sol.picard.trace, family=sol.Y)
    return (EXIT_OK if sol.converged else EXIT_FAIL), payload


def _pairs(cfg):
    return None if cfg.flow.pairs is None else [tuple(p) for p in cfg.flow.pairs]


def cmd_flow_check(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    if preset.kind != "bsvie":
        raise RunError(f"preset {preset.name!r} is not a BSVIE", EXIT_CONFIG)
    _, cert, sol = _solve_bsvie(cfg, preset, ensemble, reg)
    pairs = _pairs(cfg)
    fr = flow_residual(sol.diag, preset.spec, ensemble, pairs=pairs)
    nc = flow_residual(sol.diag, preset.spec, ensemble, drop_derivative=True, pairs=pairs)
    tol = _tolerance(ensemble)
    payload = {
        "certificate": cert.to_dict(),
        "converged": sol.converged,
        "iterations": sol.picard.iterations,
        "flow": dataclasses.asdict(fr),
        "negative_control": dataclasses.asdict(nc),
        "inflation": nc.rms / fr.rms if fr.rms > 0 else None,
        "tolerance": tol,
        "within_tolerance": fr.rms <= tol,
    }
    payload["files"] = _dump(cfg, out, ensemble, trace=sol.picard.trace)
    if not sol.converged:
        return EXIT_FAIL, payload
    return (EXIT_OK if fr.rms <= tol else EXIT_FAIL), payload


def _policy_array(system, it, ensemble) -> np.ndarray:
    grid = ensemble.grid
    return np.stack([system.policy(grid.times[i], ensemble.X[:, i, :], it.Z[i]) for i in range(grid.steps)])


def cmd_solve_system(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    if preset.kind == "bsvie":
        raise RunError(f"preset {preset.name!r} is a BSVIE; use solve-bsvie", EXIT_CONFIG)
    system, kappa = _system_for(cfg, preset, ensemble)
    cert = _certificate(cfg, system, ensemble, kappa)
    res = picard_solve(system, ensemble, reg, cert.c, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.scheme, cfg.solver.variant)
    it = res.iterate
    payload = {
        "certificate": cert.to_dict(),
        "certification_flagged": not cert.certified,
        "converged": res.converged,
        "iterations": res.iterations,
        "trace": trace_rows(res.trace),
        "final_norms": res.trace[-1].norms if res.trace else {},
        "residuals": _residuals(it, system, ensemble, reg, cfg.solver.scheme),
        "energy": _energy(it, ensemble.grid, reg, cert.c),
        "y0": ensemble.mean(it.Y[0]).tolist(),
        "node_diagnostics": node_diagnostics(it.Y, it.Z, ensemble.grid),
        "rank_deficient_nodes": sorted(reg.rank_deficient),
    }
    policy = _policy_array(system, it, ensemble) if hasattr(system, "policy") else None
    payload["files"] = _dump(cfg, out, ensemble, trace=res.trace, family=it.U, policy=policy)
    return (EXIT_OK if res.converged else EXIT_FAIL), payload


def _max_diffs(pairs) -> dict:
    return {name: float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0)) for name, a, b in pairs}


def cmd_oracle_compare(cfg, preset, ensemble, reg, out) -> tuple[int, dict]:
    grid = TimeGrid.uniform(cfg.grid.horizon, cfg.grid.steps)
    e = cfg.ensemble
    tree = tree_ensemble(e.x0, e.sigma, grid)
    treg = Regressor(tree, BasisSpec("exact"))
    max_iter = max(cfg.solver.max_iter, ORACLE_MAX_ITER)
    if preset.kind == "bsvie":
        _, cert, sol = _solve_bsvie(cfg, preset, tree, treg, tol=ORACLE_PICARD_TOL, max_iter=max_iter)
        orc = tree_oracle(preset.spec, e.x0, e.sigma, grid)
        it = sol.picard.iterate
        fr = flow_residual(sol.diag, preset.spec, tree)
        diffs = _max_diffs(
            [
                ("Y", it.U, orc.U),
                ("Z", it.V, orc.V),
                ("dY", it.dU, orc.dU),
                ("dZ", it.dV, orc.dV),
                ("diag_y", sol.diag.u, orc.diag_u),
                ("diag_z", sol.diag.v, orc.diag_v),
                ("diag_dy", sol.diag.du, orc.diag_du),
                ("diagonal_equation_y", it.Y, orc.Y),
            ]
        )
        diffs["flow_rms"] = abs(fr.rms - orc.flow_rms)
        diffs["flow_max_pair_rms"] = abs(fr.max_pair_rms - orc.flow_max_pair_rms)
        tol, converged = ORACLE_TOL, sol.converged
    elif preset.kind == "control":
        p = preset.params
        if p["discount_kind"] != "exponential" or p["mean_field_linear"] != 0 or p["mean_field_quadratic"] != 0:
            raise RunError("the tree dynamic-programming oracle needs exponential discounting and no mean-field terms", EXIT_CONFIG)
        system = build_ti_system(preset.spec, cfg.grid.horizon, grid.max_dt)
        res = picard_solve(system, tree, treg, 0.0, ORACLE_PICARD_TOL, max_iter, cfg.solver.scheme, cfg.solver.variant)
        terminal = TERMINALS[p["terminal"]]
        dp = controlled_tree_dp(e.x0, e.sigma, grid, lambda path: terminal(path)[0], tuple(p["reward"]), tuple(p["actions"]), p["discount"])
        policy = _policy_array(system, res.iterate, tree)
        diffs = {"policy": float(np.max(np.abs(policy - dp.policy)))}
        if p["discount"] == 0:
            diffs["value"] = float(np.max(np.abs(res.iterate.Y[:, :, 0] - dp.value)))
        tol, converged = CONTROL_ORACLE_TOL, res.converged
    else:
        raise RunError(f"no tree oracle for preset {preset.name!r}", EXIT_CONFIG)
    worst = max(diffs.values())
    payload = {"converged": converged, "tolerance": tol, "max_diffs": diffs, "worst": worst, "passed": converged and worst <= tol}
    payload["files"] = _dump(cfg, out, tree)
    return (EXIT_OK if payload["passed"] else EXIT_FAIL), payload


COMMANDS = {
    "solve-bsvie": cmd_solve_bsvie,
    "solve-system": cmd_solve_system,
    "check-assumptions": cmd_check_assumptions,
    "verify-lemmas": cmd_verify_lemmas,
    "flow-check": cmd_flow_check,
    "oracle-compare": cmd_oracle_compare,
}


def run(cfg: RunConfig, threads: int = 1) -> tuple[int, dict]:
    """Execute ``cfg.subcommand``; returns the exit code and the report payload."""
    if cfg.subcommand not in COMMANDS:
        raise RunError(f"unknown subcommand {cfg.subcommand!r}", EXIT_CONFIG)
    out = Path(cfg.output.directory)
    started = time.perf_counter()
    try:
        preset = build_preset(cfg.problem.preset, cfg.problem.params, cfg.grid.horizon)
        ensemble = None
        reg = None
        if cfg.subcommand != "verify-lemmas":
            ensemble = _ensemble(cfg, threads)
            reg = _regressor(cfg, ensemble)
        code, payload = COMMANDS[cfg.subcommand](cfg, preset, ensemble, reg, out)
    except (PresetError, PathError, ConstantsError, ConfigError) as exc:
        raise RunError(str(exc), EXIT_CONFIG) from exc
    except OracleError as exc:
        raise RunError(f"oracle failure: {exc}", EXIT_FAIL) from exc
    report = {
        "version": __version__,
        "subcommand": cfg.subcommand,
        "config": cfg.to_dict(),
        "threads": threads,
        "exit_code": code,
        "elapsed_seconds": time.perf_counter() - started,
        **payload,
    }
    write_json(out / "report.json", report)
    return code, report


def _load(config: str, seed, output) -> RunConfig:
    cfg = parse_config(config)
    if seed is not None:
        cfg.ensemble.seed = seed
    if output is not None:
        cfg.output.directory = output
    return cfg


def _summary(report: dict) -> str:
    lines = [f"{report['subcommand']}: exit {report['exit_code']}"]
    if "certificate" in report:
        cert = report["certificate"]
        lines.append(
            f"  certified={cert['certified']} sqrt={cert['sqrt_ok']} I0={cert['I0_ok']} radius={cert['radius_ok']} weight={cert['c_ok']}"
        )
    if "converged" in report:
        lines.append(f"  converged={report['converged']} iterations={report.get('iterations', '-')}")
    if "flow" in report:
        lines.append(f"  flow rms={report['flow']['rms']:.3e}")
    if "max_diffs" in report:
        lines.append(f"  worst oracle gap={report['worst']:.3e} (tolerance {report['tolerance']:.0e})")
    return "\n".join(lines)


def _table(rows: list, headers: list) -> str:
    widths = [max(len(str(h)), *(len(str(r[k])) for r in rows)) for k, h in enumerate(headers)]
    fmt_row = lambda r: "  ".join(str(v).ljust(w) for v, w in zip(r, widths))
    return "\n".join([fmt_row(headers), fmt_row(["-" * w for w in widths])] + [fmt_row(r) for r in rows])


def _common(f):
    f = click.option("--output", "output", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker threads for path simulation.")(f)
    f = click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1), default=None, help="Override the ensemble seed.")(f)
    f = click.option("--config", "config", type=click.Path(), required=True, help="YAML problem file.")(f)
    return f


def _invoke(name: str, config: str, seed, threads: int, output, printer=None) -> None:
    try:
        cfg = _load(config, seed, output)
        cfg.subcommand = name
        code, report = run(cfg, threads)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except RunError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    click.echo(printer(report) if printer else _summary(report))
    sys.exit(code)


def _cert_table(report: dict) -> str:
    c = report["certificate"]
    rows = [
        ["sqrt", f"{c['sqrt_lhs']:.6g}", f"<= {c['sqrt_rhs']:.6g}", c["sqrt_ok"]],
        ["I0", f"{c['I0']:.6g}", f"<= {c['I0_limit']:.6g}", c["I0_ok"]],
        ["radius", f"{c['radius_sq']:.6g}", f"< {min(c['radius_statement'] or math.inf, c['radius_proof'] or math.inf):.6g}", c["radius_ok"]],
        ["weight", f"{c['c']:.6g}", f">= {c['c_eps']:.6g}", c["c_ok"]],
    ]
    head = f"mode={c['mode']} kappa={c['kappa']:g} certified={c['certified']}"
    return head + "\n" + _table(rows, ["condition", "value", "limit", "ok"])


def _lemma_table(report: dict) -> str:
    rep = report["lemmas"]
    rows = [[r["name"], f"{r['computed']:.10g}", f"{r['expected']:.10g}", f"{r['rel_error']:.2e}", r["passed"]] for r in rep["rows"]]
    notes = "\n".join(f"note: {n}" for n in rep["notes"])
    return _table(rows, ["check", "computed", "expected", "rel error", "ok"]) + ("\n" + notes if notes else "")


@click.group()
@click.version_option(__version__)
def main():
    """Monte Carlo solvers for coupled backward systems and Volterra equations."""


@main.command("solve-bsvie")
@_common
def solve_bsvie_cmd(config, seed, threads, output):
    """Solve a BSVIE preset and write the run report."""
    _invoke("solve-bsvie", config, seed, threads, output)


@main.command("solve-system")
@_common
def solve_system_cmd(config, seed, threads, output):
    """Solve a coupled-system preset (including the control preset)."""
    _invoke("solve-system", config, seed, threads, output)


@main.command("check-assumptions")
@_common
def check_assumptions_cmd(config, seed, threads, output):
    """Evaluate the small-data conditions without solving."""
    _invoke("check-assumptions", config, seed, threads, output, _cert_table)


@main.command("verify-lemmas")
@_common
def verify_lemmas_cmd(config, seed, threads, output):
    """Brute-force the two optimisation problems behind the constants."""
    _invoke("verify-lemmas", config, seed, threads, output, _lemma_table)


@main.command("flow-check")
@_common
def flow_check_cmd(config, seed, threads, output):
    """Solve a BSVIE and check the flow identity with its negative control."""
    _invoke("flow-check", config, seed, threads, output)


@main.command("oracle-compare")
@_common
def oracle_compare_cmd(config, seed, threads, output):
    """Compare against the exact tree solution."""
    _invoke("oracle-compare", config, seed, threads, output)


if __name__ == "__main__":
    main()
