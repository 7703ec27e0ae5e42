"""Batch command-line front end.

Every command reads a :class:`~gkpqudit.artifacts.RunConfig` (JSON file via
``--config`` and/or flags, flags win), writes CSV tables plus a JSON summary
into ``--out`` and finishes with ``manifest.json``. Exit codes: 2 for
configuration errors, 3 for convergence failures, 4 for resource limits.
"""

from __future__ import annotations

import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import click
import numpy as np

from . import channels, circuits, fock, gkp, optimize, simulate, tomography
from .artifacts import RunConfig, load_config, write_csv, write_json, write_manifest
from .errors import (
    BudgetExhausted,
    ConfigError,
    ConvergenceError,
    FitDiverged,
    NonlinearRegime,
    NotConverged,
    ResourceLimit,
    TruncationError,
    UnsupportedDimension,
    WrongDimension,
)

EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_RESOURCE = 2, 3, 4

# plain ValueError covers argument checks in the library constructors
_CONFIG_ERRORS = (ConfigError, UnsupportedDimension, WrongDimension, TruncationError, ValueError, KeyError)
_CONVERGENCE_ERRORS = (ConvergenceError, NotConverged, FitDiverged, NonlinearRegime, BudgetExhausted)


# ------------------------------------------------------------------ helpers


def worker_count(cfg: RunConfig) -> int:
    if cfg.threads:
        return cfg.threads
    env = os.environ.get("GKPSIM_THREADS", "").strip()
    if not env:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"GKPSIM_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("GKPSIM_THREADS must be >= 1")
    return n


def pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """``[fn(x) for x in items]`` on a thread pool; output order follows ``items``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _code(cfg: RunConfig, delta: float | None = None) -> gkp.GkpCode:
    return gkp.build_code(cfg.d, cfg.delta if delta is None else delta, cfg.fock, tail_limit=cfg.tail_limit)


def _plan(cfg: RunConfig, code: gkp.GkpCode, **kw) -> simulate.SimulationPlan:
    base = dict(
        rounds=cfg.rounds,
        noise=cfg.noise_model(),
        mode=cfg.mode,
        shots=cfg.shots,
        seed=cfg.seed,
        ecd_alpha=cfg.ecd_alpha,
    )
    base.update(kw)
    return simulate.SimulationPlan(code, **base)


def _basis_names(cfg: RunConfig) -> list[str]:
    if cfg.d == 1:
        raise ConfigError("d=1 has no logical bases")
    names = [lab.name() for lab in gkp.measurement_pauli_sets(cfg.d)] + (["parity"] if cfg.d == 4 else [])
    if cfg.bases:
        unknown = set(cfg.bases) - set(names)
        if unknown:
            raise ConfigError(f"unknown bases {sorted(unknown)} for d={cfg.d}; choose from {names}")
        names = [n for n in names if n in cfg.bases]
    return names


def _state_key(basis: gkp.LogicalBasis, k: int) -> str:
    if basis.kind == "parity":
        s, m = basis.eigenvalue_labels[k]
        return f"{s}{m}"
    return str(k)


def _parse_state(code: gkp.GkpCode, spec: str) -> tuple[str, gkp.LogicalBasis, int]:
    try:
        name, k = spec.split(":")
        basis = simulate.basis_for(code, name)
        k = int(k)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"state must look like '<basis>:<k>', got {spec!r}") from exc
    if not 0 <= k < len(basis.states):
        raise ConfigError(f"state index {k} out of range for basis {name}")
    return name, basis, k


def _input_rho(cfg: RunConfig, code: gkp.GkpCode) -> np.ndarray:
    n = code.space.cavity_dim
    if cfg.state == "vacuum":
        v = fock.fock_ket(n, 0)
        return np.outer(v, v.conj())
    if cfg.state == "mixed":
        return gkp.maximally_mixed(code)
    if cfg.state == "steady":
        steps = cfg.rounds[-1] if cfg.rounds[-1] >= 100 else 300
        return simulate.steady_state_rho(_plan(cfg, code), steps)
    _, basis, k = _parse_state(code, cfg.state)
    psi = basis.states[k]
    return np.outer(psi, psi.conj())


def _grid(cfg: RunConfig) -> np.ndarray:
    extent, pts = float(cfg.grid.get("extent", 4.0)), int(cfg.grid.get("points", 81))
    if extent <= 0 or pts < 3:
        raise ConfigError("grid needs extent > 0 and at least 3 points")
    return np.linspace(-extent, extent, pts)


def _grid_rows(grid: tomography.PhaseSpaceGrid) -> Iterable[tuple]:
    for i, y in enumerate(grid.im):
        for j, x in enumerate(grid.re):
            v = grid.values[i, j]
            yield (float(x), float(y), float(np.real(v)), float(np.imag(v)))


def _stabilizer_peaks(rho: np.ndarray, d: int) -> list[float]:
    ell = gkp.stabilizer_length(d)
    pts = np.array([ell, -ell, 1j * ell, -1j * ell])
    return [float(v) for v in np.real(tomography.characteristic_at(rho, pts))]


# ----------------------------------------------------------------- commands


def cmd_build_code(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Codewords in the Fock basis plus a report of code invariants."""
    code = _code(cfg)
    W = code.codewords
    n = code.space.cavity_dim
    cols = ["fock_n"] + [f"z{j}_{part}" for j in range(code.d) for part in ("re", "im")]
    rows = [[k] + [float(f(W[j, k])) for j in range(code.d) for f in (np.real, np.imag)] for k in range(n)]
    files = [write_csv(out / "codewords.csv", cols, rows)]
    gram = W.conj() @ W.T
    SX, SZ = code.finite_stabilizers
    photon = np.arange(n)
    report = {
        "d": code.d,
        "delta": code.delta,
        "cavity_dim": n,
        "stabilizer_length": code.length,
        "max_norm_error": float(np.max(np.abs(np.diag(gram) - 1))),
        "max_overlap": float(np.max(np.abs(gram - np.diag(np.diag(gram))))) if code.d > 1 else 0.0,
        "tail_weight": [float(np.sum(np.abs(w[-10:]) ** 2)) for w in W],
        "mean_photon_number": [float(np.sum(photon * np.abs(w) ** 2)) for w in W],
        "finite_stabilizer_x": [float(np.real(np.vdot(w, SX @ w))) for w in W],
        "finite_stabilizer_z": [float(np.real(np.vdot(w, SZ @ w))) for w in W],
    }
    if code.d > 1:
        Xd, Zd = code.logicals
        report["logical_x_fidelity"] = [float(abs(np.vdot(W[(j + 1) % code.d], Xd @ W[j])) ** 2) for j in range(code.d)]
        report["logical_z_phase"] = [float(np.angle(np.vdot(W[j], Zd @ W[j]))) for j in range(code.d)]
    files.append(write_json(out / "invariants.json", report))
    return files, report


def cmd_sbs_run(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Repeated sBs rounds from an input state; CF peaks per checkpoint and final maps."""
    code = _code(cfg)
    plan = _plan(cfg, code, mode="dm")
    states = simulate.evolve_cavity(plan, _input_rho(cfg, code), cfg.rounds)
    n = np.arange(code.space.cavity_dim)
    rows = []
    for r in sorted(states):
        rho = states[r]
        rows.append(
            [r, float(np.real(np.trace(rho @ rho))), float(np.real(np.sum(n * np.diag(rho))))] + _stabilizer_peaks(rho, code.d)
        )
    cols = ["round", "purity", "mean_photon_number", "cf_re_plus_l", "cf_re_minus_l", "cf_re_plus_il", "cf_re_minus_il"]
    files = [write_csv(out / "sbs_peaks.csv", cols, rows)]
    final = states[max(states)]
    axis = _grid(cfg)
    cf = tomography.characteristic_function(final, axis, axis)
    wig = tomography.wigner(final, axis, axis)
    files.append(write_csv(out / "cf_final.csv", ["re", "im", "value_re", "value_im"], _grid_rows(cf)))
    files.append(write_csv(out / "wigner_final.csv", ["re", "im", "value_re", "value_im"], _grid_rows(wig)))
    summary = {
        "rounds": list(cfg.rounds),
        "final_purity": rows[-1][1],
        "final_cf_peaks": rows[-1][3:],
        "final_wigner_min": float(np.min(np.real(wig.values))),
    }
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def cmd_measure_backaction(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Outcome distributions of the logical measurements and the post-measurement fidelity."""
    code = _code(cfg)
    names = _basis_names(cfg)
    mixed = gkp.maximally_mixed(code)

    def run(name):
        basis = simulate.basis_for(code, name)
        sched = circuits.logical_measurement(code, name, 0, include_displacement=cfg.include_displacement)
        rows = []
        for k, psi in enumerate(basis.states):
            post = 0.0
            dist: dict = {}
            for rec, p, rho in circuits.outcome_distribution(psi, sched):
                key = sched.decode(rec)
                dist[key] = dist.get(key, 0.0) + p
                post += p * fock.state_fidelity(fock.partial_trace_ancilla(rho, code.space), psi)
            for j in range(len(basis.states)):
                want = basis.eigenvalue_labels[j] if basis.kind == "parity" else j
                rows.append([name, _state_key(basis, k), _state_key(basis, j), dist.get(want, 0.0), post])
        dist = circuits.decoded_distribution(mixed, sched)
        for j in range(len(basis.states)):
            want = basis.eigenvalue_labels[j] if basis.kind == "parity" else j
            rows.append([name, "mixed", _state_key(basis, j), dist.get(want, 0.0), ""])
        return rows

    rows = [r for block in pmap(run, names, worker_count(cfg)) for r in block]
    files = [write_csv(out / "outcomes.csv", ["basis", "prepared", "outcome", "probability", "post_fidelity"], rows)]
    fid = {}
    for name in names:
        hits = [r[3] for r in rows if r[0] == name and r[1] == r[2]]
        fid[name] = float(np.mean(hits))
    summary = {"measurement_fidelity": fid, "include_displacement": cfg.include_displacement}
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def cmd_lifetime(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Decay of every logical basis state, fitted rates, Gamma_d and the QEC gain."""
    if cfg.bases:
        raise ConfigError("lifetime needs every basis; drop 'bases'")
    code = _code(cfg)
    plan = _plan(cfg, code)
    tasks = []
    for name in _basis_names(cfg):
        basis = simulate.basis_for(code, name)
        tasks += [(name, k) for k in range(len(basis.states))]
    curves = pmap(lambda t: simulate.run_memory_experiment(plan, t[0], t[1]), tasks, worker_count(cfg))
    rows, fits, gammas = [], [], {}
    for (name, k), c in zip(tasks, curves):
        basis = simulate.basis_for(code, name)
        label = _state_key(basis, k)
        for r, p, e in c.points():
            rows.append([name, label, r, p, e])
        fit = c.fit(code.d, min_round=cfg.min_round)
        key = ("parity", basis.eigenvalue_labels[k]) if basis.kind == "parity" else (name, k)
        gammas[key] = fit.gamma
        fits.append([name, label, fit.gamma, fit.gamma_err, fit.lifetime, int(fit.degenerate)])
    files = [
        write_csv(out / "curves.csv", ["basis", "state", "round", "survival", "err"], rows),
        write_csv(out / "fits.csv", ["basis", "state", "gamma_per_us", "gamma_err", "lifetime_us", "degenerate"], fits),
    ]
    gamma_d = channels.effective_rate_from_decays(gammas, code.d)
    fock_rate = channels.fock_qudit_rate(code.d, *channels.fock_baseline_rates())
    summary = {
        "d": code.d,
        "delta": code.delta,
        "gamma_d_per_us": gamma_d,
        "gamma_d_inv_us": (1 / gamma_d) if gamma_d > 0 else float("inf"),
        "fock_gamma_inv_us": 1 / fock_rate,
        "gain": channels.qec_gain(fock_rate, gamma_d) if gamma_d > 0 else float("inf"),
    }
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def cmd_error_budget(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Rates with each error source alone, per segment and combined."""
    code = _code(cfg)
    plan = _plan(cfg, code)
    configs = list(cfg.configs) or None
    if configs:
        unknown = set(configs) - set(simulate.BUDGET_CONFIGS)
        if unknown:
            raise ConfigError(f"unknown budget configs {sorted(unknown)}")
    entries = simulate.error_budget(plan, configs, min_round=cfg.min_round)
    names = sorted(entries[0].gamma)
    cols = ["error_type"] + [f"{b}_lifetime_ms" for b in names] + ["gamma_d_lifetime_ms", "percent"]
    rows = []
    for e in entries:
        life = e.lifetimes_ms()
        gd = float("inf") if e.gamma_d <= 0 else 1e-3 / e.gamma_d
        rows.append([e.error_type] + [life[b] for b in names] + [gd, e.percent])
    files = [write_csv(out / "budget.csv", cols, rows)]
    summary = {
        "d": code.d,
        "delta": code.delta,
        "cavity_dim": code.space.cavity_dim,
        "ecd_alpha": cfg.ecd_alpha,
        "percent": {e.error_type: e.percent for e in entries},
        "gamma_d_lifetime_ms": {r[0]: r[-2] for r in rows},
    }
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def cmd_tomo(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """CF and Wigner maps of a state, photon number from CF curvature and the envelope width."""
    code = _code(cfg)
    rho = _input_rho(cfg, code)
    axis = _grid(cfg)
    cf = tomography.characteristic_function(rho, axis, axis)
    wig = tomography.wigner(rho, axis, axis)
    files = [
        write_csv(out / "cf.csv", ["re", "im", "value_re", "value_im"], _grid_rows(cf)),
        write_csv(out / "wigner.csv", ["re", "im", "value_re", "value_im"], _grid_rows(wig)),
    ]
    fine = np.linspace(-0.04, 0.04, 5)
    nbar_cf = tomography.photon_stats_from_cf(tomography.characteristic_function(rho, fine, fine))
    core = np.linspace(-0.8, 0.8, 33)
    delta_eff, amp, off = tomography.fit_delta_eff(tomography.characteristic_function(rho, core, core))
    n = np.arange(code.space.cavity_dim)
    summary = {
        "state": cfg.state,
        "mean_photon_number": float(np.real(np.sum(n * np.diag(rho)))),
        "mean_photon_number_from_cf": nbar_cf,
        "delta_eff": delta_eff,
        "envelope_amplitude": amp,
        "envelope_offset": off,
        "cf_peaks": _stabilizer_peaks(rho, code.d),
        "wigner_min": float(np.min(np.real(wig.values))),
        "purity": float(np.real(np.trace(rho @ rho))),
    }
    files.append(write_json(out / "summary.json", summary))
    return files, summary


def cmd_prep_optimize(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Depth-K ECD circuit preparing a logical state from vacuum."""
    code = _code(cfg)
    name, basis, k = _parse_state(code, cfg.target)
    report = optimize.optimize_prep(
        basis.states[k],
        K=cfg.depth,
        restarts=cfg.restarts,
        seed=cfg.seed,
        budget=cfg.budget,
        target_fidelity=cfg.target_fidelity,
        raise_on_exhaust=cfg.target_fidelity is not None,
    )
    files = [
        write_json(out / "report.json", report.to_json_dict()),
        write_csv(out / "trace.csv", ["evaluation", "best_fidelity"], enumerate(report.trace)),
    ]
    p = report.params
    layer_rows = [[j, float(b.real), float(b.imag), float(ph), float(th)] for j, (b, ph, th) in enumerate(zip(p.betas, p.phis, p.thetas))]
    files.append(write_csv(out / "circuit.csv", ["layer", "beta_re", "beta_im", "phi", "theta"], layer_rows))
    summary = {"target": cfg.target, "fidelity": report.fidelity, "restarts_used": report.restarts_used}
    return files, summary


def cmd_fidelity_sweep(cfg: RunConfig, out: Path) -> tuple[list[Path], dict]:
    """Noiseless logical measurement fidelity versus envelope width."""
    bases = _basis_names(cfg)
    deltas = sorted(set(cfg.deltas))
    blocks = pmap(
        lambda dl: simulate.measurement_fidelity_sweep(cfg.d, [dl], bases, include_displacement=cfg.include_displacement),
        deltas,
        worker_count(cfg),
    )
    rows = [[r["delta"], r["basis"], r["fidelity"]] for block in blocks for r in block]
    files = [write_csv(out / "fidelity.csv", ["delta", "basis", "fidelity"], rows)]
    summary = {"deltas": deltas, "bases": bases}
    return files, summary


COMMAND_FUNCS: dict[str, Callable[[RunConfig, Path], tuple[list[Path], dict]]] = {
    "build-code": cmd_build_code,
    "sbs-run": cmd_sbs_run,
    "measure-backaction": cmd_measure_backaction,
    "lifetime": cmd_lifetime,
    "error-budget": cmd_error_budget,
    "tomo": cmd_tomo,
    "prep-optimize": cmd_prep_optimize,
    "fidelity-sweep": cmd_fidelity_sweep,
}


def run_config(cfg: RunConfig) -> tuple[list[Path], dict]:
    """Run one command and write its manifest."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, summary = COMMAND_FUNCS[cfg.command](cfg, out)
    write_manifest(out, cfg, files, time.perf_counter() - t0)
    return files, summary


def exit_code_for(exc: BaseException) -> int | None:
    if isinstance(exc, ResourceLimit):
        return EXIT_RESOURCE
    if isinstance(exc, _CONVERGENCE_ERRORS):
        return EXIT_CONVERGENCE
    if isinstance(exc, _CONFIG_ERRORS):
        return EXIT_CONFIG
    return None


# --------------------------------------------------------------------- click


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config; flags override it."),
        click.option("--d", type=int, help="Qudit dimension (1..4)."),
        click.option("--delta", type=float, help="Envelope width."),
        click.option("--fock", type=int, help="Cavity Fock truncation."),
        click.option("--tail-limit", type=float, help="Codeword weight allowed in the top 10 Fock levels."),
        click.option("--rounds", type=str, help="Round checkpoints, e.g. 0,10,...,100."),
        click.option("--seed", type=int, help="RNG seed."),
        click.option("--noise-preset", type=str, help="Named noise model."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--threads", type=int, help="Worker pool size (default GKPSIM_THREADS or 1)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _execute(command: str, config_path: str | None, **flags):
    try:
        data = load_config(config_path) if config_path else {}
        if data.get("command", command) != command:
            raise ConfigError(f"config is for {data['command']!r}, not {command!r}")
        data["command"] = command
        for key, value in flags.items():
            if value is None or value == ():
                continue
            data[key] = value
        cfg = RunConfig.from_dict(data)
        files, summary = run_config(cfg)
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            raise
        click.echo(f"error: {exc}", err=True)
        sys.exit(code)
    for p in files:
        click.echo(str(p))


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Simulate and analyse finite-energy GKP qudits."""


@main.command("build-code")
@_common
def build_code_cmd(config_path, **kw):
    """Construct codewords and report their invariants."""
    _execute("build-code", config_path, **kw)


@main.command("sbs-run")
@_common
@click.option("--state", type=str, help="vacuum, mixed or <basis>:<k>.")
@click.option("--ecd-alpha", type=float)
def sbs_run_cmd(config_path, **kw):
    """Run sBs rounds and record the grid peaks."""
    _execute("sbs-run", config_path, **kw)


@main.command("measure-backaction")
@_common
@click.option("--include-displacement/--no-include-displacement", default=None)
def measure_backaction_cmd(config_path, **kw):
    """Logical measurement outcomes and back-action."""
    _execute("measure-backaction", config_path, **kw)


@main.command("lifetime")
@_common
@click.option("--mode", type=click.Choice(["dm", "trajectory"]))
@click.option("--shots", type=int)
@click.option("--ecd-alpha", type=float)
@click.option("--min-round", type=int)
def lifetime_cmd(config_path, **kw):
    """Logical lifetimes of every basis state."""
    _execute("lifetime", config_path, **kw)


@main.command("error-budget")
@_common
@click.option("--configs", type=str, help="Comma-separated budget configurations.")
@click.option("--ecd-alpha", type=float)
@click.option("--min-round", type=int)
def error_budget_cmd(config_path, configs=None, **kw):
    """Per-source logical error budget."""
    if configs:
        kw["configs"] = tuple(c.strip() for c in configs.split(",") if c.strip())
    _execute("error-budget", config_path, **kw)


@main.command("tomo")
@_common
@click.option("--state", type=str, help="mixed, steady, vacuum or <basis>:<k>.")
def tomo_cmd(config_path, **kw):
    """Phase-space maps and derived statistics."""
    _execute("tomo", config_path, **kw)


@main.command("prep-optimize")
@_common
@click.option("--target", type=str, help="<basis>:<k>, e.g. Z:0.")
@click.option("--depth", type=int)
@click.option("--restarts", type=int)
@click.option("--budget", type=int)
@click.option("--target-fidelity", type=float)
def prep_optimize_cmd(config_path, **kw):
    """Optimize an ECD state-preparation circuit."""
    _execute("prep-optimize", config_path, **kw)


@main.command("fidelity-sweep")
@_common
@click.option("--deltas", type=str, help="Comma-separated envelope widths.")
@click.option("--include-displacement/--no-include-displacement", default=None)
def fidelity_sweep_cmd(config_path, deltas=None, **kw):
    """Measurement fidelity versus envelope width."""
    if deltas:
        try:
            kw["deltas"] = tuple(float(x) for x in deltas.split(","))
        except ValueError:
            click.echo(f"error: cannot parse deltas {deltas!r}", err=True)
            sys.exit(EXIT_CONFIG)
    _execute("fidelity-sweep", config_path, **kw)


if __name__ == "__main__":
    main()
