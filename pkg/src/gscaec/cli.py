"""Command-line surface tying simulation, model, stability and design together.

Exit status: 0 success, 1 configuration error, 2 numerical error (non-SPD
statistics, divergence-only ensembles), 3 infeasible design.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import kernel
from ._linalg import NumericalError
from .analytic_model import setup_model, stability_report, steady_state_jex
from .cli_io import (
    ConfigError,
    design_spec_from_config,
    load_config,
    scenario_from_config,
    write_curve_csv,
    write_design_csv,
    write_plant_csv,
)
from .design_search import search
from .harness import LearningCurve, attach_model, compare, model_curve, run_schedule

ENV_PREFIX = "GSCAEC_"


def _env_default(name, cast, fallback=None):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"bad value for {ENV_PREFIX + name}: {raw!r}") from None


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gscaec",
        description="GSC-form BF-assisted echo canceler: simulation and analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("simulate", "Monte Carlo ensemble / schedule run -> curve CSV"),
        ("model", "closed-form model curves -> curve CSV"),
        ("compare", "simulation + model + deviation report"),
        ("stability", "stability verdict table"),
        ("design-search", "ranked feasible configurations -> CSV"),
        ("plant-gen", "generate and dump the LEM plant"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--runs", type=int, help="override [montecarlo] runs")
        p.add_argument("--seed", type=int, help="override [montecarlo] base_seed")
        p.add_argument("--threads", type=int, help="worker processes (default 1)")
        if name == "stability":
            p.add_argument(
                "--lambdas",
                help="comma-separated synthetic R_mod eigenvalues (instead of --config)",
            )
    return parser


def _load(args):
    path = args.config or _env_default("CONFIG", str)
    if not path:
        raise ConfigError("--config is required for this command")
    return load_config(path)


def _out_dir(args, cfg) -> Path:
    out = args.out or _env_default("OUT", str) or (cfg.output.dir if cfg else "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _scenario(args, cfg):
    runs = args.runs if args.runs is not None else _env_default("RUNS", int)
    seed = args.seed if args.seed is not None else _env_default("SEED", int)
    return scenario_from_config(cfg, runs=runs, seed=seed)


def _threads(args) -> int:
    return args.threads if args.threads is not None else _env_default("THREADS", int, 1)


def _print_curve_summary(curve: LearningCurve):
    if curve.J_mc is not None:
        tail = curve.J_mc[curve.warmup :]
        if len(tail):
            print(
                f"ensemble: {curve.runs} run(s), {curve.divergent_runs} divergent, "
                f"final J_mc = {10 * np.log10(max(tail[-1], 1e-300)):.2f} dB"
            )
    if curve.J_model is not None and curve.n_samples:
        print(f"model: final J = {10 * np.log10(max(curve.J_model[-1], 1e-300)):.2f} dB")


def _cmd_simulate(args):
    cfg = _load(args)
    scenario = _scenario(args, cfg)
    curve = run_schedule(scenario, threads=_threads(args))
    out = _out_dir(args, cfg) / "curve.csv"
    write_curve_csv(curve, out)
    print(f"kernel backend: {kernel.backend_name()}")
    _print_curve_summary(curve)
    print(f"wrote {out}")
    return 0


def _cmd_model(args):
    cfg = _load(args)
    scenario = _scenario(args, cfg)
    curve = LearningCurve(
        n_samples=scenario.n_samples,
        warmup=scenario.warmup(),
        J_model=model_curve(scenario),
    )
    out = _out_dir(args, cfg) / "curve.csv"
    write_curve_csv(curve, out)
    _print_curve_summary(curve)
    print(f"wrote {out}")
    return 0


def _cmd_compare(args):
    cfg = _load(args)
    scenario = _scenario(args, cfg)
    curve = run_schedule(scenario, threads=_threads(args))
    attach_model(curve, scenario)
    report = compare(curve, window=cfg.montecarlo.smoothing_window)
    out_dir = _out_dir(args, cfg)
    write_curve_csv(curve, out_dir / "curve.csv")
    with open(out_dir / "report.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write(str(report) + "\n")
    print(f"kernel backend: {kernel.backend_name()}")
    _print_curve_summary(curve)
    print(report)
    print(f"wrote {out_dir / 'curve.csv'} and {out_dir / 'report.txt'}")
    return 0


def _stability_from_lambdas(raw):
    lam = np.array([float(t) for t in raw.split(",") if t.strip()])
    if lam.size == 0 or np.any(lam <= 0):
        raise ConfigError("--lambdas needs positive comma-separated values")
    return setup_model(np.diag(lam), np.eye(len(lam)), 1.0), None


def _cmd_stability(args):
    if args.lambdas:
        setup, split_terms = _stability_from_lambdas(args.lambdas)
    else:
        cfg = _load(args)
        scenario = _scenario(args, cfg)
        from .gsc_core import optimal_solutions
        from .signal_model import analytic_Rbb, build_modified_channel_matrix

        plant = scenario.base_plant()
        gsc = scenario.build_gsc()
        calH = build_modified_channel_matrix(plant.H, scenario.n_bf)
        R_bb = analytic_Rbb(
            scenario.far_end, calH, scenario.near_end,
            scenario.n_aec, scenario.n_bf, plant.M,
        )
        stats = optimal_solutions(R_bb, gsc)
        seg = scenario.policy.segments[0]
        split_terms = None
        if seg.is_matrix:
            m_step = seg.m_matrix
        else:
            mu = np.full(gsc.N_psi, seg.mu_bf)
            mu[: gsc.N_AEC] = seg.mu_aec
            m_step = np.diag(mu)
            split_terms = (
                seg.mu_aec * float(np.trace(stats.R_bloc[: gsc.N_AEC, : gsc.N_AEC])),
                seg.mu_bf * float(np.trace(stats.R_bloc[gsc.N_AEC :, gsc.N_AEC :])),
            )
        setup = setup_model(stats.R_bloc, m_step, stats.J_min)

    report = stability_report(setup, split_terms=split_terms)
    verdict = "stable" if report.eig_stable else "unstable"
    print(f"{verdict}, tr={report.trace:.6g} < {2 / 3:.4f}")
    for line in report.lines():
        print(line)
    try:
        jex = steady_state_jex(setup, "exact")
        print(f"steady-state J_ex (exact) = {jex:.6g}")
    except NumericalError as exc:
        print(f"steady-state J_ex (exact): {exc}")
    return 0


def _cmd_design_search(args):
    cfg = _load(args)
    spec = design_spec_from_config(cfg)
    outcome = search(spec, threads=_threads(args))
    if outcome.infeasible:
        print(outcome.message, file=sys.stderr)
        return 3
    out = _out_dir(args, cfg) / "design.csv"
    write_design_csv(outcome, out)
    print(outcome.message)
    for p in outcome.points[:10]:
        print(
            f"M={p.m} N_AEC={p.n_aec} mu_AEC={p.mu_aec:.5g} mu_BF={p.mu_bf:.5g} "
            f"J_inf={p.j_inf_db:.2f} dB J_at={p.j_at_db:.2f} dB"
        )
    print(f"wrote {out}")
    return 0


def _cmd_plant_gen(args):
    cfg = _load(args)
    scenario = _scenario(args, cfg)
    plant = scenario.base_plant()
    out = _out_dir(args, cfg) / "plant.csv"
    write_plant_csv(plant, out)
    print(f"wrote {out} ({plant.N_h} taps x {plant.M} microphones)")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "model": _cmd_model,
    "compare": _cmd_compare,
    "stability": _cmd_stability,
    "design-search": _cmd_design_search,
    "plant-gen": _cmd_plant_gen,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
