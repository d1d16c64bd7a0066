"""Monte Carlo ensemble runner, scenario schedules and model comparison.

A Scenario bundles the plant/signal configuration, the GSC dimensions, the
step-size schedule and the event list (double-talk on/off, abrupt plant
changes).  run_ensemble / run_schedule produce the ensemble-mean output
power; model_curve evaluates the closed-form model piecewise over the
stationary segments, carrying the weight moments across boundaries.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import kernel
from ._linalg import NumericalError
from .adaptive_engine import PolicySegment, StepPolicy
from .analytic_model import (
    ModelSetup,
    mop_recursion,
    nu0_from_moment,
    setup_model,
    to_db,
)
from .gsc_core import GscStructure, build_gsc, optimal_solutions
from .signal_model import (
    FarEndModel,
    Interferer,
    NearEndModel,
    analytic_Rbb,
    apply_presteering,
    build_modified_channel_matrix,
    gen_lem_plant,
    synthesize_run,
)

#: relative SPD floor substituted for zero step sizes in the analytic model
#: (the engine itself uses exact zeros; see model notes in the README)
FREEZE_EPS_REL = 1e-6


@dataclass(frozen=True)
class PlantConfig:
    """Parameters of the synthetic LEM plant generator."""

    M: int
    N_h: int
    fs: float = 8000.0
    T_R60: float = 0.1
    F: int = 5
    mic_spacing: int = 1
    seed: int = 1
    per_run: bool = False

    def build(self, seed=None):
        return gen_lem_plant(
            self.M, self.N_h, self.fs, self.T_R60, self.F,
            self.mic_spacing, self.seed if seed is None else seed,
        )


@dataclass(frozen=True)
class Event:
    """Scheduled state change: dtalk_on/dtalk_off/plant_change."""

    at_n: int
    kind: str
    interferer: Optional[Interferer] = None
    plant_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("dtalk_on", "dtalk_off", "plant_change"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.at_n <= 0:
            raise ValueError("event times must be > 0")
        if self.kind == "dtalk_on" and self.interferer is None:
            raise ValueError("dtalk_on event needs an interferer")
        if self.kind == "plant_change" and self.plant_seed is None:
            raise ValueError("plant_change event needs a new seed")


@dataclass(frozen=True)
class Scenario:
    """Complete description of one reproducible experiment."""

    plant: PlantConfig
    far_end: FarEndModel
    near_end: NearEndModel
    n_bf: int
    n_f: int
    n_aec: int
    policy: StepPolicy
    n_samples: int
    runs: int = 1
    base_seed: int = 0
    f_spec: str = "allpass"
    events: Tuple[Event, ...] = ()
    presteer: Tuple[int, ...] = ()
    nonstat_eta: float = 0.0

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        times = [e.at_n for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")
        if any(t >= self.n_samples for t in times):
            raise ValueError("event times must be < n_samples")
        open_dt = False
        for e in self.events:
            if e.kind == "dtalk_on":
                if open_dt:
                    raise ValueError("overlapping double-talk windows")
                open_dt = True
            elif e.kind == "dtalk_off":
                if not open_dt:
                    raise ValueError("dtalk_off without dtalk_on")
                open_dt = False

    def base_plant(self, run_idx=0):
        seed = self.plant.seed + run_idx if self.plant.per_run else self.plant.seed
        plant = self.plant.build(seed)
        if self.presteer and any(self.presteer):
            plant = apply_presteering(plant, self.presteer)
        return plant

    def build_gsc(self) -> GscStructure:
        return build_gsc(self.plant.M, self.n_bf, self.n_f, self.f_spec, self.n_aec)

    def warmup(self) -> int:
        n_h = self.base_plant().N_h
        return max(n_h + self.n_bf, self.n_aec)

    def dtalk_windows(self):
        wins, start = [], None
        for e in self.events:
            if e.kind == "dtalk_on":
                start = e.at_n
            elif e.kind == "dtalk_off" and start is not None:
                wins.append((start, e.at_n))
                start = None
        if start is not None:
            wins.append((start, self.n_samples))
        return tuple(wins)

    def active_interferer(self) -> Optional[Interferer]:
        for e in self.events:
            if e.kind == "dtalk_on":
                return e.interferer
        return None

    def plant_timeline(self, run_idx=0):
        """(start_n, plant) pairs covering the run, later entries replacing H."""
        timeline = [(0, self.base_plant(run_idx))]
        for e in self.events:
            if e.kind == "plant_change":
                plant = self.plant.build(e.plant_seed)
                if self.presteer and any(self.presteer):
                    plant = apply_presteering(plant, self.presteer)
                timeline.append((e.at_n, plant))
        return timeline


@dataclass
class LearningCurve:
    """Ensemble-mean and model output-power trajectories."""

    n_samples: int
    warmup: int
    J_mc: Optional[np.ndarray] = None
    J_model: Optional[np.ndarray] = None
    runs: int = 0
    divergent_runs: int = 0

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.n_samples)

    @property
    def J_mc_dB(self):
        return None if self.J_mc is None else to_db(self.J_mc)

    @property
    def J_model_dB(self):
        return None if self.J_model is None else to_db(self.J_model)


# ---------------------------------------------------------------------------
# Monte Carlo


def _near_end_effective(scenario) -> NearEndModel:
    ne = scenario.near_end
    intf = scenario.active_interferer()
    return ne if intf is None else replace(ne, interferer=intf)


def synthesize_scenario_run(scenario: Scenario, run_idx: int):
    """(u, x) timeline of one run, events applied (seed = base_seed + run)."""
    timeline = scenario.plant_timeline(run_idx)
    return synthesize_run(
        timeline[0][1],
        scenario.far_end,
        _near_end_effective(scenario),
        scenario.n_samples,
        scenario.base_seed + run_idx,
        dtalk_windows=scenario.dtalk_windows(),
        plant_timeline=[(t, p.H) for t, p in timeline],
        nonstat_eta=scenario.nonstat_eta,
    )


def run_single(scenario: Scenario, gsc: GscStructure, run_idx: int):
    """One run's squared-residual trajectory; returns (d^2, diverged)."""
    u, x = synthesize_scenario_run(scenario, run_idx)
    data = kernel.prepare_run(u, x, gsc.q, gsc.B, gsc.N_AEC)
    psi = np.zeros(gsc.N_psi)
    d = np.zeros(scenario.n_samples)
    for start, stop, seg in scenario.policy.boundaries(scenario.n_samples):
        if seg.is_matrix:
            div = kernel.run_general(data, psi, seg.m_matrix, start, stop, d)
        else:
            div = kernel.run_split(data, psi, seg.mu_aec, seg.mu_bf, start, stop, d)
        if div >= 0:
            return d * d, True
    return d * d, False


def _worker(args):
    scenario, run_idx = args
    gsc = scenario.build_gsc()
    return run_single(scenario, gsc, run_idx)


def _run_mc(scenario: Scenario, threads=1) -> LearningCurve:
    acc = np.zeros(scenario.n_samples)
    good = 0
    divergent = 0
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = pool.map(
                _worker, [(scenario, r) for r in range(scenario.runs)], chunksize=1
            )
            for d2, diverged in results:
                if diverged:
                    divergent += 1
                else:
                    acc += d2
                    good += 1
    else:
        gsc = scenario.build_gsc()
        for r in range(scenario.runs):
            d2, diverged = run_single(scenario, gsc, r)
            if diverged:
                divergent += 1
            else:
                acc += d2
                good += 1
    if good == 0:
        raise NumericalError(f"all {scenario.runs} runs diverged; nothing to average")
    return LearningCurve(
        n_samples=scenario.n_samples,
        warmup=scenario.warmup(),
        J_mc=acc / good,
        runs=good,
        divergent_runs=divergent,
    )


def run_ensemble(scenario: Scenario, threads=1) -> LearningCurve:
    """Ensemble-mean d^2[n] over `runs` seeded runs (event-free scenarios)."""
    if scenario.events:
        raise ValueError("scenario has events; use run_schedule")
    return _run_mc(scenario, threads=threads)


def run_schedule(scenario: Scenario, threads=1) -> LearningCurve:
    """run_ensemble for scenarios with scheduled state changes."""
    return _run_mc(scenario, threads=threads)


# ---------------------------------------------------------------------------
# Piecewise-stationary analytic model


def _segment_step_matrix(seg: PolicySegment, n_aec, n_psi):
    """Segment SPD step matrix; zero scalar steps get the SPD freeze floor."""
    if seg.is_matrix:
        return seg.m_matrix, None
    mu = np.empty(n_psi)
    mu[:n_aec] = seg.mu_aec
    mu[n_aec:] = seg.mu_bf
    nz = mu[mu > 0]
    if nz.size == 0:
        return None, None  # fully frozen: J stays constant
    eps = nz.max() * FREEZE_EPS_REL
    mu_eff = np.where(mu > 0, mu, eps)
    return np.diag(mu_eff), (seg.mu_aec, seg.mu_bf)


def _segment_boundaries(scenario: Scenario):
    """Merged, sorted boundary times from the policy and the event list."""
    times = {0, *(s.start_n for s in scenario.policy.segments)}
    times.update(e.at_n for e in scenario.events)
    times = sorted(t for t in times if t < scenario.n_samples)
    return times + [scenario.n_samples]


def model_curve(scenario: Scenario) -> np.ndarray:
    """Closed-form J[n] over the whole scenario timeline.

    Within each stationary segment the eigenspace recursion is iterated;
    at boundaries the weight mean and second moment are mapped into the new
    optimum's error coordinates (piecewise-stationary treatment).
    """
    gsc = scenario.build_gsc()
    n_aec, n_psi = gsc.N_AEC, gsc.N_psi
    times = _segment_boundaries(scenario)
    dt_windows = scenario.dtalk_windows()
    timeline = scenario.plant_timeline()
    near = _near_end_effective(scenario)

    def interferer_active(t):
        return any(on <= t < off for on, off in dt_windows)

    def plant_at(t):
        cur = timeline[0][1]
        for start, p in timeline:
            if start <= t:
                cur = p
        return cur

    def policy_at(t):
        cur = scenario.policy.segments[0]
        for s in scenario.policy.segments:
            if s.start_n <= t:
                cur = s
        return cur

    J = np.empty(scenario.n_samples)
    e_theta = None  # E{theta} in psi coordinates
    r_theta = None  # E{theta theta^T} in psi coordinates
    psi_opt_prev = None

    for t0, t1 in zip(times[:-1], times[1:]):
        plant = plant_at(t0)
        calH = build_modified_channel_matrix(plant.H, scenario.n_bf)
        R_bb = analytic_Rbb(
            scenario.far_end, calH, near, n_aec, scenario.n_bf, plant.M,
            interferer_active=interferer_active(t0),
        )
        stats = optimal_solutions(R_bb, gsc)

        if psi_opt_prev is None:
            e_theta = -stats.psi_opt
            r_theta = np.outer(stats.psi_opt, stats.psi_opt)
        else:
            delta = psi_opt_prev - stats.psi_opt
            r_theta = (
                r_theta
                + np.outer(delta, e_theta)
                + np.outer(e_theta, delta)
                + np.outer(delta, delta)
            )
            e_theta = e_theta + delta
        psi_opt_prev = stats.psi_opt

        m_step, _ = _segment_step_matrix(policy_at(t0), n_aec, n_psi)
        if m_step is None:  # fully frozen segment: constant output power
            J[t0:t1] = stats.J_min + float(np.sum(stats.R_bloc * r_theta))
            continue

        setup = setup_model(stats.R_bloc, m_step, stats.J_min)
        nu0 = nu0_from_moment(setup, r_theta)
        mean0 = setup.to_eigspace(e_theta)
        J_seg, nu_end, mean_end = mop_recursion(setup, nu0, t1 - t0, mean0=mean0)
        J[t0:t1] = J_seg
        e_theta = setup.from_eigspace(mean_end)
        lq = setup.L @ setup.Q
        r_theta = (lq * nu_end) @ lq.T

    return J


def attach_model(curve: LearningCurve, scenario: Scenario) -> LearningCurve:
    curve.J_model = model_curve(scenario)
    return curve


# ---------------------------------------------------------------------------
# Comparison


@dataclass(frozen=True)
class DeviationReport:
    """Post-warm-up dB deviation between ensemble and model curves."""

    max_dev_db: float
    mean_dev_db: float
    n_compared: int
    window: int
    divergent_runs: int

    def __str__(self):
        note = (
            f"; {self.divergent_runs} divergent run(s) excluded"
            if self.divergent_runs
            else ""
        )
        return (
            f"deviation over {self.n_compared} post-warm-up samples "
            f"(window {self.window}): max {self.max_dev_db:.3f} dB, "
            f"mean {self.mean_dev_db:.3f} dB{note}"
        )


def smooth_power(p, window):
    """Centered moving average with shrinking windows at the edges."""
    if window <= 1:
        return np.asarray(p, dtype=float)
    half = window // 2
    cs = np.concatenate(([0.0], np.cumsum(p)))
    n = len(p)
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    return (cs[hi] - cs[lo]) / (hi - lo)


def _deviation(mc, md):
    both_zero = (mc <= 0) & (md <= 0)
    dev = np.zeros(len(mc))
    live = ~both_zero
    dev[live] = np.abs(to_db(mc[live]) - to_db(md[live]))
    return dev


def compare(curve: LearningCurve, window=101) -> DeviationReport:
    """Max/mean |J_mc_dB - J_model_dB| after warm-up, smoothing J_mc only."""
    if curve.J_mc is None or curve.J_model is None:
        raise ValueError("compare needs both J_mc and J_model")
    lo = min(curve.warmup, curve.n_samples)
    dev = _deviation(smooth_power(curve.J_mc, window)[lo:], curve.J_model[lo:])
    if len(dev) == 0:
        return DeviationReport(0.0, 0.0, 0, window, curve.divergent_runs)
    return DeviationReport(
        max_dev_db=float(dev.max()),
        mean_dev_db=float(dev.mean()),
        n_compared=int(len(dev)),
        window=window,
        divergent_runs=curve.divergent_runs,
    )


def compare_segments(curve: LearningCurve, scenario: Scenario, window=101):
    """Per-stationary-segment deviation reports for scheduled scenarios.

    Smoothing is applied within each segment (the ensemble statistics are
    discontinuous at boundaries) and one smoothing window after each
    boundary is skipped: there the centered average spans the regressor
    delay-line mixing and has no full window of same-regime samples.
    """
    if curve.J_mc is None or curve.J_model is None:
        raise ValueError("compare needs both J_mc and J_model")
    times = _segment_boundaries(scenario)
    reports = []
    for t0, t1 in zip(times[:-1], times[1:]):
        mc = smooth_power(curve.J_mc[t0:t1], window)
        lo = max(curve.warmup - t0, 0) if t0 == 0 else window
        dev = _deviation(mc, curve.J_model[t0:t1])[lo:]
        if len(dev) == 0:
            continue
        reports.append(
            (
                (t0, t1),
                DeviationReport(
                    max_dev_db=float(dev.max()),
                    mean_dev_db=float(dev.mean()),
                    n_compared=int(len(dev)),
                    window=window,
                    divergent_runs=curve.divergent_runs,
                ),
            )
        )
    return reports
