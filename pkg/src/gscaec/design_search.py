"""Parameter design search over (M, N_AEC, step sizes).

For each array size and AEC length, steady-state output power is evaluated
over a grid of step-matrix trace budgets; configurations that cannot reach
the steady-state target are discarded, the remaining ones sweep the AEC
share of the trace budget and are kept only if the transient target at the
evaluation instant is met.
Per (M, N_AEC) the surviving combination with the lowest steady-state power
wins; the final ranking is by steady-state power, then compute cost.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._linalg import sym_eig_desc
from .analytic_model import to_db
from .gsc_core import build_gsc, optimal_solutions
from .harness import PlantConfig
from .signal_model import FarEndModel, analytic_Rbb, build_modified_channel_matrix


def default_trace_budgets(points=20) -> Tuple[float, ...]:
    """Log-spaced step-matrix trace budgets between 2/300 and 2/3."""
    return tuple(np.geomspace(2.0 / 300.0, 2.0 / 3.0, points))


def default_aec_shares(step=0.02) -> Tuple[float, ...]:
    """AEC fraction of the trace budget: 0.01, 0.03, ... 0.99."""
    return tuple(np.arange(0.01, 0.999, step))


@dataclass(frozen=True)
class DesignSpec:
    """Targets, sweep grids and the fixed scenario for the search."""

    target_jinf_db: float
    at_n: int
    target_at_db: float
    m_values: Tuple[int, ...]
    n_aec_values: Tuple[int, ...]
    plant: PlantConfig
    far_end: FarEndModel
    noise_var: float
    n_bf: int
    n_f: int
    f_spec: str = "allpass"
    budgets: Tuple[float, ...] = field(default_factory=default_trace_budgets)
    aec_shares: Tuple[float, ...] = field(default_factory=default_aec_shares)

    def __post_init__(self):
        if self.at_n < 1:
            raise ValueError("at_n must be >= 1")
        if not self.m_values or not self.n_aec_values:
            raise ValueError("sweep grids must be non-empty")
        if not self.budgets or not self.aec_shares:
            raise ValueError("budget/share grids must be non-empty")


@dataclass(frozen=True)
class DesignPoint:
    m: int
    n_aec: int
    mu_aec: float
    mu_bf: float
    trace_budget: float
    j_inf_db: float
    j_at_db: float


@dataclass(frozen=True)
class DesignOutcome:
    """Ranked feasible points, or an explicit infeasibility report."""

    points: Tuple[DesignPoint, ...]
    message: str

    @property
    def infeasible(self) -> bool:
        return not self.points


def _iterate_j_at(lam, rho, j_min, nu0, at_n) -> float:
    """J at sample at_n from the streaming eigenspace recursion."""
    v = nu0.copy()
    for _ in range(at_n):
        s = lam @ v
        v = rho * v + lam * (s + j_min)
    return j_min + float(lam @ v)


def _evaluate_cell(spec: DesignSpec, m: int, n_aec: int) -> Optional[DesignPoint]:
    """Best feasible (mu_AEC, mu_BF) for one (M, N_AEC) grid cell, or None."""
    plant = PlantConfig(
        M=m, N_h=spec.plant.N_h, fs=spec.plant.fs, T_R60=spec.plant.T_R60,
        F=spec.plant.F, mic_spacing=spec.plant.mic_spacing, seed=spec.plant.seed,
    ).build()
    if n_aec > plant.N_h + spec.n_bf - 1:
        return None
    calH = build_modified_channel_matrix(plant.H, spec.n_bf)
    gsc = build_gsc(m, spec.n_bf, spec.n_f, spec.f_spec, n_aec)
    R_bb = analytic_Rbb(spec.far_end, calH, spec.noise_var, n_aec, spec.n_bf, m)
    stats = optimal_solutions(R_bb, gsc)
    j_min = stats.J_min
    tr_u = float(np.trace(stats.R_bloc[:n_aec, :n_aec]))
    tr_b = float(np.trace(stats.R_bloc[n_aec:, n_aec:]))
    n_psi = gsc.N_psi

    # Per-share eigendecompositions are budget-independent up to scale:
    # with D = diag(sqrt(ratio) I_aec, I_b), R_mod = mu_BF * D R_bloc D.
    share_cache = {}

    def share_eig(share):
        if share not in share_cache:
            ratio = (share * tr_b) / ((1.0 - share) * tr_u)
            dvec = np.ones(n_psi)
            dvec[:n_aec] = np.sqrt(ratio)
            lam1, q1 = sym_eig_desc(dvec[:, None] * stats.R_bloc * dvec[None, :])
            nu1 = (q1.T @ (stats.psi_opt / dvec)) ** 2
            share_cache[share] = (lam1, nu1)
        return share_cache[share]

    # budgets ascending => J_inf ascending; first budget with a feasible
    # share is the per-cell winner (lowest steady-state power)
    for budget in sorted(spec.budgets):
        if budget >= 2.0:
            continue
        j_inf = j_min + j_min * budget / (2.0 - budget)
        if to_db(j_inf) > spec.target_jinf_db:
            continue
        best = None
        for share in spec.aec_shares:
            if not 0.0 < share < 1.0:
                continue
            mu_aec = share * budget / tr_u
            mu_bf = (1.0 - share) * budget / tr_b
            lam1, nu1 = share_eig(share)
            lam = mu_bf * lam1
            # strict sufficient stability: bound (b) and the trace bound (c)
            tr = float(lam.sum())
            if not (2.0 * lam.max() + tr < 2.0 and tr < 2.0 / 3.0):
                continue
            rho = (1.0 - lam) ** 2 + lam**2
            j_at = _iterate_j_at(lam, rho, j_min, nu1 / mu_bf, spec.at_n)
            if to_db(j_at) <= spec.target_at_db:
                if best is None or j_at < best[0]:
                    best = (j_at, mu_aec, mu_bf)
        if best is not None:
            j_at, mu_aec, mu_bf = best
            return DesignPoint(
                m=m, n_aec=n_aec, mu_aec=mu_aec, mu_bf=mu_bf,
                trace_budget=budget,
                j_inf_db=float(to_db(j_inf)), j_at_db=float(to_db(j_at)),
            )
    return None


def _verify_point(spec: DesignSpec, point: DesignPoint) -> bool:
    """Independent post-hoc check of a returned configuration."""
    plant = PlantConfig(
        M=point.m, N_h=spec.plant.N_h, fs=spec.plant.fs, T_R60=spec.plant.T_R60,
        F=spec.plant.F, mic_spacing=spec.plant.mic_spacing, seed=spec.plant.seed,
    ).build()
    calH = build_modified_channel_matrix(plant.H, spec.n_bf)
    gsc = build_gsc(point.m, spec.n_bf, spec.n_f, spec.f_spec, point.n_aec)
    R_bb = analytic_Rbb(spec.far_end, calH, spec.noise_var, point.n_aec, spec.n_bf, point.m)
    stats = optimal_solutions(R_bb, gsc)
    mu = np.full(gsc.N_psi, point.mu_bf)
    mu[: point.n_aec] = point.mu_aec
    r_mod = np.sqrt(mu)[:, None] * stats.R_bloc * np.sqrt(mu)[None, :]
    lam, q = sym_eig_desc(r_mod)
    tr = float(lam.sum())
    if not (2.0 * lam.max() + tr < 2.0 and tr < 2.0 / 3.0):
        return False
    j_inf = stats.J_min * (1.0 + tr / (2.0 - tr))
    if to_db(j_inf) > spec.target_jinf_db + 1e-9:
        return False
    nu0 = (q.T @ (stats.psi_opt / np.sqrt(mu))) ** 2
    rho = (1.0 - lam) ** 2 + lam**2
    j_at = _iterate_j_at(lam, rho, stats.J_min, nu0, spec.at_n)
    return to_db(j_at) <= spec.target_at_db + 1e-9


def search(spec: DesignSpec, threads=1) -> DesignOutcome:
    """Sweep the design grid and rank the feasible configurations.

    Ranking: lowest steady-state power first, compute cost M*N_AEC as the
    tie-break.  An empty feasible set yields an explicit infeasibility
    report (outcome.infeasible).
    """
    cells = [(m, n_aec) for m in spec.m_values for n_aec in spec.n_aec_values]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_search_worker, [(spec, c) for c in cells]))
    else:
        results = [_evaluate_cell(spec, m, n) for m, n in cells]
    points = [p for p in results if p is not None and _verify_point(spec, p)]
    points.sort(key=lambda p: (p.j_inf_db, p.m * p.n_aec, p.m, p.n_aec))
    if not points:
        return DesignOutcome(
            points=(),
            message=(
                f"infeasible: no (M, N_AEC, mu_AEC, mu_BF) combination reaches "
                f"J_inf <= {spec.target_jinf_db:g} dB and "
                f"J[{spec.at_n}] <= {spec.target_at_db:g} dB"
            ),
        )
    return DesignOutcome(
        points=tuple(points),
        message=f"{len(points)} feasible configuration(s)",
    )


def _search_worker(args):
    spec, (m, n_aec) = args
    return _evaluate_cell(spec, m, n_aec)
