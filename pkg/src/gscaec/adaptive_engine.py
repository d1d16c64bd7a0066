"""Time-domain adaptation: residual, split/general LMS steps, step policies
and the quasi-Newton (whitening) step matrix.

The single-step operations work on explicit stacked regressors and are the
reference semantics; batched runs go through the compiled kernel (see
kernel.py) which implements the identical recursion.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import kernel
from ._linalg import require_spd, spd_inverse
from .gsc_core import GscStructure

DIVERGENCE_LIMIT = kernel.DIVERGENCE_LIMIT


@dataclass
class AdaptiveState:
    """GSC weight vector psi with its AEC/BF split views and sample index."""

    psi: np.ndarray
    n_aec: int
    n: int = 0

    @property
    def psi_hc(self) -> np.ndarray:
        """AEC part of psi; identical to the echo-path estimate h_hat."""
        return self.psi[: self.n_aec]

    @property
    def psi_b(self) -> np.ndarray:
        return self.psi[self.n_aec :]


def initial_state(gsc: GscStructure) -> AdaptiveState:
    return AdaptiveState(psi=np.zeros(gsc.N_psi), n_aec=gsc.N_AEC)


@dataclass(frozen=True)
class PolicySegment:
    """One schedule segment: scalar step pair or a full SPD step matrix."""

    start_n: int
    mu_aec: float = 0.0
    mu_bf: float = 0.0
    m_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.start_n < 0:
            raise ValueError("segment start_n must be >= 0")
        if self.m_matrix is None:
            if self.mu_aec < 0 or self.mu_bf < 0:
                raise ValueError("step sizes must be >= 0")
        else:
            object.__setattr__(
                self, "m_matrix", require_spd(self.m_matrix, name="step matrix")
            )

    @property
    def is_matrix(self) -> bool:
        return self.m_matrix is not None


@dataclass(frozen=True)
class StepPolicy:
    """Ordered schedule of step-size segments; segment 0 must start at n=0."""

    segments: Tuple[PolicySegment, ...] = field(
        default_factory=lambda: (PolicySegment(0, 0.0, 0.0),)
    )

    def __post_init__(self):
        if not self.segments:
            raise ValueError("policy needs at least one segment")
        starts = [s.start_n for s in self.segments]
        if starts[0] != 0:
            raise ValueError("first policy segment must start at n=0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")

    def boundaries(self, n_samples):
        """Segment (start, stop, segment) triples clipped to n_samples."""
        out = []
        for i, seg in enumerate(self.segments):
            stop = self.segments[i + 1].start_n if i + 1 < len(self.segments) else n_samples
            start = seg.start_n
            if start >= n_samples:
                break
            out.append((start, min(stop, n_samples), seg))
        return out


def split_policy(mu_aec, mu_bf) -> StepPolicy:
    return StepPolicy((PolicySegment(0, float(mu_aec), float(mu_bf)),))


def matrix_policy(m_matrix) -> StepPolicy:
    return StepPolicy((PolicySegment(0, m_matrix=m_matrix),))


# ---------------------------------------------------------------------------
# Single-step reference operations


def _blocked_regressor(b, gsc: GscStructure):
    """g = B_ext^T b computed from the block structure: [u_hc; B^T x_w]."""
    n_aec = gsc.N_AEC
    g = np.empty(gsc.N_psi)
    g[:n_aec] = -b[:n_aec]  # the stacked vector carries -u_hc
    g[n_aec:] = gsc.B.T @ b[n_aec:]
    return g


def residual(b, psi, gsc: GscStructure) -> float:
    """Pre-update residual d = b^T (q_ext - B_ext psi)."""
    b = np.asarray(b, dtype=float)
    return float(b[gsc.N_AEC :] @ gsc.q - _blocked_regressor(b, gsc) @ psi)


def step_split(state: AdaptiveState, b, mu_aec, mu_bf, gsc: GscStructure):
    """One split-LMS step; returns (d, new state).

    Realizes the diagonal step-size matrix update
    psi <- psi + M B_ext^T b d, i.e. psi_hc += mu_AEC u_hc d and
    psi_b += mu_BF B^T x_w d.
    """
    b = np.asarray(b, dtype=float)
    g = _blocked_regressor(b, gsc)
    d = float(b[gsc.N_AEC :] @ gsc.q - g @ state.psi)
    gd = g * d
    psi = state.psi.copy()
    psi[: state.n_aec] += mu_aec * gd[: state.n_aec]
    psi[state.n_aec :] += mu_bf * gd[state.n_aec :]
    return d, AdaptiveState(psi=psi, n_aec=state.n_aec, n=state.n + 1)


def step_general(state: AdaptiveState, b, m_matrix, gsc: GscStructure):
    """One general-matrix step psi <- psi + M B_ext^T b d; returns (d, state')."""
    b = np.asarray(b, dtype=float)
    g = _blocked_regressor(b, gsc)
    d = float(b[gsc.N_AEC :] @ gsc.q - g @ state.psi)
    psi = state.psi + m_matrix @ (g * d)
    return d, AdaptiveState(psi=psi, n_aec=state.n_aec, n=state.n + 1)


# ---------------------------------------------------------------------------
# Quasi-Newton (whitening) step matrix


def quasi_newton_matrix(R_bloc, target) -> np.ndarray:
    """Step matrix lam * R_bloc^-1 equalizing all transformed eigenvalues.

    `target` is either the eigenvalue lam directly, or a tuple
    (Jex_inf, J_inf, N_psi) from which lam = (2/N_psi) * Jex_inf / J_inf.
    Keeping lam below 2/(3*N_psi) keeps the trace stability bound satisfied.
    """
    if isinstance(target, tuple):
        jex_inf, j_inf, n_psi = target
        if j_inf <= 0 or n_psi < 1:
            raise ValueError("need J_inf > 0 and N_psi >= 1")
        lam = (2.0 / n_psi) * (jex_inf / j_inf)
    else:
        lam = float(target)
    if lam <= 0:
        raise ValueError("whitening eigenvalue must be positive")
    return lam * spd_inverse(R_bloc, name="R_bloc")


# ---------------------------------------------------------------------------
# Batched runs (kernel-backed)


def run_policy(u, x, gsc: GscStructure, policy: StepPolicy, psi0=None):
    """Run the adaptation over a whole signal timeline.

    Returns (d, psi, diverged_at): residual sequence, final weights and the
    sample where |d| exceeded the divergence envelope (-1 if none; samples
    after it are left at zero).
    """
    n_samples = len(u)
    data = kernel.prepare_run(u, x, gsc.q, gsc.B, gsc.N_AEC)
    psi = np.zeros(gsc.N_psi) if psi0 is None else np.array(psi0, dtype=float)
    d = np.zeros(n_samples)
    for start, stop, seg in policy.boundaries(n_samples):
        if seg.is_matrix:
            div = kernel.run_general(data, psi, seg.m_matrix, start, stop, d)
        else:
            div = kernel.run_split(data, psi, seg.mu_aec, seg.mu_bf, start, stop, d)
        if div >= 0:
            d[div + 1 :] = 0.0
            return d, psi, div
    return d, psi, -1
