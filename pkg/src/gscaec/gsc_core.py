"""Constrained-optimization objects for the joint BF-AEC problem.

Builds the Frost-style constraint set (C, f), its extension to the stacked
AEC+BF weight space, the minimum-norm quiescent vector, the orthonormal
blocking matrix in the block-diagonal extended form, and the optimal
solutions with their minimum output power.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import NumericalError, require_spd, spd_solve

#: numerical tolerance (relative) for the structural identities C^T B = 0 etc.
STRUCT_TOL = 1e-10


@dataclass(frozen=True)
class GscStructure:
    """Constraints, quiescent vectors and blocking matrices (plain + extended)."""

    C: np.ndarray
    f: np.ndarray
    C_ext: np.ndarray
    q: np.ndarray
    q_ext: np.ndarray
    B: np.ndarray
    B_ext: np.ndarray

    @property
    def N_AEC(self) -> int:
        return self.C_ext.shape[0] - self.C.shape[0]

    @property
    def N_psi(self) -> int:
        return self.B_ext.shape[1]

    @property
    def N_f(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class SecondOrderStats:
    """Input covariance, blocked covariance and optimal solutions."""

    R_bb: np.ndarray
    R_bloc: np.ndarray
    a_opt: np.ndarray
    psi_opt: np.ndarray
    J_min: float


def build_constraints(M, N_BF, N_f, f_spec, custom_C=None):
    """Frost broadside tap-sum constraints and the response vector f.

    For each tap l the sum of that tap's weights across microphones is
    forced to [f]_l.  f_spec is 'allpass' (delayless all-pass,
    f = [1, 0, ...]), 'linear_phase' (single 1 at tap floor(N_f/2)), or an
    explicit vector.  A full-rank custom constraint matrix may be supplied
    instead of the built-in tap-sum family.
    """
    if N_f < 1 or N_f > M * N_BF:
        raise ValueError(f"need 1 <= N_f <= M*N_BF, got N_f={N_f}")

    if isinstance(f_spec, str):
        if f_spec in ("allpass", "allpass_delayless"):
            f = np.zeros(N_f)
            f[0] = 1.0
        elif f_spec == "linear_phase":
            f = np.zeros(N_f)
            f[N_f // 2] = 1.0
        else:
            raise ValueError(f"unknown f_spec {f_spec!r}")
    else:
        f = np.asarray(f_spec, dtype=float).reshape(-1)
        if f.shape != (N_f,):
            raise ValueError(f"custom f has length {len(f)}, expected {N_f}")

    if custom_C is not None:
        C = np.asarray(custom_C, dtype=float)
        if C.shape != (M * N_BF, N_f):
            raise ValueError(f"custom C shape {C.shape} != ({M * N_BF}, {N_f})")
        if np.linalg.matrix_rank(C) < N_f:
            raise ValueError("custom C is rank deficient")
        return C, f

    if N_f != N_BF:
        raise ValueError(
            f"built-in tap-sum constraints require N_f == N_BF (got {N_f} != {N_BF}); "
            "pass custom_C for other designs"
        )
    C = np.zeros((M * N_BF, N_f))
    for lag in range(N_f):
        C[lag * M : (lag + 1) * M, lag] = 1.0
    return C, f


def extend_and_quiesce(C, f, N_AEC):
    """Extended constraints [0; C] and the minimum-norm quiescent vector.

    The AEC block of q_ext is exactly zero: the constraints act on the
    beamformer weights only.
    """
    C = np.asarray(C, dtype=float)
    f = np.asarray(f, dtype=float)
    C_ext = np.vstack((np.zeros((N_AEC, C.shape[1])), C))
    gram = C.T @ C
    try:
        coef = linalg.solve(gram, f, assume_a="pos")
    except linalg.LinAlgError:
        raise ValueError("C^T C is singular: constraint matrix is rank deficient")
    q = C @ coef
    q_ext = np.concatenate((np.zeros(N_AEC), q))
    return C_ext, q_ext


def build_blocking(C, N_AEC, mode="orthonormal_nullspace"):
    """Blocking matrices: B spans null(C^T) orthonormally; B_ext is the
    block-diagonal extended form with the -I AEC block.

    Returns (B_ext, B).
    """
    if mode != "orthonormal_nullspace":
        raise ValueError(f"unknown blocking mode {mode!r}")
    C = np.asarray(C, dtype=float)
    n_w, n_f = C.shape
    if np.linalg.matrix_rank(C) < n_f:
        raise ValueError("C is rank deficient; blocking matrix undefined")
    B = linalg.null_space(C.T)  # (n_w, n_w - n_f), orthonormal columns
    n_psi = N_AEC + n_w - n_f
    B_ext = np.zeros((N_AEC + n_w, n_psi))
    B_ext[:N_AEC, :N_AEC] = -np.eye(N_AEC)
    B_ext[N_AEC:, N_AEC:] = B
    return B_ext, B


def build_gsc(M, N_BF, N_f, f_spec, N_AEC, custom_C=None) -> GscStructure:
    """Assemble the full GSC structure and verify its identities."""
    C, f = build_constraints(M, N_BF, N_f, f_spec, custom_C=custom_C)
    C_ext, q_ext = extend_and_quiesce(C, f, N_AEC)
    B_ext, B = build_blocking(C, N_AEC)
    gsc = GscStructure(C=C, f=f, C_ext=C_ext, q=q_ext[N_AEC:], q_ext=q_ext, B=B, B_ext=B_ext)
    _check_structure(gsc)
    return gsc


def _check_structure(gsc: GscStructure):
    if gsc.B.size:
        scale = max(np.abs(gsc.C).max() * max(np.abs(gsc.B).max(), 1.0), 1.0)
        if np.abs(gsc.C.T @ gsc.B).max() > STRUCT_TOL * scale:
            raise NumericalError("C^T B != 0: blocking matrix construction failed")
    resid = gsc.C_ext.T @ gsc.q_ext - gsc.f
    f_scale = max(np.abs(gsc.f).max(), 1.0)
    if np.abs(resid).max() > STRUCT_TOL * f_scale:
        raise NumericalError("C_ext^T q_ext != f: quiescent vector infeasible")


def direct_weights(gsc: GscStructure, psi) -> np.ndarray:
    """Direct-form stacked weights a = q_ext - B_ext psi (always feasible)."""
    return gsc.q_ext - gsc.B_ext @ np.asarray(psi, dtype=float)


def gsc_cost(psi, R_bb, gsc: GscStructure) -> float:
    """Mean output power at a fixed GSC weight vector psi."""
    a = direct_weights(gsc, psi)
    return float(a @ R_bb @ a)


def optimal_solutions(R_bb, gsc: GscStructure) -> SecondOrderStats:
    """Optimal direct/GSC solutions and the minimum output power.

    a_opt solves the linearly constrained minimum-variance problem;
    psi_opt the equivalent unconstrained one.  Their consistency
    (a_opt = q_ext - B_ext psi_opt) and the orthogonality principle
    B_ext^T R_bb a_opt = 0 are verified numerically.
    """
    R_bb = require_spd(R_bb, name="R_bb")
    R_bloc = gsc.B_ext.T @ R_bb @ gsc.B_ext
    R_bloc = 0.5 * (R_bloc + R_bloc.T)

    rinv_c = spd_solve(R_bb, gsc.C_ext, name="R_bb")
    small = gsc.C_ext.T @ rinv_c
    a_opt = rinv_c @ linalg.solve(0.5 * (small + small.T), gsc.f, assume_a="pos")

    psi_opt = spd_solve(R_bloc, gsc.B_ext.T @ (R_bb @ gsc.q_ext), name="R_bloc")

    recon = gsc.q_ext - gsc.B_ext @ psi_opt
    scale = max(np.abs(a_opt).max(), np.abs(gsc.q_ext).max(), 1e-30)
    if np.abs(recon - a_opt).max() > 1e-8 * scale:
        raise NumericalError(
            "direct-form and GSC optima disagree; covariance may be near-singular"
        )
    J_min = float(a_opt @ R_bb @ a_opt)
    return SecondOrderStats(
        R_bb=R_bb, R_bloc=R_bloc, a_opt=a_opt, psi_opt=psi_opt, J_min=J_min
    )
