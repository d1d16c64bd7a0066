"""Closed-form statistical model of the GSC-form BF-AEC adaptation.

Under the stationary Gaussian assumptions, the blocked weight-error second
moment obeys a matrix recursion whose contragradient transform (Cholesky
factor L of the step matrix, then the eigenbasis Q of R_mod = L^T R_bloc L)
decouples the mean and reduces the output-power dynamics to the vector
recursion nu[n+1] = Phi nu[n] + J_min * lambda with
Phi = diag(rho) + lambda lambda^T, rho_k = (1 - lambda_k)^2 + lambda_k^2.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from ._linalg import NumericalError, require_spd, spd_cholesky, sym_eig_desc


def to_db(power):
    """10*log10 with -inf for zero power."""
    power = np.asarray(power, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(power)


@dataclass(frozen=True)
class ModelSetup:
    """Transformed second-order quantities driving the closed-form model."""

    R_bloc: np.ndarray
    M_step: np.ndarray
    J_min: float
    L: np.ndarray        # M_step = L L^T, lower triangular
    R_mod: np.ndarray    # L^T R_bloc L
    Q: np.ndarray        # R_mod = Q diag(lam) Q^T
    lam: np.ndarray      # eigenvalues of R_mod, descending

    @property
    def N_psi(self) -> int:
        return len(self.lam)

    @property
    def rho(self) -> np.ndarray:
        return (1.0 - self.lam) ** 2 + self.lam**2

    @property
    def Phi(self) -> np.ndarray:
        return np.diag(self.rho) + np.outer(self.lam, self.lam)

    def to_eigspace(self, v):
        """Coordinates Q^T L^-1 v of a psi-space vector."""
        return self.Q.T @ linalg.solve_triangular(self.L, v, lower=True)

    def from_eigspace(self, v):
        """Back-transform L Q v to psi-space."""
        return self.L @ (self.Q @ v)


def setup_model(R_bloc, M_step, J_min) -> ModelSetup:
    """Contragradient diagonalization of (step matrix, blocked covariance)."""
    R_bloc = require_spd(R_bloc, name="R_bloc")
    M_step = require_spd(M_step, name="step matrix")
    if R_bloc.shape != M_step.shape:
        raise ValueError("R_bloc and step matrix dimensions differ")
    if J_min < 0:
        raise ValueError("J_min must be >= 0")
    L = spd_cholesky(M_step, name="step matrix")
    R_mod = L.T @ R_bloc @ L
    R_mod = 0.5 * (R_mod + R_mod.T)
    lam, Q = sym_eig_desc(R_mod, clamp=True, name="R_mod")
    return ModelSetup(
        R_bloc=R_bloc, M_step=M_step, J_min=float(J_min),
        L=L, R_mod=R_mod, Q=Q, lam=lam,
    )


def nu0_from_psi_opt(setup: ModelSetup, psi_opt) -> np.ndarray:
    """Initial nu for deterministic zero initial weights (theta[0] = -psi_opt)."""
    t = setup.to_eigspace(np.asarray(psi_opt, dtype=float))
    return t * t


def nu0_from_moment(setup: ModelSetup, R_theta) -> np.ndarray:
    """Initial nu from a full second-moment matrix E{theta theta^T}."""
    Linv_R = linalg.solve_triangular(setup.L, np.asarray(R_theta, dtype=float), lower=True)
    Rt = linalg.solve_triangular(setup.L, Linv_R.T, lower=True)
    return np.clip(np.einsum("ij,ij->j", setup.Q, Rt @ setup.Q), 0.0, None)


@dataclass
class ModelTrajectory:
    """nu[n] history with the mean-output-power curve it implies."""

    nu: np.ndarray  # (n_max + 1, N_psi)
    J: np.ndarray   # (n_max + 1,)

    @property
    def J_dB(self) -> np.ndarray:
        return to_db(self.J)


def mean_weight_curve(setup: ModelSetup, theta0, n_max) -> np.ndarray:
    """Mean weight-error trajectory E{theta[n]}, n = 0..n_max, psi-coords.

    The transformed mean contracts componentwise by (1 - lambda_i) each step.
    """
    t0 = setup.to_eigspace(np.asarray(theta0, dtype=float))
    decay = (1.0 - setup.lam)[None, :] ** np.arange(n_max + 1)[:, None]
    return (decay * t0[None, :]) @ setup.Q.T @ setup.L.T


def nu_curve(setup: ModelSetup, nu0, n_max) -> ModelTrajectory:
    """Iterate nu[n+1] = Phi nu[n] + J_min lambda, keeping the history."""
    nu0 = np.asarray(nu0, dtype=float)
    if np.any(nu0 < 0):
        raise ValueError("nu0 must be elementwise >= 0")
    lam, rho, jmin = setup.lam, setup.rho, setup.J_min
    nu = np.empty((n_max + 1, setup.N_psi))
    J = np.empty(n_max + 1)
    v = nu0.copy()
    for n in range(n_max + 1):
        nu[n] = v
        s = lam @ v
        J[n] = jmin + s
        v = rho * v + lam * (s + jmin)
    return ModelTrajectory(nu=nu, J=J)


def mop_curve(setup: ModelSetup, nu) -> np.ndarray:
    """J[n] = J_min + lambda^T nu[n] for a stored nu history."""
    return setup.J_min + np.asarray(nu, dtype=float) @ setup.lam


def mop_recursion(setup: ModelSetup, nu0, n_max, mean0=None):
    """Streaming form of nu_curve: J[0..n_max-1] without storing nu.

    Returns (J, nu_end, mean_end); mean_end is the transformed mean after
    n_max steps when mean0 (eigenspace coords) is given, else None.
    """
    lam, rho, jmin = setup.lam, setup.rho, setup.J_min
    v = np.array(nu0, dtype=float)
    J = np.empty(n_max)
    for n in range(n_max):
        s = lam @ v
        J[n] = jmin + s
        v = rho * v + lam * (s + jmin)
    mean_end = None
    if mean0 is not None:
        with np.errstate(under="ignore"):
            mean_end = np.asarray(mean0, dtype=float) * (1.0 - lam) ** n_max
    return J, v, mean_end


def nu_closed_form(setup: ModelSetup, nu0, n) -> np.ndarray:
    """Closed form nu[n] = Phi^n nu0 + J_min sum_{j<n} Phi^j lambda.

    Evaluated through the eigendecomposition of Phi (independent of the
    iterated recursion); the geometric sum is computed stably via expm1.
    """
    w, U = linalg.eigh(setup.Phi)
    t0 = U.T @ np.asarray(nu0, dtype=float)
    tl = U.T @ setup.lam
    wn = w**n
    geo = np.empty_like(w)
    near_one = np.abs(w - 1.0) < 1e-12
    geo[near_one] = float(n)
    wp = w[~near_one]
    with np.errstate(invalid="ignore"):
        logw = np.log(np.abs(wp))
    geo[~near_one] = np.where(
        wp > 0,
        -np.expm1(n * logw) / (-np.expm1(logw)),
        (1.0 - wp**n) / (1.0 - wp),
    )
    return U @ (wn * t0 + setup.J_min * geo * tl)


def full_matrix_recursion(R_bloc, M_step, J_min, R_theta0, n_max) -> np.ndarray:
    """J[0..n_max] from the untransformed N_psi x N_psi moment recursion.

    Keeps the complete second-moment matrix; used as the exactness oracle
    for the eigenspace recursion and valid for any PSD step matrix
    (including frozen, all-zero steps).
    """
    R_bloc = np.asarray(R_bloc, dtype=float)
    M_step = np.asarray(M_step, dtype=float)
    R = np.array(R_theta0, dtype=float)
    if R.shape != R_bloc.shape or M_step.shape != R_bloc.shape:
        raise ValueError("dimension mismatch")
    A = M_step @ R_bloc
    MRM = A @ M_step
    J = np.empty(n_max + 1)
    for n in range(n_max + 1):
        tr = float(np.sum(R_bloc * R))  # tr(R_bloc R_theta)
        J[n] = J_min + tr
        AR = A @ R
        R = R - AR - AR.T + (J_min + tr) * MRM + 2.0 * (AR @ A.T)
        R = 0.5 * (R + R.T)
    return J


# ---------------------------------------------------------------------------
# Stability


@dataclass(frozen=True)
class StabilityReport:
    """Spectral verdict plus the three sufficient bounds with margins."""

    phi_eig_max: float
    eig_stable: bool
    lam_max: float
    trace: float
    cond_eig_value: float   # 2*max(lam) + tr(R_mod), bound 2
    cond_eig_ok: bool
    cond_eig_marginal: bool
    cond_trace_ok: bool     # tr(R_mod) < 2/3
    cond_trace_marginal: bool
    split_value: Optional[float] = None  # mu_AEC tr(R_u) + mu_BF tr(B^T R_xx B)
    cond_split_ok: Optional[bool] = None

    def lines(self):
        out = [
            f"eig:    max|eig(Phi)| = {self.phi_eig_max:.6g} "
            f"-> {'stable' if self.eig_stable else 'UNSTABLE'}",
            f"bound1: 2*max(lam) + tr = {self.cond_eig_value:.6g} < 2 "
            f"-> {'ok' if self.cond_eig_ok else 'violated'}"
            + (" (marginal)" if self.cond_eig_marginal else ""),
            f"trace:  tr = {self.trace:.6g} < {2 / 3:.4f} "
            f"-> {'ok' if self.cond_trace_ok else 'violated'}"
            + (" (marginal)" if self.cond_trace_marginal else ""),
        ]
        if self.split_value is not None:
            out.append(
                f"split:  mu_AEC*tr(R_u) + mu_BF*tr(BtRxxB) = {self.split_value:.6g} "
                f"< {2 / 3:.4f} -> {'ok' if self.cond_split_ok else 'violated'}"
            )
        return out


_MARGINAL_RTOL = 1e-12


def stability_report(setup: ModelSetup, split_terms=None) -> StabilityReport:
    """Evaluate the strict spectral verdict and the sufficient bounds.

    split_terms, when given, is the pair
    (mu_AEC * tr(R_u_hc), mu_BF * tr(B^T R_xx B)) for the diagonal-policy
    form of the trace bound.
    """
    lam = setup.lam
    phi_eigs = linalg.eigvalsh(setup.Phi)
    phi_max = float(np.abs(phi_eigs).max())
    lam_max = float(lam.max())
    tr = float(lam.sum())
    cond_eig = 2.0 * lam_max + tr
    split_value = None
    split_ok = None
    if split_terms is not None:
        split_value = float(split_terms[0] + split_terms[1])
        split_ok = split_value < 2.0 / 3.0
    return StabilityReport(
        phi_eig_max=phi_max,
        eig_stable=phi_max < 1.0,
        lam_max=lam_max,
        trace=tr,
        cond_eig_value=cond_eig,
        cond_eig_ok=cond_eig < 2.0,
        cond_eig_marginal=abs(cond_eig - 2.0) <= _MARGINAL_RTOL * 2.0,
        cond_trace_ok=tr < 2.0 / 3.0,
        cond_trace_marginal=abs(tr - 2.0 / 3.0) <= _MARGINAL_RTOL * (2.0 / 3.0),
        split_value=split_value,
        cond_split_ok=split_ok,
    )


# ---------------------------------------------------------------------------
# Steady state


def steady_state_nu(setup: ModelSetup) -> np.ndarray:
    """Fixed point of the nu recursion: (I - Phi) nu = J_min lambda."""
    try:
        nu = linalg.solve(np.eye(setup.N_psi) - setup.Phi, setup.J_min * setup.lam)
    except linalg.LinAlgError:
        raise NumericalError("nu recursion has no fixed point (I - Phi singular)")
    return nu


def steady_state_jex(setup: ModelSetup, variant="exact", split_terms=None) -> float:
    """Steady-state excess output power J_ex[infinity].

    variant: 'exact' uses sum lam_i/(1-lam_i); 'trace_approx' replaces it by
    tr(R_mod); 'block' uses the split trace decomposition (needs
    split_terms); 'simplified' additionally linearizes the denominator.
    """
    jmin = setup.J_min
    if variant == "exact":
        lam = setup.lam
        if np.any(lam >= 1.0):
            raise NumericalError("exact steady state undefined: some lambda >= 1")
        s = float(np.sum(lam / (1.0 - lam)))
        denom = 1.0 - 0.5 * s
        if denom <= 0:
            raise NumericalError(
                "exact steady state undefined: 1 - sum/2 <= 0 (unstable regime)"
            )
        return jmin * 0.5 * s / denom
    if variant == "trace_approx":
        t = float(setup.lam.sum())
    elif variant in ("block", "simplified"):
        if split_terms is None:
            t = float(setup.lam.sum())
        else:
            t = float(split_terms[0] + split_terms[1])
    else:
        raise ValueError(f"unknown steady-state variant {variant!r}")
    if variant == "simplified":
        return jmin * 0.5 * t
    if t >= 2.0:
        raise NumericalError("steady state undefined: trace >= 2")
    return jmin * t / (2.0 - t)
