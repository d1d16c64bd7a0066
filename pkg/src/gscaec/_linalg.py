"""Shared dense linear-algebra helpers for SPD matrices.

All covariance-type matrices in this package are symmetric positive
(semi-)definite in exact arithmetic but only approximately so in floating
point; these helpers centralize the regularization and validation policy.
"""

import warnings

import numpy as np
from scipy import linalg


class NumericalError(RuntimeError):
    """Raised when a matrix that must be SPD is not, or is too ill-conditioned."""


#: relative ridge added to an SPD matrix when its Cholesky factorization fails
SPD_RIDGE_REL = 1e-12
#: condition-number estimate above which solves are refused
COND_LIMIT = 1e13
#: relative floor below which eigenvalues are clamped (with a warning)
EIG_CLAMP_REL = 1e-12


def spd_cholesky(a, name="matrix"):
    """Lower Cholesky factor of `a`, retrying with a small relative ridge.

    The ridge starts at SPD_RIDGE_REL * trace/N and is escalated twice by
    100x before giving up.
    """
    a = np.asarray(a, dtype=float)
    ridge = SPD_RIDGE_REL * np.trace(a) / max(a.shape[0], 1)
    if ridge <= 0:
        ridge = SPD_RIDGE_REL
    try:
        return linalg.cholesky(a, lower=True)
    except linalg.LinAlgError:
        pass
    eye = np.eye(a.shape[0])
    for boost in (1.0, 100.0, 10000.0):
        try:
            return linalg.cholesky(a + ridge * boost * eye, lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError(f"{name} is not positive definite (Cholesky failed)")


def spd_solve(a, b, name="matrix"):
    """Solve a @ x = b for SPD `a` with the shared ridge/condition policy."""
    a = np.asarray(a, dtype=float)
    c = spd_cholesky(a, name=name)
    dpe = np.diag(c)
    cond_est = (dpe.max() / dpe.min()) ** 2
    if cond_est > COND_LIMIT:
        raise NumericalError(
            f"{name} too ill-conditioned (estimate {cond_est:.2e}); "
            "regularize the scenario (e.g. nonzero noise variance)"
        )
    return linalg.cho_solve((c, True), np.asarray(b, dtype=float))


def spd_inverse(a, name="matrix"):
    """Symmetrized inverse of an SPD matrix."""
    inv = spd_solve(a, np.eye(a.shape[0]), name=name)
    return 0.5 * (inv + inv.T)


def sym_eig_desc(a, clamp=False, name="matrix"):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    With clamp=True, eigenvalues below EIG_CLAMP_REL * trace/N are raised to
    that floor and a warning is emitted (near-singular input).
    """
    a = np.asarray(a, dtype=float)
    w, v = linalg.eigh(a)
    w, v = w[::-1].copy(), v[:, ::-1].copy()
    if clamp:
        floor = EIG_CLAMP_REL * max(np.trace(a), 0.0) / max(a.shape[0], 1)
        if floor > 0 and w[-1] < floor:
            warnings.warn(
                f"{name}: clamped {int(np.sum(w < floor))} eigenvalue(s) "
                f"below {floor:.3e}",
                stacklevel=2,
            )
            np.clip(w, floor, None, out=w)
    return w, v


def require_spd(a, name="matrix", sym_rtol=1e-10):
    """Validate that `a` is symmetric (relative tol) and positive definite.

    Returns the symmetrized matrix; raises NumericalError otherwise.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericalError(f"{name} must be square, got shape {a.shape}")
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > sym_rtol * scale:
        raise NumericalError(f"{name} is not symmetric")
    a = 0.5 * (a + a.T)
    try:
        linalg.cholesky(a, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite") from None
    return a
