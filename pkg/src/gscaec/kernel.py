"""Backend selection and shared precomputation for the adaptation kernels.

The per-sample weight recursion is the hot loop of every Monte Carlo run.
A compiled Cython core is used when available; a pure-NumPy fallback with
identical semantics is selected otherwise (or when GSCAEC_FORCE_PYTHON is
set).  Everything that does not depend on the evolving weights - the
quiescent beamformer output and the blocked projections B^T x_w[n] - is
precomputed here with FFT convolutions and shared by both backends.
"""

import os

import numpy as np
from scipy import signal

from . import _kernel_py

if os.environ.get("GSCAEC_FORCE_PYTHON"):
    _impl = _kernel_py
    BACKEND = "python"
else:
    try:
        from . import _kernel_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernel_py
        BACKEND = "python"

DIVERGENCE_LIMIT = _kernel_py.DIVERGENCE_LIMIT


def backend_name() -> str:
    return BACKEND


class RunData:
    """Per-run precomputed streams consumed by the kernels.

    u_pad: far-end samples left-padded with N_AEC-1 zeros.
    yq[n] = x_w[n]^T q (quiescent beamformer output).
    V[n]  = B^T x_w[n] (blocked beamformer projections).
    """

    __slots__ = ("u_pad", "yq", "V", "n_aec", "n_samples")

    def __init__(self, u_pad, yq, V, n_aec):
        self.u_pad = u_pad
        self.yq = yq
        self.V = V
        self.n_aec = n_aec
        self.n_samples = len(yq)


def _filter_bank_outputs(x, filters):
    """out[n, j] = sum_m sum_i filters[i*M+m, j] * x[n-i, m] for all n."""
    n, M = x.shape
    n_bf = filters.shape[0] // M
    out = np.zeros((n, filters.shape[1]))
    for m in range(M):
        taps = filters[m::M, :]  # (N_BF, n_filters), tap i of mic m
        if not taps.any():
            continue
        full = signal.fftconvolve(x[:, m : m + 1], taps, axes=0)
        out += full[:n]
    return out


def prepare_run(u, x, q, B, n_aec) -> RunData:
    """Precompute the weight-independent streams for one run."""
    u = np.ascontiguousarray(u, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    B = np.asarray(B, dtype=float)
    n = len(u)
    filters = np.column_stack((q, B)) if B.size else q[:, None]
    proj = _filter_bank_outputs(x, filters)
    yq = np.ascontiguousarray(proj[:, 0])
    V = np.ascontiguousarray(proj[:, 1:]) if B.size else np.zeros((n, 0))
    u_pad = np.concatenate((np.zeros(n_aec - 1), u))
    return RunData(u_pad=u_pad, yq=yq, V=V, n_aec=n_aec)


def run_split(data: RunData, psi, mu_aec, mu_bf, n0, n1, d_out) -> int:
    """Advance the split-step recursion over [n0, n1); psi updated in place.

    Returns the first divergent sample index, or -1.
    """
    return _impl.run_split(
        data.u_pad, data.yq, data.V, psi, data.n_aec,
        float(mu_aec), float(mu_bf), int(n0), int(n1), d_out,
    )


def run_general(data: RunData, psi, m_matrix, n0, n1, d_out) -> int:
    """Advance the general step-matrix recursion over [n0, n1)."""
    m_matrix = np.ascontiguousarray(m_matrix, dtype=float)
    return _impl.run_general(
        data.u_pad, data.yq, data.V, psi, data.n_aec,
        m_matrix, int(n0), int(n1), d_out,
    )
