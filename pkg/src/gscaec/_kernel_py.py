"""Pure-NumPy adaptation kernel (fallback when the compiled core is absent).

Both backends implement the same contract (see kernel.py): a sequential
per-sample GSC-LMS recursion over precomputed quiescent outputs and blocked
regressor projections.  `psi` is updated in place and the pre-update
residual d[n] is written to d_out.
"""

import numpy as np

DIVERGENCE_LIMIT = 1e6


def run_split(u_pad, yq, V, psi, n_aec, mu_aec, mu_bf, n0, n1, d_out):
    """Split-step recursion; returns the first divergent sample or -1.

    At sample n, u_pad[n : n + n_aec] holds the AEC delay line oldest-first.
    """
    psi_hc = psi[:n_aec]
    psi_b = psi[n_aec:]
    for n in range(n0, n1):
        u_hc = u_pad[n : n + n_aec][::-1]
        v = V[n]
        d = yq[n] - u_hc @ psi_hc - v @ psi_b
        d_out[n] = d
        if not (abs(d) <= DIVERGENCE_LIMIT):
            return n
        psi_hc += (mu_aec * d) * u_hc
        psi_b += (mu_bf * d) * v
    return -1


def run_general(u_pad, yq, V, psi, n_aec, m_matrix, n0, n1, d_out):
    """General positive-definite step-matrix recursion."""
    n_psi = psi.shape[0]
    g = np.empty(n_psi)
    for n in range(n0, n1):
        g[:n_aec] = u_pad[n : n + n_aec][::-1]
        g[n_aec:] = V[n]
        d = yq[n] - g @ psi
        d_out[n] = d
        if not (abs(d) <= DIVERGENCE_LIMIT):
            return n
        psi += d * (m_matrix @ g)
    return -1
