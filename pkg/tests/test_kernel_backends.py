"""Backend equivalence: the compiled kernel and the NumPy fallback must
produce the same trajectories on identical precomputed streams."""

import numpy as np
import pytest

from gscaec import _kernel_py, kernel
from gscaec.gsc_core import build_gsc
from gscaec.signal_model import (
    FarEndModel,
    NearEndModel,
    gen_lem_plant,
    regressor_matrix,
    synthesize_run,
)

from conftest import rand_spd

try:
    from gscaec import _kernel_cy
except ImportError:
    _kernel_cy = None

needs_cython = pytest.mark.skipif(_kernel_cy is None, reason="compiled kernel missing")


def _world(n=2000, seed=21):
    plant = gen_lem_plant(2, 12, 8000.0, 0.0015, 4, 1, seed=seed)
    gsc = build_gsc(2, 4, 4, "allpass", 10)
    u, x = synthesize_run(plant, FarEndModel("ar1", a1=-0.9), NearEndModel(1e-2), n, seed)
    data = kernel.prepare_run(u, x, gsc.q, gsc.B, gsc.N_AEC)
    return gsc, u, x, data


def test_prepare_run_projections_match_regressors():
    gsc, u, x, data = _world(300)
    bmat = regressor_matrix(u, x, gsc.N_AEC, 4)
    xw = bmat[:, gsc.N_AEC :]
    assert np.allclose(data.yq, xw @ gsc.q, atol=1e-10)
    assert np.allclose(data.V, xw @ gsc.B, atol=1e-10)
    assert np.array_equal(data.u_pad[gsc.N_AEC - 1 :], u)


@needs_cython
def test_split_backends_agree():
    gsc, _, _, data = _world()
    n = data.n_samples
    psi_a = np.zeros(gsc.N_psi)
    psi_b = np.zeros(gsc.N_psi)
    d_a = np.zeros(n)
    d_b = np.zeros(n)
    ra = _kernel_cy.run_split(data.u_pad, data.yq, data.V, psi_a, gsc.N_AEC,
                              3e-3, 2e-3, 0, n, d_a)
    rb = _kernel_py.run_split(data.u_pad, data.yq, data.V, psi_b, gsc.N_AEC,
                              3e-3, 2e-3, 0, n, d_b)
    assert ra == rb == -1
    assert np.allclose(d_a, d_b, atol=1e-10)
    assert np.allclose(psi_a, psi_b, atol=1e-12)


@needs_cython
def test_general_backends_agree(rng):
    gsc, _, _, data = _world()
    n = data.n_samples
    m = np.ascontiguousarray(rand_spd(rng, gsc.N_psi, scale=2e-3))
    psi_a = np.zeros(gsc.N_psi)
    psi_b = np.zeros(gsc.N_psi)
    d_a = np.zeros(n)
    d_b = np.zeros(n)
    ra = _kernel_cy.run_general(data.u_pad, data.yq, data.V, psi_a, gsc.N_AEC, m, 0, n, d_a)
    rb = _kernel_py.run_general(data.u_pad, data.yq, data.V, psi_b, gsc.N_AEC, m, 0, n, d_b)
    assert ra == rb == -1
    assert np.allclose(d_a, d_b, atol=1e-10)
    assert np.allclose(psi_a, psi_b, atol=1e-12)


@needs_cython
def test_divergence_detection_matches():
    gsc, _, _, data = _world(500)
    n = data.n_samples
    psi_a = np.zeros(gsc.N_psi)
    psi_b = np.zeros(gsc.N_psi)
    d_a = np.zeros(n)
    d_b = np.zeros(n)
    ra = _kernel_cy.run_split(data.u_pad, data.yq, data.V, psi_a, gsc.N_AEC,
                              20.0, 20.0, 0, n, d_a)
    rb = _kernel_py.run_split(data.u_pad, data.yq, data.V, psi_b, gsc.N_AEC,
                              20.0, 20.0, 0, n, d_b)
    assert ra == rb >= 0


def test_empty_blocking_columns_supported():
    plant = gen_lem_plant(1, 8, 8000.0, 0.001, 1, 0, seed=4)
    gsc = build_gsc(1, 1, 1, "allpass", 8)
    u, x = synthesize_run(plant, FarEndModel("white"), NearEndModel(0.0), 200, 9)
    data = kernel.prepare_run(u, x, gsc.q, gsc.B, gsc.N_AEC)
    assert data.V.shape == (200, 0)
    psi = np.zeros(gsc.N_psi)
    d = np.zeros(200)
    assert kernel.run_split(data, psi, 1e-2, 0.0, 0, 200, d) == -1
    assert np.isfinite(d).all()


def test_segment_resume_continuity():
    # two half runs with carried psi equal one full run
    gsc, _, _, data = _world(1000)
    psi_full = np.zeros(gsc.N_psi)
    d_full = np.zeros(1000)
    kernel.run_split(data, psi_full, 2e-3, 1e-3, 0, 1000, d_full)
    psi_halves = np.zeros(gsc.N_psi)
    d_halves = np.zeros(1000)
    kernel.run_split(data, psi_halves, 2e-3, 1e-3, 0, 500, d_halves)
    kernel.run_split(data, psi_halves, 2e-3, 1e-3, 500, 1000, d_halves)
    assert np.array_equal(d_full, d_halves)
    assert np.array_equal(psi_full, psi_halves)
