import wave

import numpy as np
import pytest

from gscaec.signal_model import (
    FarEndModel,
    Interferer,
    NearEndModel,
    analytic_Rbb,
    apply_presteering,
    build_modified_channel_matrix,
    column_block_energy_db,
    far_end_autocorr,
    gen_far_end,
    gen_lem_plant,
    interferer_cov,
    regressor_matrix,
    sample_Rbb,
    stream_regressors,
    synthesize_run,
)

# ---------------------------------------------------------------------------
# LEM plants


def test_plant_single_mic_is_unit_energy_envelope_draw():
    plant = gen_lem_plant(1, 4, 8000.0, 0.01, 1, 0, seed=3)
    assert plant.H.shape == (4, 1)
    assert np.isclose(np.sum(plant.H[:, 0] ** 2), 1.0)


def test_plant_zero_spacing_gives_identical_columns():
    plant = gen_lem_plant(2, 32, 8000.0, 0.004, 4, 0, seed=11)
    assert np.array_equal(plant.H[:, 0], plant.H[:, 1])


@pytest.mark.parametrize("oversample", [4, 5])
def test_plant_columns_spatially_correlated(oversample):
    # verification-scale configuration: correlation strictly inside (0, 1)
    for seed in range(5):
        plant = gen_lem_plant(2, 128, 8000.0, 0.016, oversample, 1, seed=seed)
        h0, h1 = plant.H[:, 0], plant.H[:, 1]
        corr = h0 @ h1 / (np.linalg.norm(h0) * np.linalg.norm(h1))
        assert 0.0 < corr < 1.0


def test_plant_decay_envelope_non_increasing():
    plant = gen_lem_plant(2, 256, 8000.0, 0.016, 4, 1, seed=5)
    energy = column_block_energy_db(plant.H, n_blocks=8)
    # 60 dB decay over the plant; random block fluctuation stays well below
    # the per-block mean decay, tolerance 6 dB
    assert np.all(np.diff(energy, axis=0) < 6.0)
    assert energy[0].min() > energy[-1].max()


def test_plant_deterministic_and_column0_unit_energy():
    a = gen_lem_plant(3, 64, 8000.0, 0.008, 5, 2, seed=123)
    b = gen_lem_plant(3, 64, 8000.0, 0.008, 5, 2, seed=123)
    assert np.array_equal(a.H, b.H)
    assert np.isclose(np.sum(a.H[:, 0] ** 2), 1.0)


def test_plant_offset_carry_is_one_tap_delay():
    # spacing = F means exactly one tap of delay for mic 1
    plant = gen_lem_plant(2, 16, 8000.0, 0.002, 4, 4, seed=9)
    assert plant.H[0, 1] == 0.0
    scale_free = plant.H[1:, 1] / plant.H[:-1, 0]
    assert np.allclose(scale_free, 1.0)


def test_plant_rejections():
    with pytest.raises(ValueError):
        gen_lem_plant(2, 60_000_000, 8000.0, 0.01, 4, 1, seed=0)  # F*N_h overflow
    with pytest.raises(ValueError):
        gen_lem_plant(2, 8, 8000.0, 0.01, 2, 16, seed=0)  # carry >= N_h
    with pytest.raises(ValueError):
        gen_lem_plant(0, 8, 8000.0, 0.01, 1, 0, seed=0)
    with pytest.raises(ValueError):
        gen_lem_plant(1, 8, 8000.0, -1.0, 1, 0, seed=0)


def test_presteering_shifts_columns():
    plant = gen_lem_plant(2, 16, 8000.0, 0.002, 4, 1, seed=10)
    shifted = apply_presteering(plant, [0, 3])
    assert shifted.N_h == 19
    assert np.array_equal(shifted.H[:16, 0], plant.H[:, 0])
    assert np.array_equal(shifted.H[3:19, 1], plant.H[:, 1])
    assert np.all(shifted.H[:3, 1] == 0)


# ---------------------------------------------------------------------------
# Modified channel matrix


def test_calh_explicit_shift_structure():
    calH = build_modified_channel_matrix(np.array([[1.0], [2.0]]), 2)
    assert np.array_equal(calH, np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 2.0]]))


def test_calh_degenerate_window_is_h():
    H = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(build_modified_channel_matrix(H, 1), H)


def test_calh_matches_per_lag_echo_oracle(rng):
    # oracle: e_s[n-k] = H^T u_h[n-k] stacked over k, from the raw history
    N_h, M, N_BF = 5, 2, 3
    H = rng.standard_normal((N_h, M))
    calH = build_modified_channel_matrix(H, N_BF)
    u_hist = rng.standard_normal(N_h + N_BF - 1)  # [u[n], u[n-1], ...]
    direct = np.concatenate([H.T @ u_hist[k : k + N_h] for k in range(N_BF)])
    assert np.allclose(calH.T @ u_hist, direct, atol=1e-12)


# ---------------------------------------------------------------------------
# Far-end models


def test_white_far_end_unit_variance():
    u = gen_far_end(FarEndModel("white", sigma_u2=1.0), 1_000_000, seed=1)
    assert abs(np.var(u) - 1.0) < 0.01


def test_ar1_lag1_autocorrelation():
    u = gen_far_end(FarEndModel("ar1", a1=-0.9), 1_000_000, seed=2)
    r0 = u @ u / len(u)
    r1 = u[1:] @ u[:-1] / (len(u) - 1)
    assert abs(r1 / r0 - 0.9) < 0.02
    assert abs(r0 - 1.0) < 0.02


def test_ar1_negative_pole_scenario_runs():
    u = gen_far_end(FarEndModel("ar1", a1=-0.5), 10_000, seed=3)
    r0 = u @ u / len(u)
    r1 = u[1:] @ u[:-1] / (len(u) - 1)
    assert abs(r1 / r0 - 0.5) < 0.05


def test_far_end_deterministic():
    m = FarEndModel("ar1", a1=-0.9)
    assert np.array_equal(gen_far_end(m, 1000, 7), gen_far_end(m, 1000, 7))


def test_far_end_validation():
    with pytest.raises(ValueError):
        FarEndModel("ar1", a1=1.0)
    with pytest.raises(ValueError):
        FarEndModel("laplacian")
    with pytest.raises(ValueError):
        FarEndModel("file")
    with pytest.raises(ValueError):
        gen_far_end(FarEndModel("white"), 0, seed=0)


def test_wav_far_end_round_trip(tmp_path):
    path = tmp_path / "farend.wav"
    rng = np.random.default_rng(0)
    pcm = (rng.standard_normal(4000) * 3000).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(pcm.tobytes())
    model = FarEndModel("file", source_path=str(path))
    u = gen_far_end(model, 4000, seed=0)
    assert abs(np.mean(u**2) - 1.0) < 1e-12  # normalized over the whole file
    with pytest.raises(ValueError):
        gen_far_end(model, 5000, seed=0)  # longer than the file


def test_wav_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(np.zeros(100, dtype="<i2").tobytes())
    with pytest.raises(ValueError):
        gen_far_end(FarEndModel("file", source_path=str(path)), 10, seed=0)


# ---------------------------------------------------------------------------
# Regressor streaming


def test_stream_silence_gives_zero_regressors():
    plant = gen_lem_plant(2, 6, 8000.0, 0.001, 2, 1, seed=1)
    far = FarEndModel("white", sigma_u2=0.0)
    for n, b in enumerate(stream_regressors(plant, far, NearEndModel(0.0), 4, 2, 50, 5)):
        assert np.all(b == 0.0)
    assert n == 49


def test_stream_impulse_replays_plant_column():
    # impulse far-end, single mic, N_BF=1: x_w part replays h over time
    plant = gen_lem_plant(1, 6, 8000.0, 0.001, 1, 0, seed=2)
    u = np.zeros(10)
    u[0] = 1.0
    x = np.zeros((10, 1))
    x[:6, 0] = plant.H[:, 0]
    bmat = regressor_matrix(u, x, 3, 1)
    for n in range(10):
        h_n = plant.H[n, 0] if n < 6 else 0.0
        assert np.isclose(bmat[n, 3], h_n)


def test_stream_matches_delay_line_oracle(rng):
    # independent oracle: explicit python delay lines
    M, N_h, N_BF, N_AEC, n = 2, 3, 2, 4, 40
    plant = gen_lem_plant(M, N_h, 8000.0, 0.001, 2, 1, seed=3)
    far = FarEndModel("ar1", a1=-0.4)
    near = NearEndModel(noise_var=0.1)
    u, x = synthesize_run(plant, far, near, n, seed=17)
    got = list(stream_regressors(plant, far, near, N_AEC, N_BF, n, seed=17))
    u_line = np.zeros(N_AEC)
    x_line = np.zeros((N_BF, M))
    for i in range(n):
        u_line = np.roll(u_line, 1)
        u_line[0] = u[i]
        x_line = np.roll(x_line, 1, axis=0)
        x_line[0] = x[i]
        b_oracle = np.concatenate((-u_line, x_line.reshape(-1)))
        assert np.allclose(got[i], b_oracle, atol=1e-12)


def test_stream_selection_identity_exact():
    # the u part of b equals (negated) first N_AEC entries of the extended
    # far-end vector, exactly
    plant = gen_lem_plant(2, 5, 8000.0, 0.001, 2, 1, seed=4)
    far = FarEndModel("ar1", a1=-0.7)
    n = 30
    u, _ = synthesize_run(plant, far, NearEndModel(0.0), n, seed=9)
    bs = list(stream_regressors(plant, far, NearEndModel(0.0), 4, 3, n, seed=9))
    for i in range(n):
        u_ext = np.array([u[i - k] if i - k >= 0 else 0.0 for k in range(plant.N_h + 2)])
        assert np.array_equal(-bs[i][:4], u_ext[:4])


def test_stream_rejects_overlong_aec():
    plant = gen_lem_plant(2, 5, 8000.0, 0.001, 2, 1, seed=4)
    with pytest.raises(ValueError):
        next(stream_regressors(plant, FarEndModel("white"), NearEndModel(0.0), 8, 3, 10, 0))


# ---------------------------------------------------------------------------
# Second-order statistics


def test_rbb_trivial_perfectly_correlated_pair():
    calH = build_modified_channel_matrix(np.array([[1.0]]), 1)
    R = analytic_Rbb(FarEndModel("white"), calH, 0.0, 1, 1, 1)
    assert np.allclose(R, [[1.0, -1.0], [-1.0, 1.0]])


def test_rbb_ar1_toeplitz_block():
    calH = build_modified_channel_matrix(np.ones((3, 1)), 2)
    R = analytic_Rbb(FarEndModel("ar1", a1=-0.9), calH, 0.0, 4, 2, 1)
    block = R[:4, :4]
    i, j = np.indices((4, 4))
    assert np.allclose(block, 0.9 ** np.abs(i - j))


def test_rbb_positive_definite_with_noise(rng):
    plant = gen_lem_plant(2, 8, 8000.0, 0.001, 3, 1, seed=6)
    calH = build_modified_channel_matrix(plant.H, 3)
    R = analytic_Rbb(FarEndModel("ar1", a1=-0.9), calH, 1e-2, 6, 3, 2)
    w = np.linalg.eigvalsh(R)
    assert w.min() > 0
    assert np.allclose(R, R.T)


def test_rbb_rejects_file_far_end():
    calH = build_modified_channel_matrix(np.ones((2, 1)), 1)
    with pytest.raises(ValueError):
        far_end_autocorr(FarEndModel("file", source_path="x.wav"), 4)
    with pytest.raises(ValueError):
        analytic_Rbb(FarEndModel("file", source_path="x.wav"), calH, 0.0, 1, 1, 1)


def test_rbb_matches_sample_covariance():
    # entrywise agreement within ~3 standard errors at 10^6 samples
    plant = gen_lem_plant(2, 6, 8000.0, 0.001, 2, 1, seed=8)
    far = FarEndModel("ar1", a1=-0.9)
    near = NearEndModel(noise_var=1e-2)
    n = 1_000_000
    R_hat = sample_Rbb(plant, far, near, 4, 2, n, seed=42)
    R = analytic_Rbb(far, build_modified_channel_matrix(plant.H, 2), near, 4, 2, 2)
    # AR1(-0.9) effective sample count ~ n (1-\rho)/(1+\rho); keep a safe bound
    se = 3.0 * np.abs(R).max() * np.sqrt(2.0 * 19.0 / n)
    assert np.abs(R_hat - R).max() < se


def test_interferer_covariance_positive_pole_finite():
    cov = interferer_cov(Interferer(power=1.0, doa_delay=1, a1=0.6), 2, 3)
    assert np.isfinite(cov).all()
    assert np.isclose(cov[0, 2], -0.6)  # odd lag of a negative-correlation pole


def test_interferer_covariance_delay_structure():
    intf = Interferer(power=2.0, doa_delay=1, a1=-0.5)
    cov = interferer_cov(intf, 2, 2)
    # entry (mic m lag i, mic m' lag j) = power * 0.5^{|i-j+(m-m') delay|}
    assert np.isclose(cov[0, 0], 2.0)
    assert np.isclose(cov[0, 1], 2.0 * 0.5)  # same lag, mic 0 vs 1
    assert np.isclose(cov[0, 2], 2.0 * 0.5)  # lag 0 vs 1, same mic
    assert np.isclose(cov[1, 2], 2.0)  # mic1 lag0 vs mic0 lag1: offsets cancel
    assert np.allclose(cov, cov.T)


def test_rbb_with_interferer_matches_samples():
    plant = gen_lem_plant(2, 5, 8000.0, 0.001, 2, 1, seed=12)
    far = FarEndModel("ar1", a1=-0.5)
    near = NearEndModel(noise_var=0.05, interferer=Interferer(power=0.5, doa_delay=1, a1=-0.7))
    n = 400_000
    u, x = synthesize_run(plant, far, near, n, seed=77, dtalk_windows=((0, n),))
    bm = regressor_matrix(u, x, 3, 2)
    R_hat = bm.T @ bm / n
    R = analytic_Rbb(far, build_modified_channel_matrix(plant.H, 2), near, 3, 2, 2,
                     interferer_active=True)
    assert np.abs(R_hat - R).max() < 0.05


def test_synthesize_nonstat_power_walk_changes_signal():
    plant = gen_lem_plant(1, 4, 8000.0, 0.001, 1, 0, seed=1)
    far = FarEndModel("white")
    u0, _ = synthesize_run(plant, far, NearEndModel(0.0), 500, seed=3)
    u1, _ = synthesize_run(plant, far, NearEndModel(0.0), 500, seed=3, nonstat_eta=0.1)
    assert not np.allclose(u0, u1)
    assert np.isfinite(u1).all()
