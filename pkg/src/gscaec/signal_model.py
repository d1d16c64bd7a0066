"""Synthetic LEM plants, far-end/near-end signals and second-order statistics.

Conventions used across the package:

* ``u_vec[n] = [u[n], u[n-1], ..., u[n-(K-1)]]`` for any tap count K
  (most-recent-first delay lines, silence before n=0).
* the beamformer regressor ``x_w[n]`` is snapshot-major: entry ``i*M + m``
  is microphone m at lag i.
* the stacked regressor is ``b[n] = [-u_hc[n]; x_w[n]]`` with the AEC part
  first (dimension N_AEC + M*N_BF).
"""

import wave
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, signal

#: guard against absurd oversampled prototype sizes
_MAX_PROTO_LEN = 100_000_000


# ---------------------------------------------------------------------------
# LEM plants


@dataclass(frozen=True)
class LemPlant:
    """Bank of M loudspeaker-enclosure-microphone impulse responses.

    H has one column per microphone (shape (N_h, M)); all columns are cut
    from one oversampled prototype so they share the exponential decay
    envelope and are spatially correlated for small microphone offsets.
    """

    H: np.ndarray
    fs: float
    T_R60: float
    F: int

    @property
    def N_h(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]


def gen_lem_plant(M, N_h, fs, T_R60, F, mic_spacing_samples, seed) -> LemPlant:
    """Generate spatially correlated exponentially decaying echo responses.

    A white Gaussian prototype of length F*N_h is shaped by the envelope
    exp(-3*ln(10)*j/(F*fs*T_R60)) (60 dB energy decay over T_R60 seconds) and
    decimated by F with a width-F boxcar window.  Microphone m reads the
    prototype at offset m*mic_spacing_samples oversampled ticks; offsets are
    taken modulo F and every full F of offset becomes a one-tap delay.
    """
    if M < 1 or N_h < 1:
        raise ValueError("M and N_h must be >= 1")
    if T_R60 <= 0:
        raise ValueError("T_R60 must be positive")
    if F < 1 or int(F) != F:
        raise ValueError("F must be a positive integer")
    F = int(F)
    if F * N_h > _MAX_PROTO_LEN:
        raise ValueError(f"oversampled prototype length F*N_h={F * N_h} too large")
    if mic_spacing_samples < 0:
        raise ValueError("mic_spacing_samples must be >= 0")

    rng = np.random.default_rng(seed)
    n_proto = F * N_h
    ticks = np.arange(n_proto)
    envelope = np.exp(-3.0 * np.log(10.0) * ticks / (F * fs * T_R60))
    proto = rng.standard_normal(n_proto) * envelope

    # width-F moving sum (zero-padded tail), for anti-aliased decimation
    cs = np.concatenate(([0.0], np.cumsum(proto)))
    idx = np.arange(n_proto)
    upper = np.minimum(idx + F, n_proto)
    moving = (cs[upper] - cs[idx]) / np.sqrt(F)

    H = np.zeros((N_h, M))
    for m in range(M):
        carry, rem = divmod(m * int(mic_spacing_samples), F)
        if carry >= N_h:
            raise ValueError(
                f"mic {m}: offset carry {carry} taps >= N_h={N_h} (zero column)"
            )
        k = np.arange(carry, N_h)
        H[k, m] = moving[(k - carry) * F + rem]

    norm = np.linalg.norm(H[:, 0])
    if norm == 0:
        raise ValueError("degenerate plant: first column has zero energy")
    H /= norm
    return LemPlant(H=H, fs=float(fs), T_R60=float(T_R60), F=F)


def apply_presteering(plant: LemPlant, delays) -> LemPlant:
    """Delay microphone streams by integer samples (Frost presteering).

    Equivalent to delaying each plant column; the near-end white noise is
    shift-invariant so the returned plant can be used everywhere downstream.
    """
    delays = np.asarray(delays, dtype=int)
    if delays.shape != (plant.M,):
        raise ValueError(f"need one delay per microphone, got shape {delays.shape}")
    if np.any(delays < 0):
        raise ValueError("presteering delays must be >= 0")
    if not delays.any():
        return plant
    n_new = plant.N_h + int(delays.max())
    H = np.zeros((n_new, plant.M))
    for m, d in enumerate(delays):
        H[d : d + plant.N_h, m] = plant.H[:, m]
    return LemPlant(H=H, fs=plant.fs, T_R60=plant.T_R60, F=plant.F)


def column_block_energy_db(H, n_blocks=8):
    """Per-column energy of consecutive tap blocks, in dB (decay diagnostics)."""
    H = np.asarray(H, dtype=float)
    edges = np.linspace(0, H.shape[0], n_blocks + 1).astype(int)
    e = np.array(
        [np.sum(H[edges[i] : edges[i + 1]] ** 2, axis=0) for i in range(n_blocks)]
    )
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(e)


def build_modified_channel_matrix(H, N_BF) -> np.ndarray:
    """Block-Toeplitz channel matrix mapping the extended far-end vector to
    stacked echo snapshots.

    Column block l (l = 0..N_BF-1) is H shifted down by l rows; shape is
    (N_h + N_BF - 1, M*N_BF) and the column ordering matches the
    snapshot-major x_w layout, so that stacked echoes equal calH.T @ u_vec.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("H must be 2-D (N_h, M)")
    if N_BF < 1:
        raise ValueError("N_BF must be >= 1")
    n_h, m = H.shape
    calH = np.zeros((n_h + N_BF - 1, m * N_BF))
    for lag in range(N_BF):
        calH[lag : lag + n_h, lag * m : (lag + 1) * m] = H
    return calH


# ---------------------------------------------------------------------------
# Signal models


@dataclass(frozen=True)
class FarEndModel:
    """Far-end (loudspeaker) signal model: AR1, white, or a PCM16 WAV file."""

    kind: str = "ar1"
    a1: float = 0.0
    sigma_u2: float = 1.0
    source_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("ar1", "white", "file"):
            raise ValueError(f"unknown far-end kind {self.kind!r}")
        if self.kind == "ar1" and not abs(self.a1) < 1:
            raise ValueError("AR1 pole must satisfy |a1| < 1")
        if self.sigma_u2 < 0:
            raise ValueError("sigma_u2 must be >= 0")
        if self.kind == "file" and not self.source_path:
            raise ValueError("file far-end needs source_path")


@dataclass(frozen=True)
class Interferer:
    """Near-end point interferer: AR1 of given power, integer per-mic delay."""

    power: float = 1.0
    doa_delay: int = 0
    a1: float = 0.0

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("interferer power must be >= 0")
        if not abs(self.a1) < 1:
            raise ValueError("interferer AR1 pole must satisfy |a1| < 1")


@dataclass(frozen=True)
class NearEndModel:
    """Per-microphone white noise plus an optional double-talk interferer."""

    noise_var: float = 0.0
    interferer: Optional[Interferer] = None

    def __post_init__(self):
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")


def _gen_ar1(rng, n_samples, a1, variance):
    """Stationary-from-sample-0 AR1 stream: u[n] = -a1*u[n-1] + z[n]."""
    sigma_u = np.sqrt(variance)
    u_prev = rng.standard_normal() * sigma_u
    z = rng.standard_normal(n_samples) * np.sqrt(variance * (1.0 - a1 * a1))
    out, _ = signal.lfilter([1.0], [1.0, a1], z, zi=[-a1 * u_prev])
    return out


def read_wav_mono_pcm16(path) -> np.ndarray:
    """Read a mono 16-bit PCM WAV file and normalize it to unit power."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise ValueError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            if wf.getcomptype() != "NONE":
                raise ValueError(f"{path}: compressed WAV not supported")
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise ValueError(f"cannot read WAV file {path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(float)
    rms = np.sqrt(np.mean(samples**2))
    if rms == 0:
        raise ValueError(f"{path}: file is all-zero")
    return samples / rms


def gen_far_end(model: FarEndModel, n_samples, seed) -> np.ndarray:
    """Far-end sample sequence; deterministic for a fixed seed.

    `seed` may also be an np.random.Generator to draw from an existing
    stream.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if model.kind == "white":
        return rng.standard_normal(n_samples) * np.sqrt(model.sigma_u2)
    if model.kind == "ar1":
        return _gen_ar1(rng, n_samples, model.a1, model.sigma_u2)
    samples = read_wav_mono_pcm16(model.source_path)
    if len(samples) < n_samples:
        raise ValueError(
            f"{model.source_path}: {len(samples)} samples < requested {n_samples}"
        )
    return samples[:n_samples] * np.sqrt(model.sigma_u2)


# ---------------------------------------------------------------------------
# Run synthesis (shared by the streaming API and the fast kernels)


def echo_at_mics(u, H) -> np.ndarray:
    """Echo component at every microphone: column-wise convolution of u and H."""
    n = len(u)
    out = np.empty((n, H.shape[1]))
    for m in range(H.shape[1]):
        out[:, m] = signal.fftconvolve(u, H[:, m])[:n]
    return out


def synthesize_run(
    plant,
    far_end: FarEndModel,
    near_end: NearEndModel,
    n_samples,
    seed,
    *,
    dtalk_windows=(),
    plant_timeline=None,
    nonstat_eta=0.0,
):
    """Synthesize one run's far-end sequence and microphone snapshots.

    Returns (u, x) with u of shape (n_samples,) and x of shape (n_samples, M).
    Draw order from the single per-run RNG is fixed (far-end, power walk,
    noise, interferer) so runs are reproducible bit-for-bit.

    dtalk_windows: iterable of (on, off) sample ranges during which the
    near-end interferer is active.  plant_timeline: list of (start_n, H)
    pairs for abrupt plant changes (defaults to the single given plant).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    M = plant.M

    u = gen_far_end(far_end, n_samples, rng)
    if nonstat_eta > 0.0:
        logp = np.cumsum(rng.standard_normal(n_samples) * nonstat_eta)
        u = u * np.exp(0.5 * logp)

    x = rng.standard_normal((n_samples, M)) * np.sqrt(near_end.noise_var)

    if dtalk_windows and near_end.interferer is not None and near_end.interferer.power > 0:
        intf = near_end.interferer
        s = _gen_ar1(rng, n_samples, intf.a1, intf.power)
        for on, off in dtalk_windows:
            for m in range(M):
                d = m * intf.doa_delay
                lo, hi = min(on + d, n_samples), min(off + d, n_samples)
                if lo < hi:
                    x[lo:hi, m] += s[lo - d : hi - d]

    if plant_timeline is None:
        plant_timeline = [(0, plant.H)]
    for i, (start, H) in enumerate(plant_timeline):
        stop = plant_timeline[i + 1][0] if i + 1 < len(plant_timeline) else n_samples
        if start >= stop:
            continue
        x[start:stop] += echo_at_mics(u, np.asarray(H, dtype=float))[start:stop]
    return u, x


def regressor_matrix(u, x, N_AEC, N_BF):
    """All stacked regressors b[n] as rows of an (n_samples, N_b) array.

    Vectorized view-based assembly; delay lines are zero before n=0.
    """
    n, M = x.shape
    u_pad = np.concatenate((np.zeros(N_AEC - 1), u))
    x_pad = np.vstack((np.zeros((N_BF - 1, M)), x))
    u_win = np.lib.stride_tricks.sliding_window_view(u_pad, N_AEC)[:, ::-1]
    x_win = np.lib.stride_tricks.sliding_window_view(x_pad, N_BF, axis=0)
    x_win = x_win.transpose(0, 2, 1)[:, ::-1, :]  # (n, lag, mic), lag 0 first
    return np.hstack((-u_win, x_win.reshape(n, N_BF * M)))


def stream_regressors(plant, far_end, near_end, N_AEC, N_BF, n_samples, seed):
    """Iterate the stacked regressors b[n] = [-u_hc[n]; x_w[n]] of one run."""
    n_u = plant.N_h + N_BF - 1
    if N_AEC > n_u:
        raise ValueError(f"N_AEC={N_AEC} exceeds N_h+N_BF-1={n_u}")
    if N_AEC < 1 or N_BF < 1:
        raise ValueError("N_AEC and N_BF must be >= 1")
    u, x = synthesize_run(plant, far_end, near_end, n_samples, seed)
    bmat = regressor_matrix(u, x, N_AEC, N_BF)
    for n in range(n_samples):
        yield bmat[n].copy()


# ---------------------------------------------------------------------------
# Second-order statistics


def far_end_autocorr(model: FarEndModel, max_lag) -> np.ndarray:
    """Autocorrelation r_u[0..max_lag-1]; closed form for white/AR1 only."""
    if model.kind == "white":
        r = np.zeros(max_lag)
        r[0] = model.sigma_u2
        return r
    if model.kind == "ar1":
        return model.sigma_u2 * (-model.a1) ** np.arange(max_lag)
    raise ValueError("file far-end has no closed-form statistics; use sample_Rbb")


def interferer_cov(intf: Interferer, M, N_BF) -> np.ndarray:
    """Covariance of the stacked interferer component of x_w (snapshot-major)."""
    idx = np.arange(M * N_BF)
    lag = idx // M
    mic = idx % M
    dl = (lag[:, None] - lag[None, :]) + (mic[:, None] - mic[None, :]) * intf.doa_delay
    return intf.power * (-intf.a1) ** np.abs(dl)  # integer exponents: pole sign safe


def analytic_Rbb(far_end, calH, near_end, N_AEC, N_BF, M, interferer_active=False):
    """Closed-form autocorrelation of the stacked regressor b.

    Blocks: E{u_hc u_hc^T} Toeplitz from the far-end autocorrelation, the
    x_w block calH.T R_uu calH plus the near-end covariance, and the cross
    block through the first-N_AEC selection of the extended far-end vector.
    `near_end` may be a NearEndModel or a plain noise variance.
    """
    calH = np.asarray(calH, dtype=float)
    n_u = calH.shape[0]
    if calH.shape[1] != M * N_BF:
        raise ValueError(f"calH has {calH.shape[1]} columns, expected M*N_BF={M * N_BF}")
    if N_AEC > n_u:
        raise ValueError(f"N_AEC={N_AEC} exceeds N_h+N_BF-1={n_u}")
    if not isinstance(near_end, NearEndModel):
        near_end = NearEndModel(noise_var=float(near_end))

    r_u = far_end_autocorr(far_end, n_u)
    R_uu = linalg.toeplitz(r_u)
    R_hc = R_uu[:N_AEC, :N_AEC]
    cross = -R_uu[:N_AEC, :] @ calH
    R_rw = near_end.noise_var * np.eye(M * N_BF)
    if interferer_active:
        if near_end.interferer is None:
            raise ValueError("interferer_active=True but near_end has no interferer")
        R_rw += interferer_cov(near_end.interferer, M, N_BF)
    R_xx = calH.T @ R_uu @ calH + R_rw

    n_b = N_AEC + M * N_BF
    R = np.empty((n_b, n_b))
    R[:N_AEC, :N_AEC] = R_hc
    R[:N_AEC, N_AEC:] = cross
    R[N_AEC:, :N_AEC] = cross.T
    R[N_AEC:, N_AEC:] = R_xx
    return 0.5 * (R + R.T)


def sample_Rbb(plant, far_end, near_end, N_AEC, N_BF, n_samples, seed, chunk=65536):
    """Sample estimate of R_bb from one synthesized run (any far-end kind)."""
    u, x = synthesize_run(plant, far_end, near_end, n_samples, seed)
    n_b = N_AEC + plant.M * N_BF
    acc = np.zeros((n_b, n_b))
    for lo in range(0, n_samples, chunk):
        hi = min(lo + chunk, n_samples)
        # re-assemble with history so chunk edges match the one-shot matrix
        lo_ctx = max(lo - max(N_AEC, N_BF) + 1, 0)
        bm = regressor_matrix(u[lo_ctx:hi], x[lo_ctx:hi], N_AEC, N_BF)[lo - lo_ctx :]
        acc += bm.T @ bm
    return acc / n_samples
