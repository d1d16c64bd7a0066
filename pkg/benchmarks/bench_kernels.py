"""Benchmark the compiled adaptation kernel against the NumPy fallback.

The per-sample weight recursion dominates Monte Carlo runtime; this script
measures both backends on the model-verification configuration and prints
throughput plus the end-to-end time for a full 300-run ensemble estimate.

Usage: python benchmarks/bench_kernels.py [--n-samples N] [--repeat K]
"""

import argparse
import time

import numpy as np

from gscaec import _kernel_py
from gscaec.gsc_core import build_gsc, optimal_solutions
from gscaec.harness import PlantConfig
from gscaec.kernel import prepare_run
from gscaec.signal_model import (
    FarEndModel,
    NearEndModel,
    analytic_Rbb,
    build_modified_channel_matrix,
    synthesize_run,
)

try:
    from gscaec import _kernel_cy
except ImportError:
    _kernel_cy = None


def bench_backend(impl, data, gsc, mu_a, mu_b, repeat):
    n = data.n_samples
    best = np.inf
    for _ in range(repeat):
        psi = np.zeros(gsc.N_psi)
        d = np.zeros(n)
        t0 = time.perf_counter()
        impl.run_split(data.u_pad, data.yq, data.V, psi, gsc.N_AEC,
                       mu_a, mu_b, 0, n, d)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_general(impl, data, gsc, m_matrix, repeat):
    n = data.n_samples
    best = np.inf
    for _ in range(repeat):
        psi = np.zeros(gsc.N_psi)
        d = np.zeros(n)
        t0 = time.perf_counter()
        impl.run_general(data.u_pad, data.yq, data.V, psi, gsc.N_AEC,
                         m_matrix, 0, n, d)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-samples", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    plant_cfg = PlantConfig(M=2, N_h=128, fs=8000.0, T_R60=0.016, F=4,
                            mic_spacing=2, seed=12345)
    plant = plant_cfg.build()
    gsc = build_gsc(2, 16, 16, "allpass", 128)
    far = FarEndModel("ar1", a1=-0.9)
    near = NearEndModel(noise_var=1e-2)

    calH = build_modified_channel_matrix(plant.H, 16)
    stats = optimal_solutions(analytic_Rbb(far, calH, near, 128, 16, 2), gsc)
    tr_u = np.trace(stats.R_bloc[:128, :128])
    tr_b = np.trace(stats.R_bloc[128:, 128:])
    budget = 2.0 / 30.0
    mu_a, mu_b = 0.5 * budget / tr_u, 0.5 * budget / tr_b

    t0 = time.perf_counter()
    u, x = synthesize_run(plant, far, near, args.n_samples, seed=1)
    data = prepare_run(u, x, gsc.q, gsc.B, gsc.N_AEC)
    prep = time.perf_counter() - t0
    print(f"configuration: M=2 N_h=128 N_BF=16 N_AEC=128 (N_psi={gsc.N_psi}), "
          f"{args.n_samples} samples")
    print(f"signal synthesis + projections: {prep * 1e3:.1f} ms\n")

    m_dense = np.ascontiguousarray(
        np.diag(np.concatenate([np.full(128, mu_a), np.full(gsc.N_psi - 128, mu_b)]))
    )

    rows = [("python", _kernel_py)]
    if _kernel_cy is not None:
        rows.append(("cython", _kernel_cy))
    results = {}
    print(f"{'backend':<8} {'split (Msamp/s)':>16} {'general (Msamp/s)':>18}")
    for name, impl in rows:
        t_split = bench_backend(impl, data, gsc, mu_a, mu_b, args.repeat)
        t_gen = bench_general(impl, data, gsc, m_dense, args.repeat)
        results[name] = t_split
        print(f"{name:<8} {args.n_samples / t_split / 1e6:>16.2f} "
              f"{args.n_samples / t_gen / 1e6:>18.2f}")

    if _kernel_cy is not None:
        speedup = results["python"] / results["cython"]
        ensemble = 300 * (results["cython"] + prep)
        print(f"\nsplit-kernel speedup: {speedup:.1f}x")
        print(f"estimated 300-run ensemble (compiled): {ensemble:.0f} s")
    else:
        print("\ncompiled kernel not built; only the fallback was measured")


if __name__ == "__main__":
    main()
