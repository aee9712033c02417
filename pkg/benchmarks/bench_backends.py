"""Benchmark the numba kernel against the pure-numpy fallback.

Runs the same seeded trajectory batch through both backends, reports per-step
timings and the speedup, and cross-checks that the two paths agree.

Usage: python benchmarks/bench_backends.py [--steps N] [--trajectories T]
"""

import argparse
import time

import numpy as np

from ghzstab import _kernels
from ghzstab.config import load_scenario
from ghzstab.control import FeedbackLaw


def run(backend, rho0s, dws, model, law, dt):
    t0 = time.perf_counter()
    out = _kernels.run_ensemble(rho0s, dws, model, law, dt, 10, backend=backend)
    return time.perf_counter() - t0, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--trajectories", type=int, default=4)
    args = parser.parse_args()

    cfg = load_scenario("scenario_a")
    model = cfg.build_model()
    law = FeedbackLaw.fidelity_power(10, 7, (1, 1))
    dt = 1e-3
    rho0s = np.broadcast_to(np.eye(8, dtype=complex) / 8, (args.trajectories, 8, 8)).copy()
    dws = np.stack(
        [
            _kernels.wiener_increments(99, t, args.steps, len(model.channels), dt)
            for t in range(args.trajectories)
        ]
    )

    total_steps = args.steps * args.trajectories
    print(f"{args.trajectories} trajectories x {args.steps} steps (dim {model.dim})")

    if _kernels.HAVE_NUMBA:
        run("numba", rho0s[:1], dws[:1], model, law, dt)  # compile outside the timing
        t_nb, out_nb = run("numba", rho0s, dws, model, law, dt)
        print(f"numba : {t_nb:8.3f} s total  {t_nb / total_steps * 1e6:7.2f} us/step")
    else:
        t_nb = out_nb = None
        print("numba : unavailable (install numba or unset GHZSTAB_BACKEND)")

    t_np, out_np = run("numpy", rho0s, dws, model, law, dt)
    print(f"numpy : {t_np:8.3f} s total  {t_np / total_steps * 1e6:7.2f} us/step")

    if out_nb is not None:
        diff = np.max(np.abs(out_nb.series - out_np.series))
        print(f"speedup: {t_np / t_nb:5.1f}x   max series deviation: {diff:.3e}")


if __name__ == "__main__":
    main()
