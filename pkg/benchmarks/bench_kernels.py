"""Throughput benchmark: numba-jitted element kernels vs the numpy fallback.

The hot assembly kernels in ``emibddc._kernels`` carry ``@njit`` wrappers with
a pure-numpy path selected by ``EMIBDDC_DISABLE_NUMBA=1``.  This script times
both paths on identical batches and prints a small table.  Run it twice in
one process is impossible (the import freezes the dispatch), so it re-executes
itself in a subprocess with the flag flipped.

Usage::

    python3 benchmarks/bench_kernels.py [--batches 200] [--tets 4096]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _time_kernels(n_tets: int, n_tris: int, batches: int) -> dict:
    from emibddc import _kernels

    rng = np.random.default_rng(12345)
    tet_coords = rng.random((n_tets, 4, 3))
    # Keep tetrahedra non-degenerate: push the fourth vertex off the base plane.
    tet_coords[:, 3, 2] += 1.0
    tri_coords = rng.random((n_tris, 3, 3))
    tri_coords[:, 1, 0] += 1.0
    tri_coords[:, 2, 1] += 1.0
    sigma = np.full(n_tets, 3.0)

    # Warm-up triggers JIT compilation when numba is active.
    _kernels.tet_stiffness_batch(tet_coords[:8], sigma[:8])
    _kernels.tri_mass_batch(tri_coords[:8])

    t0 = time.perf_counter()
    for _ in range(batches):
        ke, vol = _kernels.tet_stiffness_batch(tet_coords, sigma)
    t1 = time.perf_counter()
    for _ in range(batches):
        me, area = _kernels.tri_mass_batch(tri_coords)
    t2 = time.perf_counter()

    return {
        "mode": "numba" if _kernels.USE_NUMBA else "numpy",
        "tet_ms": (t1 - t0) / batches * 1e3,
        "tri_ms": (t2 - t1) / batches * 1e3,
        "checksum": float(ke.sum() + vol.sum() + me.sum() + area.sum()),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batches", type=int, default=200)
    parser.add_argument("--tets", type=int, default=4096)
    parser.add_argument("--tris", type=int, default=4096)
    parser.add_argument(
        "--single", action="store_true", help="time only the current mode and print one line"
    )
    args = parser.parse_args()

    if args.single:
        r = _time_kernels(args.tets, args.tris, args.batches)
        print(f"{r['mode']} {r['tet_ms']:.6f} {r['tri_ms']:.6f} {r['checksum']:.10e}")
        return 0

    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, EMIBDDC_DISABLE_NUMBA=disable)
        cmd = [
            sys.executable,
            os.path.abspath(__file__),
            "--single",
            f"--batches={args.batches}",
            f"--tets={args.tets}",
            f"--tris={args.tris}",
        ]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        mode, tet_ms, tri_ms, checksum = out.stdout.split()
        results.append((mode, float(tet_ms), float(tri_ms), float(checksum)))

    print(f"batch: {args.tets} tets / {args.tris} tris, {args.batches} repetitions")
    print(f"{'path':<8}{'tet stiffness (ms)':>20}{'tri mass (ms)':>16}")
    for mode, tet_ms, tri_ms, _ in results:
        print(f"{mode:<8}{tet_ms:>20.3f}{tri_ms:>16.3f}")
    if results[0][0] == results[1][0]:
        print("note: numba unavailable, both runs used the numpy fallback")
    else:
        agree = abs(results[0][3] - results[1][3]) <= 1e-8 * abs(results[0][3])
        print(f"paths agree on checksums: {agree}")
        print(
            f"speedup: tet x{results[1][1] / results[0][1]:.1f}, "
            f"tri x{results[1][2] / results[0][2]:.1f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
