"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
timed on identical inputs for every available backend and the outputs are
compared, so a speedup is only reported for matching results.
"""
import argparse
import time

import numpy as np

from isoball import available_backends


def random_angles(n, rng):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.arccos(np.clip(v[:, 2], -1, 1)), np.arctan2(v[:, 1], v[:, 0]) % (2 * np.pi), v


def cases(rng):
    t = np.linspace(-1.0, 1.0, 4000)
    u = np.geomspace(1e-10, 1.0, 4000)
    w = np.arange(1, 2002.0) ** -4.0
    theta, phi, xyz = random_angles(400, rng)
    coeffs = rng.standard_normal(201 * 201)
    _, _, cover_xyz = random_angles(4000, rng)
    inc = rng.standard_normal((2000, 1024))
    return {
        "legendre_series L=2000 x4000": lambda k: k.legendre_series(t, w),
        "legendre_gap_series L=2000 x4000": lambda k: k.legendre_gap_series(u, w),
        "harmonics_matrix L=100 x400": lambda k: k.harmonics_matrix(100, theta, phi),
        "synth_points L=200 x400": lambda k: k.synth_points(coeffs, 200, theta, phi),
        "greedy_cover n=4000": lambda k: k.greedy_cover(cover_xyz, 0.003, 0)[0],
        "abs_max_columns 2000x1024": lambda k: k.abs_max_columns(inc),
    }


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    backends = available_backends()
    names = sorted(backends, key=lambda n: n != "python")
    if "cython" not in backends:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':36s}" + "".join(f"{n:>12s}" for n in names) + ("  speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times, outs = [], []
        for n in names:
            t, out = best_time(lambda: fn(backends[n]), args.repeat)
            times.append(t)
            outs.append(np.asarray(out))
        line = f"{label:36s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(names) > 1:
            same = np.allclose(outs[0], outs[1], rtol=1e-12, atol=1e-13)
            line += f"  {times[0] / times[1]:6.1f}x" + ("" if same else "  OUTPUT MISMATCH")
        print(line)


if __name__ == "__main__":
    main()
