"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on identical seeded inputs under both backends; the
table reports the best wall time and the maximum absolute difference.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ocfl._kernels import available_backends


def _best(fn, repeat: int) -> tuple[float, object]:
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(rng: np.random.Generator):
    deltas = rng.standard_normal((30, 20_000))
    yield "cosine_divergence n=30 d=20000", "cosine_divergence", (deltas,)
    small = rng.standard_normal((200, 50))
    yield "cosine_divergence n=200 d=50", "cosine_divergence", (small,)
    pts = rng.random((300, 8))
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    core = np.sort(dist, axis=1)[:, 5].copy()
    yield "mutual_reachability_mst n=300", "mutual_reachability_mst", (dist, core)
    blobs = np.concatenate([rng.normal(c, 0.1, (40, 15)) for c in (0.0, 1.0, 2.0)])
    yield "flat_mean_shift n=120 d=15", "flat_mean_shift", (blobs, blobs.copy(), 0.6)


def _diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    names = list(backends)
    header = f"{'kernel':36s}" + "".join(f"{n:>12s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}{'max|diff|':>12s}"
    print(header)
    for label, fn_name, fargs in _cases(np.random.default_rng(args.seed)):
        times, outs = [], []
        for n in names:
            fn = getattr(backends[n], fn_name)
            t, out = _best(lambda: fn(*fargs), args.repeat)
            times.append(t)
            outs.append(out)
        row = f"{label:36s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(names) == 2:
            row += f"{times[0] / times[1]:9.1f}x{_diff(outs[0], outs[1]):12.1e}"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
