"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--batch 45000] [--repeat 5]

The default batch matches one full-batch training step at desk scale
(450 examples x 100 steps of 3x3 Hamiltonians).
"""

import argparse
import time

import numpy as np

from photonic_graybox import _backend


def random_hermitian(rng, batch, n, scale=50.0):
    a = rng.normal(size=(batch, n, n)) + 1j * rng.normal(size=(batch, n, n))
    h = scale * (a + np.conj(np.swapaxes(a, -1, -2)))
    h[:, np.arange(n), np.arange(n)] += 1.7e7  # realistic diagonal offset
    return h


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(batch: int, n: int, repeat: int):
    rng = np.random.default_rng(0)
    h = random_hermitian(rng, batch, n)
    g = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
    length = 3.6e-2
    impls = {"python": _backend.python_kernels}
    if _backend.NAME == "cython":
        impls["cython"] = _backend.kernels
    rows = []
    for name, k in impls.items():
        w, v = k.herm_eig_batch(h)
        rows.append((name, "herm_eig_batch", best_of(lambda: k.herm_eig_batch(h), repeat)))
        rows.append((name, "expm_from_eig", best_of(lambda: k.expm_from_eig(w, v, length), repeat)))
        rows.append((name, "exp_adjoint_batch",
                     best_of(lambda: k.exp_adjoint_batch(w, v, length, g, 1e-9), repeat)))
    print(f"batch={batch} n={n} backend={_backend.NAME}")
    print(f"{'impl':8s} {'kernel':20s} {'seconds':>10s} {'us/matrix':>10s}")
    for name, kernel, sec in rows:
        print(f"{name:8s} {kernel:20s} {sec:10.4f} {1e6 * sec / batch:10.3f}")
    if "cython" in impls:
        for kernel in ("herm_eig_batch", "expm_from_eig", "exp_adjoint_batch"):
            py = next(s for i, k, s in rows if i == "python" and k == kernel)
            cy = next(s for i, k, s in rows if i == "cython" and k == kernel)
            print(f"speedup {kernel:20s} {py / cy:6.2f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=45000)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    run(a.batch, a.n, a.repeat)
