"""Times each hot kernel under the compiled and the reference implementation.

Run:  python3 benchmarks/bench_backends.py [--repeats N]

Imports both kernel modules directly, so the UGAN_BACKEND flag is irrelevant
here; matrix products are BLAS either way and are not timed.
"""

import argparse
import time

import numpy as np

from ugan import _kernels_numpy as knp

try:
    from ugan import _kernels_numba as knb
except ImportError:  # pragma: no cover - numba genuinely absent
    knb = None


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    act = rng.normal(size=256 * 1000)
    grad = rng.normal(size=256 * 1000)
    logits = rng.normal(size=(256, 11))
    n_params = 1_000_000
    p = rng.normal(size=n_params)
    g = rng.normal(size=n_params)
    m = np.zeros(n_params)
    v = np.zeros(n_params)

    def adam(mod):
        def run():
            mod.adam_step(p.copy(), g, m.copy(), v.copy(), 7, 3e-4, 0.5, 0.999, 1e-8)
        return run

    yield "leaky_relu_fwd", "(256000,)", lambda mod: lambda: mod.leaky_relu_fwd(act, 0.2)
    yield "leaky_relu_bwd", "(256000,)", lambda mod: lambda: mod.leaky_relu_bwd(act, grad, 0.2)
    yield "softplus_fwd", "(256000,)", lambda mod: lambda: mod.softplus_fwd(act)
    yield "softplus_bwd", "(256000,)", lambda mod: lambda: mod.softplus_bwd(act, grad)
    yield "sigmoid_fwd", "(256000,)", lambda mod: lambda: mod.sigmoid_fwd(act)
    yield "lse_rows", "(256, 11)", lambda mod: lambda: mod.lse_rows(logits)
    yield "adam_step", "(1000000,)", adam


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7, help="timing repeats (best is kept)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    for name, shape, make in cases(rng):
        ref = best_of(make(knp), args.repeats)
        if knb is None:
            rows.append((name, shape, ref, None))
            continue
        make(knb)()  # first call pays the compile
        fast = best_of(make(knb), args.repeats)
        rows.append((name, shape, ref, fast))

    print(f"{'kernel':<16} {'shape':<12} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, shape, ref, fast in rows:
        if fast is None:
            print(f"{name:<16} {shape:<12} {ref * 1e3:>10.3f} {'n/a':>10} {'n/a':>8}")
        else:
            print(f"{name:<16} {shape:<12} {ref * 1e3:>10.3f} {fast * 1e3:>10.3f} {ref / fast:>7.2f}x")


if __name__ == "__main__":
    main()
