"""Benchmark the numba kernels against their pure-numpy fallbacks.

Each hot kernel is timed in both flavors at two sizes: the small shapes a
single training step actually hits (where per-call overhead dominates and
the jitted loops win) and a larger batched shape (where numpy's vectorized
primitives catch up or win). Outputs are cross-checked on identical inputs.
With the numba backend disabled (``HATEPROFILER_NUMBA=0`` or numba missing)
only the numpy column is reported.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 7] [--number 500]
"""

import argparse
import copy
import time

import numpy as np

from hateprofiler import kernels
from hateprofiler.backend import backend_name


def time_call(fn, make_args, number, repeats):
    """Best mean microseconds per call across ``repeats`` timed blocks."""
    fn(*make_args())  # warm up (JIT compile on first numba call)
    samples = []
    for _ in range(repeats):
        args = make_args()
        start = time.perf_counter()
        for _ in range(number):
            fn(*args)
        samples.append((time.perf_counter() - start) / number * 1e6)
    return min(samples)


def cross_check(np_fn, nb_fn, make_args):
    """Largest absolute disagreement between flavors on identical inputs."""
    args_np = make_args()
    args_nb = copy.deepcopy(args_np)
    out_np = np_fn(*args_np)
    out_nb = nb_fn(*args_nb)
    if out_np is None:  # in-place kernel: compare the mutated buffers
        pairs = [(a, b) for a, b in zip(args_np, args_nb)
                 if isinstance(a, np.ndarray)]
    elif isinstance(out_np, tuple):
        pairs = list(zip(out_np, out_nb))
    else:
        pairs = [(out_np, out_nb)]
    return max(float(np.abs(a - b).max()) for a, b in pairs)


def build_cases(rng):
    """(kernel, shape label, numpy fn, numba fn or None, argument factory)."""
    cases = []
    nb = kernels if kernels.USE_NUMBA else None

    def softmax_inputs(n, d):
        x = rng.normal(size=(n, d)).astype(np.float32)
        mask = (rng.random((n, d)) > 0.15).astype(np.float32)
        mask[:, 0] = 1.0  # no fully-masked rows
        y = kernels._softmax_rows_np(x)
        gy = rng.normal(size=(n, d)).astype(np.float32)
        return x, mask, y, gy

    # small = one post's token-attention rows; large = profile-level batch
    for n, d in [(16, 16), (200, 200)]:
        x, mask, y, gy = softmax_inputs(n, d)
        label = f"{n}x{d} f32"
        cases += [
            ("softmax_rows", label,
             kernels._softmax_rows_np, nb and nb._softmax_rows_nb,
             lambda x=x: (x.copy(),)),
            ("softmax_rows_masked", label,
             kernels._softmax_rows_masked_np, nb and nb._softmax_rows_masked_nb,
             lambda x=x, mask=mask: (x.copy(), mask.copy())),
            ("softmax_rows_grad", label,
             kernels._softmax_rows_grad_np, nb and nb._softmax_rows_grad_nb,
             lambda y=y, gy=gy: (y.copy(), gy.copy())),
        ]

    # small = one post's token rows x model width; large = stacked batch
    for n, d in [(16, 32), (256, 64)]:
        lx = rng.normal(size=(n, d)).astype(np.float32)
        gain = rng.normal(size=d).astype(np.float32)
        bias = rng.normal(size=d).astype(np.float32)
        _, mu, rstd = kernels._layer_norm_rows_np(lx, gain, bias, 1e-5)
        lgy = rng.normal(size=(n, d)).astype(np.float32)
        label = f"{n}x{d} f32"
        cases += [
            ("layer_norm_rows", label,
             kernels._layer_norm_rows_np, nb and nb._layer_norm_rows_nb,
             lambda lx=lx, gain=gain, bias=bias: (lx.copy(), gain, bias, 1e-5)),
            ("layer_norm_rows_grad", label,
             kernels._layer_norm_rows_grad_np, nb and nb._layer_norm_rows_grad_nb,
             lambda lx=lx, gain=gain, mu=mu, rstd=rstd, lgy=lgy:
                 (lx.copy(), gain, mu, rstd, lgy)),
        ]

    # small = one weight matrix; large = a full parameter sweep
    for size in [1024, 65536]:
        def adamw_args(size=size):
            return (rng.normal(size=size).astype(np.float32),
                    rng.normal(size=size).astype(np.float32),
                    np.zeros(size, dtype=np.float32),
                    np.zeros(size, dtype=np.float32),
                    1, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        cases.append(("adamw_update", f"{size} f32",
                      kernels._adamw_update_np, nb and nb._adamw_update_flat,
                      adamw_args))
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repetitions per kernel (default 7)")
    parser.add_argument("--number", type=int, default=500,
                        help="calls per repetition (default 500)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(rng)
    have_numba = kernels.USE_NUMBA

    print(f"active backend: {backend_name()}")
    header = f"{'kernel':<22} {'shape':<12} {'numpy µs':>10}"
    if have_numba:
        header += f" {'numba µs':>10} {'speedup':>8} {'max |Δ|':>10}"
    print(header)
    print("-" * len(header))
    for name, shape, np_fn, nb_fn, arg_fn in cases:
        np_best = time_call(np_fn, arg_fn, args.number, args.repeats)
        line = f"{name:<22} {shape:<12} {np_best:>10.2f}"
        if have_numba:
            nb_best = time_call(nb_fn, arg_fn, args.number, args.repeats)
            delta = cross_check(np_fn, nb_fn, arg_fn)
            line += f" {nb_best:>10.2f} {np_best / nb_best:>7.2f}x {delta:>10.2e}"
        print(line)
    if not have_numba:
        print("\nnumba flavor not built (HATEPROFILER_NUMBA=0 or numba missing); "
              "numpy timings only.")


if __name__ == "__main__":
    main()
