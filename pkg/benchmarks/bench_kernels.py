"""Time the compiled kernels against the NumPy fallbacks.

Runs each CSR/triangular kernel and one full V-cycle under both
implementations and prints a small table.  The package dispatches
kernels through module attributes of :mod:`inexact_mg.backend`, so the
benchmark swaps those attributes in place to drive identical call
paths through either implementation.

Usage::

    python3 benchmarks/bench_kernels.py [--coarsest-m 20] [--levels 4] [--repeat 5]
"""

import argparse
import contextlib
import time

import numpy as np

from inexact_mg import backend, fem
from inexact_mg.linalg import cholesky_solve, spmv, spmv_transpose, triple_product
from inexact_mg.multigrid import SmootherSpec, smooth_apply, vcycle

KERNEL_NAMES = (
    "csr_matvec", "csr_matvec_t", "sgs_forward", "sgs_backward",
    "csr_matmat", "trsv_lower", "trsv_lower_t",
)


@contextlib.contextmanager
def use_implementation(module):
    saved = {name: getattr(backend, name) for name in KERNEL_NAMES}
    for name in KERNEL_NAMES:
        setattr(backend, name, getattr(module, name))
    try:
        yield
    finally:
        for name, fn in saved.items():
            setattr(backend, name, fn)


def time_call(fn, repeat):
    """Best per-call time over ``repeat`` batches, auto-sized batches."""
    loops = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        elapsed = time.perf_counter() - t0
        if elapsed > 0.05:
            break
        loops *= 2
    best = elapsed
    for _ in range(repeat - 1):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        best = min(best, time.perf_counter() - t0)
    return best / loops


def build_workload(levels, coarsest_m):
    spec = fem.ProblemSpec("poisson", levels=levels, coarsest_m=coarsest_m)
    h = fem.build_hierarchy(spec)
    b = fem.assemble_load(spec.meshes[-1].m)
    rng = np.random.default_rng(0)
    A = h.finest_matrix
    P = h.prolongations[h.finest_level]
    x = rng.standard_normal(A.nrows)
    xc = rng.standard_normal(P.ncols)
    fc = rng.standard_normal(h.matrices[0].nrows)
    smoother = SmootherSpec()
    zero = np.zeros(A.nrows)

    return {
        "matvec": lambda: spmv(A, x),
        "matvec_t": lambda: spmv_transpose(P, x),
        "sgs sweep": lambda: smooth_apply(A, b, x, smoother),
        "triple product": lambda: triple_product(P, A),
        "cholesky solve": lambda: cholesky_solve(h.coarse_factorization, fc),
        "v-cycle": lambda: vcycle(h, b, zero),
    }, A, h


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--levels", type=int, default=4)
    parser.add_argument("--coarsest-m", type=int, default=20)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rows, A, h = build_workload(args.levels, args.coarsest_m)
    print(
        f"poisson, {args.levels} levels, finest {A.nrows} unknowns, "
        f"coarsest {h.matrices[0].nrows}"
    )
    if not backend.HAVE_COMPILED:
        print("compiled extension not built; timing the fallback only\n")

    header = f"{'kernel':>16} {'fallback':>12}"
    if backend.HAVE_COMPILED:
        header += f" {'compiled':>12} {'speedup':>9}"
    print(header)
    for name, fn in rows.items():
        with use_implementation(backend.fallback):
            t_fallback = time_call(fn, args.repeat)
        line = f"{name:>16} {t_fallback * 1e6:>10.1f}us"
        if backend.HAVE_COMPILED:
            with use_implementation(backend.compiled):
                t_compiled = time_call(fn, args.repeat)
            line += f" {t_compiled * 1e6:>10.1f}us {t_fallback / t_compiled:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
