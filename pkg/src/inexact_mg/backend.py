"""Selects the compiled kernel extension or the NumPy fallback.

The Cython extension is preferred when importable.  Setting the
environment variable ``INEXACT_MG_PURE_PYTHON`` to a nonempty value
forces the fallback (useful for benchmarking and debugging).  Both
implementations are importable side by side so they can be compared
directly; see ``benchmarks/bench_kernels.py``.
"""

import os

from . import _kernels_py as fallback

try:
    from . import _kernels as compiled
except ImportError:  # extension not built; fallback keeps everything working
    compiled = None

HAVE_COMPILED = compiled is not None

if HAVE_COMPILED and not os.environ.get("INEXACT_MG_PURE_PYTHON"):
    active = compiled
else:
    active = fallback

USING_COMPILED = active is compiled

csr_matvec = active.csr_matvec
csr_matvec_t = active.csr_matvec_t
sgs_forward = active.sgs_forward
sgs_backward = active.sgs_backward
csr_matmat = active.csr_matmat
trsv_lower = active.trsv_lower
trsv_lower_t = active.trsv_lower_t

__all__ = [
    "HAVE_COMPILED",
    "USING_COMPILED",
    "compiled",
    "fallback",
    "active",
    "csr_matvec",
    "csr_matvec_t",
    "sgs_forward",
    "sgs_backward",
    "csr_matmat",
    "trsv_lower",
    "trsv_lower_t",
]
