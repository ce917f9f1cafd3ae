"""Kernel backend selection: compiled extension if built, numpy otherwise.

Set LABELCRAFT_DISABLE_EXT=1 to force the numpy reference implementation
(used by the backend-parity tests and the benchmark).
"""
import os

from . import reference

if os.environ.get("LABELCRAFT_DISABLE_EXT"):
    impl = reference
else:
    try:
        from . import _sinkhorn as impl  # type: ignore[no-redef]
    except ImportError:
        impl = reference

BACKEND: str = impl.BACKEND
solve = impl.solve
plan = impl.plan
vjp = impl.vjp
solve_many = impl.solve_many
vjp_many = impl.vjp_many
