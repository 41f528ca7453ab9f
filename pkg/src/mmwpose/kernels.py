"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
reference implementation is used.  Set ``MMWPOSE_KERNELS=python`` to force
the fallback.
"""

import os

if os.environ.get("MMWPOSE_KERNELS", "").lower() == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
fbeta = _impl.fbeta
pattern_density = _impl.pattern_density
pattern_density_batch = _impl.pattern_density_batch
metropolis_chain = _impl.metropolis_chain
sampson_batch = _impl.sampson_batch
two_view_depths = _impl.two_view_depths

__all__ = [
    "BACKEND",
    "fbeta",
    "pattern_density",
    "pattern_density_batch",
    "metropolis_chain",
    "sampson_batch",
    "two_view_depths",
]
