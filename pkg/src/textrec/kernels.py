"""Backend selection for the ranking kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. ``TEXTREC_KERNELS=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TEXTREC_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

topk_excluding = _impl.topk_excluding
rank_metrics = _impl.rank_metrics


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` explicitly."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
