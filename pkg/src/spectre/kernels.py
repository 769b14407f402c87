"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``SPECTRE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SPECTRE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

nearest_centroid = _impl.nearest_centroid
accumulate_centroids = _impl.accumulate_centroids
rotate_pairs = _impl.rotate_pairs

__all__ = ["BACKEND", "nearest_centroid", "accumulate_centroids", "rotate_pairs"]
