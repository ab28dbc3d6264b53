"""Segment-reduction kernels used by the graph attention and convolution layers.

Two interchangeable backends: a Cython extension (``_native``) and a pure-numpy
fallback (``_numpy``). The extension is preferred when it was built; set
``GOAT_KERNELS=numpy`` or ``GOAT_KERNELS=native`` to force one. These
reductions (scatter-add by segment id, per-segment max) sit in the inner loop
of every forward and backward pass, which is why they get a compiled core.

See ``benchmarks/bench_kernels.py`` for a timing comparison of the backends.
"""

import os

import numpy as np

from . import _numpy as _numpy_impl

_requested = os.environ.get("GOAT_KERNELS", "auto")
if _requested not in ("auto", "native", "numpy"):
    raise RuntimeError(
        f"GOAT_KERNELS must be 'auto', 'native' or 'numpy', got {_requested!r}"
    )

_native_impl = None
if _requested in ("auto", "native"):
    try:
        from . import _native as _native_impl
    except ImportError:
        if _requested == "native":
            raise RuntimeError(
                "GOAT_KERNELS=native but the compiled extension is not available; "
                "build it with 'pip install -e . --no-build-isolation'"
            )

if _native_impl is not None:
    _impl = _native_impl
    BACKEND = "native"
else:
    _impl = _numpy_impl
    BACKEND = "numpy"


def _as_2d(values):
    """View ``values`` as a C-contiguous float64 (rows, cols) matrix."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    lead = arr.shape[0] if arr.ndim else 0
    return arr.reshape(lead, -1), arr.shape


def _as_index(seg):
    return np.ascontiguousarray(seg, dtype=np.int64)


def segment_sum(values, seg, n_segments):
    """Sum rows of ``values`` into ``n_segments`` buckets given by ``seg``.

    ``values`` has shape (E, ...); ``seg`` is an int array of length E with
    entries in [0, n_segments). Returns shape (n_segments, ...). Segment ids
    need not be sorted; empty segments are zero.
    """
    flat, shape = _as_2d(values)
    out = _impl.segment_sum(flat, _as_index(seg), int(n_segments))
    return out.reshape((n_segments,) + shape[1:])


def segment_max(values, seg, n_segments):
    """Per-segment elementwise maximum; empty segments are -inf."""
    flat, shape = _as_2d(values)
    out = _impl.segment_max(flat, _as_index(seg), int(n_segments))
    return out.reshape((n_segments,) + shape[1:])


def scatter_add(values, idx, n_rows):
    """Accumulate rows of ``values`` at positions ``idx`` of a zero (n_rows, ...) array.

    Identical reduction to :func:`segment_sum`; named separately because it is
    the backward rule of a row gather rather than a graph aggregation.
    """
    return segment_sum(values, idx, n_rows)
