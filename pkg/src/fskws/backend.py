"""Kernel backend selection.

FSKWS_BACKEND picks the implementation of the hot loops:

  auto   - numba if importable, else pure numpy (default)
  numba  - require the jitted kernels, fail if numba is missing
  numpy  - force the pure-numpy fallback

The selected module exposes an identical kernel surface; `tensor` imports
through here and never sees the difference. `benchmarks/bench_kernels.py`
times both paths side by side.
"""

from __future__ import annotations

import os

_choice = os.environ.get("FSKWS_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"FSKWS_BACKEND={_choice!r}: expected one of auto, numba, numpy"
    )

if _choice == "numpy":
    from . import _kernels_numpy as _impl

    _name = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        _name = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import _kernels_numpy as _impl

        _name = "numpy"


def active_backend() -> str:
    """Name of the kernel implementation in use: 'numba' or 'numpy'."""
    return _name


conv1d_forward = _impl.conv1d_forward
conv1d_backward_input = _impl.conv1d_backward_input
conv1d_backward_weight = _impl.conv1d_backward_weight
conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
