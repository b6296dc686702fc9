"""Hot GRU recurrence kernels.

The numba backend is used when numba imports cleanly, unless the environment
variable ``FEDSEQ_DISABLE_NUMBA`` is set to a truthy value, in which case the
pure-numpy backend is used. Both backends share one contract and agree to
rounding; within one backend results are bitwise reproducible.
"""

import os

from . import _numpy as numpy_backend

_DISABLED = os.environ.get("FEDSEQ_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

numba_backend = None
if not _DISABLED:
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba missing
        numba_backend = None

if numba_backend is not None:
    BACKEND = "numba"
    _active = numba_backend
else:
    BACKEND = "numpy"
    _active = numpy_backend

forward_packed = _active.forward_packed
forward_final = _active.forward_final
backward_packed = _active.backward_packed


def get_backend(name):
    """Return the kernel module called ``name`` ('numpy' or 'numba')."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if numba_backend is None:
            from . import _numba

            return _numba
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")
