"""Hot numeric kernels with a numba and a pure-numpy implementation.

The backend is chosen once at import time. Set ``LIDARLIFT_NUMBA=0`` to
force the pure-numpy fallback; by default the numba backend is used when
numba imports cleanly. Both backends implement the same contracts
(including tie-breaking), so results agree up to floating-point noise in
reductions; integer outputs (indices) agree exactly on non-degenerate
inputs.
"""

import os

from . import numpy_backend

_flag = os.environ.get("LIDARLIFT_NUMBA", "1").strip().lower()
if _flag in ("0", "false", "off", "no"):
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = numpy_backend
        BACKEND = "numpy"

knn = _impl.knn
nearest_sqdist = _impl.nearest_sqdist
fps = _impl.fps
segment_sum = _impl.segment_sum


def get_backend(name):
    """Return a backend module by name ('numpy' or 'numba'), for tests/benchmarks."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")
