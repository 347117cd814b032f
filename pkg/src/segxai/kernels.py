"""Kernel backend selection.

The numba-compiled kernels are used by default; set ``SEGXAI_NO_NUMBA=1``
to force the pure-numpy fallback (also used automatically when numba is
not importable).  ``BACKEND`` records which path is active.
"""

from __future__ import annotations

import os

if os.environ.get("SEGXAI_NO_NUMBA", "") == "1":
    from . import _kernels_np as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_nb as _impl

        BACKEND = "numba"
    except ImportError:
        from . import _kernels_np as _impl

        BACKEND = "numpy"

conv3x3 = _impl.conv3x3
conv3x3_backward = _impl.conv3x3_backward
maxpool2 = _impl.maxpool2
maxpool2_backward = _impl.maxpool2_backward
