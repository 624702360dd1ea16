"""Backend selection for the depthwise convolution kernels.

Tries the compiled extension first and falls back to numpy.  Set
FEWSPOT_FORCE_NUMPY_KERNELS=1 to skip the extension (useful for parity
checks and benchmarking).
"""

from __future__ import annotations

import os

from . import _kernels_np

if os.environ.get("FEWSPOT_FORCE_NUMPY_KERNELS", "") not in ("", "0"):
    _impl = _kernels_np
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_np

BACKEND: str = _impl.BACKEND

depthwise3x3_forward = _impl.depthwise3x3_forward
depthwise3x3_backward_input = _impl.depthwise3x3_backward_input
depthwise3x3_backward_weight = _impl.depthwise3x3_backward_weight
