"""Convolution kernel dispatch: compiled extension or numpy fallback.

The backend is fixed at import time.  Set TRIFUSION_BACKEND=python to force
the fallback (e.g. for benchmarking), TRIFUSION_BACKEND=compiled to require
the extension.
"""

import os

from .errors import ConfigError

_requested = os.environ.get("TRIFUSION_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise ConfigError(f"TRIFUSION_BACKEND must be 'compiled' or 'python', got {_requested!r}")

if _requested == "python":
    from . import _convref as _impl

    BACKEND = "python"
else:
    try:
        from . import _convkern as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ConfigError("compiled kernels requested but trifusion._convkern is not built")
        from . import _convref as _impl

        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_dx = _impl.conv2d_dx
conv2d_dw = _impl.conv2d_dw
