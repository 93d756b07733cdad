"""Hot numerical kernels with backend selection.

The 7-band stencil matvec is the inner loop of every field solve. A compiled
Cython implementation is used when the extension built; otherwise a vectorized
numpy fallback with identical semantics. Set DCPA_FORCE_NUMPY_KERNELS=1 to
force the fallback (used by the backend-comparison benchmark and tests).
"""

import os

from . import _stencil_np

if os.environ.get("DCPA_FORCE_NUMPY_KERNELS") == "1":
    _impl = _stencil_np
    BACKEND = "numpy"
else:
    try:
        from . import _stencil as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _stencil_np
        BACKEND = "numpy"

stencil_matvec = _impl.stencil_matvec


def available_backends():
    """Names of importable backends, compiled one first."""
    names = []
    try:
        from . import _stencil  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    names.append("numpy")
    return names


def get_backend(name):
    """Return the stencil_matvec implementation for an explicit backend."""
    if name == "numpy":
        return _stencil_np.stencil_matvec
    if name == "cython":
        from . import _stencil

        return _stencil.stencil_matvec
    raise ValueError(f"unknown kernel backend: {name!r}")
