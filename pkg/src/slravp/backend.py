"""Selection of the banded-kernel implementation.

The compiled extension is preferred when it imported cleanly; the numpy
fallback implements the same contracts.  ``get_backend`` lets benchmarks and
tests pin a specific lane.
"""

from . import _band_py

try:
    from . import _band_cy
    HAVE_COMPILED = True
except ImportError:
    _band_cy = None
    HAVE_COMPILED = False

DEFAULT = _band_cy if HAVE_COMPILED else _band_py


def get_backend(name=None):
    """Return a kernel module by name: None/'auto', 'python', 'cython'."""
    if name is None or name == "auto":
        return DEFAULT
    if name == "python":
        return _band_py
    if name in ("cython", "compiled"):
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available")
        return _band_cy
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if HAVE_COMPILED else [])
