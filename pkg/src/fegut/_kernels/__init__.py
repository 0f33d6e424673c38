"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``FEGUT_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementation is selected. ``use_backend`` switches at
runtime (benchmarks and equivalence tests rely on this).
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_force_python = os.environ.get("FEGUT_PURE_PYTHON", "") not in ("", "0")
active = _ckernels if (_ckernels is not None and not _force_python) else _pykernels


def use_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global active
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    previous = active.NAME
    active = BACKENDS[name]
    return previous


def backend_name():
    return active.NAME
