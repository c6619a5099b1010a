"""Selects the Crank-Nicolson kernel: compiled extension if importable, else pure Python.

Set ``DANSE_BACKEND=python`` to force the fallback.
"""

import os

from . import _cncore_py

try:
    from . import _cncore
except ImportError:  # extension not built
    _cncore = None

_BACKENDS = {"python": _cncore_py.cn_steps}
if _cncore is not None:
    _BACKENDS["cython"] = _cncore.cn_steps

available = tuple(_BACKENDS)

if os.environ.get("DANSE_BACKEND"):
    BACKEND = os.environ["DANSE_BACKEND"]
    if BACKEND not in _BACKENDS:
        raise ImportError(f"DANSE_BACKEND={BACKEND!r} not available; have {available}")
else:
    BACKEND = "cython" if "cython" in _BACKENDS else "python"


def get_kernel(name=None):
    """Return the ``cn_steps`` implementation called ``name`` (default: the selected one)."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {available}") from None
