"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise, or when
``VOCALIGN_PURE=1`` is set, the numpy fallback in ``_pykernels`` is used.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}
try:
    from . import _kernels as _compiled

    BACKENDS["cython"] = _compiled
except ImportError:  # pragma: no cover - depends on build
    _compiled = None

if os.environ.get("VOCALIGN_PURE") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get(name: str | None = None):
    """Kernel module for ``name`` (defaults to the active backend)."""
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
