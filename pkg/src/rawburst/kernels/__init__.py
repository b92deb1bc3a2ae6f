"""Scan kernel backends.

The compiled Cython extension is preferred when the build produced it;
otherwise the numpy fallback is used. Both expose the same three
functions with identical contracts, and the choice can be overridden at
runtime with :func:`set_backend` (there is deliberately no
environment-variable switch).
"""

from . import _scan_np

try:
    from . import _scan_cy

    _HAS_COMPILED = True
except ImportError:
    _scan_cy = None
    _HAS_COMPILED = False

_active = _scan_cy if _HAS_COMPILED else _scan_np


def available_backends() -> tuple[str, ...]:
    return ("numpy", "compiled") if _HAS_COMPILED else ("numpy",)


def active_backend() -> str:
    return _active.BACKEND


def set_backend(name: str) -> None:
    """Select 'numpy', 'compiled', or 'auto' (compiled when available)."""
    global _active
    if name == "auto":
        _active = _scan_cy if _HAS_COMPILED else _scan_np
    elif name == "numpy":
        _active = _scan_np
    elif name == "compiled":
        if not _HAS_COMPILED:
            raise ValueError("compiled scan backend is not available in this build")
        _active = _scan_cy
    else:
        raise ValueError(f"unknown scan backend {name!r}; use numpy, compiled, or auto")


def get_backend(name: str = "auto"):
    """Resolve a backend module by name without changing the active one."""
    if name == "auto":
        return _active
    if name == "numpy":
        return _scan_np
    if name == "compiled":
        if not _HAS_COMPILED:
            raise ValueError("compiled scan backend is not available in this build")
        return _scan_cy
    raise ValueError(f"unknown scan backend {name!r}; use numpy, compiled, or auto")


def scan_fwd_seq(abar, bu):
    return _active.scan_fwd_seq(abar, bu)


def scan_bwd_seq(abar, g):
    return _active.scan_bwd_seq(abar, g)


def chunk_local_scan(abar, bu):
    return _active.chunk_local_scan(abar, bu)
