"""Selects the convolution kernel backend at import time.

The compiled extension is preferred when it imported cleanly; otherwise the
pure-numpy kernels are used. RISCADE_KERNEL=python|cython forces a choice
(forcing cython without the built extension is a configuration error).
"""
import os

from ..errors import ConfigError
from . import _conv_py

try:
    from . import _conv_cy
except ImportError:
    _conv_cy = None

_BACKENDS = {"python": _conv_py}
if _conv_cy is not None:
    _BACKENDS["cython"] = _conv_cy


def _pick(name):
    if name == "auto":
        return _conv_cy if _conv_cy is not None else _conv_py
    if name not in _BACKENDS:
        avail = ", ".join(sorted(_BACKENDS)) + ", auto"
        raise ConfigError(f"unknown kernel backend {name!r} (have: {avail})")
    return _BACKENDS[name]


_active = _pick(os.environ.get("RISCADE_KERNEL", "auto"))


def kernel_name():
    return _active.NAME


def available_backends():
    return sorted(_BACKENDS)


def get_kernel(name=None):
    """Active kernel module, or a specific one when name is given."""
    if name is None:
        return _active
    return _pick(name)


def set_kernel(name):
    """Switch backend (used by tests and the kernel benchmark)."""
    global _active
    _active = _pick(name)
    return _active.NAME
