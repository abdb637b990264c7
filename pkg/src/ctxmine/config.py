"""Process-wide numeric settings.

``BTF_PRECISION`` (``f32`` or ``f64``, default ``f64``) fixes the float type of
every trainable matrix. ``BTF_NUMBA`` (``1`` default, ``0`` to disable) selects
the numba-compiled kernels or their pure-numpy twins.
"""

import os
from contextlib import contextmanager

import numpy as np

from .errors import ConfigurationError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


def _precision_from_env():
    name = os.environ.get("BTF_PRECISION", "f64").strip().lower()
    if name not in _PRECISIONS:
        raise ConfigurationError(f"BTF_PRECISION must be f32 or f64, got {name!r}")
    return name


_precision = _precision_from_env()


def precision():
    return _precision


def dtype():
    return _PRECISIONS[_precision]


def set_precision(name):
    """Switch the global precision. Meant for process start-up, not mid-run."""
    global _precision
    if name not in _PRECISIONS:
        raise ConfigurationError(f"precision must be f32 or f64, got {name!r}")
    _precision = name


@contextmanager
def using_precision(name):
    old = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


def numba_requested():
    return os.environ.get("BTF_NUMBA", "1").strip() not in ("0", "false", "no", "off")
