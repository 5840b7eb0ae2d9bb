"""Kernel backend selection.

The hot numeric kernels in :mod:`hateprofiler.kernels` exist twice: a numba
``@njit`` version and a pure-numpy version. The environment variable
``HATEPROFILER_NUMBA`` picks the path:

    HATEPROFILER_NUMBA=1   force numba (ConfigError if numba is missing)
    HATEPROFILER_NUMBA=0   force the pure-numpy fallback
    unset                  use numba when importable, numpy otherwise

Selection happens once at import time; both paths compute the same values.
Run ``python benchmarks/bench_kernels.py`` to compare them.
"""

import os

from .errors import ConfigError

_TRUE = {"1", "true", "on", "numba"}
_FALSE = {"0", "false", "off", "numpy"}


def _detect() -> bool:
    flag = os.environ.get("HATEPROFILER_NUMBA", "").strip().lower()
    if flag in _FALSE:
        return False
    try:
        import numba  # noqa: F401
        available = True
    except ImportError:
        available = False
    if flag in _TRUE:
        if not available:
            raise ConfigError("HATEPROFILER_NUMBA=1 but numba is not importable")
        return True
    if flag and flag not in _TRUE | _FALSE:
        raise ConfigError(f"unrecognized HATEPROFILER_NUMBA value: {flag!r}")
    return available


USE_NUMBA: bool = _detect()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
