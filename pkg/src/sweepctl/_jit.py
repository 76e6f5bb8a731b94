"""Optional numba compilation.

Set ``SWEEPCTL_PYTHON=1`` to run every kernel as plain numpy code. The same
thing happens automatically when numba cannot be imported.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

PYTHON = os.environ.get("SWEEPCTL_PYTHON", "0").lower() in ("1", "true", "yes", "on")
ENABLED = numba is not None and not PYTHON


def jit(func=None, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator.

    Usable bare (``@jit``) or with options (``@jit(cache=False)``). The
    compiled dispatcher keeps the original function as ``.py_func``; the
    identity path sets the same attribute so callers can always reach the
    interpreted version.
    """
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not ENABLED:
            f.py_func = f
            return f
        return numba.njit(**kwargs)(f)

    return wrap if func is None else wrap(func)
