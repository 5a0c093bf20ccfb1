"""Kernel acceleration backend.

Hot numeric kernels throughout the package are decorated with :func:`njit`.
By default this is numba's ``njit(cache=True)``; setting the environment
variable ``LOCOMAN_PURE_NUMPY=1`` (before first import) swaps in an identity
decorator so every kernel runs as plain numpy/Python. The fallback path is
bit-for-bit the same source code, so it doubles as the reference
implementation for ``benchmarks/bench_kernels.py``.

``fastmath`` stays off: lockstep runs must be deterministic.
"""

import os

_flag = os.environ.get("LOCOMAN_PURE_NUMPY", "").strip().lower()
PURE_NUMPY = _flag in ("1", "true", "yes", "on")

if not PURE_NUMPY:
    try:
        from numba import njit as _numba_njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        PURE_NUMPY = True

if PURE_NUMPY:

    def njit(*args, **kwargs):
        """Identity decorator: run kernels as plain Python/numpy."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

else:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("fastmath", False)
        if args and callable(args[0]):
            return _numba_njit(cache=True, fastmath=False)(args[0])
        return _numba_njit(*args, **kwargs)


def python_impl(func):
    """Return the pure-Python version of a (possibly jitted) kernel."""
    return getattr(func, "py_func", func)
