"""numba switch.

Hot kernels are written once in a numba-compatible subset of numpy and
compiled with ``njit`` when numba is importable. Setting
``ISMPC_DISABLE_JIT=1`` in the environment (before import) runs the same
kernels as plain numpy code instead.
"""

import functools
import os
import types

_disabled = os.environ.get("ISMPC_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError
    import numba

    njit = functools.partial(numba.njit, cache=True, nogil=True)
    JIT_ENABLED = True

    def is_jitted(func):
        return isinstance(func, numba.core.registry.CPUDispatcher)

except ImportError:
    JIT_ENABLED = False

    def njit(func=None, **kwargs):
        if func is None:
            return lambda f: f
        return func

    def is_jitted(func):
        return False


_py_cache = {}


def python_version(func):
    """Uncompiled body of a kernel whose calls to other kernels are also
    uncompiled (identity when JIT is off or ``func`` is plain Python)."""
    if not is_jitted(func):
        return func
    if func in _py_cache:
        return _py_cache[func]
    py = func.py_func
    env = dict(py.__globals__)
    clone = types.FunctionType(py.__code__, env, py.__name__, py.__defaults__, py.__closure__)
    clone.__doc__ = py.__doc__
    _py_cache[func] = clone
    for name in py.__code__.co_names:
        val = env.get(name)
        if is_jitted(val):
            env[name] = python_version(val)
    return clone


__all__ = ["njit", "JIT_ENABLED", "is_jitted", "python_version"]
