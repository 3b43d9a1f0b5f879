"""Kernel backend selection.

The compiled extension is used when importable; set ``FORMLAB_PURE=1``
to force the pure-Python fallback.
"""
import os

import numpy as np

from formlab import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("FORMLAB_PURE"):
    try:
        from formlab import _kernels as _compiled
    except ImportError:
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "compiled"
else:
    _compiled = None


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def transfer_products(dx, V, w, lams, impl=None):
    """Transfer matrices across a segment chain for each energy in ``lams``.

    Returns ``(mats, logs)`` with ``T(lam) = exp(logs) * mats``.
    """
    impl = impl or _impl
    return impl.transfer_products(_f64(dx), _f64(V), _f64(w), _f64(np.atleast_1d(lams)))


def shoot_frame(dx, V, w, lam, F0, impl=None):
    impl = impl or _impl
    return impl.shoot_frame(_f64(dx), _f64(V), _f64(w), float(lam), _f64(F0).reshape(2, 2))


def ldl_inertia(diag, off, mass, lam, impl=None):
    impl = impl or _impl
    return int(impl.ldl_inertia(_f64(diag), _f64(off), _f64(mass), float(lam)))


def implementations():
    """Available backends by name (for benchmarks and cross-checks)."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
