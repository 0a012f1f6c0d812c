"""Backend selection for the pixel kernels.

The compiled extension is preferred; the numpy fallback is used when the
extension is not built or when ``NATROBUST_PURE_PYTHON=1`` is set. Both
backends return identical results, so the choice only affects speed.
"""

import os
from types import ModuleType

from natrobust import _fallback

try:
    from natrobust import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if _compiled is not None and os.environ.get("NATROBUST_PURE_PYTHON") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}") from None


def linf_u8(a, b):
    return _impl.linf_u8(a, b)


def blur_separable(img, kernel):
    return _impl.blur_separable(img, kernel)


def resize_bilinear(img, *tables):
    return _impl.resize_bilinear(img, *tables)


def resize_box(img, *tables):
    return _impl.resize_box(img, *tables)


def rgb_to_hsv(rgb):
    return _impl.rgb_to_hsv(rgb)


def hsv_to_rgb(hsv):
    return _impl.hsv_to_rgb(hsv)
