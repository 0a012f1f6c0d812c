"""The compiled and numpy backends must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from natrobust import kernels
from natrobust.distortions import gaussian_kernel
from natrobust.image import _bilinear_axis, _box_axis

pytestmark = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled backend not built")

PY = kernels.get_backend("python")
CY = kernels.BACKENDS.get("cython")

floats01 = st.floats(0.0, 1.0, allow_nan=False)


def float_images(max_side=12):
    return arrays(np.float64, st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.just(3)),
                  elements=floats01)


@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3))), st.data())
def test_linf_equal(a, data):
    b = data.draw(arrays(np.uint8, a.shape))
    assert CY.linf_u8(a, b) == PY.linf_u8(a, b) == int(np.max(np.abs(a.astype(int) - b.astype(int))))


@given(float_images(), st.floats(0.3, 3.0))
def test_blur_equal(img, sigma):
    k = gaussian_kernel(sigma)
    assert np.array_equal(CY.blur_separable(img, k), PY.blur_separable(img, k))


@given(float_images(), st.integers(1, 20), st.integers(1, 20))
def test_bilinear_equal(img, w, h):
    t = (*_bilinear_axis(img.shape[0], h), *_bilinear_axis(img.shape[1], w))
    assert np.array_equal(CY.resize_bilinear(img, *t), PY.resize_bilinear(img, *t))


@given(float_images(), st.integers(1, 20), st.integers(1, 20))
def test_box_equal(img, w, h):
    t = (*_box_axis(img.shape[0], h), *_box_axis(img.shape[1], w))
    assert np.array_equal(CY.resize_box(img, *t), PY.resize_box(img, *t))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 64), st.just(3)), elements=floats01))
def test_hsv_equal(rgb):
    hsv = PY.rgb_to_hsv(rgb)
    assert np.array_equal(CY.rgb_to_hsv(rgb), hsv)
    assert np.array_equal(CY.hsv_to_rgb(hsv), PY.hsv_to_rgb(hsv))


def test_quantized_grid_hsv_equal():
    v = np.arange(0, 256, 15) / 255.0
    rgb = np.array(np.meshgrid(v, v, v)).reshape(3, -1).T.copy()
    assert np.array_equal(CY.rgb_to_hsv(rgb), PY.rgb_to_hsv(rgb))


def test_get_backend_unknown():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_var_selects_fallback():
    env = dict(os.environ, NATROBUST_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from natrobust import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
