import os
import subprocess
import sys

import numpy as np
import pytest

from bridgespot import _kernels_py as py
from bridgespot import kernels

cy = pytest.importorskip("bridgespot._kernels")


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
def test_im2col_and_col2im_agree_across_backends(stride, padding, k):
    x = np.random.default_rng(0).normal(size=(2, 3, 9, 7))
    a, b = py.im2col(x, k, k, stride, padding), cy.im2col(x, k, k, stride, padding)
    np.testing.assert_array_equal(a, b)
    g = np.random.default_rng(1).normal(size=a.shape)
    np.testing.assert_allclose(py.col2im(g, x.shape, k, k, stride, padding),
                               cy.col2im(g, x.shape, k, k, stride, padding), atol=1e-12)


def test_col2im_is_the_adjoint_of_im2col():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 6, 5))
    cols = kernels.im2col(x, 3, 3, 2, 1)
    g = rng.normal(size=cols.shape)
    lhs = (cols * g).sum()
    rhs = (x * kernels.col2im(g, x.shape, 3, 3, 2, 1)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_bilinear_kernels_agree_across_backends():
    rng = np.random.default_rng(3)
    img = rng.normal(size=(4, 6, 11))
    ys = np.linspace(-0.5, 6.2, 5)  # includes out-of-range samples (clamped)
    xs = np.sort(rng.uniform(0, 10, 9))
    np.testing.assert_allclose(py.bilinear_gather(img, ys, xs), cy.bilinear_gather(img, ys, xs),
                               atol=1e-12)
    g = rng.normal(size=(4, 5, 9))
    np.testing.assert_allclose(py.bilinear_scatter(g, img.shape, ys, xs),
                               cy.bilinear_scatter(g, img.shape, ys, xs), atol=1e-12)


def test_bilinear_gather_at_integer_grid_is_exact():
    img = np.arange(24.0).reshape(1, 4, 6)
    out = kernels.bilinear_gather(img, np.arange(4.0), np.arange(6.0))
    np.testing.assert_array_equal(out, img)


def test_environment_variable_forces_python_backend():
    env = dict(os.environ, BRIDGESPOT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from bridgespot import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND == "cython"
