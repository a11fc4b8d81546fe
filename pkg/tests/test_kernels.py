import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barron_icl import _pykernels, kernels

try:
    from barron_icl import _ckernels
except ImportError:  # compiled core not built
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


def test_environment_forces_numpy_path():
    env = dict(os.environ, BARRON_ICL_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from barron_icl import kernels; print(kernels.BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("impl", [_pykernels, pytest.param(_ckernels, marks=needs_c)], ids=["python", "cython"])
def test_logistic_extremes(impl):
    x = np.array([-800.0, -40.0, 0.0, 40.0, 800.0])
    out = impl.logistic(x)
    assert np.all(np.isfinite(out))
    assert out[2] == 0.5 and out[0] == 0.0 and out[-1] == 1.0


@needs_c
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_attention_parity(seed):
    rng = np.random.default_rng(seed)
    vh, qh, kh = rng.normal(size=(5, 7)), rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
    np.testing.assert_allclose(
        _ckernels.logistic_attention(vh, qh, kh), _pykernels.logistic_attention(vh, qh, kh), atol=1e-13, rtol=0
    )


@needs_c
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2))
def test_soft_threshold_parity(seed, kappa):
    z = np.random.default_rng(seed).normal(size=50)
    np.testing.assert_array_equal(_ckernels.soft_threshold(z, kappa), _pykernels.soft_threshold(z, kappa))


@needs_c
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.2))
def test_ista_path_parity(seed, lam):
    rng = np.random.default_rng(seed)
    phi = np.column_stack([rng.uniform(size=(20, 6)), np.ones(20)])
    y = rng.normal(size=20)
    a = _ckernels.ista_path(phi, y, lam, 1 / 14, 30)
    b = _pykernels.ista_path(phi, y, lam, 1 / 14, 30)
    assert a.shape == b.shape == (31, 7)
    np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)


@pytest.mark.parametrize("impl", [_pykernels, pytest.param(_ckernels, marks=needs_c)], ids=["python", "cython"])
def test_ista_path_warm_start(impl):
    phi = np.array([[1.0, 1.0], [0.5, 1.0]])
    y = np.array([1.0, 0.0])
    full = impl.ista_path(phi, y, 0.01, 0.25, 6)
    tail = impl.ista_path(phi, y, 0.01, 0.25, 3, rho0=full[3])
    np.testing.assert_allclose(tail[-1], full[-1], atol=1e-15)
