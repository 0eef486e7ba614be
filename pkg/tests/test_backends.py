"""Numba and numpy kernel variants must agree; the env flag selects them."""

import os
import subprocess
import sys

import numpy as np
import pytest

from trustlens import backend, kernels


@pytest.fixture
def both_backends():
    if not backend.HAVE_NUMBA:
        pytest.skip("numba not installed")
    yield
    backend.set_backend("auto")


def _run_both(fn, *args):
    backend.set_backend("numpy")
    a = fn(*args)
    backend.set_backend("numba")
    b = fn(*args)
    backend.set_backend("auto")
    return a, b


def test_i0_variants_agree(both_backends):
    x = np.concatenate([np.linspace(0, 15, 200), np.linspace(15.1, 400, 50)])
    a, b = _run_both(kernels.i0, x)
    assert np.allclose(a, b, rtol=1e-13, atol=0)


def test_log_i0_variants_agree(both_backends):
    x = np.geomspace(1e-6, 5000.0, 300)
    a, b = _run_both(kernels.log_i0, x)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


def test_ratio_variants_agree(both_backends):
    x = np.concatenate([[0.0], np.geomspace(1e-6, 2000.0, 200)])
    a, b = _run_both(kernels.i1_i0_ratio, x)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_erf_variants_agree(both_backends):
    x = np.linspace(-8, 8, 501)
    a, b = _run_both(kernels.erf, x)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-16)


def test_vm_mass_variants_agree(both_backends):
    rng = np.random.default_rng(0)
    kappa = np.exp(rng.uniform(-6, 6, 300))
    half = rng.uniform(0, np.pi, 300)
    a, b = _run_both(kernels.vm_interval_mass, kappa, half)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_fusion_primitives_bitwise_equal(both_backends):
    rng = np.random.default_rng(1)
    sl = rng.random((16, 200), dtype=np.float32)
    acc_np = np.zeros_like(sl)
    acc_nb = np.zeros_like(sl)
    backend.set_backend("numpy")
    kernels.accumulate_inplace(acc_np, sl)
    kernels.maximum_inplace(acc_np, sl * 0.5)
    backend.set_backend("numba")
    kernels.accumulate_inplace(acc_nb, sl)
    kernels.maximum_inplace(acc_nb, sl * 0.5)
    assert np.array_equal(acc_np, acc_nb)


def test_env_flag_selects_backend():
    code = (
        "from trustlens import backend; print(backend.active_backend())"
    )
    env = dict(os.environ, TRUSTLENS_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.stdout.strip() == "numpy"


def test_invalid_env_flag_rejected():
    code = "import trustlens.backend"
    env = dict(os.environ, TRUSTLENS_BACKEND="gpu")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode != 0


def test_set_backend_numba_without_numba_errors(monkeypatch):
    monkeypatch.setattr(backend, "HAVE_NUMBA", False)
    with pytest.raises(ImportError):
        backend.set_backend("numba")
    assert backend.set_backend("auto") == "numpy"
    monkeypatch.undo()
    backend.set_backend("auto")
