import os
import subprocess
import sys

import numpy as np
import pytest

from commdp import kernels

needs_numba = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not available")


def _uniforms(runs, n, d, seed=0):
    gen = np.random.default_rng(seed)
    return gen.random((runs, n)), gen.random((runs, n)), gen.random((runs, d))


@needs_numba
@pytest.mark.parametrize("capped", [False, True])
def test_cluster_counts_backends_agree(capped):
    idx = np.array([0, 0, 1, 3, 3])
    u = _uniforms(5000, 5, 12)
    a, sa = kernels.cluster_counts(idx, 4, 5, 0.3, capped, *u, backend="numpy")
    b, sb = kernels.cluster_counts(idx, 4, 5, 0.3, capped, *u, backend="numba")
    assert np.array_equal(a, b) and sa == sb
    assert np.all(a.sum(axis=1) == 17)
    if capped:
        assert a.max() <= 5


@needs_numba
def test_tail_sums_backends_agree():
    gen = np.random.default_rng(1)
    cats = np.minimum(gen.integers(20, size=(3000, 40)), 2).astype(np.uint8)
    values = np.array([1.7, -2.3, 0.01])
    a = kernels.tail_positive_sums(cats, values, backend="numpy")
    b = kernels.tail_positive_sums(cats, values, backend="numba")
    assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_tail_sums_by_hand():
    cats = np.array([[0, 1, 1], [2, 0, 0]], dtype=np.uint8)
    values = np.array([1.0, -2.0, -0.5])
    # prefix sums: [1, -1, -3] and [-0.5, 0.5, 1.5]
    assert kernels.tail_positive_sums(cats, values, backend="numpy").tolist() == [1.0, 0.5, 1.5]


def test_stuck_flag():
    idx = np.array([0, 0])
    u = _uniforms(10, 2, 3)
    _, stuck = kernels.cluster_counts(idx, 2, 2, 0.0, True, *u, backend="numpy")
    assert stuck


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.cluster_counts(np.array([0]), 2, 1, 0.0, False, *_uniforms(1, 1, 0), backend="gpu")


def test_env_flag_disables_jit():
    env = dict(os.environ, COMMDP_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", "from commdp import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
