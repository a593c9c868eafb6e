import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parsevalnet.errors import DimensionError
from parsevalnet.linalg import (
    inf_operator_norm,
    matmul,
    orthonormal_rows_init,
    singular_values,
    spectral_norm,
)
from parsevalnet.rng import make_rng


def matmul_oracle(a, b):
    # textbook triple loop, no shortcuts
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_matches_triple_loop_oracle():
    r = make_rng(0)
    for shape in [(1, 1, 1), (2, 3, 4), (5, 2, 5), (7, 7, 1)]:
        a = r.standard_normal(shape[:2])
        b = r.standard_normal(shape[1:])
        assert np.allclose(matmul(a, b), matmul_oracle(a, b), rtol=0, atol=1e-12)


def test_matmul_rejects_mismatched_inner_dims():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_spectral_norm_known_shear():
    # [[1,1],[0,1]] has largest singular value sqrt((3+sqrt5)/2)
    w = np.array([[1.0, 1.0], [0.0, 1.0]])
    expected = math.sqrt((3.0 + math.sqrt(5.0)) / 2.0)
    assert spectral_norm(w) == pytest.approx(expected, rel=1e-10)


def test_spectral_norm_zero_matrix():
    assert spectral_norm(np.zeros((3, 5))) == 0.0


def test_spectral_norm_matches_gram_eigendecomposition():
    r = make_rng(7)
    for _ in range(25):
        rows = int(r.integers(1, 33))
        cols = int(r.integers(1, 33))
        w = r.standard_normal((rows, cols)) * float(r.uniform(0.1, 10))
        gram = w @ w.T if rows <= cols else w.T @ w
        expected = math.sqrt(max(float(np.linalg.eigvalsh(gram)[-1]), 0.0))
        assert spectral_norm(w) == pytest.approx(expected, rel=1e-8)


def test_spectral_norm_rank_one_is_norm_product():
    r = make_rng(3)
    u = r.standard_normal(6)
    v = r.standard_normal(9)
    w = np.outer(u, v)
    assert spectral_norm(w) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-10)


def test_inf_operator_norm_is_max_row_sum():
    w = np.array([[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]])
    assert inf_operator_norm(w) == 6.0


def test_singular_values_match_svd():
    r = make_rng(11)
    for shape in [(4, 4), (3, 8), (8, 3)]:
        w = r.standard_normal(shape)
        sv = singular_values(w)
        ref = np.linalg.svd(w, compute_uv=False)
        assert sv.shape == ref.shape
        assert np.allclose(sv, ref, atol=1e-10)
        assert (np.diff(sv) <= 1e-12).all()  # descending


def test_orthonormal_rows_init_gives_tight_frame(rng):
    w = orthonormal_rows_init(5, 12, rng)
    assert np.allclose(w @ w.T, np.eye(5), atol=1e-12)


def test_orthonormal_rows_init_rejects_tall():
    with pytest.raises(DimensionError):
        orthonormal_rows_init(12, 5, make_rng(0))


@given(st.integers(0, 2**32 - 1), st.floats(-8, 8).filter(lambda c: abs(c) > 1e-6))
@settings(max_examples=40, deadline=None)
def test_spectral_norm_absolute_homogeneity(seed, c):
    w = make_rng(seed).standard_normal((4, 6))
    assert spectral_norm(c * w) == pytest.approx(abs(c) * spectral_norm(w), rel=1e-8)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_spectral_norm_submultiplicative(seed):
    r = make_rng(seed)
    a = r.standard_normal((5, 4))
    b = r.standard_normal((4, 6))
    assert spectral_norm(a @ b) <= spectral_norm(a) * spectral_norm(b) * (1 + 1e-9)
