import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurstt import tensor3
from neurstt.tensor3 import NumericError, TensorShapeError


def naive_unfold(x, mode):
    n1, n2, n3 = x.shape
    if mode == 1:
        m = np.zeros((n1, n2 * n3))
        for i, j, k in itertools.product(range(n1), range(n2), range(n3)):
            m[i, j + k * n2] = x[i, j, k]
    elif mode == 2:
        m = np.zeros((n2, n3 * n1))
        for i, j, k in itertools.product(range(n1), range(n2), range(n3)):
            m[j, k + i * n3] = x[i, j, k]
    else:
        m = np.zeros((n3, n1 * n2))
        for i, j, k in itertools.product(range(n1), range(n2), range(n3)):
            m[k, i + j * n1] = x[i, j, k]
    return m


class TestUnfoldFold:
    def test_scalar_tensor(self):
        x = np.full((1, 1, 1), 3.5)
        for mode in (1, 2, 3):
            np.testing.assert_array_equal(tensor3.unfold(x, mode), [[3.5]])
            np.testing.assert_array_equal(tensor3.fold(np.array([[3.5]]), mode, (1, 1, 1)), x)

    def test_values_1_to_8_frame_major(self):
        # 1..8 laid out frame-major: offset k*n1*n2 + i*n2 + j
        x = tensor3.from_linear(np.arange(1, 9), (2, 2, 2))
        assert x[0, 1, 0] == 2 and x[1, 0, 0] == 3 and x[0, 0, 1] == 5
        expected = np.array([[1, 2, 5, 6], [3, 4, 7, 8]], dtype=float)
        np.testing.assert_array_equal(tensor3.unfold(x, 1), expected)
        for mode in (1, 2, 3):
            np.testing.assert_array_equal(tensor3.unfold(x, mode), naive_unfold(x, mode))

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_matches_index_formula(self, mode):
        x = np.random.default_rng(mode).normal(size=(3, 4, 5))
        np.testing.assert_array_equal(tensor3.unfold(x, mode), naive_unfold(x, mode))

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_roundtrip(self, mode):
        x = np.random.default_rng(0).normal(size=(3, 4, 5))
        np.testing.assert_array_equal(tensor3.fold(tensor3.unfold(x, mode), mode, x.shape), x)

    def test_exhaustive_small_dims(self):
        rng = np.random.default_rng(1)
        for dims in itertools.product(range(1, 9), repeat=3):
            x = rng.normal(size=dims)
            for mode in (1, 2, 3):
                assert np.array_equal(tensor3.fold(tensor3.unfold(x, mode), mode, dims), x)

    def test_two_sided_inverse(self):
        dims = (3, 4, 5)
        m = np.random.default_rng(2).normal(size=tensor3.unfolded_shape(2, dims))
        np.testing.assert_array_equal(tensor3.unfold(tensor3.fold(m, 2, dims), 2), m)

    def test_bad_mode(self):
        with pytest.raises(TensorShapeError):
            tensor3.unfold(np.zeros((2, 2, 2)), 4)

    def test_fold_shape_mismatch(self):
        with pytest.raises(TensorShapeError):
            tensor3.fold(np.zeros((2, 3)), 1, (2, 2, 2))


class TestModeProduct:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4, 5))
        np.testing.assert_array_equal(tensor3.mode_product(x, np.eye(3), 1), x)

    def test_zero_matrix(self):
        x = np.random.default_rng(0).normal(size=(3, 4, 5))
        y = tensor3.mode_product(x, np.zeros((2, 4)), 2)
        assert y.shape == (3, 2, 5) and not y.any()

    def test_definition_sum(self):
        x = tensor3.from_linear(np.arange(1, 9), (2, 2, 2))
        u = np.array([[1.0, 1.0], [0.0, 1.0]])
        y = tensor3.mode_product(x, u, 1)
        for i, j, k in itertools.product(range(2), repeat=3):
            assert y[i, j, k] == sum(u[i, a] * x[a, j, k] for a in range(2))

    def test_matches_fold_of_product(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 4, 5))
        for mode in (1, 2, 3):
            m = rng.normal(size=(6, x.shape[mode - 1]))
            dims = list(x.shape)
            dims[mode - 1] = 6
            ref = tensor3.fold(m @ tensor3.unfold(x, mode), mode, dims)
            np.testing.assert_allclose(tensor3.mode_product(x, m, mode), ref, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(TensorShapeError):
            tensor3.mode_product(np.zeros((2, 3, 4)), np.zeros((2, 2)), 2)

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 4, 5))
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(6, 4))
        lhs = tensor3.mode_product(tensor3.mode_product(x, a, 1), b, 2)
        rhs = tensor3.mode_product(tensor3.mode_product(x, b, 2), a, 1)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


class TestTucker:
    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(0)
        u, v, w = rng.normal(size=3), rng.normal(size=4), rng.normal(size=2)
        y = tensor3.tucker_reconstruct(np.ones((1, 1, 1)), u[:, None], v[:, None], w[:, None])
        for i, j, k in itertools.product(range(3), range(4), range(2)):
            assert y[i, j, k] == pytest.approx(u[i] * v[j] * w[k], rel=1e-14)

    def test_identity_factors(self):
        core = np.random.default_rng(0).normal(size=(2, 3, 4))
        np.testing.assert_array_equal(tensor3.tucker_reconstruct(core, np.eye(2), np.eye(3), np.eye(4)), core)

    def test_definitional_consistency(self):
        rng = np.random.default_rng(1)
        core = rng.normal(size=(2, 2, 2))
        fs = [rng.normal(size=(n, 2)) for n in (5, 6, 7)]
        x = tensor3.tucker_reconstruct(core, *fs)
        again = tensor3.tucker_reconstruct(core, *fs)
        assert np.linalg.norm(x - again) <= 1e-10 * np.linalg.norm(x)

    def test_mode_ranks_bounded(self):
        rng = np.random.default_rng(2)
        ranks = (2, 3, 1)
        core = rng.normal(size=ranks)
        x = tensor3.tucker_reconstruct(core, *(rng.normal(size=(7, r)) for r in ranks))
        for mode, r in zip((1, 2, 3), ranks):
            s = np.linalg.svd(tensor3.unfold(x, mode), compute_uv=False)
            assert np.all(s[r:] <= 1e-8 * s[0])

    def test_dimension_mismatch(self):
        with pytest.raises(TensorShapeError):
            tensor3.tucker_reconstruct(np.ones((2, 2, 2)), np.ones((3, 3)), np.ones((3, 2)), np.ones((3, 2)))


class TestSvd:
    def test_identity(self):
        np.testing.assert_allclose(tensor3.svd(np.eye(3)).s, [1, 1, 1])

    def test_diagonal(self):
        np.testing.assert_allclose(tensor3.svd(np.diag([3.0, 2.0, 1.0])).s, [3, 2, 1])

    def test_random_invariants(self):
        m = np.random.default_rng(0).normal(size=(8, 5))
        r = tensor3.svd(m)
        assert r.u.shape == (8, 5) and r.v.shape == (5, 5)
        assert np.all(np.diff(r.s) <= 0) and np.all(r.s >= 0)
        assert np.linalg.norm(r.reconstruct() - m) <= 1e-6 * np.linalg.norm(m)
        np.testing.assert_allclose(r.u.T @ r.u, np.eye(5), atol=1e-6)
        np.testing.assert_allclose(r.v.T @ r.v, np.eye(5), atol=1e-6)

    def test_sign_convention_deterministic(self):
        m = np.random.default_rng(1).normal(size=(6, 4))
        a, b = tensor3.svd(m), tensor3.svd(m.copy())
        np.testing.assert_array_equal(a.u, b.u)
        for col in a.u.T:
            assert col[np.flatnonzero(col)[0]] >= 0

    def test_non_finite(self):
        with pytest.raises(NumericError):
            tensor3.svd(np.array([[1.0, np.nan]]))


class TestNuclearNorm:
    def test_zero(self):
        assert tensor3.nuclear_norm(np.zeros((3, 4))) == 0.0

    def test_diagonal(self):
        assert tensor3.nuclear_norm(np.diag([3.0, 2.0, 1.0])) == pytest.approx(6.0, rel=1e-14)

    def test_rank_one(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=5), rng.normal(size=4)
        assert tensor3.nuclear_norm(np.outer(u, v)) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            tensor3.nuclear_norm(np.array([[np.inf]]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), c=st.floats(-10, 10))
    def test_triangle_and_homogeneity(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        na, nb = tensor3.nuclear_norm(a), tensor3.nuclear_norm(b)
        assert tensor3.nuclear_norm(a + b) <= na + nb + 1e-12
        assert tensor3.nuclear_norm(c * a) == pytest.approx(abs(c) * na, rel=1e-10, abs=1e-12)


def test_linear_layout_roundtrip():
    x = np.random.default_rng(0).normal(size=(3, 4, 5))
    flat = tensor3.to_linear(x)
    assert flat[2 * 12 + 1 * 4 + 3] == x[1, 3, 2]
    np.testing.assert_array_equal(tensor3.from_linear(flat, x.shape), x)
