import math

import numpy as np
import pytest

from neurstt import autograd as ag
from neurstt.checks import numeric_gradient, primitive_checks, relative_error
from neurstt.tensor3 import NumericError, TensorShapeError


class TestEvaluate:
    def test_leaf(self):
        assert ag.evaluate(ag.leaf(5.0)) == 5.0

    def test_sin(self):
        assert ag.evaluate(ag.sin(ag.leaf(math.pi / 2))) == pytest.approx(1.0)

    def test_soft_threshold_then_abs_sum(self):
        x = ag.leaf([0.5, -0.05])
        assert ag.evaluate(ag.abs_sum(ag.soft_threshold(x, 0.1))) == pytest.approx(0.4)

    def test_shape_mismatch(self):
        with pytest.raises(TensorShapeError):
            ag.add(ag.leaf(np.zeros(2)), ag.leaf(np.zeros(3)))
        with pytest.raises(TensorShapeError):
            ag.matmul(ag.leaf(np.zeros((2, 3))), ag.leaf(np.zeros((2, 3))))

    def test_non_finite_intermediate(self):
        with pytest.raises(NumericError):
            ag.scale(ag.leaf([1e308]), 1e10)


class TestBackward:
    def test_sine_chain(self):
        w, x = ag.leaf(2.0, name="w"), ag.leaf(0.0, name="x")
        g = ag.backward(ag.sin(ag.elementwise_mul(w, x)))
        assert g[x] == pytest.approx(2.0)

    def test_nuclear_norm_of_positive_diagonal(self):
        m = ag.leaf(np.diag([3.0, 2.0, 1.0])[:, :, None])
        g = ag.backward(ag.nuclear_norm_slices(m))[m]
        np.testing.assert_allclose(g[:, :, 0], np.eye(3), atol=1e-12)

    def test_non_scalar_root(self):
        with pytest.raises(TensorShapeError):
            ag.backward(ag.leaf(np.zeros(3)))

    def test_constants_get_no_gradient(self):
        a, c = ag.leaf(np.ones(2), name="a"), ag.constant(np.ones(2))
        g = ag.backward(ag.sum_(ag.elementwise_mul(a, c)))
        assert a in g and c not in g

    def test_shared_subexpression_accumulates(self):
        x = ag.leaf(np.array([0.3, -0.7]), name="x")
        s = ag.sin(x)
        root = ag.sum_(ag.elementwise_mul(s, s))
        np.testing.assert_allclose(ag.backward(root)[x], 2 * np.sin(x.value) * np.cos(x.value), rtol=1e-12)

    @pytest.mark.parametrize("result", primitive_checks(), ids=lambda r: r.name)
    def test_primitive_against_finite_differences(self, result):
        assert result.ok, result.detail

    def test_three_layer_composite(self):
        rng = np.random.default_rng(5)
        w0, w1, w2 = rng.normal(size=(1, 6)), rng.normal(size=(6, 6)), rng.normal(size=(6, 2))
        x = np.linspace(-1, 1, 7)[:, None]

        def loss(w1_value):
            h = ag.sin(ag.matmul(ag.sin(ag.matmul(ag.constant(x), ag.constant(w0))), ag.leaf(w1_value, name="w1")))
            return ag.squared_frobenius(ag.matmul(h, ag.constant(w2)))

        leaf = ag.leaf(w1, name="w1")
        h = ag.sin(ag.matmul(ag.sin(ag.matmul(ag.constant(x), ag.constant(w0))), leaf))
        analytic = ag.backward(ag.squared_frobenius(ag.matmul(h, ag.constant(w2))))[leaf]
        numeric = numeric_gradient(lambda v: float(loss(v).value), w1)
        assert relative_error(analytic, numeric) <= 1e-5

    def test_linearity(self):
        rng = np.random.default_rng(6)
        value = rng.normal(size=(3, 4))
        a, b = 1.7, -0.4

        def grads(coef_f, coef_g):
            x = ag.leaf(value, name="x")
            f = ag.squared_frobenius(ag.sin(x))
            g = ag.sum_(ag.elementwise_mul(x, ag.cos(x)))
            return ag.backward(ag.add(ag.scale(f, coef_f), ag.scale(g, coef_g)))[x]

        np.testing.assert_allclose(grads(a, b), a * grads(1, 0) + b * grads(0, 1), atol=1e-10)

    def test_determinism(self):
        value = np.random.default_rng(7).normal(size=(5, 4, 3))
        out = []
        for _ in range(2):
            x = ag.leaf(value, name="x")
            out.append(ag.backward(ag.nuclear_norm_slices(ag.sin(x)))[x])
        assert np.array_equal(out[0], out[1])


class TestAdam:
    def test_zero_gradient_no_decay(self):
        params = {"p": np.array([1.0, -2.0])}
        new, _ = ag.adam_step(params, {"p": np.zeros(2)}, ag.AdamState(lr=0.1, weight_decay=0.0))
        np.testing.assert_array_equal(new["p"], params["p"])

    def test_first_step_bounded_and_signed(self):
        g = np.array([3.0, -0.2, 1e-3])
        lr = 0.01
        new, state = ag.adam_step({"p": np.zeros(3)}, {"p": g}, ag.AdamState(lr=lr, weight_decay=0.0))
        step = new["p"]
        assert np.all(np.abs(step) <= lr * (1 + 1e-8))
        np.testing.assert_array_equal(np.sign(step), -np.sign(g))
        assert state.t == 1 and np.all(state.v["p"] >= 0)

    def test_scalar_descent(self):
        theta = {"t": np.array(0.0)}
        state = ag.AdamState(lr=0.1, weight_decay=0.0)
        for _ in range(50):
            theta, state = ag.adam_step(theta, {"t": 2 * (theta["t"] - 3.0)}, state)
        assert abs(theta["t"] - 3.0) < 3.0

    def test_coupled_weight_decay(self):
        # with zero loss gradient the decay term alone drives the update
        new, state = ag.adam_step({"p": np.array([2.0])}, {"p": np.zeros(1)}, ag.AdamState(lr=0.1, weight_decay=0.5))
        assert new["p"][0] < 2.0
        assert state.m["p"][0] == pytest.approx(0.1 * 0.5 * 2.0)

    def test_non_finite_gradient_names_parameter(self):
        with pytest.raises(NumericError, match="core"):
            ag.adam_step({"core": np.zeros(2)}, {"core": np.array([np.nan, 0])}, ag.AdamState())
