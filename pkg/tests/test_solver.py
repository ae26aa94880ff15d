import numpy as np
import pytest

from neurstt import autograd as ag
from neurstt import lrtf, solver, synth
from neurstt.checks import LOSS_VARIANTS, loss_gradient_errors, small_instance


class TestSoftThreshold:
    def test_examples(self):
        np.testing.assert_allclose(solver.soft_threshold([0.5, -0.05, -0.5], 0.1), [0.4, 0.0, -0.4])
        np.testing.assert_array_equal(solver.soft_threshold([0.3, -2.0], 0.0), [0.3, -2.0])

    def test_negative_level(self):
        with pytest.raises(ValueError):
            solver.soft_threshold(1.0, -0.1)

    def test_prox_oracle(self):
        rng = np.random.default_rng(0)
        grid = np.arange(-3, 3 + 1e-4, 1e-4)
        for _ in range(100):
            x, v = rng.uniform(-2, 2), rng.uniform(0, 1)
            best = grid[np.argmin(0.5 * (grid - x) ** 2 + v * np.abs(grid))]
            assert abs(solver.soft_threshold(x, v) - best) <= 1e-4


class TestLosses:
    def test_nuclear_per_frame(self):
        b = np.zeros((3, 3, 2))
        b[:, :, 0] = np.diag([3.0, 2.0, 1.0])
        b[:, :, 1] = np.eye(3)
        assert solver.loss_nuclear(b) == pytest.approx(9.0)

    def test_total_decomposition(self):
        d = small_instance()
        cfg = solver.SolverConfig()
        rep = lrtf.init_representation(d.shape, cfg.ranks(d.shape), seed=0)
        terms = solver.loss_total(d, rep, cfg)
        b = lrtf.background(rep)
        t = solver.soft_threshold(d - b, cfg.lam / 2)
        tv = cfg.phi * lrtf.neural_tv(rep, cfg.tv_config)
        assert terms.values()[0] == pytest.approx(solver.loss_nuclear(b), rel=1e-10)
        assert terms.values()[1] == pytest.approx(np.abs(t).sum(), rel=1e-12)
        assert terms.values()[2] == pytest.approx(tv, rel=1e-12)
        assert terms.values()[3] == pytest.approx(sum(terms.values()[:3]), rel=1e-12)

    def test_dims_mismatch(self):
        rep = lrtf.init_representation((4, 4, 3), (1, 1, 1))
        with pytest.raises(Exception):
            solver.loss_total(np.zeros((4, 4, 2)), rep, solver.SolverConfig())

    @pytest.mark.parametrize("variant", LOSS_VARIANTS, ids=lambda v: "-".join(v.values()))
    def test_loss_gradient(self, variant):
        errors = loss_gradient_errors(solver.SolverConfig(**variant))
        assert max(errors.values()) <= 1e-4, errors


class TestPostprocess:
    def test_adaptive_threshold_all_zero(self):
        assert not solver.adaptive_threshold(np.zeros((3, 3, 2))).any()

    def test_single_spike(self):
        t = np.zeros((10, 10, 2))
        t[4, 4, 1] = 1.0
        m = solver.adaptive_threshold(t)
        assert m.sum() == 1 and m[4, 4, 1] == 1

    def test_normalize(self):
        out = solver.normalize_target(np.array([-2.0, 1.0, 0.0]))
        np.testing.assert_allclose(out, [1.0, 0.5, 0.0])


class TestConfig:
    def test_defaults(self):
        cfg = solver.SolverConfig()
        assert (cfg.lam, cfg.phi, cfg.kappa, cfg.iters, cfg.lr, cfg.weight_decay) == (0.2, 5e-5, 100, 2000, 5e-4, 0.01)
        assert cfg.ranks((64, 64, 20)) == (16, 16, 5)

    @pytest.mark.parametrize("bad", [dict(lam=0), dict(iters=0), dict(tv="fancy"), dict(activation="gelu"), dict(rank_div=0.5)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            solver.SolverConfig(**bad)


class TestRun:
    def test_rejects_degenerate_dims(self):
        with pytest.raises(Exception):
            solver.run(np.zeros((4, 4, 1)), solver.SolverConfig(iters=2))

    def test_history_shape_and_callback(self):
        d = small_instance()
        seen = []
        res = solver.run(d, solver.SolverConfig(iters=5), callback=lambda k, v: seen.append(k))
        assert res.loss_history.shape == (5, 4) and seen == [1, 2, 3, 4, 5]
        assert res.masks.dtype == np.uint8 and res.target.min() >= 0 and res.target.max() <= 1

    def test_convergence_stops_early(self):
        d = small_instance()
        res = solver.run(d, solver.SolverConfig(iters=500, conv_window=5, conv_tol=1.0))
        assert res.iterations == 10

    def test_divergence_reports_iteration(self):
        d = small_instance()
        with pytest.raises(solver.SolverDivergence) as info:
            solver.run(d, solver.SolverConfig(iters=50, lr=1e300))
        assert info.value.iteration >= 1

    def test_self_representation(self):
        cfg = synth.SynthConfig(height=16, width=16, frames=8, amplitude=0.0)
        d, _ = synth.generate(cfg)
        res = solver.run(d, solver.SolverConfig(iters=1000))
        t = solver.soft_threshold(d - res.background, 0.1)
        assert np.abs(t).sum() / np.abs(d).sum() <= 0.01

    def test_loss_decreases(self):
        d, _ = synth.generate(synth.SynthConfig(height=16, width=16, frames=6, target_size=1))
        res = solver.run(d, solver.SolverConfig(iters=200))
        assert res.loss_history[-1, 3] < res.loss_history[0, 3]
