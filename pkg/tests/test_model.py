"""Model parameters, constraints and persistence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gmmstream as gs
from gmmstream.annealing import AnnealingState
from gmmstream.errors import (
    ConfigurationError,
    ModelParseError,
    ModelVersionError,
    ShapeError,
)

from conftest import oracle_softmax


class TestInitModel:
    def test_defaults_k64(self):
        cfg = gs.TrainConfig(seed=0)
        m = gs.init_model(64, 784, cfg)
        w = gs.weights(m)
        np.testing.assert_allclose(w, 1.0 / 64, atol=1e-15)
        assert np.all(m.d_diag == 20.0)
        assert np.all(np.abs(m.mu) <= 0.1)
        assert m.grid_side == 8

    def test_degenerate_single_component(self):
        cfg = gs.TrainConfig(seed=1, mu_i=0.0)
        m = gs.init_model(1, 1, cfg)
        assert m.mu[0, 0] == 0.0
        assert gs.weights(m)[0] == 1.0
        assert m.d_diag[0, 0] == 20.0

    def test_deterministic_for_fixed_seed(self):
        cfg = gs.TrainConfig(seed=7)
        a = gs.init_model(4, 2, cfg)
        b = gs.init_model(4, 2, cfg)
        assert np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.xi, b.xi)
        assert np.array_equal(a.d_diag, b.d_diag)

    def test_non_square_k_rejected(self):
        with pytest.raises(ConfigurationError, match="perfect square"):
            gs.init_model(5, 2, gs.TrainConfig())

    @pytest.mark.parametrize("k,dim", [(0, 2), (4, 0)])
    def test_zero_sizes_rejected(self, k, dim):
        with pytest.raises(ConfigurationError):
            gs.init_model(k, dim, gs.TrainConfig())


class TestTrainConfig:
    def test_floor_above_initial_rejected(self):
        with pytest.raises(ConfigurationError):
            gs.TrainConfig(eps0=0.001, eps_inf=0.01)
        with pytest.raises(ConfigurationError):
            gs.TrainConfig(sigma0=1.0, sigma_inf=2.0)

    def test_equal_sigma_allowed_for_ablation(self):
        cfg = gs.TrainConfig(sigma0=0.01, sigma_inf=0.01)
        assert cfg.sigma0 == cfg.sigma_inf

    def test_delta_range(self):
        with pytest.raises(ConfigurationError):
            gs.TrainConfig(delta=0.0)
        with pytest.raises(ConfigurationError):
            gs.TrainConfig(delta=1.0)

    def test_d_floor_derived(self):
        assert gs.TrainConfig(d_max=20.0).d_floor == pytest.approx(2e-5)


class TestWeights:
    def test_uniform_logits(self):
        m = gs.GmmModel(k=4, dim=1, xi=np.zeros(4), mu=np.zeros((4, 1)), d_diag=np.ones((4, 1)))
        np.testing.assert_allclose(gs.weights(m), 0.25, atol=1e-15)

    def test_shift_invariance(self):
        for c in (0.0, -3.5, 1234.0):
            m = gs.GmmModel(
                k=2, dim=1, xi=np.array([c, c + np.log(3)]), mu=np.zeros((2, 1)), d_diag=np.ones((2, 1))
            )
            np.testing.assert_allclose(gs.weights(m), [0.25, 0.75], atol=1e-12)

    def test_huge_logits_match_high_precision_oracle(self):
        m = gs.GmmModel(
            k=2, dim=1, xi=np.array([1000.0, 1001.0]), mu=np.zeros((2, 1)), d_diag=np.ones((2, 1))
        )
        w = gs.weights(m)
        assert np.all(np.isfinite(w))
        # oracle_softmax(1000, 1001) == softmax(0, 1), frozen:
        np.testing.assert_allclose(w, [0.26894142136999512, 0.73105857863000488], rtol=1e-14)
        expect = [float(v) for v in oracle_softmax([1000.0, 1001.0])]
        np.testing.assert_allclose(w, expect, rtol=1e-14)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=9))
    @settings(max_examples=50, deadline=None)
    def test_sum_one_and_argmax_preserved(self, logits):
        xi = np.asarray(logits)
        m = gs.GmmModel(k=len(logits), dim=1, xi=xi, mu=np.zeros((len(logits), 1)), d_diag=np.ones((len(logits), 1)))
        w = gs.weights(m)
        assert abs(w.sum() - 1.0) < 1e-12
        # ties below float resolution collapse to equal weights, so assert
        # the top logit achieves the maximum rather than index equality
        assert w[np.argmax(xi)] == w.max()
        assert np.all(w > 0) and np.all(w < 1 + 1e-15)


class TestEnforceConstraints:
    def test_upper_clip(self):
        cfg = gs.TrainConfig(d_max=20.0)
        m = gs.init_model(4, 2, cfg)
        m.d_diag[1, 1] = 25.0
        gs.enforce_constraints(m, cfg)
        assert m.d_diag[1, 1] == 20.0

    def test_lower_clip(self):
        cfg = gs.TrainConfig(d_max=20.0)
        m = gs.init_model(4, 2, cfg)
        m.d_diag[0, 0] = -0.3
        gs.enforce_constraints(m, cfg)
        assert m.d_diag[0, 0] == cfg.d_floor

    def test_in_range_untouched_bit_for_bit(self):
        cfg = gs.TrainConfig()
        m = gs.init_model(4, 2, cfg)
        m.d_diag = np.full((4, 2), 3.25)
        before = m.d_diag.copy()
        xi_before, mu_before = m.xi.copy(), m.mu.copy()
        gs.enforce_constraints(m, cfg)
        assert np.array_equal(m.d_diag, before)
        assert np.array_equal(m.xi, xi_before)
        assert np.array_equal(m.mu, mu_before)

    @given(st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, value):
        cfg = gs.TrainConfig()
        m = gs.init_model(4, 2, cfg)
        m.d_diag[:] = value
        gs.enforce_constraints(m, cfg)
        once = m.d_diag.copy()
        gs.enforce_constraints(m, cfg)
        assert np.array_equal(m.d_diag, once)
        assert once.min() >= cfg.d_floor > 0
        assert once.max() <= cfg.d_max


class TestPersistence:
    def make_state(self):
        return AnnealingState(
            sigma=1.23, eps=0.0007, ell=-55.5, ell_prev=-60.25, loss0=-200.125,
            alpha=0.001, iteration=4321,
        )

    def test_round_trip_bit_exact(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        state = self.make_state()
        gs.save_model(tiny_model, state, path)
        loaded, lstate = gs.load_model(path)
        assert loaded.k == tiny_model.k and loaded.dim == tiny_model.dim
        assert np.array_equal(loaded.xi, tiny_model.xi)
        assert np.array_equal(loaded.mu, tiny_model.mu)
        assert np.array_equal(loaded.d_diag, tiny_model.d_diag)
        assert lstate.sigma == state.sigma
        assert lstate.eps == state.eps
        assert lstate.ell == state.ell
        assert lstate.ell_prev == state.ell_prev
        assert lstate.loss0 == state.loss0
        assert lstate.alpha == state.alpha
        assert lstate.iteration == state.iteration

    def test_round_trip_without_state(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        loaded, lstate = gs.load_model(path)
        assert lstate is None
        assert np.array_equal(loaded.mu, tiny_model.mu)

    def test_save_twice_identical_bytes(self, tmp_path, tiny_model):
        a, b = tmp_path / "a.gmm", tmp_path / "b.gmm"
        gs.save_model(tiny_model, self.make_state(), a)
        gs.save_model(tiny_model, self.make_state(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_version_rejected_without_partial_model(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        text = path.read_text().replace("gmmstream-model 1", "gmmstream-model 99", 1)
        path.write_text(text)
        with pytest.raises(ModelVersionError):
            gs.load_model(path)

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "m.gmm"
        path.write_text("something-else 1\nk 1 dim 1\n")
        with pytest.raises(ModelVersionError):
            gs.load_model(path)

    def test_shape_mismatch_detected(self, tmp_path, tiny_model):
        # declare k=4 but drop one centroid row
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        lines = path.read_text().splitlines()
        mu_lines = [i for i, ln in enumerate(lines) if ln.startswith("mu ")]
        del lines[mu_lines[-1]]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises((ShapeError, ModelParseError)):
            gs.load_model(path)

    def test_wrong_row_width_is_shape_error(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        lines = path.read_text().splitlines()
        idx = next(i for i, ln in enumerate(lines) if ln.startswith("mu "))
        lines[idx] = "mu 0.5"  # dim is 3
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ShapeError):
            gs.load_model(path)

    def test_truncated_file_detected(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:3]) + "\n")
        with pytest.raises(ModelParseError):
            gs.load_model(path)

    def test_bad_float_detected(self, tmp_path, tiny_model):
        path = tmp_path / "m.gmm"
        gs.save_model(tiny_model, None, path)
        text = path.read_text()
        first_xi_line = next(ln for ln in text.splitlines() if ln.startswith("xi "))
        broken = first_xi_line.rsplit(" ", 1)[0] + " not-a-number"
        path.write_text(text.replace(first_xi_line, broken))
        with pytest.raises(ModelParseError):
            gs.load_model(path)
