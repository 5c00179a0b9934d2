import numpy as np
import pytest

from app.classifier import LossConfig, accuracy, build_ansatz, mse_loss, predict, random_parameters, wrap_angles
from app.engine import GateKind
from app.errors import ShapeError, SpecError
from app.models import NoiseMode, NoiseProfile


class TestAnsatz:
    def test_default_shape(self):
        spec = build_ansatz()
        kinds = [g.kind for g in spec.gates]
        assert spec.n_params == 8
        assert kinds.count(GateKind.ry) == 8
        assert kinds.count(GateKind.cz) == 3

    def test_single_layer(self):
        spec = build_ansatz(layers=1)
        assert spec.n_params == 2
        assert all(g.kind != GateKind.cz for g in spec.gates)

    def test_layer_major_indexing(self):
        spec = build_ansatz()
        rotations = [g for g in spec.gates if g.param_index is not None]
        assert [(g.param_index, g.targets[0]) for g in rotations[:4]] == [(0, 0), (1, 1), (2, 0), (3, 1)]

    def test_merged_depth_defaults_to_layers(self):
        assert build_ansatz(noise_mode=NoiseMode.merged).merged_depth == 4


class TestPredict:
    def test_zero_angles_on_basis_state(self):
        assert predict(build_ansatz(), [1, 0, 0, 0], np.zeros(8)) == pytest.approx(1.0)

    def test_odd_parity_input(self):
        assert predict(build_ansatz(), [0, 1, 0, 0], np.zeros(8)) == pytest.approx(0.0, abs=1e-15)

    def test_full_depolarizing_gives_half(self):
        spec = build_ansatz(noise_mode=NoiseMode.merged)
        profile = NoiseProfile(node_id=0, p1=1.0, p2=1.0)
        theta = random_parameters(8, seed=0)
        assert predict(spec, [0.3, 1.2, 0.5, 0.9], theta, profile) == pytest.approx(0.5, abs=1e-12)

    def test_range_and_periodicity(self):
        spec = build_ansatz()
        rng = np.random.default_rng(1)
        for _ in range(20):
            theta = rng.uniform(0, 2 * np.pi, 8)
            x = rng.uniform(0.1, 1, 4)
            y = predict(spec, x, theta)
            assert 0.0 <= y <= 1.0
            shifted = theta.copy()
            shifted[rng.integers(8)] += 2 * np.pi
            assert predict(spec, x, shifted) == pytest.approx(y, abs=1e-12)

    def test_sampled_prediction_in_range(self):
        spec = build_ansatz(noise_mode=NoiseMode.per_gate)
        profile = NoiseProfile.from_p1(0, 0.05)
        y = predict(spec, [1, 2, 3, 4], random_parameters(8, seed=2), profile, shots=8192, seed=5)
        assert 0.0 <= y <= 1.0


class TestLoss:
    def test_perfect_predictions(self):
        assert mse_loss([0.2, 0.7], [0.2, 0.7], np.zeros(8)) == 0.0

    def test_regularizer_only(self):
        theta = np.array([2.0, 0, 0, 0])
        assert mse_loss([1, 0], [1, 0], theta, lam=0.1) == pytest.approx(0.2)

    def test_direct_substitution(self):
        assert mse_loss([1, 0], [0, 1], np.zeros(8)) == pytest.approx(0.5)

    def test_permutation_invariance(self):
        y_hat, y = np.array([0.1, 0.8, 0.4]), np.array([0, 1, 1])
        order = [2, 0, 1]
        assert mse_loss(y_hat, y, [0.0]) == pytest.approx(mse_loss(y_hat[order], y[order], [0.0]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss([0.1, 0.2], [0], [0.0])

    def test_loss_config_validation(self):
        with pytest.raises(SpecError):
            LossConfig(lam=-1.0)


class TestAccuracy:
    def test_threshold_rule(self):
        assert accuracy([0.5, 0.49, 0.9, 0.1], [1, 0, 1, 1]) == pytest.approx(0.75)

    def test_ties_go_to_class_one(self):
        assert accuracy([0.5] * 4, [1, 1, 1, 0]) == pytest.approx(0.75)


def test_wrap_angles():
    np.testing.assert_allclose(wrap_angles(np.array([-0.5, 7.0, 2 * np.pi])), [2 * np.pi - 0.5, 7.0 - 2 * np.pi, 0.0])
