import numpy as np
import pytest

from app.engine import (
    CircuitSpec, DensityMatrix, GateKind, GateOp, Observable, ObservableKind, amplitude_encode, apply_depolarizing,
    apply_gate, expectation, merged_depolarizing_prob, run_circuit,
)
from app.errors import EncodingError, GateError, NoiseError, SpecError, UnsupportedObservable
from app.models import NoiseMode, NoiseProfile

ZZ = Observable.z_parity(2)


def random_state(rng, n_qubits=2):
    dim = 2 ** n_qubits
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return DensityMatrix(n_qubits, rho / np.trace(rho))


class TestAmplitudeEncode:
    def test_basis_state(self):
        state = amplitude_encode([1, 0, 0, 0])
        expected = np.zeros((4, 4))
        expected[0, 0] = 1
        np.testing.assert_allclose(state.entries, expected)

    def test_uniform(self):
        state = amplitude_encode([1, 1, 1, 1])
        np.testing.assert_allclose(state.entries, np.full((4, 4), 0.25))

    def test_normalization(self):
        state = amplitude_encode([3, 4, 0, 0])
        psi = np.array([0.6, 0.8, 0, 0])
        np.testing.assert_allclose(state.entries, np.outer(psi, psi), atol=1e-15)
        assert state.is_valid()

    def test_zero_vector(self):
        with pytest.raises(EncodingError):
            amplitude_encode([0, 0, 0, 0])

    def test_length_not_power_of_two(self):
        with pytest.raises(EncodingError):
            amplitude_encode([1, 2, 3])


class TestApplyGate:
    def test_ry_pi_flips(self):
        state = apply_gate(DensityMatrix.zero_state(1), GateOp(GateKind.ry, (0,)), np.pi)
        np.testing.assert_allclose(state.entries, [[0, 0], [0, 1]], atol=1e-15)

    def test_ry_zero_is_identity(self):
        rho = random_state(np.random.default_rng(1))
        out = apply_gate(rho, GateOp(GateKind.ry, (1,)), 0.0)
        np.testing.assert_allclose(out.entries, rho.entries)

    def test_cz_on_diagonal_state(self):
        rho = amplitude_encode([0, 0, 0, 1])
        out = apply_gate(rho, GateOp(GateKind.cz, (0, 1)))
        np.testing.assert_allclose(out.entries, rho.entries)

    def test_preserves_trace_and_hermiticity(self):
        rng = np.random.default_rng(2)
        rho = random_state(rng)
        for gate, angle in [(GateOp(GateKind.ry, (0,)), 0.7), (GateOp(GateKind.rz, (1,)), -1.3),
                            (GateOp(GateKind.cz, (0, 1)), None)]:
            rho = apply_gate(rho, gate, angle)
            assert abs(rho.trace() - 1) < 1e-12
            np.testing.assert_allclose(rho.entries, rho.entries.conj().T, atol=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(GateError):
            apply_gate(DensityMatrix.zero_state(1), GateOp(GateKind.ry, (1,)), 0.1)

    def test_rotation_needs_single_target(self):
        with pytest.raises(GateError):
            GateOp(GateKind.ry, (0, 1))


class TestDepolarizing:
    def test_zero_probability(self):
        rho = random_state(np.random.default_rng(3))
        assert apply_depolarizing(rho, [0, 1], 0.0) is rho

    def test_full_channel_is_maximally_mixed(self):
        out = apply_depolarizing(amplitude_encode([1, 0, 0, 0]), [0, 1], 1.0)
        np.testing.assert_allclose(out.entries, np.eye(4) / 4)

    def test_parity_scales(self):
        out = apply_depolarizing(amplitude_encode([1, 0, 0, 0]), [0, 1], 0.1)
        assert expectation(out, ZZ) == pytest.approx(0.9, abs=1e-12)

    @pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
    def test_global_channel_scaling(self, p):
        rng = np.random.default_rng(4)
        for _ in range(10):
            rho = random_state(rng)
            noisy = apply_depolarizing(rho, [0, 1], p)
            assert expectation(noisy, ZZ) == pytest.approx((1 - p) * expectation(rho, ZZ), abs=1e-12)

    def test_subset_channel_traces_out_one_qubit(self):
        # |00> with qubit 1 fully depolarized: qubit 0 stays |0>, qubit 1 becomes I/2
        out = apply_depolarizing(amplitude_encode([1, 0, 0, 0]), [1], 1.0)
        np.testing.assert_allclose(out.entries, np.diag([0.5, 0.5, 0, 0]), atol=1e-15)
        assert out.is_valid()

    def test_subset_channel_preserves_trace(self):
        rho = random_state(np.random.default_rng(5))
        out = apply_depolarizing(rho, [0], 0.4)
        assert abs(out.trace() - 1) < 1e-12
        assert out.is_valid()

    def test_probability_out_of_range(self):
        with pytest.raises(NoiseError):
            apply_depolarizing(DensityMatrix.zero_state(2), [0], 1.5)


class TestMergedProbability:
    def test_values(self):
        assert merged_depolarizing_prob(0.01, 2) == pytest.approx(0.0199, abs=1e-14)
        assert merged_depolarizing_prob(0.0, 7) == 0.0
        assert merged_depolarizing_prob(1.0, 3) == 1.0

    def test_composition(self):
        for p in (0.01, 0.2, 0.7):
            for n1, n2 in [(1, 1), (2, 3), (4, 1)]:
                a, b = merged_depolarizing_prob(p, n1), merged_depolarizing_prob(p, n2)
                assert merged_depolarizing_prob(p, n1 + n2) == pytest.approx(1 - (1 - a) * (1 - b), abs=1e-14)

    def test_invalid_layers(self):
        with pytest.raises(NoiseError):
            merged_depolarizing_prob(0.1, 0)


class TestRunCircuit:
    def test_empty_circuit(self):
        rho = random_state(np.random.default_rng(6))
        out = run_circuit(CircuitSpec(2, ()), rho, [])
        np.testing.assert_allclose(out.entries, rho.entries)

    def test_single_gate_noiseless_profile(self):
        gate = GateOp(GateKind.ry, (0,), param_index=0)
        spec = CircuitSpec(1, (gate,), NoiseMode.per_gate)
        profile = NoiseProfile(node_id=0, p1=0.0, p2=0.0)
        out = run_circuit(spec, DensityMatrix.zero_state(1), [0.8], profile)
        np.testing.assert_allclose(out.entries, apply_gate(DensityMatrix.zero_state(1), gate, 0.8).entries)

    def test_merged_mode_on_zero_state(self):
        spec = CircuitSpec(2, (), NoiseMode.merged, merged_depth=1)
        profile = NoiseProfile.from_p1(0, 0.1)
        out = run_circuit(spec, DensityMatrix.zero_state(2), [], profile)
        np.testing.assert_allclose(np.real(np.diag(out.entries)), 0.9 * np.array([1, 0, 0, 0]) + 0.1 * 0.25)

    def test_per_gate_uses_two_qubit_probability(self):
        spec = CircuitSpec(2, (GateOp(GateKind.cz, (0, 1)),), NoiseMode.per_gate)
        profile = NoiseProfile(node_id=0, p1=0.0, p2=0.2)
        out = run_circuit(spec, DensityMatrix.zero_state(2), [], profile)
        assert expectation(out, ZZ) == pytest.approx(0.8, abs=1e-12)

    def test_parameter_count_mismatch(self):
        spec = CircuitSpec(1, (GateOp(GateKind.ry, (0,), param_index=0),))
        with pytest.raises(SpecError):
            run_circuit(spec, DensityMatrix.zero_state(1), [0.1, 0.2])

    def test_param_indices_contiguous(self):
        with pytest.raises(SpecError):
            CircuitSpec(1, (GateOp(GateKind.ry, (0,), param_index=1),))


class TestExpectation:
    def test_analytic_values(self):
        assert expectation(DensityMatrix.zero_state(2), ZZ) == 1.0
        assert expectation(DensityMatrix.maximally_mixed(2), ZZ) == pytest.approx(0.0, abs=1e-15)

    def test_degenerate_sampling(self):
        assert expectation(DensityMatrix.zero_state(2), ZZ, shots=8192, seed=0) == 1.0

    def test_sampling_within_five_standard_errors(self):
        rng = np.random.default_rng(8)
        shots = 100_000
        for seed in range(5):
            rho = random_state(rng)
            exact = expectation(rho, ZZ)
            sampled = expectation(rho, ZZ, shots=shots, seed=seed)
            stderr = np.sqrt(max(1 - exact ** 2, 1e-12) / shots)
            assert abs(sampled - exact) < 5 * stderr

    def test_sampling_is_seeded(self):
        rho = random_state(np.random.default_rng(9))
        assert expectation(rho, ZZ, shots=100, seed=3) == expectation(rho, ZZ, shots=100, seed=3)

    def test_non_diagonal_observable_rejected_when_sampled(self):
        x = np.array([[0, 1], [1, 0]], dtype=np.complex128)
        observable = Observable(ObservableKind.custom, 1, x)
        rho = amplitude_encode([1, 1])
        assert expectation(rho, observable) == pytest.approx(1.0)
        with pytest.raises(UnsupportedObservable):
            expectation(rho, observable, shots=10, seed=0)
