import numpy as np
import pytest

from app.errors import InfeasibleTarget, MetricError
from app.models import NoiseGeneration, NoiseInstance, NoiseProfile
from app.noise_lab import (
    differ_metric, generate_profiles_for_differ, load_instance, profiles_from_p1, sample_gaussian_profiles,
    save_instance,
)


class TestGaussianProfiles:
    def test_zero_mean_is_noiseless(self):
        instance = sample_gaussian_profiles(4, 0.0, seed=1)
        assert instance.p1_values == [0.0] * 4
        assert all(p.p2 == 0.0 for p in instance.profiles)

    def test_moments(self):
        instance = sample_gaussian_profiles(20_000, 0.05, seed=2)
        p1 = np.array(instance.p1_values)
        sigma = 0.05 / 9
        assert abs(p1.mean() - 0.05) < 5 * sigma / np.sqrt(p1.size)
        assert p1.std() == pytest.approx(sigma, rel=0.05)

    def test_two_qubit_probability(self):
        instance = sample_gaussian_profiles(8, 0.03, seed=3)
        for profile in instance.profiles:
            assert profile.p2 == pytest.approx(4 * profile.p1)

    def test_seeded(self):
        assert sample_gaussian_profiles(4, 0.01, seed=5) == sample_gaussian_profiles(4, 0.01, seed=5)

    def test_node_ids(self):
        assert [p.node_id for p in sample_gaussian_profiles(3, 0.01, seed=0).profiles] == [0, 1, 2]


class TestProfilesFromP1:
    def test_clamps_two_qubit_probability(self, caplog):
        profiles = profiles_from_p1([0.1, 0.5])
        assert profiles[0].p2 == pytest.approx(0.4)
        assert profiles[1].p2 == 1.0
        assert "two_qubit_probability_clamped" in caplog.text


class TestDifferMetric:
    def test_uniform(self):
        assert differ_metric([0.02, 0.02, 0.02, 0.02]) == pytest.approx(0.0, abs=1e-15)

    def test_single_noisy_node(self):
        assert differ_metric([1.0, 0.0]) == pytest.approx(np.log(2))

    def test_uneven_pair(self):
        assert differ_metric([0.75, 0.25]) == pytest.approx(0.1308, abs=1e-4)

    def test_scale_invariance(self):
        assert differ_metric([0.03, 0.01]) == pytest.approx(differ_metric([0.75, 0.25]))

    def test_accepts_instance(self):
        instance = NoiseInstance(profiles=profiles_from_p1([0.75, 0.25]), mu=0.5, generation=NoiseGeneration.explicit)
        assert differ_metric(instance) == pytest.approx(differ_metric([0.75, 0.25]))

    def test_all_noiseless(self):
        with pytest.raises(MetricError):
            differ_metric([0.0, 0.0, 0.0])


class TestGenerateForDiffer:
    @pytest.mark.parametrize("nodes", [2, 4, 8])
    @pytest.mark.parametrize("target", [0.05, 0.3, 0.6])
    def test_hits_target_and_mean(self, nodes, target):
        instance = generate_profiles_for_differ(nodes, target, mean=0.04, seed=nodes)
        assert differ_metric(instance) == pytest.approx(target, abs=1e-6)
        assert np.mean(instance.p1_values) == pytest.approx(0.04)
        assert all(p >= 0 for p in instance.p1_values)
        assert instance.generation == NoiseGeneration.differ
        assert instance.construction == "simplex-interpolation"

    def test_zero_target_is_uniform(self):
        instance = generate_profiles_for_differ(4, 0.0, mean=0.04)
        np.testing.assert_allclose(instance.p1_values, 0.04)

    def test_seeded(self):
        a = generate_profiles_for_differ(4, 0.3, seed=9)
        b = generate_profiles_for_differ(4, 0.3, seed=9)
        assert a.p1_values == b.p1_values

    @pytest.mark.parametrize("nodes,target", [(2, 0.7), (4, 1.39), (1, 0.1), (4, -0.1)])
    def test_infeasible(self, nodes, target):
        with pytest.raises(InfeasibleTarget):
            generate_profiles_for_differ(nodes, target)


def test_save_and_load(tmp_path):
    instance = generate_profiles_for_differ(4, 0.3, seed=1)
    path = save_instance(instance, tmp_path / "noise" / "instance.json")
    loaded = load_instance(path)
    assert loaded == instance
    assert isinstance(loaded.profiles[0], NoiseProfile)
