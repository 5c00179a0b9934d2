import math

import numpy as np
import pytest

from app.errors import BoundUndefined, MetricError, SpecError, SpeedupUndefined
from app.models import CommLedger, HistoryRow, RunResult
from app.theory import (
    ConvergenceRecord, TheoryParams, descent_bound, ideal_speedup, measured_speedup, r1_iteration_mean, r1_metric,
    r1_upper_bound, record_from_run, wall_proxy_speedup,
)

BASE = dict(d=8, lam=0.0, shots=8192, n_data=75, iterations=100, p_tilde_max=0.0)


def params(**changes) -> TheoryParams:
    return TheoryParams(**{**BASE, **changes})


class TestIdealSpeedup:
    @pytest.mark.parametrize("nodes,expected", [(1, 1.0), (2, 17 / 9), (4, 3.4), (8, 17 / 3)])
    def test_values(self, nodes, expected):
        assert ideal_speedup(8, nodes) == pytest.approx(expected)

    def test_increasing_in_nodes(self):
        values = [ideal_speedup(16, m) for m in range(1, 17)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert values[-1] < 2 * 16 + 1

    def test_invalid(self):
        with pytest.raises(SpecError):
            ideal_speedup(8, 0)


class TestMeasuredSpeedup:
    def test_equal_iterations_give_ideal(self):
        record = ConvergenceRecord(converged=True, iterations=120)
        assert measured_speedup(record, record, 8, 4) == pytest.approx(ideal_speedup(8, 4))

    def test_twice_the_iterations(self):
        single = ConvergenceRecord(converged=True, iterations=100)
        parallel = ConvergenceRecord(converged=True, iterations=200)
        assert measured_speedup(single, parallel, 8, 4) == pytest.approx(1.7)

    def test_unconverged(self):
        single = ConvergenceRecord(converged=True, iterations=100)
        with pytest.raises(SpeedupUndefined):
            measured_speedup(single, ConvergenceRecord(converged=False, iterations=500), 8, 2)

    def test_wall_proxy(self):
        single = ConvergenceRecord(converged=True, iterations=10, wall_circuits=850)
        parallel = ConvergenceRecord(converged=True, iterations=10, wall_circuits=250)
        assert wall_proxy_speedup(single, parallel) == pytest.approx(3.4)

    def test_wall_proxy_needs_counts(self):
        record = ConvergenceRecord(converged=True, iterations=10)
        with pytest.raises(SpeedupUndefined):
            wall_proxy_speedup(record, record)


class TestR1:
    def test_zero_gradients(self):
        assert r1_metric([np.zeros(8), np.zeros(8)]) == 0.0

    def test_single_run(self):
        assert r1_metric([[3.0, 4.0] + [0.0] * 6]) == pytest.approx(25.0)

    def test_mean_over_runs(self):
        assert r1_metric([[1.0, 0.0], [0.0, 3.0]]) == pytest.approx(5.0)

    def test_empty(self):
        with pytest.raises(MetricError):
            r1_metric([])

    def test_iteration_mean(self):
        assert r1_iteration_mean([[1.0, 3.0], [4.0], []]) == pytest.approx(3.0)

    def test_iteration_mean_needs_values(self):
        with pytest.raises(MetricError):
            r1_iteration_mean([[], []])


class TestUpperBound:
    def test_noiseless_value(self):
        expected = 0.005 + 131080 / 10066329600
        assert r1_upper_bound(params()) == pytest.approx(expected, abs=1e-12)
        assert r1_upper_bound(params()) == pytest.approx(0.0050130, abs=1e-7)

    def test_vanishes_in_the_limit(self):
        assert r1_upper_bound(params(iterations=10 ** 12, shots=10 ** 9)) < 1e-8

    def test_monotone_in_noise(self):
        grid = np.linspace(0.0, 0.9, 30)
        values = [r1_upper_bound(params(p_tilde_max=p, lam=0.01)) for p in grid]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_undefined_at_full_noise(self):
        with pytest.raises(BoundUndefined):
            r1_upper_bound(params(p_tilde_max=1.0))

    def test_smoothness_and_lipschitz(self):
        for d, lam in [(8, 0.0), (4, 0.1), (16, 0.5)]:
            p = params(d=d, lam=lam)
            assert p.smoothness == pytest.approx((1.5 + lam) * d ** 2)
            assert p.lipschitz == pytest.approx(d * (1 + 3 * math.pi * lam))

    def test_invalid_params(self):
        with pytest.raises(SpecError):
            params(p_tilde_max=1.5)
        with pytest.raises(SpecError):
            params(shots=0)


def test_record_from_run():
    result = RunResult(
        run=0, seed=1, converged=True, iterations=2, final_gradient=[0.0, 2.0],
        ledger=CommLedger(wall_circuits=90),
        history=[HistoryRow(iteration=0, loss=0.2, train_acc=0.5, test_acc=0.5, grad_norm=3.0,
                            transmitted_components=8, circuits=90)],
    )
    record = record_from_run(result)
    assert record.converged and record.iterations == 2 and record.wall_circuits == 90
    assert record.grad_norm_sq == [9.0]
    np.testing.assert_array_equal(record.final_gradient, [0.0, 2.0])


def test_record_rejects_negative_counts():
    with pytest.raises(MetricError):
        ConvergenceRecord(converged=True, iterations=-1)


class TestDescentBound:
    def test_noiseless_value(self):
        expected = 2 * 96 * 0.5 / 100 + 131080 / 10066329600
        assert descent_bound(params()) == pytest.approx(expected, abs=1e-12)

    def test_loss_ceiling(self):
        assert params().loss_ceiling == 0.5
        assert params(lam=0.1).loss_ceiling == pytest.approx(0.5 + 2 * math.pi ** 2 * 0.1 * 8)

    def test_dominates_upper_bound(self):
        for p in (0.0, 0.1, 0.5):
            for lam in (0.0, 0.05):
                assert descent_bound(params(p_tilde_max=p, lam=lam)) > r1_upper_bound(params(p_tilde_max=p, lam=lam))

    def test_same_noise_terms(self):
        gap = descent_bound(params(p_tilde_max=0.2)) - r1_upper_bound(params(p_tilde_max=0.2))
        assert gap == pytest.approx((0.96 - 0.005) / 0.8 ** 2)

    def test_undefined_at_full_noise(self):
        with pytest.raises(BoundUndefined):
            descent_bound(params(p_tilde_max=1.0))
