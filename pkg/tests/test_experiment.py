import math

import numpy as np
import pytest

from semiflat.experiment import (
    CSV_HEADER,
    ExperimentConfig,
    ExperimentRow,
    gen_error,
    generate_data,
    rows_from_csv,
    rows_to_csv,
    run_generalization_experiment,
    trend_test,
)
from semiflat.network import forward


def small(**kw):
    base = {"activation": "tanh", "trials": 20, "H_sweep": (5, 7, 9)}
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.H_sweep == tuple(range(5, 21))
        assert (cfg.n_train, cfg.noise_std, cfg.trials, cfg.perturb_ratio) == (10, 0.1, 1000, 0.01)

    @pytest.mark.parametrize("kw", [{"perturb_ratio": 0.0}, {"trials": 0}, {"H_sweep": (4, 6)},
                                    {"noise_std": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)


class TestData:
    def test_noiseless_targets_on_teacher(self):
        data = generate_data(small(noise_std=0.0))
        np.testing.assert_array_equal(data.train.targets, forward(data.teacher, data.train.inputs))

    def test_deterministic(self):
        a, b = generate_data(small()), generate_data(small())
        np.testing.assert_array_equal(a.train.targets, b.train.targets)
        np.testing.assert_array_equal(a.test.inputs, b.test.inputs)
        c = generate_data(small(), seed=3)
        assert np.any(a.train.inputs != c.train.inputs)

    def test_inputs_in_unit_interval(self):
        data = generate_data(small())
        assert np.abs(data.train.inputs).max() <= 1.0 and np.abs(data.test.inputs).max() <= 1.0

    def test_noise_variance(self):
        # residuals against the teacher pooled over seeds have variance 1e-2
        parts = []
        for s in range(400):
            d = generate_data(small(), seed=s)
            parts.append((d.train.targets - forward(d.teacher, d.train.inputs)).ravel())
        res = np.concatenate(parts)
        var = res.var(ddof=1)
        band = 3 * 1e-2 * math.sqrt(2 / (res.size - 1))
        assert abs(var - 1e-2) <= band

    def test_gen_error_zero_on_teacher(self):
        data = generate_data(small())
        assert gen_error(data.teacher, data.test) == 0.0


@pytest.fixture(scope="module")
def result():
    return run_generalization_experiment(small())


class TestRun:
    def test_rows(self, result):
        assert [r.H for r in result.rows] == [5, 7, 9]
        assert all(r.activation == "tanh" for r in result.rows)
        assert all(r.base_gen_error > 0 for r in result.rows)
        assert result.train_loss < 1e-29

    def test_paired_control(self, result):
        # at H = H0 the wide and narrow nets get the same noise
        first = result.rows[0]
        assert first.ratio_mean == 1.0 and first.ratio_stderr == 0.0

    def test_rho(self, result):
        assert result.rho == pytest.approx(0.01 * np.linalg.norm(result.student.flat()), rel=1e-15)

    def test_thread_independence(self, result):
        again = run_generalization_experiment(small(threads=3))
        assert rows_to_csv(again.rows) == rows_to_csv(result.rows)

    def test_unperturbed_baseline(self):
        res = run_generalization_experiment(small(perturb_baseline=False, trials=5, H_sweep=(5,)))
        assert res.rows[0].ratio_mean != 1.0

    def test_relu_surplus_zero(self):
        res = run_generalization_experiment(
            small(activation="relu", surplus_zero=True, trials=10, H_sweep=(5, 8)))
        assert [r.ratio_mean for r in res.rows] == pytest.approx([1.0, 1.0], abs=1e-12)


class TestCSV:
    def test_round_trip(self):
        rows = [ExperimentRow(5, "relu", 1.0, 0.0, 0.1), ExperimentRow(6, "relu", 0.1 + 0.2, 1e-18, 3.3)]
        text = rows_to_csv(rows)
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert rows_from_csv(text) == rows

    def test_bad_header(self):
        with pytest.raises(ValueError):
            rows_from_csv("a,b\n")


class TestTrend:
    def rows(self, ratios):
        return [ExperimentRow(5 + i, "tanh", r, 0.0, 1.0) for i, r in enumerate(ratios)]

    def test_constant(self):
        assert trend_test(self.rows([1.0] * 6)) == (0.0, 1.0)

    def test_single_row(self):
        assert trend_test(self.rows([1.0])) == (0.0, 1.0)

    def test_increasing(self):
        tau, p = trend_test(self.rows(np.linspace(1, 2, 10)))
        assert tau == pytest.approx(1.0) and p < 0.05

    def test_decreasing_not_significant(self):
        tau, p = trend_test(self.rows(np.linspace(2, 1, 10)))
        assert tau < 0 and p > 0.5
