import json
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats as sstats

import flowcast.evaluation as ev
from flowcast.errors import ConfigError, ConstantInputError, ShapeError
from flowcast.evaluation import (
    MetricsReport,
    MetricsRow,
    evaluate_at_steps,
    pearson,
    rmse,
    rollout,
    spearman,
)
from flowcast.pipeline import compute_norm_stats


class TestRmse:
    def test_identical_is_zero(self):
        a = np.random.default_rng(0).standard_normal(50)
        assert rmse(a, a) == 0.0

    def test_known_value(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5), rel=1e-15)

    def test_matches_definition(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.standard_normal(17)
            b = rng.standard_normal(17)
            ref = np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / 17)
            assert rmse(a, b) == pytest.approx(ref, rel=1e-14)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(9), rng.standard_normal(9)
        assert rmse(a, b) == rmse(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmse([1.0, 2.0], [1.0])


class TestPearson:
    def test_perfect_linear(self):
        a = np.arange(10.0)
        assert pearson(a, 3.0 * a + 2.0) == pytest.approx(1.0, abs=1e-14)
        assert pearson(a, -0.5 * a + 1.0) == pytest.approx(-1.0, abs=1e-14)

    def test_matches_corrcoef(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.standard_normal(31)
            b = rng.standard_normal(31)
            assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], rel=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal(25), rng.standard_normal(25)
        assert pearson(2.5 * a - 7.0, b) == pytest.approx(pearson(a, b), rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal(12), rng.standard_normal(12)
        assert pearson(a, b) == pytest.approx(pearson(b, a), rel=1e-14)

    def test_constant_input_rejected(self):
        with pytest.raises(ConstantInputError):
            pearson(np.ones(5), np.arange(5.0))

    def test_too_short(self):
        with pytest.raises(ShapeError):
            pearson([1.0], [2.0])


class TestSpearman:
    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a = rng.standard_normal(40)
            b = rng.standard_normal(40)
            ref = sstats.spearmanr(a, b).statistic
            assert spearman(a, b) == pytest.approx(ref, rel=1e-12)

    def test_ties_use_average_ranks(self):
        a = np.array([1.0, 1.0, 2.0, 3.0])
        b = np.array([4.0, 4.0, 5.0, 6.0])
        ref = sstats.spearmanr(a, b).statistic
        assert spearman(a, b) == pytest.approx(ref, rel=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        assert spearman(np.exp(a), b) == pytest.approx(spearman(a, b), rel=1e-12)

    def test_perfect_monotone(self):
        a = np.array([0.1, 2.0, 5.0, 9.0])
        assert spearman(a, a**3) == pytest.approx(1.0, abs=1e-14)


class TestRollout:
    def test_window_slides_by_one(self):
        seen = []

        def predictor(window):
            seen.append(window.copy())
            return window[-1] + 1.0

        seed = np.arange(6.0).reshape(3, 2)
        preds = rollout(predictor, seed, 4)
        assert preds.shape == (4, 2)
        np.testing.assert_allclose(preds[:, 0], np.array([5.0, 6.0, 7.0, 8.0]))
        for k, win in enumerate(seen):
            assert win.shape == (3, 2)
            if k > 0:
                np.testing.assert_array_equal(win[:-1], seen[k - 1][1:])
                np.testing.assert_array_equal(win[-1], preds[k - 1])

    def test_bad_predictor_width(self):
        with pytest.raises(ShapeError):
            rollout(lambda w: np.zeros(3), np.zeros((2, 2)), 1)

    def test_n_steps_validated(self):
        with pytest.raises(ConfigError):
            rollout(lambda w: w[-1], np.zeros((2, 2)), 0)


class TestMetricsReport:
    def _report(self):
        return MetricsReport(rows=[
            MetricsRow(step=10, pearson=0.949, spearman=0.917, rmse=0.078),
            MetricsRow(step=20, pearson=0.989, spearman=0.982, rmse=0.038),
        ])

    def test_format_table(self):
        table = self._report().format_table()
        lines = table.splitlines()
        assert len(lines) == 3
        assert "0.949" in lines[1] and "0.0380" in lines[2]

    def test_write_json_roundtrip(self, tmp_path):
        path = tmp_path / "metrics.json"
        self._report().write_json(path)
        loaded = json.loads(path.read_text())
        assert loaded[0] == {"step": 10, "pearson": 0.949, "spearman": 0.917, "rmse": 0.078}


def linear_case(rng, n_states=20, n_cells=8, n_dims=3):
    """States evolve affinely in time, so two-point linear extrapolation
    reproduces them exactly (also after per-dim normalization)."""
    base = rng.standard_normal((n_cells, n_dims))
    inc = rng.standard_normal((n_cells, n_dims)) * 0.1
    states = np.stack([base + k * inc for k in range(n_states)]).astype(np.float32)
    return SimpleNamespace(states=states)


class TestEvaluateAtSteps:
    def _dummy_model(self):
        return SimpleNamespace(
            config=SimpleNamespace(n_timesteps=3), dtype=np.dtype(np.float64)
        )

    def _extrapolating(self, monkeypatch):
        monkeypatch.setattr(
            ev, "model_predictor", lambda model: (lambda w: 2.0 * w[-1] - w[-2])
        )

    def test_perfect_predictor_scores_perfectly(self, monkeypatch):
        self._extrapolating(monkeypatch)
        rng = np.random.default_rng(8)
        cases = [linear_case(rng) for _ in range(3)]
        stats = compute_norm_stats(cases)
        report = evaluate_at_steps(self._dummy_model(), cases, stats, steps=(1, 5, 10))
        assert [r.step for r in report.rows] == [1, 5, 10]
        for row in report.rows:
            assert row.pearson == pytest.approx(1.0, abs=1e-6)
            assert row.spearman == pytest.approx(1.0, abs=1e-6)
            assert row.rmse < 1e-4

    def test_per_case_breakdown(self, monkeypatch):
        self._extrapolating(monkeypatch)
        rng = np.random.default_rng(9)
        cases = [linear_case(rng) for _ in range(2)]
        stats = compute_norm_stats(cases)
        report, by_case = evaluate_at_steps(
            self._dummy_model(), cases, stats, steps=(2,), per_case=True
        )
        assert set(by_case) == {0, 1}
        assert all(rows[0].step == 2 for rows in by_case.values())

    def test_short_case_rejected(self):
        rng = np.random.default_rng(10)
        cases = [linear_case(rng, n_states=5)]
        stats = compute_norm_stats(cases)
        with pytest.raises(ConfigError):
            evaluate_at_steps(self._dummy_model(), cases, stats, steps=(10,))

    def test_empty_cases_rejected(self):
        with pytest.raises(ConfigError):
            evaluate_at_steps(self._dummy_model(), [], None)
