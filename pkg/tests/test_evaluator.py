"""Test-time level assignment, MSE reports, and model comparison."""

import numpy as np
import pytest

from exprec.assign import ModelKind
from exprec.dataset import BACKGROUND_USER, DataError, Dataset, Rating
from exprec.evaluator import assign_test_levels, benefit_percent, compare, mse
from exprec.model import ExperienceAssignment, ModelParams
from exprec.trainer import FittedModel


def model_with(users, items, E=5, K=1, kind=ModelKind.USER_LEARNED, assignment=None, alpha=None):
    p = ModelParams.zeros(users, items, E, K)
    if alpha is not None:
        p.alpha[:] = alpha
    return FittedModel(
        params=p,
        assignment=ExperienceAssignment(assignment or {}),
        kind=kind,
        lam=0.0,
    )


def dataset(rows):
    return Dataset([Rating(u, i, v, t, v) for (u, i, v, t) in rows])


class TestAssignTestLevels:
    def test_nearest_training_rating(self):
        train = dataset([("u", "a", 1.0, 0), ("u", "b", 1.0, 100)])
        test = dataset([("u", "c", 1.0, 90)])
        m = model_with(("u",), ("a", "b", "c"), assignment={"u": np.array([1, 3])})
        assert list(assign_test_levels(m, test, train)) == [3]

    def test_equidistant_tie_resolves_earlier(self):
        train = dataset([("u", "a", 1.0, 0), ("u", "b", 1.0, 100)])
        test = dataset([("u", "c", 1.0, 50)])
        m = model_with(("u",), ("a", "b", "c"), assignment={"u": np.array([1, 3])})
        assert list(assign_test_levels(m, test, train)) == [1]

    def test_flat_model_always_level_one(self):
        train = dataset([("u", "a", 1.0, 0), ("u", "b", 1.0, 10)])
        test = dataset([("u", "c", 1.0, 7)])
        m = model_with(("u",), ("a", "b", "c"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1, 1])})
        assert list(assign_test_levels(m, test, train)) == [1]

    def test_unknown_user_without_background_warns_level_one(self):
        train = dataset([("u", "a", 1.0, 0)])
        test = dataset([("stranger", "a", 1.0, 5)])
        m = model_with(("u",), ("a",), assignment={"u": np.array([4])})
        with pytest.warns(UserWarning):
            levels = assign_test_levels(m, test, train)
        assert list(levels) == [1]

    def test_unknown_user_uses_background_history(self):
        train = Dataset(
            [Rating(BACKGROUND_USER, "a", 1.0, 0, 1.0), Rating(BACKGROUND_USER, "b", 1.0, 100, 1.0)],
            background_user=BACKGROUND_USER,
        )
        test = dataset([("stranger", "a", 1.0, 99)])
        m = model_with((BACKGROUND_USER,), ("a", "b"), assignment={BACKGROUND_USER: np.array([2, 5])})
        assert list(assign_test_levels(m, test, train)) == [5]


class TestMse:
    def test_mean_of_squared_errors(self):
        train = dataset([("u", "a", 3.0, 0), ("u", "b", 3.0, 10)])
        test = dataset([("u", "c", 3.0, 1), ("u", "d", 5.0, 2)])
        m = model_with(("u",), ("a", "b", "c", "d"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1, 1])}, alpha=[3.0, 4.0][:1])
        report = mse(m, test, train)
        # predictions are 3 and 3 against truths 3 and 5 -> (0 + 4) / 2
        assert report.mse == pytest.approx(2.0)
        assert report.n_test == 2

    def test_spec_example_point_five(self):
        train = dataset([("u", "a", 3.0, 0)])
        test = dataset([("u", "b", 3.0, 1), ("u", "c", 5.0, 2)])
        m = model_with(("u",), ("a", "b", "c"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1])})
        m.params.alpha[0] = 3.0
        m.params.item_bias[0, 2] = 1.0  # predicts 4 for item c
        report = mse(m, test, train)
        assert report.mse == pytest.approx(0.5)

    def test_per_level_partition(self):
        train = dataset([("u", "a", 3.0, 0)])
        test = dataset([("u", "b", 3.0, 1), ("u", "c", 3.0, 2)])
        m = model_with(("u",), ("a", "b", "c"), E=5, assignment={"u": np.array([5])})
        report = mse(m, test, train)
        assert report.per_level[5].count == 2
        for level in range(1, 5):
            assert report.per_level[level].count == 0
            assert report.per_level[level].mse is None

    def test_perfect_model(self):
        train = dataset([("u", "a", 3.0, 0)])
        test = dataset([("u", "b", 3.5, 1)])
        m = model_with(("u",), ("a", "b"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1])})
        m.params.alpha[0] = 3.5
        assert mse(m, test, train).mse == 0.0

    def test_empty_test_errors(self):
        train = dataset([("u", "a", 3.0, 0)])
        m = model_with(("u",), ("a",), E=1, kind=ModelKind.FLAT, assignment={"u": np.array([1])})
        with pytest.raises(DataError):
            mse(m, Dataset([], scale_max=5.0), train)

    def test_weighted_per_level_recombines_to_overall(self):
        rng = np.random.default_rng(3)
        users = tuple(f"u{j}" for j in range(6))
        items = tuple(f"i{j}" for j in range(30))
        train_rows, test_rows = [], []
        for u in users:
            picks = rng.choice(30, size=20, replace=False)
            for k, item_j in enumerate(picks):
                row = (u, f"i{item_j}", float(rng.uniform(0, 5)), 10 * k)
                (train_rows if k < 14 else test_rows).append(row)
        train, test = dataset(train_rows), dataset(test_rows)
        assignment = {
            u: np.sort(rng.integers(1, 6, size=len(train.user_index[u]))) for u in users
        }
        p = ModelParams.from_flat(
            rng.normal(0, 0.3, size=ModelParams.zeros(users, items, 5, 2).n_params),
            users, items, 5, 2,
        )
        m = FittedModel(params=p, assignment=ExperienceAssignment(assignment),
                        kind=ModelKind.USER_LEARNED, lam=0.0)
        report = mse(m, test, train)
        total = sum(
            stats.mse * stats.count for stats in report.per_level.values() if stats.count
        )
        assert total / report.n_test == pytest.approx(report.mse, rel=1e-12)

    def test_clamped_mse_reported(self):
        train = dataset([("u", "a", 3.0, 0)])
        test = dataset([("u", "b", 5.0, 1)])
        m = model_with(("u",), ("a", "b"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1])})
        m.params.alpha[0] = 7.0  # raw prediction out of range
        report = mse(m, test, train)
        assert report.mse == pytest.approx(4.0)
        assert report.clamped_mse == pytest.approx(0.0)


class TestCompare:
    def test_benefit_formula(self):
        assert benefit_percent(0.452, 0.400) == pytest.approx(11.504424778761062)
        assert benefit_percent(0.496, 0.406) == pytest.approx(18.145161290322580)

    def test_identical_models_zero_benefit(self):
        assert benefit_percent(0.7, 0.7) == 0.0

    def test_compare_emits_benefit_rows(self):
        train = dataset([("u", "a", 3.0, 0), ("u", "b", 3.0, 5)])
        test = dataset([("u", "c", 3.0, 1)])
        users, items = ("u",), ("a", "b", "c")
        lf = model_with(users, items, E=1, kind=ModelKind.FLAT, assignment={"u": np.array([1, 1])})
        lf.params.alpha[0] = 2.0
        c = model_with(users, items, E=2, kind=ModelKind.COMMUNITY_LEARNED,
                       assignment={"u": np.array([1, 2])})
        c.params.alpha[:] = 2.5
        d = model_with(users, items, E=2, kind=ModelKind.USER_LEARNED,
                       assignment={"u": np.array([1, 2])})
        d.params.alpha[:] = 3.0
        result = compare([lf, c, d], test, train)
        assert result.benefits["d_over_lf"] == pytest.approx(100.0)
        assert result.benefits["d_over_c"] == pytest.approx(100.0)
        assert {row.kind for row in result.rows} == {"lf", "c", "d"}

    def test_mismatched_corpora_error(self):
        train = dataset([("u", "a", 3.0, 0)])
        test = dataset([("u", "a", 3.0, 1)])
        m1 = model_with(("u",), ("a",), E=1, kind=ModelKind.FLAT, assignment={"u": np.array([1])})
        m2 = model_with(("other",), ("a",), E=1, kind=ModelKind.USER_LEARNED,
                        assignment={"other": np.array([1])})
        with pytest.raises(DataError, match="different corpora"):
            compare([m1, m2], test, train)

    def test_mse_invariant_to_test_ordering(self):
        train = dataset([("u", "a", 3.0, 0), ("v", "a", 3.0, 0)])
        rows = [("u", "b", 4.0, 5), ("v", "b", 1.0, 6), ("u", "c", 2.0, 7)]
        m = model_with(("u", "v"), ("a", "b", "c"), E=1, kind=ModelKind.FLAT,
                       assignment={"u": np.array([1]), "v": np.array([1])})
        m.params.alpha[0] = 3.0
        r1 = mse(m, dataset(rows), train)
        r2 = mse(m, dataset(rows[::-1]), train)
        assert r1.mse == r2.mse
