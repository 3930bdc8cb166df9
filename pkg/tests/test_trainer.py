"""Initialization, descent steps, and the outer training loop."""

import numpy as np
import pytest

from exprec.assign import ModelKind
from exprec.dataset import Dataset, Rating, SplitScheme, SplitSpec, TrainingError, split
from exprec.model import ExperienceAssignment, objective, smoothness_penalty
from exprec.synth import SynthConfig, TrajectoryKind, generate
from exprec.trainer import FittedModel, TrainConfig, e_step, fit, fit_single_lambda, initialize, theta_step


def small_corpus(seed=0, n_users=20, n_items=25, per_user=12, **kwargs):
    cfg = SynthConfig(
        n_users=n_users,
        n_items=n_items,
        ratings_per_user=per_user,
        seed=seed,
        **kwargs,
    )
    return generate(cfg)


EMPTY = Dataset([], scale_max=5.0)


class TestInitialize:
    def test_alpha_is_global_mean(self):
        data, _ = small_corpus()
        cfg = TrainConfig(seed=1, lambda_grid=(1.0,))
        p, _ = initialize(data, cfg)
        assert np.allclose(p.alpha, data.values.mean())

    def test_smoothness_starts_at_zero(self):
        data, _ = small_corpus()
        p, _ = initialize(data, TrainConfig(seed=1, lambda_grid=(1.0,)))
        assert smoothness_penalty(p) == 0.0

    def test_seed_determinism(self):
        data, _ = small_corpus()
        cfg = TrainConfig(seed=7, lambda_grid=(1.0,))
        p1, _ = initialize(data, cfg)
        p2, _ = initialize(data, cfg)
        assert np.array_equal(p1.user_factors, p2.user_factors)
        assert np.array_equal(p1.item_factors, p2.item_factors)

    def test_flat_kind_forces_single_level(self):
        data, _ = small_corpus()
        cfg = TrainConfig(seed=1, model_kind=ModelKind.FLAT, E=5, lambda_grid=(1.0,))
        p, a = initialize(data, cfg)
        assert p.E == 1
        assert all((lv == 1).all() for lv in a.levels.values())

    def test_uniform_kind_initial_schedule(self):
        data, _ = small_corpus()
        cfg = TrainConfig(seed=1, model_kind=ModelKind.USER_UNIFORM, lambda_grid=(1.0,))
        _, a = initialize(data, cfg)
        for user in data.users:
            lv = a.levels[user]
            assert lv[0] == 1 and lv[-1] == cfg.E

    def test_empty_train_errors(self):
        with pytest.raises(TrainingError):
            initialize(EMPTY, TrainConfig(lambda_grid=(1.0,)))


class TestThetaStep:
    def test_single_rating_closed_form(self):
        d = Dataset([Rating("u", "i", 4.2, 0, 4.2)])
        cfg = TrainConfig(E=1, K=1, lambda_grid=(0.0,), inner_tolerance=1e-12,
                          inner_max_iters=500, seed=0, model_kind=ModelKind.FLAT)
        p, a = initialize(d, cfg)
        p2 = theta_step(p, a, d, lam=0.0, cfg=cfg)
        assert p2.predict(1, "u", "i") == pytest.approx(4.2, abs=1e-3)

    def test_descent_contract(self):
        data, _ = small_corpus(seed=3)
        cfg = TrainConfig(seed=5, lambda_grid=(1e-4,))
        p, a = initialize(data, cfg)
        before = objective(p, a, data, 1e-4)
        p2 = theta_step(p, a, data, 1e-4, cfg)
        after = objective(p2, a, data, 1e-4)
        assert after <= before

    def test_stationary_input_is_noop_like(self):
        data, _ = small_corpus(seed=3)
        cfg = TrainConfig(seed=5, lambda_grid=(1e-4,), inner_tolerance=1e-8)
        p, a = initialize(data, cfg)
        p2 = theta_step(p, a, data, 1e-4, cfg)
        p3 = theta_step(p2, a, data, 1e-4, cfg)
        f2 = objective(p2, a, data, 1e-4)
        f3 = objective(p3, a, data, 1e-4)
        assert f3 <= f2
        assert f2 - f3 <= max(1.0, abs(f2)) * 1e-4


class TestEStep:
    def test_uniform_kinds_are_fixed_points(self):
        data, _ = small_corpus(seed=4)
        for kind in (ModelKind.COMMUNITY_UNIFORM, ModelKind.USER_UNIFORM, ModelKind.FLAT):
            cfg = TrainConfig(seed=2, model_kind=kind, lambda_grid=(1.0,))
            p, a0 = initialize(data, cfg)
            a1 = e_step(p, data, kind)
            assert a1.n_changes(a0) == 0

    def test_learned_e_step_never_increases_objective(self):
        data, _ = small_corpus(seed=5)
        cfg = TrainConfig(seed=2, lambda_grid=(1e-5,))
        p, a = initialize(data, cfg)
        p = theta_step(p, a, data, 1e-5, cfg)
        before = objective(p, a, data, 1e-5)
        a2 = e_step(p, data, ModelKind.USER_LEARNED)
        after = objective(p, a2, data, 1e-5)
        assert after <= before + 1e-15

    def test_e_step_fixed_point_reports_zero_changes(self):
        data, _ = small_corpus(seed=6)
        cfg = TrainConfig(seed=2, lambda_grid=(1e-5,))
        p, a = initialize(data, cfg)
        a1 = e_step(p, data, ModelKind.USER_LEARNED)
        a2 = e_step(p, data, ModelKind.USER_LEARNED)
        assert a2.n_changes(a1) == 0


class TestFit:
    def test_flat_reduces_to_single_theta_sequence(self):
        data, _ = small_corpus(seed=7)
        cfg = TrainConfig(seed=1, model_kind=ModelKind.FLAT, lambda_grid=(1.0,))
        m = fit(data, EMPTY, cfg)
        assert m.train_history[-1].iteration == 1
        assert m.params.E == 1

    def test_history_error_term_non_increasing(self):
        data, _ = small_corpus(seed=8, n_users=15, per_user=10)
        cfg = TrainConfig(seed=3, lambda_grid=(1e-5,), max_outer_iters=20)
        m = fit(data, EMPTY, cfg)
        errs = [h.error_term for h in m.train_history]
        assert all(b <= a for a, b in zip(errs, errs[1:]))
        objs = [h.objective for h in m.train_history]
        assert all(b <= a + 1e-15 for a, b in zip(objs, objs[1:]))

    def test_termination_within_cap(self):
        data, _ = small_corpus(seed=9)
        cfg = TrainConfig(seed=3, lambda_grid=(1e-5,), max_outer_iters=4)
        m = fit(data, EMPTY, cfg)
        assert m.train_history[-1].iteration <= 4

    def test_learned_beats_flat_on_planted_levels(self):
        data, _ = small_corpus(
            seed=10, n_users=30, n_items=40, per_user=20,
            level_drift=0.4, noise_sigma=0.1, trajectory_kind=TrajectoryKind.UNIFORM_TIME,
        )
        train, valid, _ = split(data, SplitSpec(SplitScheme.RANDOM, 0.1, 0.1, seed=1))
        grid = (1e-6, 1e-4)
        flat = fit(train, valid, TrainConfig(seed=4, model_kind=ModelKind.FLAT, lambda_grid=grid))
        learned = fit(train, valid, TrainConfig(seed=4, model_kind=ModelKind.USER_LEARNED, lambda_grid=grid))
        from exprec.evaluator import mse

        assert mse(learned, valid, train).mse < mse(flat, valid, train).mse

    def test_deterministic_serialization(self):
        data, _ = small_corpus(seed=11)
        cfg = TrainConfig(seed=5, lambda_grid=(1e-5,), max_outer_iters=10)
        m1 = fit(data, EMPTY, cfg)
        m2 = fit(data, EMPTY, cfg)
        import json

        assert json.dumps(m1.to_json_dict()) == json.dumps(m2.to_json_dict())

    def test_lambda_selection_prefers_better_validation(self):
        data, _ = small_corpus(seed=12, n_users=25, per_user=16, level_drift=0.4, noise_sigma=0.1)
        train, valid, _ = split(data, SplitSpec(SplitScheme.RANDOM, 0.1, 0.1, seed=2))
        cfg = TrainConfig(seed=6, lambda_grid=(1e-6, 1e3), max_outer_iters=15)
        m = fit(train, valid, cfg)
        assert m.lam in cfg.lambda_grid

    def test_model_json_round_trip(self, tmp_path):
        data, _ = small_corpus(seed=13)
        cfg = TrainConfig(seed=5, lambda_grid=(1e-5,), max_outer_iters=5)
        m = fit(data, EMPTY, cfg)
        path = tmp_path / "model.json"
        m.save(path)
        loaded = FittedModel.load(path)
        assert loaded.kind == m.kind
        assert loaded.lam == m.lam
        for block in ("alpha", "user_bias", "item_bias", "user_factors", "item_factors"):
            assert np.array_equal(getattr(loaded.params, block), getattr(m.params, block))
        for user in m.assignment.levels:
            assert np.array_equal(loaded.assignment.levels[user], m.assignment.levels[user])

    def test_monotone_constraint_holds_for_all_kinds(self):
        from exprec.assign import find_monotonicity_violation

        data, _ = small_corpus(seed=14)
        for kind in ModelKind:
            cfg = TrainConfig(seed=2, model_kind=kind, lambda_grid=(1e-5,), max_outer_iters=6)
            m = fit(data, EMPTY, cfg)
            assert find_monotonicity_violation(kind, data, m.assignment) is None
