"""Coordinate-ascent training: gradient-based parameter steps alternating
with DP experience assignment, plus grid search over the smoothness weight.

One outer iteration is a theta step (minimize the objective in the model
parameters with assignments fixed, limited-memory quasi-Newton) followed
by an e step (re-assign experience levels with parameters fixed).  The
loop stops as soon as the e step changes zero assignments, or after
``max_outer_iters``.  Both steps are descent steps, so the recorded
objective never increases.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .assign import ModelKind, assign_all, assert_monotone
from .dataset import Dataset, TrainingError
from .model import (
    ExperienceAssignment,
    ModelParams,
    error_term,
    objective_and_gradient,
    params_from_level_dicts,
    params_to_level_dicts,
    smoothness_penalty,
)

DEFAULT_LAMBDA_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0)


@dataclass(frozen=True)
class TrainConfig:
    E: int = 5
    K: int = 5
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    max_outer_iters: int = 50
    inner_tolerance: float = 1e-6
    inner_max_iters: int = 1000
    seed: int = 0
    model_kind: ModelKind = ModelKind.USER_LEARNED
    magnitude_penalty: float = 0.0
    warm_start: bool = False

    def __post_init__(self):
        if self.E < 1 or self.K < 1:
            raise ValueError("E and K must be >= 1")
        if not self.lambda_grid:
            raise ValueError("lambda_grid must be non-empty")
        if any(lam < 0 for lam in self.lambda_grid):
            raise ValueError("lambda values must be >= 0")
        if self.inner_tolerance <= 0:
            raise ValueError("inner_tolerance must be > 0")

    @property
    def effective_E(self) -> int:
        """Flat models use a single level no matter what E is configured."""
        return 1 if self.model_kind is ModelKind.FLAT else self.E


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    step: str                 # "theta" or "e"
    error_term: float
    objective: float
    assignment_changes: int   # only meaningful for e steps


@dataclass(eq=False)
class FittedModel:
    params: ModelParams
    assignment: ExperienceAssignment
    kind: ModelKind
    lam: float
    train_history: list[HistoryEntry] = field(default_factory=list)

    def predict(self, level: int, user: str, item: str) -> float:
        return self.params.predict(level, user, item)

    def to_json_dict(self) -> dict:
        return {
            "model_kind": self.kind.value,
            "E": self.params.E,
            "K": self.params.K,
            "lambda": self.lam,
            "levels": params_to_level_dicts(self.params),
            "assignment": {u: [int(x) for x in lv] for u, lv in sorted(self.assignment.levels.items())},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FittedModel":
        params = params_from_level_dicts(doc["levels"], K=int(doc["K"]))
        if params.E != int(doc["E"]):
            raise ValueError("serialized E disagrees with level count")
        assignment = ExperienceAssignment(
            {u: np.array(lv, dtype=np.int64) for u, lv in doc["assignment"].items()}
        )
        return cls(
            params=params,
            assignment=assignment,
            kind=ModelKind(doc["model_kind"]),
            lam=float(doc["lambda"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def initialize(train: Dataset, cfg: TrainConfig) -> tuple[ModelParams, ExperienceAssignment]:
    """Seeded starting point: offsets at the global mean, zero biases,
    small factors drawn once and shared by every level (so the smoothness
    penalty starts at exactly zero), and the kind's schedule as the
    initial assignment."""
    if len(train) == 0:
        raise TrainingError("empty training set")
    E = cfg.effective_E
    p = ModelParams.zeros(train.users, train.items, E, cfg.K)
    p.alpha[:] = float(train.values.mean())
    rng = np.random.default_rng(cfg.seed)
    uf = rng.uniform(-0.01, 0.01, size=(len(train.users), cfg.K))
    itf = rng.uniform(-0.01, 0.01, size=(len(train.items), cfg.K))
    p.user_factors[:] = uf
    p.item_factors[:] = itf
    assignment = assign_all(cfg.model_kind, p, train)
    return p, assignment


class _TrainData:
    """Training set in integer-coded columnar form."""

    def __init__(self, p: ModelParams, train: Dataset):
        self.uidx = p.encode_users(train.user_seq)
        self.iidx = p.encode_items(train.item_seq)
        if (self.uidx < 0).any() or (self.iidx < 0).any():
            raise ValueError("training data contains keys missing from the parameters")
        self.vals = train.values


_BLOCK_NAMES = ("alpha", "user_bias", "item_bias", "user_factors", "item_factors")


def _nonfinite_block(p: ModelParams) -> str | None:
    for name in _BLOCK_NAMES:
        if not np.isfinite(getattr(p, name)).all():
            return name
    return None


def theta_step(
    p: ModelParams,
    a: ExperienceAssignment,
    train: Dataset,
    lam: float,
    cfg: TrainConfig,
) -> ModelParams:
    """Minimize the objective in the parameters with assignments fixed.

    L-BFGS with 10 memory pairs; stops when the relative objective
    decrease falls below ``inner_tolerance`` or after ``inner_max_iters``
    iterations.  The returned parameters never have a larger objective
    than the input, and never a larger raw error term either: a candidate
    that trades error for smoothness is rejected in favor of the input,
    which keeps recorded error terms non-increasing across every step.
    """
    lv0 = a.flat(train) - 1
    data = _TrainData(p, train)
    users, items, E, K = p.users, p.items, p.E, p.K

    def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
        px = ModelParams.from_flat(x, users, items, E, K)
        return objective_and_gradient(
            px, lv0, data.uidx, data.iidx, data.vals, lam, cfg.magnitude_penalty
        )

    x0 = p.flatten()
    obj_in, _ = fun(x0)
    err_in = error_term(p, lv0, data.uidx, data.iidx, data.vals)
    result = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": cfg.inner_max_iters,
            "maxcor": 10,
            "ftol": cfg.inner_tolerance,
            "gtol": 1e-10,
        },
    )
    candidate = ModelParams.from_flat(result.x, users, items, E, K)
    bad = _nonfinite_block(candidate)
    if bad is not None or not np.isfinite(result.fun):
        raise TrainingError(
            f"divergence in theta step (lambda={lam}): non-finite {bad or 'objective'}"
        )
    obj_out = float(result.fun)
    err_out = error_term(candidate, lv0, data.uidx, data.iidx, data.vals)
    if obj_out > obj_in or err_out > err_in:
        return p
    return candidate


def e_step(p: ModelParams, train: Dataset, kind: ModelKind) -> ExperienceAssignment:
    """Re-assign experience levels with parameters fixed.

    For learned kinds the DP returns the error-minimizing monotone
    assignment, so the objective cannot increase; uniform kinds return
    their fixed schedule."""
    return assign_all(kind, p, train)


ProgressFn = Callable[[float, int, float, int], None]


def fit_single_lambda(
    train: Dataset,
    cfg: TrainConfig,
    lam: float,
    progress: ProgressFn | None = None,
    start: tuple[ModelParams, ExperienceAssignment] | None = None,
) -> FittedModel:
    if start is not None:
        p, a = start[0].copy(), start[1]
    else:
        p, a = initialize(train, cfg)
    data = _TrainData(p, train)
    history: list[HistoryEntry] = []
    for it in range(1, cfg.max_outer_iters + 1):
        p = theta_step(p, a, train, lam, cfg)
        lv0 = a.flat(train) - 1
        err = error_term(p, lv0, data.uidx, data.iidx, data.vals)
        obj = err + lam * smoothness_penalty(p)
        history.append(HistoryEntry(it, "theta", err, obj, 0))

        new_a = e_step(p, train, cfg.model_kind)
        changed = new_a.n_changes(a)
        a = new_a
        lv0 = a.flat(train) - 1
        err = error_term(p, lv0, data.uidx, data.iidx, data.vals)
        obj = err + lam * smoothness_penalty(p)
        history.append(HistoryEntry(it, "e", err, obj, changed))
        if progress is not None:
            progress(lam, it, obj, changed)
        if changed == 0:
            break
    assert_monotone(cfg.model_kind, train, a)
    return FittedModel(params=p, assignment=a, kind=cfg.model_kind, lam=lam, train_history=history)


def fit(
    train: Dataset,
    validation: Dataset,
    cfg: TrainConfig,
    progress: ProgressFn | None = None,
    threads: int = 1,
) -> FittedModel:
    """Train one model per lambda in the grid and keep the one with the
    smallest validation MSE (ties go to the earliest grid entry).

    By default each grid point restarts from the same seeded
    initialization, so results do not depend on grid order or on
    ``threads``.  With ``cfg.warm_start`` the grid is processed in the
    order given and each point starts from the previous point's solution;
    a grid sorted from heavy to light smoothing then behaves like an
    annealing schedule, which helps on corpora where cold alternation
    stalls in poor assignments.
    """
    from .evaluator import mse  # local import; evaluator depends on FittedModel

    grid = list(cfg.lambda_grid)
    results: list[FittedModel | None] = [None] * len(grid)
    failures: dict[float, str] = {}

    if cfg.warm_start:
        start = None
        for i, lam in enumerate(grid):
            try:
                model = fit_single_lambda(train, cfg, lam, progress=progress, start=start)
                results[i] = model
                start = (model.params, model.assignment)
            except TrainingError as exc:
                failures[lam] = str(exc)
                start = None
        return _select(results, failures, grid, train, validation, mse)

    def run(idx_lam):
        idx, lam = idx_lam
        return idx, fit_single_lambda(train, cfg, lam, progress=progress)

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run, (i, lam)) for i, lam in enumerate(grid)]
            for lam, fut in zip(grid, futures):
                try:
                    idx, model = fut.result()
                    results[idx] = model
                except TrainingError as exc:
                    failures[lam] = str(exc)
    else:
        for i, lam in enumerate(grid):
            try:
                _, model = run((i, lam))
                results[i] = model
            except TrainingError as exc:
                failures[lam] = str(exc)

    return _select(results, failures, grid, train, validation, mse)


def _select(results, failures, grid, train, validation, mse_fn) -> FittedModel:
    fitted = [m for m in results if m is not None]
    if not fitted:
        detail = "; ".join(f"lambda={lam}: {msg}" for lam, msg in failures.items())
        raise TrainingError(f"all lambda values failed: {detail}")
    if len(fitted) == 1:
        return fitted[0]
    if len(validation) == 0:
        raise TrainingError("validation set is empty; cannot select lambda")
    best = None
    best_mse = np.inf
    for m in fitted:
        report = mse_fn(m, validation, train)
        if report.mse < best_mse:
            best, best_mse = m, report.mse
    return best
