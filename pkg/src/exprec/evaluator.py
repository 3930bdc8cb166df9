"""Test-set evaluation: MSE with test-time level assignment.

Held-out ratings have no fitted experience level, so each one borrows
the level of its user's chronologically nearest training rating (ties
between an earlier and a later neighbor go to the earlier one, since
only the past is known at prediction time).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .dataset import BACKGROUND_USER, DataError, Dataset
from .model import predictions_for

if TYPE_CHECKING:
    from .trainer import FittedModel


@dataclass(frozen=True)
class LevelStats:
    mse: float | None
    count: int


@dataclass(frozen=True)
class EvalReport:
    mse: float
    std_error: float
    per_level: dict[int, LevelStats]
    n_test: int
    scheme: str | None = None
    clamped_mse: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "mse": self.mse,
            "std_error": self.std_error,
            "n_test": self.n_test,
            "scheme": self.scheme,
            "clamped_mse": self.clamped_mse,
            "per_level": {
                str(level): {"mse": stats.mse, "count": stats.count}
                for level, stats in sorted(self.per_level.items())
            },
        }


def _nearest_level(times: np.ndarray, levels: np.ndarray, t: int) -> int:
    """Level of the training rating closest in time to t; equidistant
    neighbors resolve to the earlier one."""
    j = int(np.searchsorted(times, t, side="left"))
    if j == 0:
        return int(levels[0])
    if j == len(times):
        return int(levels[-1])
    # times[j-1] < t <= times[j]
    if abs(int(times[j - 1]) - t) <= abs(int(times[j]) - t):
        return int(levels[j - 1])
    return int(levels[j])


def assign_test_levels(m: "FittedModel", test: Dataset, train: Dataset) -> np.ndarray:
    """Experience level for every test rating, aligned with the test
    dataset's canonical order.

    Users absent from training fall back to the background pseudo-user's
    history when one exists, else to level 1 with a warning.
    """
    per_user: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for user in train.users:
        positions = train.user_index[user]
        per_user[user] = (train.times[positions], m.assignment.levels[user])

    background = per_user.get(BACKGROUND_USER) if train.background_user else None
    out = np.empty(len(test), dtype=np.int64)
    warned = False
    for user in test.users:
        positions = test.user_index[user]
        t_test = test.times[positions]
        source = per_user.get(user, background)
        if source is None:
            if not warned:
                warnings.warn(f"user {user!r} has no training history; assigning level 1")
                warned = True
            out[positions] = 1
            continue
        times, levels = source
        for pos, t in zip(positions, t_test):
            out[pos] = _nearest_level(times, levels, int(t))
    return out


def mse(
    m: "FittedModel", test: Dataset, train: Dataset, scheme: str | None = None
) -> EvalReport:
    """Mean squared error over the test set, with a per-level breakdown.

    Per-level statistics partition the test squared errors by assigned
    level; their count-weighted mean recombines to the overall MSE.
    """
    if len(test) == 0:
        raise DataError("empty test set")
    levels = assign_test_levels(m, test, train)
    uidx = m.params.encode_users(test.user_seq)
    iidx = m.params.encode_items(test.item_seq)
    pred = predictions_for(m.params, levels, uidx, iidx)
    sq = (pred - test.values) ** 2
    clamped = (np.clip(pred, 0.0, 5.0) - test.values) ** 2

    n = len(sq)
    overall = float(np.mean(sq))
    std_error = float(np.std(sq, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    per_level: dict[int, LevelStats] = {}
    for level in range(1, m.params.E + 1):
        mask = levels == level
        count = int(mask.sum())
        per_level[level] = LevelStats(
            mse=float(np.mean(sq[mask])) if count else None, count=count
        )
    return EvalReport(
        mse=overall,
        std_error=std_error,
        per_level=per_level,
        n_test=n,
        scheme=scheme,
        clamped_mse=float(np.mean(clamped)),
    )


def benefit_percent(mse_base: float, mse_model: float) -> float:
    """Relative MSE improvement of a model over a baseline, in percent."""
    return 100.0 * (mse_base - mse_model) / mse_base


@dataclass(frozen=True)
class ComparisonRow:
    kind: str
    lam: float
    mse: float
    std_error: float


@dataclass(frozen=True)
class Comparison:
    rows: list[ComparisonRow]
    benefits: dict[str, float]


def compare(models: Sequence["FittedModel"], test: Dataset, train: Dataset) -> Comparison:
    """MSE for each model plus the d-over-lf and d-over-c benefit rows.

    All models must share the training corpus (same user and item keys).
    """
    if not models:
        raise DataError("no models to compare")
    keys = (models[0].params.users, models[0].params.items)
    for m in models[1:]:
        if (m.params.users, m.params.items) != keys:
            raise DataError("models were fitted on different corpora")
    rows = []
    by_kind: dict[str, float] = {}
    for m in models:
        report = mse(m, test, train)
        rows.append(
            ComparisonRow(kind=m.kind.value, lam=m.lam, mse=report.mse, std_error=report.std_error)
        )
        by_kind[m.kind.value] = report.mse
    benefits: dict[str, float] = {}
    if "d" in by_kind and "lf" in by_kind:
        benefits["d_over_lf"] = benefit_percent(by_kind["lf"], by_kind["d"])
    if "d" in by_kind and "c" in by_kind:
        benefits["d_over_c"] = benefit_percent(by_kind["c"], by_kind["d"])
    return Comparison(rows=rows, benefits=benefits)
