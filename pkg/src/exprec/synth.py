"""Synthetic review corpora with planted parameters and trajectories.

The generator draws a ground-truth per-level model, gives every user a
monotone experience trajectory, and emits noisy ratings from the planted
model.  Because the truth is known, fitted models can be scored for
assignment recovery, and small cost matrices can be checked against a
brute-force enumeration of all monotone level sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .dataset import Dataset, Rating
from .model import ExperienceAssignment, ModelParams

_BLOCKS = ("alpha", "user_bias", "item_bias", "user_factors", "item_factors")


class TrajectoryKind(str, Enum):
    UNIFORM_TIME = "uniform_time"
    STAIRCASE = "staircase"
    ALREADY_EXPERT = "already_expert"
    NEVER_EXPERT = "never_expert"
    MIXED = "mixed"


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 100
    n_items: int = 100
    E: int = 5
    K: int = 5
    ratings_per_user: int | tuple[int, int] = (30, 60)
    noise_sigma: float | Sequence[float] = 0.1
    level_drift: float | Mapping[str, float] = 0.1
    trajectory_kind: TrajectoryKind = TrajectoryKind.MIXED
    leaver_fraction: float = 0.2
    seed: int = 0
    bias_scale: float = 0.3
    factor_scale: float | None = None   # None means 0.3 / sqrt(K)
    alpha0: float = 3.5
    horizon: int = 126_144_000          # 4 years of seconds
    clamp: bool = True

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1 or self.E < 1 or self.K < 1:
            raise ValueError("counts must be >= 1")
        lo, hi = self.rating_range
        if lo < 1 or hi < lo:
            raise ValueError("invalid ratings_per_user range")
        if hi > self.n_items:
            raise ValueError("ratings_per_user exceeds n_items (items are sampled once per user)")
        if not (0.0 <= self.leaver_fraction <= 1.0):
            raise ValueError("leaver_fraction must be in [0, 1]")
        if np.any(np.asarray(self.sigma_by_level) < 0):
            raise ValueError("noise_sigma must be >= 0")

    @property
    def rating_range(self) -> tuple[int, int]:
        if isinstance(self.ratings_per_user, int):
            return self.ratings_per_user, self.ratings_per_user
        lo, hi = self.ratings_per_user
        return int(lo), int(hi)

    @property
    def sigma_by_level(self) -> np.ndarray:
        if isinstance(self.noise_sigma, (int, float)):
            return np.full(self.E, float(self.noise_sigma))
        sig = np.asarray(self.noise_sigma, dtype=np.float64)
        if sig.shape != (self.E,):
            raise ValueError(f"noise_sigma must be scalar or length {self.E}")
        return sig

    @property
    def drift_by_block(self) -> dict[str, float]:
        if isinstance(self.level_drift, (int, float)):
            return {name: float(self.level_drift) for name in _BLOCKS}
        unknown = set(self.level_drift) - set(_BLOCKS)
        if unknown:
            raise ValueError(f"unknown drift blocks: {sorted(unknown)}")
        return {name: float(self.level_drift.get(name, 0.0)) for name in _BLOCKS}


@dataclass(eq=False)
class GroundTruth:
    true_params: ModelParams
    true_levels: ExperienceAssignment
    leaver_flags: dict[str, bool]
    clamp_count: int = 0
    n_ratings: int = 0

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_count / self.n_ratings if self.n_ratings else 0.0


def _planted_params(cfg: SynthConfig, rng: np.random.Generator,
                    users: tuple[str, ...], items: tuple[str, ...]) -> ModelParams:
    U, I, E, K = len(users), len(items), cfg.E, cfg.K
    fs = cfg.factor_scale if cfg.factor_scale is not None else 0.3 / math.sqrt(K)
    p = ModelParams.zeros(users, items, E, K)
    p.alpha[0] = cfg.alpha0
    p.user_bias[0] = rng.normal(0.0, cfg.bias_scale, size=U)
    p.item_bias[0] = rng.normal(0.0, cfg.bias_scale, size=I)
    p.user_factors[0] = rng.normal(0.0, fs, size=(U, K))
    p.item_factors[0] = rng.normal(0.0, fs, size=(I, K))
    drift = cfg.drift_by_block
    for e in range(1, E):
        p.alpha[e] = p.alpha[e - 1] + rng.normal(0.0, drift["alpha"])
        p.user_bias[e] = p.user_bias[e - 1] + rng.normal(0.0, drift["user_bias"], size=U)
        p.item_bias[e] = p.item_bias[e - 1] + rng.normal(0.0, drift["item_bias"], size=I)
        p.user_factors[e] = p.user_factors[e - 1] + rng.normal(
            0.0, drift["user_factors"], size=(U, K)
        )
        p.item_factors[e] = p.item_factors[e - 1] + rng.normal(
            0.0, drift["item_factors"], size=(I, K)
        )
    return p


def _staircase(rng: np.random.Generator, n: int, top: int) -> np.ndarray:
    """Monotone staircase over levels 1..top with random cut points."""
    if top <= 1:
        return np.ones(n, dtype=np.int64)
    cuts = np.sort(rng.integers(0, n + 1, size=top - 1))
    return 1 + np.searchsorted(cuts, np.arange(n), side="right").astype(np.int64)


def _trajectory(
    cfg: SynthConfig, rng: np.random.Generator, kind: TrajectoryKind, n: int
) -> np.ndarray:
    E = cfg.E
    if kind is TrajectoryKind.MIXED:
        kind = rng.choice(
            [
                TrajectoryKind.UNIFORM_TIME,
                TrajectoryKind.STAIRCASE,
                TrajectoryKind.ALREADY_EXPERT,
                TrajectoryKind.NEVER_EXPERT,
            ],
            p=[0.5, 0.3, 0.1, 0.1],
        )
    if kind is TrajectoryKind.ALREADY_EXPERT:
        return np.full(n, E, dtype=np.int64)
    if kind is TrajectoryKind.NEVER_EXPERT:
        return _staircase(rng, n, max(1, E - 1))
    if kind is TrajectoryKind.STAIRCASE:
        return _staircase(rng, n, E)
    # uniform over the user's own rating sequence
    if n == 1:
        return np.ones(1, dtype=np.int64)
    return np.minimum(np.arange(n) * E // (n - 1) + 1, E).astype(np.int64)


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Draw a corpus and its ground truth, deterministically from the seed.

    Users labeled as leavers stop rating well before the corpus horizon
    and walk their trajectories at half speed, planting the slower
    progressions the retention analysis is meant to expose.
    """
    rng = np.random.default_rng(cfg.seed)
    users = tuple(f"u{j:05d}" for j in range(cfg.n_users))
    items = tuple(f"i{j:05d}" for j in range(cfg.n_items))
    params = _planted_params(cfg, rng, users, items)
    sigma = cfg.sigma_by_level
    lo, hi = cfg.rating_range

    leaver = rng.random(cfg.n_users) < cfg.leaver_fraction

    ratings: list[Rating] = []
    levels: dict[str, np.ndarray] = {}
    clamp_count = 0
    for j, user in enumerate(users):
        n_r = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        item_idx = np.sort(rng.choice(cfg.n_items, size=n_r, replace=False))
        rng.shuffle(item_idx)
        # staggered onboarding decouples personal clocks from corpus time;
        # leavers join early enough that their exits clear retention gaps
        if leaver[j]:
            start = rng.uniform(0.0, 0.5 * cfg.horizon)
            end = start + rng.uniform(0.25, 0.5) * (cfg.horizon - start)
        else:
            start = rng.uniform(0.0, 0.8 * cfg.horizon)
            end = float(cfg.horizon)
        times = np.linspace(start, end, n_r).astype(np.int64) if n_r > 1 else np.array(
            [int(start)], dtype=np.int64
        )
        traj = _trajectory(cfg, rng, cfg.trajectory_kind, n_r)
        if leaver[j]:
            # leavers walk their own trajectory at half speed
            traj = traj[np.arange(n_r) // 2]
        lv0 = traj - 1
        gu = params.user_factors[lv0, j]
        gi = params.item_factors[lv0, item_idx]
        pred = (
            params.alpha[lv0]
            + params.user_bias[lv0, j]
            + params.item_bias[lv0, item_idx]
            + np.einsum("ij,ij->i", gu, gi)
        )
        noise = rng.standard_normal(n_r) * sigma[lv0]
        values = pred + noise
        if cfg.clamp:
            clamped = np.clip(values, 0.0, 5.0)
            clamp_count += int(np.sum(clamped != values))
            values = clamped
        levels[user] = traj
        for t, item_j, v in zip(times, item_idx, values):
            ratings.append(
                Rating(user=user, item=items[int(item_j)], value=float(v),
                       timestamp=int(t), raw_value=float(v))
            )

    dataset = Dataset(ratings, scale_max=5.0)
    truth = GroundTruth(
        true_params=params,
        true_levels=ExperienceAssignment(levels),
        leaver_flags={u: bool(flag) for u, flag in zip(users, leaver)},
        clamp_count=clamp_count,
        n_ratings=len(ratings),
    )
    return dataset, truth


def brute_force_assign(costs: np.ndarray, E: int | None = None) -> np.ndarray:
    """Exhaustive oracle for the monotone assignment DP.

    Enumerates every non-decreasing level sequence (there are
    C(n + E - 1, E - 1) of them) in lexicographic order and keeps the
    first one attaining the minimal cost, which matches the DP's
    tie-break.  Only intended for small instances.
    """
    costs = np.asarray(costs, dtype=np.float64)
    n_levels, n = costs.shape
    if E is not None and E != n_levels:
        raise ValueError(f"E={E} disagrees with cost matrix rows {n_levels}")
    if n > 12 or n_levels > 5:
        raise ValueError(f"instance too large for enumeration: n={n}, E={n_levels}")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if not np.isfinite(costs).all():
        raise ValueError("non-finite cost entry")
    cols = np.arange(n)
    best_seq = None
    best_cost = np.inf
    for seq in combinations_with_replacement(range(n_levels), n):
        total = costs[list(seq), cols].sum()
        if total < best_cost:
            best_cost = total
            best_seq = seq
    return np.asarray(best_seq, dtype=np.int64) + 1


@dataclass(frozen=True)
class RecoveryScore:
    score: float
    defined: bool


def recovery_score(truth: GroundTruth, fitted) -> RecoveryScore:
    """Spearman rank correlation between planted and fitted levels over
    all training ratings.  Rank correlation absorbs monotone relabelings
    of the level indices.  A constant fitted assignment has no defined
    correlation and is reported as 0.0 with ``defined=False``."""
    planted = []
    recovered = []
    for user in sorted(truth.true_levels.levels):
        got = fitted.assignment.levels[user]
        want = truth.true_levels.levels[user]
        if len(got) != len(want):
            raise ValueError(
                f"user {user!r}: fitted assignment covers {len(got)} ratings, ground truth "
                f"{len(want)}; restrict the truth to the training subset first "
                "(ExperienceAssignment.restrict_to)"
            )
        planted.append(want)
        recovered.append(got)
    x = np.concatenate(planted)
    y = np.concatenate(recovered)
    if np.all(y == y[0]) or np.all(x == x[0]):
        return RecoveryScore(score=0.0, defined=False)
    rho = spearmanr(x, y).statistic
    if not np.isfinite(rho):
        return RecoveryScore(score=0.0, defined=False)
    return RecoveryScore(score=float(rho), defined=True)
