"""Self-check suite behind the ``validate`` CLI command.

Three independent checks: the loaded model's assignment satisfies its
kind's monotonicity constraint on the given corpus, the assignment DP
matches brute-force enumeration on random small instances, and the
analytic gradient matches central finite differences on a random small
instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assign import ModelKind, assign_user_dp, find_monotonicity_violation
from .dataset import Dataset, Rating
from .model import ExperienceAssignment, ModelParams, gradient, objective
from .synth import brute_force_assign


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_monotonicity(kind: ModelKind, d: Dataset, a: ExperienceAssignment) -> CheckResult:
    violation = find_monotonicity_violation(kind, d, a)
    if violation is None:
        return CheckResult("monotonicity", True, "all assignments monotone")
    user, index = violation
    return CheckResult(
        "monotonicity", False, f"monotonicity violated at user={user}, index={index}"
    )


def check_dp_against_oracle(n_cases: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        E = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        costs = rng.random((E, n))
        got = assign_user_dp(costs)
        want = brute_force_assign(costs)
        if not np.array_equal(got, want):
            return CheckResult(
                "dp_vs_oracle", False, f"case {case}: dp={got.tolist()} oracle={want.tolist()}"
            )
    return CheckResult("dp_vs_oracle", True, f"{n_cases} random instances match")


def check_gradient(seed: int = 0, rel_tol: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    users = tuple(f"u{j}" for j in range(5))
    items = tuple(f"i{j}" for j in range(5))
    E, K = 3, 2
    ratings = []
    t = 0
    for u in users:
        for i in items:
            ratings.append(Rating(u, i, float(rng.uniform(0, 5)), t, 0.0))
            t += 1
    d = Dataset(ratings, scale_max=5.0)
    a = ExperienceAssignment(
        {u: np.sort(rng.integers(1, E + 1, size=5)) for u in users}
    )
    p = ModelParams.zeros(users, items, E, K)
    flat = rng.normal(0.0, 0.5, size=p.n_params)
    p = ModelParams.from_flat(flat, users, items, E, K)
    lam = 0.37

    analytic = gradient(p, a, d, lam)
    h = 1e-5
    worst = 0.0
    for j in range(len(flat)):
        bump = flat.copy()
        bump[j] += h
        up = objective(ModelParams.from_flat(bump, users, items, E, K), a, d, lam)
        bump[j] -= 2 * h
        down = objective(ModelParams.from_flat(bump, users, items, E, K), a, d, lam)
        numeric = (up - down) / (2 * h)
        if abs(analytic[j]) > 1e-8:
            worst = max(worst, abs(numeric - analytic[j]) / abs(analytic[j]))
    if worst < rel_tol:
        return CheckResult("gradient", True, f"max relative error {worst:.2e}")
    return CheckResult("gradient", False, f"max relative error {worst:.2e} >= {rel_tol}")


def run_all(kind: ModelKind, d: Dataset, a: ExperienceAssignment, seed: int = 0) -> list[CheckResult]:
    return [
        check_monotonicity(kind, d, a),
        check_dp_against_oracle(seed=seed),
        check_gradient(seed=seed),
    ]
