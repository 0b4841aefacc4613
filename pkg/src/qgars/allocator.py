"""Rank-to-rate translation: exponential weights and the closed-form NUM solve.

A rank assignment over the active window maps to weights gamma^(K - r); ready
tasks outside the window get the base weight epsilon so nothing starves. The
proportional-fair shares are then the closed-form optimum of
max sum_v w_v log(theta_v) on the unit simplex: theta_v = w_v / sum_u w_u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

from .domain import RateAllocation
from .errors import ContractViolation
from .qubo import RankAssignment

# Exponent ceiling beyond which gamma^(K-r) is computed in (shifted) log
# space; float64 overflows near exp(709).
_LOG_SPACE_LIMIT = 600.0


@dataclass(frozen=True)
class WeightProfile:
    gamma: float = 2.0
    epsilon: float = 0.01

    def __post_init__(self):
        if self.gamma <= 1:
            raise ContractViolation("gamma must be > 1")
        if not (0 < self.epsilon < 1):
            raise ContractViolation("epsilon must be in (0, 1)")


def rank_weights(
    assignment: RankAssignment,
    full_ready: Iterable[int],
    profile: WeightProfile = WeightProfile(),
) -> Dict[int, float]:
    """Per-task weights: gamma^(K-r) inside the window, epsilon outside."""
    ready = set(full_ready)
    window = list(assignment.order)
    if not set(window) <= ready:
        raise ContractViolation("assignment contains tasks outside the ready set")
    k = len(window)
    log_gamma = math.log(profile.gamma)
    max_exp = (k - 1) * log_gamma
    weights: Dict[int, float] = {}
    if max_exp <= _LOG_SPACE_LIMIT:
        for rank, task in enumerate(window, start=1):
            weights[task] = profile.gamma ** (k - rank)
        base = profile.epsilon
    else:
        # Shift exponents toward the middle of the representable range;
        # downstream normalization only sees the (exact) ratios.
        shift = 0.5 * (max_exp + math.log(profile.epsilon))
        for rank, task in enumerate(window, start=1):
            weights[task] = math.exp((k - rank) * log_gamma - shift)
        base = math.exp(math.log(profile.epsilon) - shift)
    for task in sorted(ready - set(window)):
        weights[task] = base
    return weights


def num_allocate(weights: Dict[int, float], node: Optional[int] = None) -> RateAllocation:
    """Closed-form proportional-fair shares theta_v = w_v / sum_u w_u."""
    if not weights:
        raise ContractViolation("cannot allocate over an empty weight map")
    total = 0.0
    for task, w in weights.items():
        if w <= 0 or not math.isfinite(w):
            raise ContractViolation(f"weight for task {task} must be finite and > 0")
        total += w
    shares = {task: w / total for task, w in weights.items()}
    return RateAllocation(shares=shares, node=node)


def verify_kkt(weights: Dict[int, float], alloc: RateAllocation) -> bool:
    """KKT check: simplex constraint binding and w_v / theta_v constant."""
    total = sum(alloc.shares.values())
    if abs(total - 1.0) > 1e-9:
        return False
    ratios = []
    for task, w in weights.items():
        theta = alloc.shares.get(task)
        if theta is None or theta <= 0:
            return False
        ratios.append(w / theta)
    ref = ratios[0]
    return all(abs(r - ref) <= 1e-9 * abs(ref) for r in ratios)
