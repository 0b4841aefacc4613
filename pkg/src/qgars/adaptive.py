"""Adaptive robust execution: two experts, shadow losses, Hedge mixing.

The quantum-guided expert runs window selection -> rank QUBO -> annealer ->
exponential weights -> proportional-fair shares. The robust expert allocates
backlog-proportional shares and never looks at predictions. A trust weight
lambda in [0, 1] mixes the two allocations deterministically and is updated
once per epoch by the exponential-weights rule on normalized delay-pressure
losses. Baseline policies (static prior, SRPT-with-predictions) live here
too so the harness can run them through the same interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .allocator import WeightProfile, num_allocate, rank_weights
from .annealer import AnnealConfig, solve_sa, solve_sqa
from .domain import RateAllocation, TaskState
from .errors import ContractViolation
from .kernels import mix_seed
from .qubo import RankAssignment, build
from .simengine import Scenario, select_active_window

LAMBDA_FLOOR = 1e-6  # keeps the Hedge endpoints from becoming absorbing

_POLICY_TAGS = {"qgars": 1, "static_prior": 2, "robust": 3, "srpt_pred": 4}


@dataclass
class TrustState:
    """Hedge state: mixture weight, loss normalizer, cumulative losses."""

    lam: float = 0.5
    eta: float = 0.1
    running_max: float = 0.0
    cum_loss_q: float = 0.0
    cum_loss_b: float = 0.0
    cum_loss_mixed: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ContractViolation("lambda must start in [0, 1]")
        if self.eta <= 0:
            raise ContractViolation("eta must be > 0")


@dataclass(frozen=True)
class ExpertDecision:
    label: str  # "quantum_guided" or "robust_baseline"
    alloc: RateAllocation


def default_eta(horizon: int) -> float:
    """Learning rate minimizing the two-expert regret bound at horizon T."""
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    return math.sqrt(8.0 * math.log(2.0) / horizon)


def delay_pressure(states: Sequence[TaskState], alloc: RateAllocation) -> float:
    """Raw per-epoch delay pressure sum_v q_v / theta_v over the ready set."""
    total = 0.0
    for st in states:
        theta = alloc.shares.get(st.spec)
        if theta is None or theta <= 0:
            raise ContractViolation(
                f"allocation does not cover ready task {st.spec}"
            )
        total += st.backlog / theta
    return total


def observe_losses(trust: TrustState, raw_q: float, raw_b: float) -> Tuple[float, float]:
    """Normalize raw pressures by the running max; (0, 0) epochs leave it be."""
    if raw_q < 0 or raw_b < 0:
        raise ContractViolation("raw delay pressures must be >= 0")
    if raw_q == 0.0 and raw_b == 0.0:
        return 0.0, 0.0
    trust.running_max = max(trust.running_max, raw_q, raw_b)
    return raw_q / trust.running_max, raw_b / trust.running_max


def shadow_losses(
    states: Sequence[TaskState],
    decision_q: ExpertDecision,
    decision_b: ExpertDecision,
    trust: TrustState,
) -> Tuple[float, float]:
    """Per-epoch normalized surrogate losses for the two experts."""
    raw_q = delay_pressure(states, decision_q.alloc)
    raw_b = delay_pressure(states, decision_b.alloc)
    return observe_losses(trust, raw_q, raw_b)


def hedge_update(trust: TrustState, loss_q: float, loss_b: float) -> TrustState:
    """Exponential-weights update of lambda; mutates and returns trust."""
    if not (-1e-12 <= loss_q <= 1 + 1e-12 and -1e-12 <= loss_b <= 1 + 1e-12):
        raise ContractViolation("losses must lie in [0, 1]")
    loss_q = min(max(loss_q, 0.0), 1.0)
    loss_b = min(max(loss_b, 0.0), 1.0)
    lam = trust.lam
    trust.cum_loss_q += loss_q
    trust.cum_loss_b += loss_b
    trust.cum_loss_mixed += lam * loss_q + (1.0 - lam) * loss_b
    wq = lam * math.exp(-trust.eta * loss_q)
    wb = (1.0 - lam) * math.exp(-trust.eta * loss_b)
    if wq + wb > 0:
        lam = wq / (wq + wb)
    trust.lam = min(max(lam, LAMBDA_FLOOR), 1.0 - LAMBDA_FLOOR)
    return trust


def mix_rates(
    trust: TrustState, decision_q: ExpertDecision, decision_b: ExpertDecision
) -> RateAllocation:
    """Deterministic convex combination of the two expert allocations."""
    shares_q = decision_q.alloc.shares
    shares_b = decision_b.alloc.shares
    if set(shares_q) != set(shares_b):
        raise ContractViolation("experts allocated different task sets")
    lam = trust.lam
    if lam == 1.0:
        return RateAllocation(shares=dict(shares_q), node=decision_q.alloc.node)
    if lam == 0.0:
        return RateAllocation(shares=dict(shares_b), node=decision_b.alloc.node)
    mixed = {
        task: lam * shares_q[task] + (1.0 - lam) * shares_b[task]
        for task in shares_q
    }
    return RateAllocation(shares=mixed, node=decision_q.alloc.node)


def expert_quantum(
    states: Sequence[TaskState],
    k_max: int = 8,
    beta: float = 1.0,
    anneal: AnnealConfig = AnnealConfig(),
    profile: WeightProfile = WeightProfile(),
    node: Optional[int] = None,
    use_predictions: bool = True,
    use_sa: bool = False,
) -> Optional[ExpertDecision]:
    """Window -> QUBO -> annealer -> exponential weights -> NUM shares."""
    if not states:
        return None
    window = select_active_window(states, k_max, use_predictions=use_predictions)
    instance = build([(st.spec, st.backlog) for st in window], beta=beta)
    solver = solve_sa if use_sa else solve_sqa
    result = solver(instance, anneal)
    weights = rank_weights(
        result.assignment, [st.spec for st in states], profile
    )
    return ExpertDecision(
        label="quantum_guided", alloc=num_allocate(weights, node=node)
    )


def expert_robust(
    states: Sequence[TaskState], node: Optional[int] = None
) -> Optional[ExpertDecision]:
    """Backlog-proportional fairness with an additive floor; prediction-free."""
    if not states:
        return None
    floor = 1e-6
    total = sum(st.backlog + floor for st in states)
    shares = {st.spec: (st.backlog + floor) / total for st in states}
    return ExpertDecision(
        label="robust_baseline", alloc=RateAllocation(shares=shares, node=node)
    )


def policy_static_prior(
    states: Sequence[TaskState], **kwargs
) -> Optional[RateAllocation]:
    """The quantum-guided allocation executed as-is (lambda frozen at 1)."""
    decision = expert_quantum(states, **kwargs)
    return None if decision is None else decision.alloc


def policy_srpt(
    states: Sequence[TaskState],
    profile: WeightProfile = WeightProfile(),
    use_predictions: bool = True,
    node: Optional[int] = None,
    k_max: Optional[int] = None,
) -> Optional[RateAllocation]:
    """Shortest-(predicted)-remaining-first rank fed into the NUM module.

    The rank window is truncated at k_max just like the quantum-guided path;
    ready tasks beyond it receive the base weight epsilon.
    """
    if not states:
        return None
    key = (
        (lambda s: (s.predicted_remaining, s.spec))
        if use_predictions
        else (lambda s: (s.remaining_work, s.spec))
    )
    ranked = sorted(states, key=key)
    if k_max is not None:
        ranked = ranked[:k_max]
    assignment = RankAssignment(order=tuple(st.spec for st in ranked))
    weights = rank_weights(assignment, [st.spec for st in states], profile)
    return num_allocate(weights, node=node)


# ---------------------------------------------------------------------------
# Episode-level policy drivers (the interface simengine.step consumes).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulerSettings:
    """Shared knobs for the policy drivers used by the simulator/harness."""

    window_k: int = 8
    beta: float = 1.0
    gamma: float = 2.0
    epsilon: float = 0.01
    anneal: AnnealConfig = AnnealConfig()
    eta: Optional[float] = None  # None: default_eta(horizon)
    use_predictions: bool = True
    use_sa: bool = False

    def profile(self) -> WeightProfile:
        return WeightProfile(gamma=self.gamma, epsilon=self.epsilon)


class _PolicyBase:
    name = "base"

    def __init__(self, settings: SchedulerSettings = SchedulerSettings()):
        self.settings = settings
        self._seed_base = 0

    def reset(self, scenario: Scenario, env_seed: int, horizon: int) -> None:
        self._seed_base = mix_seed(env_seed, _POLICY_TAGS.get(self.name, 0))

    def _anneal_config(self, node: int, epoch: int) -> AnnealConfig:
        return replace(
            self.settings.anneal, seed=mix_seed(self._seed_base, node, epoch)
        )

    def decide(
        self, epoch: int, views: Dict[int, List[TaskState]]
    ) -> Tuple[Dict[int, RateAllocation], float]:
        raise NotImplementedError


class HedgePolicy(_PolicyBase):
    """The full adaptive scheduler: both experts, Hedge-mixed execution."""

    name = "qgars"

    def __init__(self, settings: SchedulerSettings = SchedulerSettings()):
        super().__init__(settings)
        self.trust: Optional[TrustState] = None

    def reset(self, scenario, env_seed, horizon):
        super().reset(scenario, env_seed, horizon)
        eta = self.settings.eta if self.settings.eta is not None else default_eta(horizon)
        self.trust = TrustState(lam=0.5, eta=eta)
        self.trace_log: List[dict] = []

    def decide(self, epoch, views):
        trust = self.trust
        lam_used = trust.lam
        allocs: Dict[int, RateAllocation] = {}
        raw_q = 0.0
        raw_b = 0.0
        s = self.settings
        profile = s.profile()
        for nid in sorted(views):
            states = views[nid]
            dq = expert_quantum(
                states,
                k_max=s.window_k,
                beta=s.beta,
                anneal=self._anneal_config(nid, epoch),
                profile=profile,
                node=nid,
                use_predictions=s.use_predictions,
                use_sa=s.use_sa,
            )
            db = expert_robust(states, node=nid)
            allocs[nid] = mix_rates(trust, dq, db)
            raw_q += delay_pressure(states, dq.alloc)
            raw_b += delay_pressure(states, db.alloc)
        loss_q = loss_b = 0.0
        if views:
            loss_q, loss_b = observe_losses(trust, raw_q, raw_b)
            hedge_update(trust, loss_q, loss_b)
        self.trace_log.append(
            {
                "loss_q": loss_q,
                "loss_b": loss_b,
                "cum_loss_q": trust.cum_loss_q,
                "cum_loss_b": trust.cum_loss_b,
                "cum_loss_mixed": trust.cum_loss_mixed,
            }
        )
        return allocs, lam_used


class StaticPriorPolicy(_PolicyBase):
    """Always trusts the quantum-guided prior (lambda frozen at 1)."""

    name = "static_prior"

    def decide(self, epoch, views):
        s = self.settings
        profile = s.profile()
        allocs = {}
        for nid in sorted(views):
            alloc = policy_static_prior(
                views[nid],
                k_max=s.window_k,
                beta=s.beta,
                anneal=self._anneal_config(nid, epoch),
                profile=profile,
                node=nid,
                use_predictions=s.use_predictions,
                use_sa=s.use_sa,
            )
            if alloc is not None:
                allocs[nid] = alloc
        return allocs, 1.0


class RobustPolicy(_PolicyBase):
    """The robust proportional-fairness expert executed alone."""

    name = "robust"

    def decide(self, epoch, views):
        allocs = {}
        for nid in sorted(views):
            decision = expert_robust(views[nid], node=nid)
            if decision is not None:
                allocs[nid] = decision.alloc
        return allocs, 0.0


class SrptPolicy(_PolicyBase):
    """Greedy shortest-remaining-processing-time baseline (prediction-fed)."""

    name = "srpt_pred"

    def decide(self, epoch, views):
        profile = self.settings.profile()
        allocs = {}
        for nid in sorted(views):
            alloc = policy_srpt(
                views[nid],
                profile=profile,
                use_predictions=self.settings.use_predictions,
                node=nid,
                k_max=self.settings.window_k,
            )
            if alloc is not None:
                allocs[nid] = alloc
        return allocs, 0.0


POLICY_CLASSES = {
    cls.name: cls for cls in (HedgePolicy, StaticPriorPolicy, RobustPolicy, SrptPolicy)
}


def make_policy(name: str, settings: SchedulerSettings = SchedulerSettings()):
    try:
        return POLICY_CLASSES[name](settings)
    except KeyError:
        raise ContractViolation(
            f"unknown policy {name!r}; expected one of {sorted(POLICY_CLASSES)}"
        ) from None
