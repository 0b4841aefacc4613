"""Deterministic discrete-event simulation of node-local scheduling.

An episode advances in unit epochs. Each epoch: workflow releases and DAG
readiness are refreshed, shock-window node failures are drawn, the policy
maps each node's ready set to simplex shares, service drains remaining work
(failed nodes drain nothing), completions unlock successors, and per-epoch
metrics are recorded. All randomness flows through named Philox streams keyed
by (environment seed, stream id, epoch), so every policy evaluated on the
same environment seed sees identical workloads, latency draws, prediction
noise and failure patterns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .domain import (
    DONE,
    PENDING,
    READY,
    RUNNING,
    ComputeNode,
    RateAllocation,
    TaskSpec,
    TaskState,
    WorkflowDag,
)
from .errors import ContractViolation, ScenarioError

# Named environment substreams (mixed with the epoch index where relevant).
_STREAM_DEMAND = 11
_STREAM_RELEASE = 12
_STREAM_PREDICT = 13
_STREAM_FAIL = 14
_STREAM_ARRIVAL = 15

_DONE_EPS = 1e-12


@dataclass(frozen=True)
class LatencyModel:
    """Controls realized service demand: mean-preserving lognormal noise of
    magnitude alpha plus an alpha-scaled Pareto tail mixture."""

    alpha: float = 0.0
    tail_prob_coeff: float = 0.05
    tail_shape: float = 2.5
    stream: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ScenarioError("alpha must be >= 0")
        if self.tail_shape <= 1:
            raise ScenarioError("tail_shape must be > 1")
        if not (0 <= self.tail_prob_coeff <= 1):
            raise ScenarioError("tail_prob_coeff must be in [0, 1]")

    def tail_probability(self) -> float:
        return min(self.tail_prob_coeff * self.alpha, 0.3)

    def mean_inflation(self) -> float:
        """Expected multiplier on nominal demand (tail mixture included)."""
        p = self.tail_probability()
        return (1 - p) + p * self.tail_shape / (self.tail_shape - 1)


@dataclass(frozen=True)
class ShockProfile:
    start_epoch: int
    end_epoch: int
    node_fail_prob: float = 0.15
    prediction_noise_factor: float = 5.0

    def __post_init__(self):
        if not (0 <= self.start_epoch < self.end_epoch):
            raise ScenarioError("shock needs 0 <= start < end")
        if not (0 <= self.node_fail_prob <= 1):
            raise ScenarioError("node_fail_prob must be in [0, 1]")
        if self.prediction_noise_factor < 1:
            raise ScenarioError("prediction_noise_factor must be >= 1")

    def active(self, epoch: int) -> bool:
        return self.start_epoch <= epoch < self.end_epoch


@dataclass
class EpochMetrics:
    epoch: int
    wct_partial: float
    p95_backlog: float
    blocked_capacity_ratio: float
    utilization: float
    lam: float


@dataclass(frozen=True)
class Scenario:
    """Environment description for one episode family (policy-independent)."""

    nodes: Tuple[ComputeNode, ...]
    workflows: Tuple[WorkflowDag, ...]
    horizon: int
    latency: LatencyModel = LatencyModel()
    prediction_sigma: float = 0.1
    shock: Optional[ShockProfile] = None
    release_span: int = 0
    poisson_arrival_rate: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ScenarioError("horizon must be >= 1")
        if self.shock is not None and self.shock.end_epoch > self.horizon:
            raise ScenarioError("shock interval must end within the horizon")
        if self.release_span < 0 or self.release_span >= self.horizon:
            if self.release_span != 0:
                raise ScenarioError("release_span must lie inside the horizon")
        node_ids = {n.id for n in self.nodes}
        dims = {n.capacity.size for n in self.nodes}
        if len(dims) > 1:
            raise ScenarioError("all nodes must share one capacity dimensionality")
        for wf in self.workflows:
            for t in wf.tasks:
                if t.assigned_node not in node_ids:
                    raise ScenarioError(
                        f"task {t.id} assigned to unknown node {t.assigned_node}"
                    )


@dataclass
class EpisodeResult:
    wct_total: float
    unfinished: int
    completion_epochs: Dict[int, int]
    metrics: List[EpochMetrics]
    epochs_run: int

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.metrics])


def sample_service_demand(nominal: float, model: LatencyModel, rng: np.random.Generator) -> float:
    """One realized demand draw; strictly positive, mean p_bar * inflation."""
    if nominal <= 0:
        raise ContractViolation("nominal demand must be > 0")
    return float(sample_service_demands(np.array([nominal]), model, rng)[0])


def sample_service_demands(
    nominals: np.ndarray, model: LatencyModel, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized realized demands for an array of nominal demands."""
    nominals = np.asarray(nominals, dtype=float)
    n = nominals.size
    if model.alpha == 0.0:
        return nominals.copy()
    z = rng.standard_normal(n)
    alpha = model.alpha
    out = nominals * np.exp(alpha * z - 0.5 * alpha * alpha)
    p_tail = model.tail_probability()
    if p_tail > 0:
        hit = rng.random(n) < p_tail
        # Generator.pareto is the Lomax form on [0, inf); +1 gives the
        # classical Pareto on [1, inf).
        out[hit] *= rng.pareto(model.tail_shape, size=int(hit.sum())) + 1.0
    return out


def generate_workload(
    count: int,
    node_range: Tuple[int, int] = (10, 50),
    width_range: Tuple[int, int] = (2, 8),
    seed: int = 0,
    nodes: Sequence[int] = (0,),
    task_id_base: int = 0,
    workflow_id_base: int = 0,
) -> List[WorkflowDag]:
    """Layered random DAGs with log-uniform SLA weights and nominal demands.

    Task ids are dense integers in generation order so iteration is stable.
    """
    lo, hi = node_range
    wlo, whi = width_range
    if count < 0 or lo < 1 or lo > hi or wlo < 1 or wlo > whi:
        raise ScenarioError("invalid workload generator ranges")
    if wlo > hi:
        raise ScenarioError(
            f"minimum width {wlo} exceeds maximum DAG size {hi}: impossible"
        )
    if not nodes:
        raise ScenarioError("need at least one compute node id")
    rng = np.random.default_rng(seed)
    node_ids = np.asarray(sorted(nodes))
    out: List[WorkflowDag] = []
    next_task = task_id_base
    for w in range(count):
        n_tasks = int(rng.integers(lo, hi + 1))
        max_width = int(rng.integers(wlo, whi + 1))
        sla = float(np.exp(rng.uniform(math.log(0.5), math.log(2.0))))
        layers: List[List[int]] = []
        remaining = n_tasks
        while remaining > 0:
            size = int(rng.integers(1, min(max_width, remaining) + 1))
            layers.append(list(range(next_task, next_task + size)))
            next_task += size
            remaining -= size
        tasks: List[TaskSpec] = []
        edges: List[Tuple[int, int]] = []
        for li, layer in enumerate(layers):
            for tid in layer:
                preds: Set[int] = set()
                if li > 0:
                    prev = layers[li - 1]
                    n_pred = int(rng.integers(1, min(3, len(prev)) + 1))
                    chosen = rng.choice(prev, size=n_pred, replace=False)
                    preds = {int(p) for p in chosen}
                    edges.extend((int(p), tid) for p in sorted(preds))
                demand = float(np.exp(rng.uniform(math.log(1.0), math.log(10.0))))
                assigned = int(node_ids[rng.integers(0, node_ids.size)])
                tasks.append(
                    TaskSpec(
                        id=tid,
                        workflow=workflow_id_base + w,
                        assigned_node=assigned,
                        nominal_demand=demand,
                        predecessors=frozenset(preds),
                    )
                )
        out.append(
            WorkflowDag(
                id=workflow_id_base + w,
                sla_weight=sla,
                tasks=tuple(tasks),
                edges=tuple(edges),
            )
        )
    return out


def select_active_window(
    states: Sequence[TaskState], k_max: int, use_predictions: bool = True
) -> List[TaskState]:
    """Top-k ready tasks by backlog pressure per unit of (predicted) work.

    Ties fall back to earlier arrival epoch, then lower task id.
    """
    if k_max < 1:
        raise ContractViolation("k_max must be >= 1")

    def score(st: TaskState) -> float:
        denom = st.predicted_remaining if use_predictions else st.remaining_work
        return st.backlog / max(denom, 1e-9)

    ranked = sorted(states, key=lambda s: (-score(s), s.ready_epoch, s.spec))
    return ranked[:k_max]


class Simulation:
    """Mutable per-episode state; owned by exactly one run_episode call."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.nodes = list(scenario.nodes)
        self.node_ids = [n.id for n in self.nodes]
        self.n_nodes = len(self.nodes)

        specs: List[TaskSpec] = []
        self.wf_of: Dict[int, int] = {}
        self.spec_of: Dict[int, TaskSpec] = {}
        for wf in scenario.workflows:
            for spec in wf.tasks:
                specs.append(spec)
                self.wf_of[spec.id] = wf.id
                self.spec_of[spec.id] = spec
        self.task_ids = [s.id for s in specs]
        self.n_tasks = len(specs)
        self.id_index = {tid: i for i, tid in enumerate(self.task_ids)}

        # Realized demands: one vectorized draw in task-id order.
        rng_demand = np.random.default_rng((seed, _STREAM_DEMAND))
        nominals = np.array([s.nominal_demand for s in specs])
        realized = (
            sample_service_demands(nominals, scenario.latency, rng_demand)
            if self.n_tasks
            else np.zeros(0)
        )

        self.states: Dict[int, TaskState] = {}
        self.succs: Dict[int, List[int]] = {tid: [] for tid in self.task_ids}
        self.unmet: Dict[int, int] = {}
        for i, spec in enumerate(specs):
            self.states[spec.id] = TaskState(
                spec=spec.id,
                backlog=0.0,
                remaining_work=float(realized[i]) if self.n_tasks else 0.0,
                predicted_remaining=float(realized[i]) if self.n_tasks else 0.0,
                status=PENDING,
            )
            self.unmet[spec.id] = len(spec.predecessors)
            for p in spec.predecessors:
                self.succs[p].append(spec.id)

        # Releases: deterministic stagger over release_span (0: all at epoch 0).
        self.release_of: Dict[int, int] = {}
        if scenario.release_span > 0:
            rng_rel = np.random.default_rng((seed, _STREAM_RELEASE))
            offsets = rng_rel.integers(0, scenario.release_span + 1, len(scenario.workflows))
            for wf, off in zip(scenario.workflows, offsets):
                self.release_of[wf.id] = int(off)
        else:
            for wf in scenario.workflows:
                self.release_of[wf.id] = 0

        self.wf_weight = {wf.id: wf.sla_weight for wf in scenario.workflows}
        self.wf_open = {wf.id: len(wf.tasks) for wf in scenario.workflows}
        self.released: Set[int] = set()
        self.completion_epochs: Dict[int, int] = {}
        self.wct_partial = 0.0

        self.ready_by_node: Dict[int, List[int]] = {nid: [] for nid in self.node_ids}
        self._newly_ready: List[int] = []
        self.done_count = 0

    # -- epoch phases ------------------------------------------------------

    def _release(self, epoch: int) -> None:
        for wf in self.scenario.workflows:
            if wf.id in self.released or self.release_of[wf.id] != epoch:
                continue
            self.released.add(wf.id)
            for spec in wf.tasks:
                if self.unmet[spec.id] == 0:
                    self._make_ready(spec.id, epoch)

    def _make_ready(self, tid: int, epoch: int) -> None:
        st = self.states[tid]
        st.status = READY
        st.ready_epoch = epoch
        st.backlog = st.remaining_work
        self.ready_by_node[self.spec_of[tid].assigned_node].append(tid)

    def _refresh_predictions(self, epoch: int, noise_factor: float) -> None:
        sigma = self.scenario.prediction_sigma * noise_factor
        if sigma <= 0:
            for nid in self.node_ids:
                for tid in self.ready_by_node[nid]:
                    st = self.states[tid]
                    st.predicted_remaining = st.remaining_work
            return
        rng = np.random.default_rng((self.seed, _STREAM_PREDICT, epoch))
        z = rng.standard_normal(self.n_tasks)
        for nid in self.node_ids:
            for tid in self.ready_by_node[nid]:
                st = self.states[tid]
                st.predicted_remaining = st.remaining_work * math.exp(
                    sigma * z[self.id_index[tid]]
                )

    def _draw_failures(self, epoch: int) -> Set[int]:
        shock = self.scenario.shock
        if shock is None or not shock.active(epoch) or shock.node_fail_prob == 0:
            return set()
        rng = np.random.default_rng((self.seed, _STREAM_FAIL, epoch))
        draws = rng.random(self.n_nodes)
        return {
            self.node_ids[i]
            for i in range(self.n_nodes)
            if draws[i] < shock.node_fail_prob
        }

    def _apply_arrivals(self, epoch: int) -> None:
        rate = self.scenario.poisson_arrival_rate
        if rate <= 0:
            return
        rng = np.random.default_rng((self.seed, _STREAM_ARRIVAL, epoch))
        draws = rng.poisson(rate, self.n_tasks)
        for nid in self.node_ids:
            for tid in self.ready_by_node[nid]:
                extra = float(draws[self.id_index[tid]])
                if extra > 0:
                    st = self.states[tid]
                    st.remaining_work += extra
                    st.backlog += extra
                st2 = self.states[tid]
                st2.arrival_rate = rate

    def node_views(self) -> Dict[int, List[TaskState]]:
        views = {}
        for nid in self.node_ids:
            ready = self.ready_by_node[nid]
            if ready:
                views[nid] = [self.states[t] for t in ready]
        return views

    def _serve(self, epoch: int, allocs: Dict[int, RateAllocation], failed: Set[int]) -> None:
        for nid, alloc in allocs.items():
            ready_here = set(self.ready_by_node[nid])
            if not set(alloc.shares) <= ready_here:
                raise ContractViolation(
                    f"policy allocated tasks not ready on node {nid}: "
                    f"{sorted(set(alloc.shares) - ready_here)}"
                )
            if nid in failed:
                continue
            for tid, theta in alloc.shares.items():
                st = self.states[tid]
                st.status = RUNNING
                st.remaining_work -= theta  # service_rate_scalar = 1
                if st.remaining_work <= _DONE_EPS:
                    self._complete(tid, epoch)
                else:
                    st.backlog = st.remaining_work

    def _complete(self, tid: int, epoch: int) -> None:
        st = self.states[tid]
        st.remaining_work = 0.0
        st.backlog = 0.0
        st.status = DONE
        self.done_count += 1
        node = self.spec_of[tid].assigned_node
        self.ready_by_node[node].remove(tid)
        wf = self.wf_of[tid]
        self.wf_open[wf] -= 1
        if self.wf_open[wf] == 0:
            c_j = epoch + 1
            self.completion_epochs[wf] = c_j
            self.wct_partial += self.wf_weight[wf] * c_j
        for succ in self.succs[tid]:
            self.unmet[succ] -= 1
            if self.unmet[succ] == 0 and wf in self.released:
                self._newly_ready.append(succ)

    def _promote_newly_ready(self, epoch: int) -> None:
        for tid in self._newly_ready:
            if self.states[tid].status == PENDING:
                self._make_ready(tid, epoch)
        self._newly_ready = []

    def all_done(self) -> bool:
        return self.done_count == self.n_tasks

    def active_backlogs(self) -> List[float]:
        out = []
        for nid in self.node_ids:
            for tid in self.ready_by_node[nid]:
                out.append(self.states[tid].backlog)
        return out


def p95_nearest_rank(values: Sequence[float]) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = math.ceil(0.95 * len(ordered)) - 1
    return float(ordered[idx])


def step(sim: Simulation, policy, epoch: int) -> EpochMetrics:
    """Advance one epoch; returns the metrics row for this epoch."""
    sim._promote_newly_ready(epoch)
    sim._release(epoch)
    shock = sim.scenario.shock
    noise_factor = (
        shock.prediction_noise_factor if shock is not None and shock.active(epoch) else 1.0
    )
    sim._refresh_predictions(epoch, noise_factor)
    sim._apply_arrivals(epoch)
    failed = sim._draw_failures(epoch)

    views = sim.node_views()
    allocs, lam = policy.decide(epoch, views)

    util = 0.0
    blocked = 0.0
    for nid in sim.node_ids:
        has_queue = bool(sim.ready_by_node[nid])
        assigned = allocs.get(nid)
        total_theta = assigned.total() if assigned is not None else 0.0
        if nid in failed:
            blocked += total_theta + (1.0 - total_theta) * (1.0 if has_queue else 0.0)
        else:
            util += total_theta
            if has_queue:
                blocked += 1.0 - total_theta

    sim._serve(epoch, allocs, failed)

    metrics = EpochMetrics(
        epoch=epoch,
        wct_partial=sim.wct_partial,
        p95_backlog=p95_nearest_rank(sim.active_backlogs()),
        blocked_capacity_ratio=blocked / sim.n_nodes if sim.n_nodes else 0.0,
        utilization=util / sim.n_nodes if sim.n_nodes else 0.0,
        lam=lam,
    )
    return metrics


def run_episode(scenario: Scenario, policy, horizon: Optional[int] = None, seed: int = 0) -> EpisodeResult:
    """Run one policy over one environment realization; fully deterministic."""
    horizon = scenario.horizon if horizon is None else horizon
    sim = Simulation(scenario, seed)
    policy.reset(scenario, seed, horizon)
    metrics: List[EpochMetrics] = []
    epochs_run = 0
    for t in range(horizon):
        m = step(sim, policy, t)
        metrics.append(m)
        epochs_run = t + 1
        if sim.all_done() and not sim._newly_ready:
            break
    # Pad the series so cross-run aggregation sees equal-length traces.
    if metrics:
        last = metrics[-1]
        for t in range(epochs_run, horizon):
            metrics.append(
                EpochMetrics(
                    epoch=t,
                    wct_partial=last.wct_partial,
                    p95_backlog=0.0,
                    blocked_capacity_ratio=0.0,
                    utilization=0.0,
                    lam=last.lam,
                )
            )
    wct = sim.wct_partial
    unfinished = 0
    for wf in scenario.workflows:
        if wf.id not in sim.completion_epochs:
            unfinished += 1
            wct += sim.wf_weight[wf.id] * horizon  # censored at the horizon
    return EpisodeResult(
        wct_total=wct,
        unfinished=unfinished,
        completion_epochs=sim.completion_epochs,
        metrics=metrics,
        epochs_run=epochs_run,
    )
