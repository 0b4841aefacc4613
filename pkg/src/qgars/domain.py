"""Core data model: nodes, workflow DAGs, per-task runtime state, rate shares.

Everything here is plain data plus a few pure helpers. Scenario-level
construction (workload generation, release schedules) lives in simengine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ContractViolation, ScenarioError

# Task lifecycle. A task is "running" once it has received a nonzero share.
PENDING = "pending"
READY = "ready"
RUNNING = "running"
DONE = "done"

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ComputeNode:
    """A compute node with a d-dimensional capacity vector (units per epoch)."""

    id: int
    capacity: np.ndarray

    def __post_init__(self):
        cap = np.asarray(self.capacity, dtype=float)
        object.__setattr__(self, "capacity", cap)
        if cap.ndim != 1 or cap.size < 1:
            raise ScenarioError(f"node {self.id}: capacity must be a 1-d vector")
        if not np.all(cap > 0):
            raise ScenarioError(f"node {self.id}: every capacity component must be > 0")


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task: placement, nominal work, dependencies."""

    id: int
    workflow: int
    assigned_node: int
    nominal_demand: float
    predecessors: frozenset = frozenset()

    def __post_init__(self):
        if self.nominal_demand <= 0:
            raise ScenarioError(f"task {self.id}: nominal_demand must be > 0")
        object.__setattr__(self, "predecessors", frozenset(self.predecessors))


@dataclass(frozen=True)
class WorkflowDag:
    """A workflow: an acyclic task graph with an SLA weight."""

    id: int
    sla_weight: float
    tasks: Tuple[TaskSpec, ...]
    edges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.sla_weight <= 0:
            raise ScenarioError(f"workflow {self.id}: sla_weight must be > 0")
        ids = {t.id for t in self.tasks}
        for u, v in self.edges:
            if u not in ids or v not in ids:
                raise ScenarioError(
                    f"workflow {self.id}: edge ({u}, {v}) references a task "
                    f"outside the workflow"
                )
        self._check_acyclic(ids)

    def _check_acyclic(self, ids: Set[int]) -> None:
        # Kahn's algorithm; leftover nodes mean a cycle.
        indeg = {i: 0 for i in ids}
        succ: Dict[int, List[int]] = {i: [] for i in ids}
        for u, v in self.edges:
            indeg[v] += 1
            succ[u].append(v)
        queue = [i for i in sorted(ids) if indeg[i] == 0]
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for v in succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
        if seen != len(ids):
            raise ScenarioError(f"workflow {self.id}: edge relation contains a cycle")

    def topo_order(self) -> List[int]:
        indeg = {t.id: 0 for t in self.tasks}
        succ: Dict[int, List[int]] = {t.id: [] for t in self.tasks}
        for u, v in self.edges:
            indeg[v] += 1
            succ[u].append(v)
        order: List[int] = []
        queue = sorted(i for i, d in indeg.items() if d == 0)
        while queue:
            u = queue.pop(0)
            order.append(u)
            ready = []
            for v in succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
            queue = sorted(queue + ready)
        return order


@dataclass
class TaskState:
    """Mutable per-epoch telemetry for one task.

    backlog is measured in work units: remaining service demand plus any
    enqueued-but-unserved arrivals. predicted_remaining is the (noisy,
    non-clairvoyant) estimate of remaining work refreshed by the simulator.
    """

    spec: int
    backlog: float = 0.0
    arrival_rate: float = 0.0
    remaining_work: float = 0.0
    predicted_remaining: float = 0.0
    status: str = PENDING
    ready_epoch: int = -1

    def validate(self) -> None:
        if self.backlog < 0 or self.arrival_rate < 0:
            raise ContractViolation(f"task {self.spec}: negative backlog/arrival rate")
        if (self.remaining_work == 0) != (self.status == DONE):
            raise ContractViolation(
                f"task {self.spec}: remaining_work==0 must coincide with status done"
            )


@dataclass
class RateAllocation:
    """Scalar resource shares on one node; shares live on the unit simplex."""

    shares: Dict[int, float]
    node: Optional[int] = None

    def __post_init__(self):
        total = 0.0
        for task, theta in self.shares.items():
            if theta <= 0:
                raise ContractViolation(
                    f"allocation on node {self.node}: share for task {task} "
                    f"must be > 0, got {theta}"
                )
            total += theta
        if total > 1.0 + SIMPLEX_TOL:
            raise ContractViolation(
                f"allocation on node {self.node}: shares sum to {total} > 1"
            )

    def total(self) -> float:
        return sum(self.shares.values())


def ready_set(
    workflows: Sequence[WorkflowDag],
    states: Dict[int, TaskState],
    node: int,
    known_nodes: Optional[Iterable[int]] = None,
) -> Set[int]:
    """Tasks on `node` whose predecessors are all done and that are not done.

    Marks returned pending tasks as ready. Tasks already running stay running
    (they remain members of the ready set).
    """
    if known_nodes is not None and node not in set(known_nodes):
        raise ScenarioError(f"unknown node id {node}")
    out: Set[int] = set()
    for wf in workflows:
        for spec in wf.tasks:
            if spec.assigned_node != node:
                continue
            st = states.get(spec.id)
            if st is None:
                raise ContractViolation(f"no state for task {spec.id}")
            if st.status == DONE:
                continue
            if all(states[p].status == DONE for p in spec.predecessors):
                if st.status == PENDING:
                    st.status = READY
                out.add(spec.id)
    return out


def expand_rates(alloc: RateAllocation, node: ComputeNode) -> Dict[int, np.ndarray]:
    """Expand scalar shares into per-task rate vectors theta_v * capacity."""
    if alloc.node is not None and alloc.node != node.id:
        raise ContractViolation(
            f"allocation is for node {alloc.node}, not node {node.id}"
        )
    rates = {task: theta * node.capacity for task, theta in alloc.shares.items()}
    agg = sum(rates.values(), np.zeros_like(node.capacity))
    if np.any(agg > node.capacity * (1 + SIMPLEX_TOL) + SIMPLEX_TOL):
        raise ContractViolation(f"aggregate rate exceeds capacity on node {node.id}")
    return rates
