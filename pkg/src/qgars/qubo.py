"""Rank-assignment QUBO: build, evaluate, decode/repair, dump.

Encoding: one binary variable per (task, rank) pair over a window of K
tasks, flat index = (task position) * K + (rank - 1). The Hamiltonian is

    H(x) = sum_v sum_r c_{v,r} x_{v,r}
         + sum_{v != u} sum_{s < r} g(r - s) Q_{v,u} x_{v,r} x_{u,s}
         + A * sum_v (sum_r x_{v,r} - 1)^2
         + B * sum_r (sum_v x_{v,r} - 1)^2

with c_{v,r} = q_v * r, Q_{v,u} = q_v q_u / (max_w q_w)^2, g(d) = exp(-beta d)
and A = B set by the dynamic maximum-marginal-cost rule. After expanding the
squared penalties over binary variables, the instance stores

    linear[i]       = c_{v,r} - (A + B)
    quad(i, j)      = 2A            same task, different ranks
                      2B            same rank, different tasks
                      g(|r-s|) Q    different task and rank
    offset          = K * (A + B)

The constant offset is kept so reported energies match the unexpanded form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, ScenarioError

DEFAULT_BETA = 1.0

# Penalty floor for the degenerate all-zero-backlog window, where the
# calibration formula evaluates to 0 but the one-hot structure still has to
# be enforced.
MIN_PENALTY = 1.0


def linear_cost(backlog: float, rank: int) -> float:
    """Base linear proxy cost of putting a task with backlog q at rank r."""
    if backlog < 0:
        raise ContractViolation("backlog must be >= 0")
    if rank < 1:
        raise ContractViolation("rank is 1-based and must be >= 1")
    return backlog * rank


def interference(q_v: float, q_u: float, q_max: float) -> float:
    """Order-induced interference proxy in [0, 1]; 0 for an all-zero window."""
    if q_max <= 0:
        return 0.0
    return (q_v * q_u) / (q_max * q_max)


def kernel(delta: int, beta: float) -> float:
    """Distance decay kernel g(delta) = exp(-beta * delta) for rank gaps >= 1."""
    if delta < 1:
        raise ContractViolation("rank gap must be >= 1")
    if beta <= 0:
        raise ContractViolation("beta must be > 0")
    return math.exp(-beta * delta)


def calibrate_penalty(window: Sequence[Tuple[int, float]], k: int) -> float:
    """Dynamic maximum-marginal-cost penalty: max_v(max_r c_{v,r} + sum_u Q_{v,u})."""
    if not window:
        raise ScenarioError("cannot calibrate an empty window")
    q = np.asarray([b for _, b in window], dtype=float)
    q_max = float(q.max())
    if q_max <= 0:
        return 0.0
    # max_r c_{v,r} = q_v * K; interference row sums exclude the diagonal.
    row = q * (q.sum() - q) / (q_max * q_max)
    return float(np.max(q * k + row))


@dataclass
class QuboInstance:
    """Immutable coefficient view of one rank-assignment instance.

    The quadratic part is fully determined by (backlogs, beta, penalties), so
    it is stored in factored form and materialized as an explicit
    upper-triangular map only on demand (it has O(K^4) entries).
    """

    k: int
    tasks: Tuple[int, ...]
    backlogs: np.ndarray
    beta: float
    penalty_a: float
    penalty_b: float
    linear: np.ndarray
    qmat: np.ndarray
    gvec: np.ndarray
    offset: float
    _quad_cache: Dict[Tuple[int, int], float] = field(default=None, repr=False)

    def var_index(self, position: int, rank: int) -> int:
        """Flat index of the variable (task at window `position`, rank)."""
        if not (0 <= position < self.k and 1 <= rank <= self.k):
            raise ContractViolation("variable out of range")
        return position * self.k + (rank - 1)

    def var_pair(self, index: int) -> Tuple[int, int]:
        """Inverse of var_index: flat index -> (position, rank)."""
        if not (0 <= index < self.k * self.k):
            raise ContractViolation("flat index out of range")
        return index // self.k, index % self.k + 1

    def quad_coeff(self, i: int, j: int) -> float:
        """Quadratic coefficient between two distinct flat indices."""
        if i == j:
            raise ContractViolation("quadratic terms need distinct indices")
        v, r = divmod(i, self.k)
        u, s = divmod(j, self.k)
        if v == u:
            return self.penalty_a * 2.0
        if r == s:
            return self.penalty_b * 2.0
        return self.gvec[abs(r - s)] * self.qmat[v, u]

    def iter_quadratic(self) -> Iterator[Tuple[int, int, float]]:
        """Stream nonzero upper-triangular (i, j, coeff) entries, i < j."""
        n = self.k * self.k
        for i in range(n):
            for j in range(i + 1, n):
                c = self.quad_coeff(i, j)
                if c != 0.0:
                    yield i, j, c

    @property
    def quadratic(self) -> Dict[Tuple[int, int], float]:
        """Explicit upper-triangular coefficient map (materialized lazily)."""
        if self._quad_cache is None:
            object.__setattr__(
                self, "_quad_cache", {(i, j): c for i, j, c in self.iter_quadratic()}
            )
        return self._quad_cache


@dataclass(frozen=True)
class RankAssignment:
    """A permutation of the window tasks; rank of a task = 1-based position."""

    order: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))

    def rank_of(self) -> Dict[int, int]:
        return {task: i + 1 for i, task in enumerate(self.order)}


def build(window: Sequence[Tuple[int, float]], beta: float = DEFAULT_BETA) -> QuboInstance:
    """Build the QUBO for an ordered window of (task id, backlog) pairs."""
    k = len(window)
    if k == 0:
        raise ScenarioError("cannot build a QUBO from an empty window")
    if beta <= 0:
        raise ContractViolation("beta must be > 0")
    tasks = tuple(t for t, _ in window)
    q = np.asarray([b for _, b in window], dtype=float)
    if np.any(q < 0):
        raise ContractViolation("backlogs must be >= 0")

    penalty = calibrate_penalty(window, k)
    if penalty <= 0:
        penalty = MIN_PENALTY

    q_max = float(q.max())
    if q_max > 0:
        qmat = np.outer(q, q) / (q_max * q_max)
    else:
        qmat = np.zeros((k, k))
    np.fill_diagonal(qmat, 0.0)

    gvec = np.exp(-beta * np.arange(k, dtype=float))
    gvec[0] = 0.0

    ranks = np.arange(1, k + 1, dtype=float)
    linear = (q[:, None] * ranks[None, :] - (penalty + penalty)).reshape(k * k)

    return QuboInstance(
        k=k,
        tasks=tasks,
        backlogs=q,
        beta=beta,
        penalty_a=penalty,
        penalty_b=penalty,
        linear=linear,
        qmat=qmat,
        gvec=gvec,
        offset=k * (penalty + penalty),
    )


def energy(instance: QuboInstance, x: Sequence[int]) -> float:
    """Exact Hamiltonian value of a binary vector, constant offset included."""
    x = np.asarray(x)
    n = instance.k * instance.k
    if x.shape != (n,):
        raise ContractViolation(f"binary vector must have length {n}")
    active = np.flatnonzero(x)
    total = instance.offset + float(instance.linear[active].sum())
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            total += instance.quad_coeff(int(active[a]), int(active[b]))
    return total


def energy_of_order(instance: QuboInstance, positions: Sequence[int]) -> float:
    """Energy of a feasible assignment given window positions in rank order."""
    k = instance.k
    q = instance.backlogs
    rank_of = np.empty(k, dtype=np.int64)
    for j, pos in enumerate(positions):
        rank_of[pos] = j + 1
    total = float(np.dot(q, rank_of))
    for v in range(k):
        for u in range(v + 1, k):
            total += instance.gvec[abs(int(rank_of[v] - rank_of[u]))] * instance.qmat[v, u]
    return total


def assignment_vector(instance: QuboInstance, assignment: RankAssignment) -> np.ndarray:
    """One-hot binary encoding of a rank assignment."""
    pos_of = {task: p for p, task in enumerate(instance.tasks)}
    x = np.zeros(instance.k * instance.k, dtype=np.int8)
    for rank, task in enumerate(assignment.order, start=1):
        x[instance.var_index(pos_of[task], rank)] = 1
    return x


def decode(instance: QuboInstance, x: Sequence[int]) -> RankAssignment:
    """Decode a binary vector into a permutation, repairing if needed.

    Repair walks ranks 1..K and assigns the unassigned task with the largest
    row value x_{v,r}; ties prefer larger backlog, then lower task id.
    """
    x = np.asarray(x)
    k = instance.k
    if x.shape != (k * k,):
        raise ContractViolation(f"binary vector must have length {k * k}")
    mat = x.reshape(k, k)
    if (mat.sum(axis=0) == 1).all() and (mat.sum(axis=1) == 1).all():
        order = tuple(instance.tasks[int(np.argmax(mat[:, r]))] for r in range(k))
        return RankAssignment(order=order)

    q = instance.backlogs
    assigned = np.zeros(k, dtype=bool)
    order: List[int] = []
    for r in range(k):
        best = -1
        for v in range(k):
            if assigned[v]:
                continue
            if best < 0:
                best = v
                continue
            key = (mat[v, r], q[v], -instance.tasks[v])
            best_key = (mat[best, r], q[best], -instance.tasks[best])
            if key > best_key:
                best = v
        assigned[best] = True
        order.append(instance.tasks[best])
    return RankAssignment(order=tuple(order))


def dump_text(instance: QuboInstance) -> str:
    """Plain-text coefficient dump for cross-checking with external tools.

    Header lines carry the structured parameters (enough to rebuild the
    instance); the body lists `i i value` linear and `i j value` quadratic
    entries in flat-index order.
    """
    lines = [
        f"# k {instance.k}",
        f"# beta {instance.beta!r}",
        f"# penalty {instance.penalty_a!r}",
        f"# offset {instance.offset!r}",
        "# tasks " + " ".join(str(t) for t in instance.tasks),
        "# backlogs " + " ".join(repr(float(b)) for b in instance.backlogs),
    ]
    for i, val in enumerate(instance.linear):
        lines.append(f"{i} {i} {val!r}")
    for i, j, val in instance.iter_quadratic():
        lines.append(f"{i} {j} {val!r}")
    return "\n".join(lines) + "\n"


def load_text(text: str) -> QuboInstance:
    """Rebuild an instance from a dump produced by dump_text."""
    header: Dict[str, str] = {}
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, rest = line[2:].partition(" ")
            header[key] = rest
    try:
        beta = float(header["beta"])
        tasks = [int(t) for t in header["tasks"].split()]
        backlogs = [float(b) for b in header["backlogs"].split()]
    except KeyError as exc:
        raise ScenarioError(f"dump is missing header field {exc}") from exc
    return build(list(zip(tasks, backlogs)), beta=beta)
