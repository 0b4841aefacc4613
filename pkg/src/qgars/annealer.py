"""Time-budgeted solvers over rank QUBOs.

solve_sqa runs path-integral style simulated quantum annealing: P coupled
replicas of the spin system with a transverse field interpolated from
gamma_initial down to gamma_final, inter-slice coupling
J_perp = -(T/2) ln tanh(Gamma / (P T)), and Metropolis updates at effective
temperature T. solve_sa is the single-replica geometric-cooling fallback.
solve_exhaustive enumerates all permutations (K <= 8) as the verification
oracle. All solvers share the readout contract: the returned assignment is a
valid permutation, repaired if the best raw configuration was infeasible.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import qubo
from .errors import ContractViolation, ScenarioError
from .kernels import init_slice_state, mix_seed, sweep_chunk

MAX_EXHAUSTIVE_K = 8
_MAX_CHUNK = 32


@dataclass(frozen=True)
class AnnealConfig:
    """Solver knobs; defaults target the 1 ms budget at desk scale."""

    trotter_slices: int = 8
    sweeps: int = 200
    gamma_initial: float = 3.0
    gamma_final: float = 0.1
    temperature: Optional[float] = None  # None: 0.5 * mean |linear coefficient|
    reads: int = 4
    time_budget_us: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.trotter_slices < 1 or self.sweeps < 1 or self.reads < 1:
            raise ContractViolation("slices, sweeps and reads must be >= 1")
        if not (self.gamma_initial > self.gamma_final > 0):
            raise ContractViolation("need gamma_initial > gamma_final > 0")
        if self.temperature is not None and self.temperature <= 0:
            raise ContractViolation("temperature must be > 0")
        if self.time_budget_us <= 0:
            raise ContractViolation("time_budget_us must be > 0")


@dataclass(frozen=True)
class SolveResult:
    assignment: qubo.RankAssignment
    energy: float
    raw_energy: float
    sweeps_used: int
    elapsed_us: float
    feasible_at_readout: bool


def effective_temperature(instance: qubo.QuboInstance, config: AnnealConfig) -> float:
    """Default T_eff: half the mean cost-coefficient magnitude.

    The cost part c_{v,r} = q_v * r sets the scale of energy differences
    between orderings; the penalty shift in the stored linear vector is
    excluded because a temperature at the penalty scale turns Metropolis
    into an unbiased random walk.
    """
    if config.temperature is not None:
        return config.temperature
    k = instance.k
    ranks = np.arange(1, k + 1, dtype=float)
    scale = 0.5 * float(np.mean(instance.backlogs[:, None] * ranks[None, :]))
    return max(scale, 1.0)


def _ising_fields(instance: qubo.QuboInstance) -> Tuple[np.ndarray, float, float]:
    """Linear Ising field h[v, r] for the factored coupling structure."""
    k = instance.k
    two_a = 2.0 * instance.penalty_a
    two_b = 2.0 * instance.penalty_b
    qrow = instance.qmat.sum(axis=1)
    idx = np.arange(k)
    gmat = instance.gvec[np.abs(idx[:, None] - idx[None, :])]
    gsum = gmat.sum(axis=1)
    hmat = 0.5 * instance.linear.reshape(k, k) + 0.25 * (
        (two_a + two_b) * (k - 1) + qrow[:, None] * gsum[None, :]
    )
    return hmat, two_a, two_b


def _init_read(instance, rng, slices):
    """One random feasible permutation, replicated across the Trotter slices."""
    k = instance.k
    perm = rng.permutation(k)
    x = np.full((k, k), -1, dtype=np.int8)
    for rank_idx in range(k):
        x[perm[rank_idx], rank_idx] = 1
    spins = np.repeat(x[None, :, :], slices, axis=0).copy()
    rowsum, colsum, gconv = init_slice_state(spins, instance.gvec)
    e0 = qubo.energy_of_order(instance, perm)
    energies = np.full(slices, e0, dtype=np.float64)
    return spins, rowsum, colsum, gconv, energies


def _anneal(
    instance: qubo.QuboInstance,
    config: AnnealConfig,
    slices: int,
    jperps: np.ndarray,
    temps: np.ndarray,
) -> SolveResult:
    k = instance.k
    n = k * k
    hmat, two_a, two_b = _ising_fields(instance)
    inv_p = 1.0 / slices
    feas_target = 2 - k

    start = time.perf_counter_ns()
    deadline = start + config.time_budget_us * 1000

    best_vals = np.array([np.inf, np.inf], dtype=np.float64)
    best_raw = np.empty(n, dtype=np.int8)
    best_feas = np.empty(n, dtype=np.int8)
    total_sweeps = 0
    sweep_ns_est = 0.0

    for read in range(config.reads):
        rng = np.random.default_rng(mix_seed(config.seed, read))
        spins, rowsum, colsum, gconv, energies = _init_read(instance, rng, slices)
        if energies[0] < best_vals[0]:
            best_vals[0] = energies[0]
            best_raw[:] = spins[0].reshape(n)
        if energies[0] < best_vals[1]:
            best_vals[1] = energies[0]
            best_feas[:] = spins[0].reshape(n)

        done = 0
        while done < config.sweeps:
            now = time.perf_counter_ns()
            if now >= deadline:
                break
            if sweep_ns_est > 0:
                # Size the chunk to roughly half the remaining budget so the
                # overshoot past the deadline stays near one sweep.
                room = max(1, int((deadline - now) / (2 * sweep_ns_est)))
                chunk = min(_MAX_CHUNK, config.sweeps - done, room)
            else:
                chunk = 1
            uniforms = rng.random((chunk, slices, n))
            t0 = time.perf_counter_ns()
            sweep_chunk(
                spins,
                rowsum,
                colsum,
                gconv,
                energies,
                hmat,
                instance.qmat,
                instance.gvec,
                two_a,
                two_b,
                inv_p,
                jperps[done : done + chunk],
                temps[done : done + chunk],
                uniforms,
                best_raw,
                best_feas,
                best_vals,
                feas_target,
            )
            dt = time.perf_counter_ns() - t0
            sweep_ns_est = max(dt / chunk, 0.7 * sweep_ns_est) if sweep_ns_est else dt / chunk
            done += chunk
            total_sweeps += chunk
        if time.perf_counter_ns() >= deadline:
            break

    x_raw = ((best_raw + 1) // 2).astype(np.int8)
    x_feas = ((best_feas + 1) // 2).astype(np.int8)
    raw_energy = qubo.energy(instance, x_raw)
    raw_assignment = qubo.decode(instance, x_raw)
    raw_repaired_energy = qubo.energy(
        instance, qubo.assignment_vector(instance, raw_assignment)
    )
    feas_assignment = qubo.decode(instance, x_feas)
    feas_energy = qubo.energy(
        instance, qubo.assignment_vector(instance, feas_assignment)
    )
    if raw_repaired_energy < feas_energy:
        assignment, final_energy = raw_assignment, raw_repaired_energy
    else:
        assignment, final_energy = feas_assignment, feas_energy

    mat = x_raw.reshape(k, k)
    feasible = bool((mat.sum(axis=0) == 1).all() and (mat.sum(axis=1) == 1).all())
    elapsed_us = (time.perf_counter_ns() - start) / 1000.0
    return SolveResult(
        assignment=assignment,
        energy=final_energy,
        raw_energy=raw_energy,
        sweeps_used=total_sweeps,
        elapsed_us=elapsed_us,
        feasible_at_readout=feasible,
    )


def solve_sqa(instance: qubo.QuboInstance, config: AnnealConfig = AnnealConfig()) -> SolveResult:
    """Simulated quantum annealing over the instance; deterministic given seed.

    gamma_initial/gamma_final are reduced transverse-field endpoints: the
    physical field is Gamma = gamma * P * T_eff, so the inter-slice coupling
    J_perp = -(T/2) ln tanh(Gamma / (P T)) runs from ~0 (independent replicas)
    at gamma_initial = 3 to ~1.15 T (locked replicas) at gamma_final = 0.1
    regardless of the instance's energy scale.
    """
    teff = effective_temperature(instance, config)
    slices = config.trotter_slices
    if config.sweeps > 1:
        gammas = np.linspace(config.gamma_initial, config.gamma_final, config.sweeps)
    else:
        gammas = np.array([config.gamma_initial])
    jperps = -(teff / 2.0) * np.log(np.tanh(gammas))
    temps = np.full(config.sweeps, teff)
    return _anneal(instance, config, slices, jperps, temps)


def solve_sa(instance: qubo.QuboInstance, config: AnnealConfig = AnnealConfig()) -> SolveResult:
    """Classical single-replica simulated annealing fallback."""
    teff = effective_temperature(instance, config)
    t_hot = 2.0 * (instance.penalty_a + instance.penalty_b)
    t_cold = max(0.05 * teff, 1e-9)
    t_hot = max(t_hot, t_cold * 10)
    if config.sweeps > 1:
        ratio = (t_cold / t_hot) ** (1.0 / (config.sweeps - 1))
        temps = t_hot * ratio ** np.arange(config.sweeps)
    else:
        temps = np.array([t_hot])
    jperps = np.zeros(config.sweeps)
    return _anneal(instance, config, 1, jperps, temps)


def solve_exhaustive(instance: qubo.QuboInstance) -> SolveResult:
    """Evaluate every permutation; the verification oracle for small windows."""
    k = instance.k
    if k > MAX_EXHAUSTIVE_K:
        raise ScenarioError(
            f"solve_exhaustive is guarded to K <= {MAX_EXHAUSTIVE_K} "
            f"({math.factorial(MAX_EXHAUSTIVE_K)} permutations); got K = {k}"
        )
    start = time.perf_counter_ns()
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.int64)
    rank_of = perms.argsort(axis=1) + 1
    cost = rank_of.astype(float) @ instance.backlogs
    diff = np.abs(rank_of[:, :, None] - rank_of[:, None, :])
    pair = 0.5 * (instance.gvec[diff] * instance.qmat[None, :, :]).sum(axis=(1, 2))
    energies = cost + pair

    best = energies.min()
    candidates = np.flatnonzero(energies == best)
    orders = [tuple(instance.tasks[p] for p in perms[i]) for i in candidates]
    order = min(orders)
    elapsed_us = (time.perf_counter_ns() - start) / 1000.0
    return SolveResult(
        assignment=qubo.RankAssignment(order=order),
        energy=float(best),
        raw_energy=float(best),
        sweeps_used=0,
        elapsed_us=elapsed_us,
        feasible_at_readout=True,
    )
