"""Command-line interface.

Subcommands:
  solve       solve one dumped QUBO instance; prints a SolveResult JSON line
  simulate    run one episode of a scenario config; optional per-epoch trace
  experiment  run an experiment phase (1: prior gain, 2: volatility, 3: shock)
  bench       time the annealer at several window sizes on both backends

Scenario config schema (JSON, used by `simulate`):
  {
    "nodes": {"count": 4, "capacity": [1.0, 1.0, 1.0]}
          or [{"id": 0, "capacity": [2.0, 1.0]}, ...],
    "workflows": {"count": 10, "task_range": [10, 50],
                  "width_range": [2, 8], "seed": 7}
          or {"explicit": [{"id": 0, "sla_weight": 1.0,
                            "tasks": [{"id": 0, "node": 0, "demand": 3.0,
                                       "predecessors": []}],
                            "edges": []}]},
    "horizon": 600, "alpha": 0.0, "prediction_sigma": 0.1,
    "release_span": 0, "poisson_arrival_rate": 0.0,
    "shock": {"start_epoch": 300, "end_epoch": 900,
              "node_fail_prob": 0.15, "prediction_noise_factor": 5.0},
    "scheduler": {"window_k": 8, "gamma": 2.0, "epsilon": 0.01, "beta": 1.0,
                  "eta": null, "anneal": {"trotter_slices": 4, "sweeps": 24,
                                          "reads": 1}}
  }

Experiment config files (`experiment --config`) carry overrides for the
phase defaults; see harness.ExperimentConfig for the field tree. The master
seed can also be set through the QGARS_MASTER_SEED environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import harness, kernels
from .adaptive import HedgePolicy, SchedulerSettings, make_policy
from .annealer import AnnealConfig, solve_exhaustive, solve_sa, solve_sqa
from .domain import ComputeNode, TaskSpec, WorkflowDag
from .errors import ContractViolation, QgarsError, ScenarioError
from .harness import ExperimentConfig, phase_defaults
from .qubo import build, load_text
from .simengine import (
    LatencyModel,
    Scenario,
    ShockProfile,
    generate_workload,
    run_episode,
)

SEED_ENV_VAR = "QGARS_MASTER_SEED"


def _resolve_seed(arg_seed: Optional[int], fallback: int) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        return int(env)
    return fallback


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--runs", type=int, default=None, help="Monte Carlo run count")
    parser.add_argument("--threads", type=int, default=None, help="worker processes")
    parser.add_argument("--config", type=str, default=None, help="config file (JSON)")


def _scheduler_from_dict(raw: dict) -> SchedulerSettings:
    raw = dict(raw)
    anneal_raw = raw.pop("anneal", None)
    settings = SchedulerSettings()
    if anneal_raw is not None:
        base = dataclasses.asdict(harness.SIM_ANNEAL)
        base.update(anneal_raw)
        settings = dataclasses.replace(settings, anneal=AnnealConfig(**base))
    else:
        settings = dataclasses.replace(settings, anneal=harness.SIM_ANNEAL)
    return dataclasses.replace(settings, **raw)


def load_scenario_config(raw: dict, seed: int):
    """Build (Scenario, SchedulerSettings) from a scenario config dict."""
    nodes_raw = raw.get("nodes", {"count": 4, "capacity": [1.0, 1.0, 1.0]})
    if isinstance(nodes_raw, dict):
        cap = np.asarray(nodes_raw.get("capacity", [1.0, 1.0, 1.0]), dtype=float)
        nodes = tuple(
            ComputeNode(i, cap.copy()) for i in range(int(nodes_raw.get("count", 4)))
        )
    else:
        nodes = tuple(
            ComputeNode(int(n["id"]), np.asarray(n["capacity"], dtype=float))
            for n in nodes_raw
        )
    node_ids = [n.id for n in nodes]

    wf_raw = raw.get("workflows", {"count": 10})
    if "explicit" in wf_raw:
        workflows = []
        for wf in wf_raw["explicit"]:
            tasks = tuple(
                TaskSpec(
                    id=int(t["id"]),
                    workflow=int(wf["id"]),
                    assigned_node=int(t["node"]),
                    nominal_demand=float(t["demand"]),
                    predecessors=frozenset(int(p) for p in t.get("predecessors", [])),
                )
                for t in wf["tasks"]
            )
            workflows.append(
                WorkflowDag(
                    id=int(wf["id"]),
                    sla_weight=float(wf.get("sla_weight", 1.0)),
                    tasks=tasks,
                    edges=tuple((int(a), int(b)) for a, b in wf.get("edges", [])),
                )
            )
        workflows = tuple(workflows)
    else:
        workflows = tuple(
            generate_workload(
                int(wf_raw.get("count", 10)),
                node_range=tuple(wf_raw.get("task_range", (10, 50))),
                width_range=tuple(wf_raw.get("width_range", (2, 8))),
                seed=int(wf_raw.get("seed", seed)),
                nodes=node_ids,
            )
        )

    shock = None
    if raw.get("shock"):
        shock = ShockProfile(**raw["shock"])
    scenario = Scenario(
        nodes=nodes,
        workflows=workflows,
        horizon=int(raw.get("horizon", 600)),
        latency=LatencyModel(alpha=float(raw.get("alpha", 0.0))),
        prediction_sigma=float(raw.get("prediction_sigma", 0.1)),
        shock=shock,
        release_span=int(raw.get("release_span", 0)),
        poisson_arrival_rate=float(raw.get("poisson_arrival_rate", 0.0)),
    )
    settings = _scheduler_from_dict(raw.get("scheduler", {}))
    return scenario, settings


def _cmd_solve(args) -> int:
    text = Path(args.instance).read_text()
    instance = load_text(text)
    seed = _resolve_seed(args.seed, 0)
    method = args.method
    if method == "exhaustive":
        result = solve_exhaustive(instance)
    else:
        overrides = {}
        if args.config:
            overrides = json.loads(Path(args.config).read_text())
        cfg = AnnealConfig(**{**overrides, "seed": seed})
        result = (solve_sqa if method == "sqa" else solve_sa)(instance, cfg)
    record = {
        "order": list(result.assignment.order),
        "energy": result.energy,
        "raw_energy": result.raw_energy,
        "sweeps_used": result.sweeps_used,
        "elapsed_us": result.elapsed_us,
        "feasible_at_readout": result.feasible_at_readout,
    }
    print(json.dumps(record, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    seed = _resolve_seed(args.seed, harness.DEFAULT_MASTER_SEED)
    scenario, settings = load_scenario_config(raw, seed)
    policy = make_policy(args.policy, settings)
    result = run_episode(scenario, policy, scenario.horizon, seed)
    summary = {
        "policy": args.policy,
        "seed": seed,
        "wct_total": result.wct_total,
        "unfinished": result.unfinished,
        "epochs_run": result.epochs_run,
        "workflows": len(scenario.workflows),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.trace:
            extra = policy.trace_log if isinstance(policy, HedgePolicy) else None
            with open(out / "trace.jsonl", "w") as fh:
                for i, m in enumerate(result.metrics):
                    row = {
                        "epoch": m.epoch,
                        "lambda": m.lam,
                        "wct_partial": m.wct_partial,
                        "p95_backlog": m.p95_backlog,
                        "blocked_capacity_ratio": m.blocked_capacity_ratio,
                        "utilization": m.utilization,
                    }
                    if extra is not None and i < len(extra):
                        row.update(extra[i])
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        (out / "episode.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_experiment(args) -> int:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    overrides["phase"] = args.phase
    config = harness.config_from_dict(overrides)
    updates = {}
    seed = _resolve_seed(args.seed, config.master_seed)
    if seed != config.master_seed:
        updates["master_seed"] = seed
    if args.runs is not None:
        updates["runs"] = args.runs
    if args.threads is not None:
        updates["threads"] = args.threads
    if updates:
        config = dataclasses.replace(config, **updates)
    result = harness.run_experiment(config)
    out_dir = args.out or f"out/phase{args.phase}"
    created = harness.emit(result, out_dir)
    print(json.dumps({"phase": args.phase, "files": created}, sort_keys=True))
    return 0


def _bench_one(k: int, repeats: int, seed: int, budget_us: int) -> List[float]:
    rng = np.random.default_rng(seed)
    latencies = []
    for rep in range(repeats):
        backlogs = rng.uniform(0.5, 10.0, k)
        instance = build([(i, float(b)) for i, b in enumerate(backlogs)])
        cfg = AnnealConfig(seed=seed + rep, time_budget_us=budget_us)
        t0 = time.perf_counter_ns()
        solve_sqa(instance, cfg)
        latencies.append((time.perf_counter_ns() - t0) / 1000.0)
    return latencies


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    seed = _resolve_seed(args.seed, 7)
    rows = []
    backends = kernels.available_backends()
    # Warm the JIT before timing anything.
    if "numba" in backends:
        kernels.set_backend("numba")
        _bench_one(4, 1, seed, 10_000_000)
    for backend in backends:
        kernels.set_backend(backend)
        for k in sizes:
            if backend == "numpy" and k > args.fallback_max:
                continue
            lat = _bench_one(k, args.repeats, seed, args.budget_us)
            rows.append(
                {
                    "backend": backend,
                    "k": k,
                    "median_us": statistics.median(lat),
                    "min_us": min(lat),
                    "max_us": max(lat),
                }
            )
            print(
                f"backend={backend:6s} K={k:4d} median={rows[-1]['median_us']:10.1f}us "
                f"min={rows[-1]['min_us']:10.1f}us max={rows[-1]['max_us']:10.1f}us"
            )
    kernels.set_backend("numba" if "numba" in backends else "numpy")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(rows, indent=1) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgars",
        description="Quantum-guided adaptive robust scheduling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a dumped QUBO instance")
    p_solve.add_argument("--instance", required=True, help="dump file from qubo.dump_text")
    p_solve.add_argument(
        "--method", choices=("sqa", "sa", "exhaustive"), default="sqa"
    )
    _common_flags(p_solve)
    p_solve.set_defaults(func=_cmd_solve)

    p_sim = sub.add_parser("simulate", help="run one episode with full trace")
    p_sim.add_argument(
        "--policy",
        choices=("qgars", "static_prior", "robust", "srpt_pred"),
        default="qgars",
    )
    p_sim.add_argument("--trace", action="store_true", help="write trace.jsonl")
    _common_flags(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_exp = sub.add_parser("experiment", help="run an experiment phase")
    p_exp.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    _common_flags(p_exp)
    p_exp.set_defaults(func=_cmd_experiment)

    p_bench = sub.add_parser("bench", help="annealer latency benchmark")
    p_bench.add_argument("--sizes", default="8,16,32,64,100")
    p_bench.add_argument("--repeats", type=int, default=9)
    p_bench.add_argument("--budget-us", type=int, default=1000)
    p_bench.add_argument(
        "--fallback-max",
        type=int,
        default=32,
        help="largest K timed on the pure-numpy backend",
    )
    _common_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 3
    except QgarsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
