"""Monte Carlo experiment phases, aggregation and machine-readable outputs.

Three phases mirror the evaluation narrative:
  1 prior_gain   paired runs of the quantum-guided prior (static variant,
                 noise-free predictions) against SRPT-with-predictions.
  2 volatility   mean weighted completion time across a latency-volatility
                 grid for qgars / static_prior / robust.
  3 shock        long-horizon dynamics with a node-failure + prediction-noise
                 shock window; per-epoch cross-run mean series.

Every run derives all randomness from (master_seed, phase, run_id), policies
within a run share the environment realization, and results are reduced in
run order, so outputs are byte-identical for identical configs and seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adaptive import SchedulerSettings, make_policy
from .annealer import AnnealConfig
from .domain import ComputeNode
from .errors import ScenarioError
from .kernels import mix_seed
from .simengine import (
    EpisodeResult,
    LatencyModel,
    Scenario,
    ShockProfile,
    generate_workload,
    run_episode,
)

DEFAULT_MASTER_SEED = 20240613

_STREAM_WORKLOAD = 101
_STREAM_EPISODE = 202

PHASE_NAMES = {1: "prior_gain", 2: "volatility", 3: "shock"}


@dataclass(frozen=True)
class SimSizing:
    """Desk-scale scenario shape shared by the experiment phases."""

    n_nodes: int = 6
    capacity_dims: int = 3
    workflows_per_run: int = 10
    task_range: Tuple[int, int] = (10, 50)
    width_range: Tuple[int, int] = (2, 8)
    release_span: int = 0
    prediction_sigma: float = 0.1
    poisson_arrival_rate: float = 0.0
    alpha: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    phase: int = 1
    runs: int = 1000
    horizon: int = 1200
    alpha_grid: Tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 1.5)
    shock: Optional[ShockProfile] = None
    policies: Tuple[str, ...] = ("static_prior", "srpt_pred")
    master_seed: int = DEFAULT_MASTER_SEED
    threads: int = 0  # 0: use all CPUs
    sizing: SimSizing = SimSizing()
    scheduler: SchedulerSettings = SchedulerSettings()

    def __post_init__(self):
        if self.phase not in PHASE_NAMES:
            raise ScenarioError(f"phase must be one of {sorted(PHASE_NAMES)}")
        if self.runs < 1:
            raise ScenarioError("runs must be >= 1")
        if self.phase == 2 and not self.alpha_grid:
            raise ScenarioError("phase 2 needs a nonempty alpha grid")
        if self.phase == 3 and self.shock is not None:
            if self.shock.end_epoch >= self.horizon:
                raise ScenarioError("phase 3 horizon must extend past the shock")

    def effective_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


# Annealer settings for in-simulation solves: small, read-once, and with a
# budget far above the sweep cost so wall-clock never truncates a solve
# (a truncated solve would break run-to-run determinism).
SIM_ANNEAL = AnnealConfig(
    trotter_slices=4,
    sweeps=24,
    gamma_initial=3.0,
    gamma_final=0.1,
    reads=1,
    time_budget_us=10_000_000,
)


def phase_defaults(phase: int) -> ExperimentConfig:
    """Desk-scale defaults for each experiment phase."""
    if phase == 1:
        return ExperimentConfig(
            phase=1,
            runs=1000,
            horizon=1500,
            policies=("static_prior", "srpt_pred"),
            sizing=SimSizing(
                n_nodes=6,
                workflows_per_run=10,
                prediction_sigma=0.0,
                alpha=0.0,
            ),
            scheduler=SchedulerSettings(anneal=SIM_ANNEAL),
        )
    if phase == 2:
        return ExperimentConfig(
            phase=2,
            runs=200,
            horizon=1500,
            policies=("qgars", "static_prior", "robust"),
            alpha_grid=(0.0, 0.25, 0.5, 1.0, 1.5),
            sizing=SimSizing(
                n_nodes=6,
                workflows_per_run=10,
                prediction_sigma=0.1,
                alpha=0.0,
            ),
            scheduler=SchedulerSettings(anneal=SIM_ANNEAL),
        )
    if phase == 3:
        return ExperimentConfig(
            phase=3,
            runs=128,
            horizon=1500,
            policies=("qgars", "static_prior", "robust", "srpt_pred"),
            shock=ShockProfile(
                start_epoch=300,
                end_epoch=900,
                node_fail_prob=0.15,
                prediction_noise_factor=5.0,
            ),
            sizing=SimSizing(
                n_nodes=8,
                workflows_per_run=200,
                release_span=1200,
                prediction_sigma=0.1,
                alpha=0.5,
            ),
            scheduler=SchedulerSettings(anneal=SIM_ANNEAL),
        )
    raise ScenarioError(f"unknown phase {phase}")


def _merge_dataclass(obj, overrides: dict):
    """Recursively apply a nested dict of overrides onto a dataclass tree."""
    updates = {}
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise ScenarioError(f"unknown config field {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            updates[key] = _merge_dataclass(current, value)
        elif key == "shock" and isinstance(value, dict):
            updates[key] = ShockProfile(**value)
        elif isinstance(current, tuple) and isinstance(value, list):
            updates[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            updates[key] = value
    return replace(obj, **updates)


def config_from_dict(overrides: dict) -> ExperimentConfig:
    phase = int(overrides.get("phase", 1))
    base = phase_defaults(phase)
    overrides = dict(overrides)
    overrides.pop("phase", None)
    return _merge_dataclass(base, overrides)


def build_scenario(config: ExperimentConfig, run_id: int, alpha: Optional[float] = None) -> Scenario:
    s = config.sizing
    wl_seed = mix_seed(config.master_seed, config.phase, run_id, _STREAM_WORKLOAD)
    nodes = tuple(
        ComputeNode(i, np.ones(s.capacity_dims)) for i in range(s.n_nodes)
    )
    workflows = tuple(
        generate_workload(
            s.workflows_per_run,
            node_range=s.task_range,
            width_range=s.width_range,
            seed=wl_seed,
            nodes=[n.id for n in nodes],
        )
    )
    return Scenario(
        nodes=nodes,
        workflows=workflows,
        horizon=config.horizon,
        latency=LatencyModel(alpha=s.alpha if alpha is None else alpha),
        prediction_sigma=s.prediction_sigma,
        shock=config.shock,
        release_span=s.release_span,
        poisson_arrival_rate=s.poisson_arrival_rate,
    )


def episode_seed(config: ExperimentConfig, run_id: int) -> int:
    return mix_seed(config.master_seed, config.phase, run_id, _STREAM_EPISODE)


def _run_policy_episode(
    config: ExperimentConfig, scenario: Scenario, policy_name: str, seed: int
) -> EpisodeResult:
    policy = make_policy(policy_name, config.scheduler)
    return run_episode(scenario, policy, scenario.horizon, seed)


@dataclass
class AggregateResult:
    phase: int
    per_run_rows: List[dict] = field(default_factory=list)
    series_rows: List[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    run_columns: List[str] = field(default_factory=list)
    series_columns: List[str] = field(default_factory=list)


def percentile_nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile (pct in (0, 100])."""
    if not len(values):
        raise ScenarioError("percentile of empty data")
    ordered = sorted(values)
    idx = max(int(math.ceil(pct / 100.0 * len(ordered))) - 1, 0)
    return float(ordered[idx])


# ---------------------------------------------------------------------------
# Worker plumbing. Jobs are closed over a module-global config so a fork pool
# does not re-pickle it per task; results are reduced in job order.
# ---------------------------------------------------------------------------

_WORKER_CONFIG: Optional[ExperimentConfig] = None


def _init_worker(config: ExperimentConfig) -> None:
    global _WORKER_CONFIG
    _WORKER_CONFIG = config


def _phase1_job(run_id: int) -> Tuple[int, float, float]:
    cfg = _WORKER_CONFIG
    scenario = build_scenario(cfg, run_id)
    seed = episode_seed(cfg, run_id)
    wct_q = _run_policy_episode(cfg, scenario, cfg.policies[0], seed).wct_total
    wct_s = _run_policy_episode(cfg, scenario, cfg.policies[1], seed).wct_total
    return run_id, wct_q, wct_s


def _phase2_job(job: Tuple[int, float]) -> Tuple[int, float, Dict[str, float]]:
    run_id, alpha = job
    cfg = _WORKER_CONFIG
    scenario = build_scenario(cfg, run_id, alpha=alpha)
    seed = episode_seed(cfg, run_id)
    wcts = {
        name: _run_policy_episode(cfg, scenario, name, seed).wct_total
        for name in cfg.policies
    }
    return run_id, alpha, wcts


def _phase3_job(job: Tuple[int, str]) -> Tuple[int, str, dict]:
    run_id, policy_name = job
    cfg = _WORKER_CONFIG
    scenario = build_scenario(cfg, run_id)
    seed = episode_seed(cfg, run_id)
    result = _run_policy_episode(cfg, scenario, policy_name, seed)
    busy = max(result.epochs_run, 1)
    payload = {
        "wct": result.wct_total,
        "unfinished": result.unfinished,
        "epochs_run": result.epochs_run,
        "utilization_mean": float(result.series("utilization")[:busy].mean()),
        "lam": result.series("lam"),
        "p95": result.series("p95_backlog"),
        "blocked": result.series("blocked_capacity_ratio"),
        "utilization": result.series("utilization"),
    }
    return run_id, policy_name, payload


def _map_jobs(config: ExperimentConfig, fn, jobs: list) -> list:
    threads = config.effective_threads()
    if threads <= 1 or len(jobs) <= 1:
        _init_worker(config)
        return [fn(j) for j in jobs]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(threads, initializer=_init_worker, initargs=(config,)) as pool:
        return list(pool.imap(fn, jobs, chunksize=max(1, len(jobs) // (threads * 8))))


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------


def run_phase1(config: ExperimentConfig) -> AggregateResult:
    """Paired prior-vs-SRPT runs under ideal predictive conditions."""
    outputs = _map_jobs(config, _phase1_job, list(range(config.runs)))
    outputs.sort(key=lambda r: r[0])
    rows = []
    improvements = []
    for run_id, wct_q, wct_s in outputs:
        imp = (wct_s - wct_q) / wct_s if wct_s > 0 else 0.0
        improvements.append(imp)
        rows.append(
            {
                "run_id": run_id,
                "wct_qgars": wct_q,
                "wct_srpt": wct_s,
                "improvement": imp,
            }
        )
    imps = np.array(improvements)
    summary = {
        "phase": 1,
        "runs": config.runs,
        "mean_improvement": float(imps.mean()),
        "max_improvement": float(imps.max()),
        "min_improvement": float(imps.min()),
        "median_improvement": percentile_nearest_rank(improvements, 50),
        "p90_improvement": percentile_nearest_rank(improvements, 90),
        "frac_worse_than_1pct": float((imps < -0.01).mean()),
        "frac_improved": float((imps > 0).mean()),
    }
    return AggregateResult(
        phase=1,
        per_run_rows=rows,
        summary=summary,
        run_columns=["run_id", "wct_qgars", "wct_srpt", "improvement"],
    )


def run_phase2(config: ExperimentConfig) -> AggregateResult:
    """Volatility sweep: mean WCT per policy at each alpha."""
    jobs = [(run_id, alpha) for alpha in config.alpha_grid for run_id in range(config.runs)]
    outputs = _map_jobs(config, _phase2_job, jobs)
    outputs.sort(key=lambda r: (r[1], r[0]))
    rows = []
    by_alpha: Dict[float, Dict[str, List[float]]] = {}
    for run_id, alpha, wcts in outputs:
        row = {"alpha": alpha, "run_id": run_id}
        for name in config.policies:
            row[f"wct_{name}"] = wcts[name]
            by_alpha.setdefault(alpha, {}).setdefault(name, []).append(wcts[name])
        rows.append(row)
    summary: dict = {"phase": 2, "runs": config.runs, "alpha_grid": list(config.alpha_grid)}
    means = {}
    for alpha in config.alpha_grid:
        means[repr(alpha)] = {
            name: float(np.mean(by_alpha[alpha][name])) for name in config.policies
        }
    summary["mean_wct"] = means
    tail_alpha = max(config.alpha_grid)
    summary["tail_alpha"] = tail_alpha
    summary["p99_wct_at_tail"] = {
        name: percentile_nearest_rank(by_alpha[tail_alpha][name], 99)
        for name in config.policies
    }
    return AggregateResult(
        phase=2,
        per_run_rows=rows,
        summary=summary,
        run_columns=["alpha", "run_id"] + [f"wct_{n}" for n in config.policies],
    )


def _window_mean(series: np.ndarray, start: int, end: int) -> float:
    return float(series[start:end].mean())


def run_phase3(config: ExperimentConfig) -> AggregateResult:
    """Shock dynamics: per-epoch cross-run means and recovery markers."""
    jobs = [(run_id, name) for run_id in range(config.runs) for name in config.policies]
    outputs = _map_jobs(config, _phase3_job, jobs)
    outputs.sort(key=lambda r: (r[0], config.policies.index(r[1])))

    rows = []
    series_acc: Dict[str, Dict[str, np.ndarray]] = {
        name: {
            "lam": np.zeros(config.horizon),
            "p95": np.zeros(config.horizon),
            "blocked": np.zeros(config.horizon),
            "utilization": np.zeros(config.horizon),
        }
        for name in config.policies
    }
    util_means: Dict[str, List[float]] = {name: [] for name in config.policies}
    for run_id, name, payload in outputs:
        rows.append(
            {
                "run_id": run_id,
                "policy": name,
                "wct": payload["wct"],
                "unfinished": payload["unfinished"],
                "epochs_run": payload["epochs_run"],
                "utilization_mean": payload["utilization_mean"],
            }
        )
        acc = series_acc[name]
        acc["lam"] += payload["lam"]
        acc["p95"] += payload["p95"]
        acc["blocked"] += payload["blocked"]
        acc["utilization"] += payload["utilization"]
        util_means[name].append(payload["utilization_mean"])

    series_rows = []
    per_policy: Dict[str, dict] = {}
    shock = config.shock
    for name in config.policies:
        acc = series_acc[name]
        for key in acc:
            acc[key] = acc[key] / config.runs
        for t in range(config.horizon):
            series_rows.append(
                {
                    "epoch": t,
                    "policy": name,
                    "lambda_mean": float(acc["lam"][t]),
                    "p95_backlog_mean": float(acc["p95"][t]),
                    "blocked_mean": float(acc["blocked"][t]),
                    "utilization_mean": float(acc["utilization"][t]),
                }
            )
        stats = {
            "mean_wct": float(np.mean([r["wct"] for r in rows if r["policy"] == name])),
            "mean_unfinished": float(
                np.mean([r["unfinished"] for r in rows if r["policy"] == name])
            ),
            "utilization_mean": float(np.mean(util_means[name])),
            "p95_backlog_peak": float(acc["p95"].max()),
        }
        if shock is not None:
            stats["lambda_pre_shock"] = _window_mean(acc["lam"], 100, shock.start_epoch)
            stats["lambda_late_shock"] = _window_mean(acc["lam"], 600, shock.end_epoch)
            stats["lambda_recovery"] = _window_mean(
                acc["lam"], config.horizon - 200, config.horizon
            )
            below = np.flatnonzero(acc["blocked"][shock.end_epoch :] < 0.01)
            stats["blocked_recovery_epoch"] = (
                int(shock.end_epoch + below[0]) if below.size else config.horizon
            )
        per_policy[name] = stats
    summary = {
        "phase": 3,
        "runs": config.runs,
        "horizon": config.horizon,
        "shock": dataclasses.asdict(shock) if shock is not None else None,
        "policies": per_policy,
    }
    return AggregateResult(
        phase=3,
        per_run_rows=rows,
        series_rows=series_rows,
        summary=summary,
        run_columns=[
            "run_id",
            "policy",
            "wct",
            "unfinished",
            "epochs_run",
            "utilization_mean",
        ],
        series_columns=[
            "epoch",
            "policy",
            "lambda_mean",
            "p95_backlog_mean",
            "blocked_mean",
            "utilization_mean",
        ],
    )


def run_experiment(config: ExperimentConfig) -> AggregateResult:
    runner = {1: run_phase1, 2: run_phase2, 3: run_phase3}[config.phase]
    return runner(config)


# ---------------------------------------------------------------------------
# Emission: CSV + summary JSON, byte-identical for identical inputs.
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, rows: List[dict], columns: List[str]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row[c]) for c in columns])
    path.write_text(buf.getvalue())


def emit(result: AggregateResult, out_dir, fmt: str = "csv") -> List[str]:
    """Write phase CSVs and summary.json; returns the created file paths."""
    if fmt != "csv":
        raise ScenarioError(f"unsupported output format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(f"cannot create output directory {out}: {exc}") from exc
    created = []
    phase = result.phase
    run_columns = result.run_columns or (
        list(result.per_run_rows[0].keys()) if result.per_run_rows else []
    )
    path = out / f"phase{phase}_runs.csv"
    _write_csv(path, result.per_run_rows, run_columns)
    created.append(str(path))
    series_columns = result.series_columns or (
        list(result.series_rows[0].keys()) if result.series_rows else []
    )
    if series_columns:
        path = out / f"phase{phase}_series.csv"
        _write_csv(path, result.series_rows, series_columns)
        created.append(str(path))
    spath = out / "summary.json"
    spath.write_text(
        json.dumps(result.summary, sort_keys=True, separators=(",", ": "), indent=1)
        + "\n"
    )
    created.append(str(spath))
    return created
