"""Round orchestration: distribute, train, aggregate, schedule, record.

Each aggregation round distributes the task-global models and the global
encoder target to all clients, collects parameter deltas, folds them into
new task models (weighted by shard size), recomputes the global encoder as
the mean of the task models' encoder slices, and records validation metrics
on held-out per-task data.

Three modes share this machinery:
  local  -- no aggregation; every client keeps training its own model
  fedavg -- per-task aggregation only (lambda forced to 0)
  mfed   -- per-task aggregation plus the scheduled encoder regularizer

All folds run in a fixed order (ascending client id, ascending task id), so
results are independent of client scheduling and thread count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .client import ClientState, LocalReport, local_train
from .config import ExperimentConfig
from .evaluation import delta_m_percent, evaluate_task, is_better
from .model import (Architecture, ModelParams, TaskObjective, init_params,
                    save_params, with_values)
from .seeding import derive_seed
from .taskgen import TaskSpec, generate_task_data, partition, partition_noniid

log = logging.getLogger("mfed")


@dataclass(frozen=True)
class ScheduleConfig:
    """Lambda growth plus the round-loop constants it is indexed by."""

    lambda0: float
    gamma: float
    lambda_max: float
    alpha: float
    local_epochs: int
    total_rounds: int
    cold_start: bool = True

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be > 0")
        if self.lambda0 > self.lambda_max:
            raise ValueError("lambda0 must be <= lambda_max")


@dataclass
class ServerState:
    task_models: dict[int, ModelParams]
    global_encoder: np.ndarray
    round: int


@dataclass(frozen=True)
class RoundRecord:
    round: int
    lam: float
    task_metrics: dict[int, float]
    per_client_loss: list[float]
    per_client_drift: list[float]

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "lambda": self.lam,
            "task_metrics": {str(k): v for k, v in sorted(self.task_metrics.items())},
            "per_client_loss": list(self.per_client_loss),
            "per_client_drift": list(self.per_client_drift),
        }


def record_to_json_line(record: RoundRecord) -> str:
    return json.dumps(record.to_json_dict(), sort_keys=True, separators=(",", ":"))


def lambda_at(schedule: ScheduleConfig, t: int) -> float:
    """min(lambda0 * gamma^t, lambda_max), with lambda(0) = 0 under cold start."""
    if schedule.cold_start and t == 0:
        return 0.0
    return min(schedule.lambda0 * schedule.gamma ** t, schedule.lambda_max)


def aggregate_task(base: ModelParams, reports: list[LocalReport]) -> ModelParams:
    """base + sum_i (S_i / S) * delta_i, folded in ascending client id order."""
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    task_ids = {r.task_id for r in reports}
    if len(task_ids) != 1:
        raise ValueError(f"reports span multiple tasks: {sorted(task_ids)}")
    for r in reports:
        if r.delta.size != base.total_len:
            raise ValueError(
                f"delta length {r.delta.size} != model length {base.total_len}"
            )
    total = float(sum(r.size for r in reports))
    acc = np.zeros(base.total_len)
    for r in sorted(reports, key=lambda r: r.client_id):
        acc = acc + (r.size / total) * r.delta
    return with_values(base, base.values + acc)


def aggregate_encoder(task_models: dict[int, ModelParams],
                      weights: dict[int, float] | None = None) -> np.ndarray:
    """Mean of the encoder slices across task models, ascending task id.

    Uniform over tasks by default so no task dominates the global encoder;
    pass per-task weights for the data-weighted variant.
    """
    if not task_models:
        raise ValueError("cannot aggregate zero task models")
    models = [task_models[k] for k in sorted(task_models)]
    first = models[0]
    enc_layout = tuple(e for e in first.layout if e.offset < first.encoder_len)
    for m in models[1:]:
        if m.encoder_len != first.encoder_len or \
                tuple(e for e in m.layout if e.offset < m.encoder_len) != enc_layout:
            raise ValueError("task models have mismatched encoder layouts")
    if weights is None:
        acc = np.zeros(first.encoder_len)
        for m in models:
            acc = acc + m.encoder
        return acc / float(len(models))
    total = float(sum(weights[k] for k in sorted(task_models)))
    acc = np.zeros(first.encoder_len)
    for k in sorted(task_models):
        acc = acc + (weights[k] / total) * task_models[k].encoder
    return acc


def _weighted_mean_params(models: list[tuple[ModelParams, int]]) -> ModelParams:
    """Shard-size-weighted mean of full parameter vectors (local-mode bookkeeping)."""
    total = float(sum(size for _, size in models))
    acc = np.zeros(models[0][0].total_len)
    for params, size in models:
        acc = acc + (size / total) * params.values
    return with_values(models[0][0], acc)


class Experiment:
    """Builds and runs one configured experiment end to end."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.arch = Architecture(config.input_width, tuple(config.encoder_widths),
                                 config.activation)
        self.schedule = ScheduleConfig(
            lambda0=config.lambda_0, gamma=config.gamma,
            lambda_max=config.lambda_max, alpha=config.alpha,
            local_epochs=config.m, total_rounds=config.T,
            cold_start=config.cold_start)
        latent_seed = derive_seed(config.seed, "latent")
        self.tasks: dict[int, TaskSpec] = {}
        for tc in config.tasks:
            self.tasks[tc.task_id] = TaskSpec(
                task_id=tc.task_id, kind=tc.kind, metric=tc.metric,
                classes=tc.classes, positions=tc.positions,
                input_width=config.input_width, latent_dim=config.latent_dim,
                latent_seed=latent_seed,
                head_seed=derive_seed(config.seed, "head", tc.task_id),
                noise_sigma=config.noise_sigma)
        self.objectives = {k: TaskObjective(self.arch, t)
                           for k, t in self.tasks.items()}
        self.validation: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.clients: list[ClientState] = []
        next_client = 0
        for k in sorted(self.tasks):
            task = self.tasks[k]
            n = config.clients_per_task * config.samples_per_client
            x, y = generate_task_data(task, n, derive_seed(config.seed, "data", k))
            if config.partition == "iid":
                shards = partition(x, y, k, config.clients_per_task, next_client)
            else:
                shards = partition_noniid(x, y, k, config.clients_per_task,
                                          config.dirichlet_alpha,
                                          derive_seed(config.seed, "partition"),
                                          next_client)
            init = init_params(self.arch, task, config.seed)
            for shard in shards:
                self.clients.append(ClientState(
                    client_id=shard.client_id, task_id=k, shard=shard,
                    params=init, objective=self.objectives[k],
                    batch_size=config.batch_size, seed=config.seed))
            next_client += config.clients_per_task
            self.validation[k] = generate_task_data(
                task, config.val_samples_per_task, derive_seed(config.seed, "val", k))

    def initial_state(self) -> ServerState:
        models = {k: init_params(self.arch, self.tasks[k], self.config.seed)
                  for k in sorted(self.tasks)}
        return ServerState(models, aggregate_encoder(models), 0)

    def run_round(self, state: ServerState,
                  clients: list[ClientState]) -> tuple[ServerState, list[ClientState], RoundRecord]:
        """One aggregation round; pure (no inputs are mutated)."""
        mode = self.config.mode
        t = state.round
        lam = lambda_at(self.schedule, t) if mode == "mfed" else 0.0
        jobs = []
        for c in clients:
            base = c.params if mode == "local" else state.task_models[c.task_id]
            jobs.append((c, base))

        def train_one(job):
            c, base = job
            return local_train(c, base, state.global_encoder, lam,
                               self.schedule.alpha, self.schedule.local_epochs,
                               t, self.config.penalty)

        if self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                reports = list(pool.map(train_one, jobs))
        else:
            reports = [train_one(j) for j in jobs]

        updated_clients = []
        finals: dict[int, ModelParams] = {}
        for (c, base), rep in zip(jobs, reports):
            final = with_values(base, base.values + rep.delta)
            finals[c.client_id] = final
            updated_clients.append(dataclasses.replace(c, params=final))

        if mode == "local":
            new_models = {}
            for k in sorted(self.tasks):
                members = [(finals[c.client_id], c.shard.size)
                           for c in clients if c.task_id == k]
                new_models[k] = _weighted_mean_params(members)
            task_metrics = {}
            for k in sorted(self.tasks):
                vals = [evaluate_task(self.objectives[k], finals[c.client_id],
                                      *self.validation[k])
                        for c in clients if c.task_id == k]
                task_metrics[k] = float(np.mean(vals))
        else:
            by_task: dict[int, list[LocalReport]] = {k: [] for k in sorted(self.tasks)}
            for rep in reports:
                by_task[rep.task_id].append(rep)
            new_models = {k: aggregate_task(state.task_models[k], by_task[k])
                          for k in sorted(self.tasks)}
            task_metrics = {k: evaluate_task(self.objectives[k], new_models[k],
                                             *self.validation[k])
                            for k in sorted(self.tasks)}

        new_g = aggregate_encoder(new_models)
        ordered = sorted(reports, key=lambda r: r.client_id)
        record = RoundRecord(
            round=t, lam=lam, task_metrics=task_metrics,
            per_client_loss=[r.final_loss for r in ordered],
            per_client_drift=[r.drift_after for r in ordered])
        log.info("round %d: lambda=%.4g metrics=%s", t, lam,
                 {k: round(v, 4) for k, v in task_metrics.items()})
        return ServerState(new_models, new_g, t + 1), updated_clients, record

    def run(self, out_dir: str | Path | None = None) -> "ExperimentResult":
        """Run T rounds and persist logs, summary and checkpoints."""
        state = self.initial_state()
        clients = self.clients
        records: list[RoundRecord] = []
        for _ in range(self.config.T):
            state, clients, record = self.run_round(state, clients)
            records.append(record)
        summary = self._summarize(records, state, clients)
        target = Path(out_dir) if out_dir is not None else (
            Path(self.config.out_dir) if self.config.out_dir else None)
        if target is not None:
            self._persist(target, records, state, summary)
        return ExperimentResult(records=records, summary=summary,
                                final_state=state, out_dir=target)

    def _summarize(self, records, state, clients) -> list[dict]:
        baseline = None
        if self.config.baseline_dir:
            baseline = read_summary(Path(self.config.baseline_dir) / "summary.csv")
        rows = []
        for k in sorted(self.tasks):
            metric = self.tasks[k].metric
            if records:
                series = [r.task_metrics[k] for r in records]
                best = series[0]
                for v in series[1:]:
                    if is_better(v, best, metric):
                        best = v
                final = series[-1]
            else:
                if self.config.mode == "local":
                    vals = [evaluate_task(self.objectives[k], c.params,
                                          *self.validation[k])
                            for c in clients if c.task_id == k]
                    best = final = float(np.mean(vals))
                else:
                    best = final = evaluate_task(self.objectives[k],
                                                 state.task_models[k],
                                                 *self.validation[k])
            base_best = baseline[k]["best_metric"] if baseline else best
            rows.append({
                "task_id": k,
                "mode": self.config.mode,
                "best_metric": best,
                "final_metric": final,
                "delta_m_percent": delta_m_percent(best, base_best, metric),
            })
        return rows

    def _persist(self, out_dir: Path, records, state, summary) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "rounds.jsonl", "w") as fh:
            for record in records:
                fh.write(record_to_json_line(record) + "\n")
        write_summary(out_dir / "summary.csv", summary)
        for k in sorted(state.task_models):
            save_params(state.task_models[k], out_dir / f"task_{k}.mfed")
        g = state.global_encoder
        enc_layout = tuple(e for e in next(iter(state.task_models.values())).layout
                           if e.offset < g.size)
        save_params(ModelParams(g, g.size, enc_layout),
                    out_dir / "global_encoder.mfed")
        with open(out_dir / "config.yaml", "w") as fh:
            yaml.safe_dump(self.config.to_dict(), fh, sort_keys=True)


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    summary: list[dict]
    final_state: ServerState
    out_dir: Path | None

    @property
    def mean_delta_m(self) -> float:
        return float(np.mean([row["delta_m_percent"] for row in self.summary]))


def write_summary(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["task_id", "mode", "best_metric",
                                                "final_metric", "delta_m_percent"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_summary(path) -> dict[int, dict]:
    """summary.csv rows keyed by task id."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["task_id"])] = {
                "mode": row["mode"],
                "best_metric": float(row["best_metric"]),
                "final_metric": float(row["final_metric"]),
                "delta_m_percent": float(row["delta_m_percent"]),
            }
    return out


def run_experiment(config: ExperimentConfig,
                   out_dir: str | Path | None = None) -> ExperimentResult:
    """Build and run an experiment from a validated config."""
    return Experiment(config).run(out_dir)
