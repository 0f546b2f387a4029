"""Experiment configuration: YAML loading with strict key validation.

Every validation failure raises ConfigError naming the offending field, so
the CLI can report it and exit before any training starts. Unknown keys are
rejected at every nesting level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .taskgen import METRIC_KINDS, TASK_KINDS

MODES = ("local", "fedavg", "mfed")
PARTITIONS = ("iid", "dirichlet")


@dataclass
class TaskConfig:
    task_id: int
    kind: str
    metric: str
    classes: int = 2
    positions: int = 1


@dataclass
class ExperimentConfig:
    seed: int
    mode: str
    T: int
    m: int
    alpha: float
    batch_size: int
    clients_per_task: int
    samples_per_client: int
    tasks: list[TaskConfig]
    lambda_0: float = 0.01
    gamma: float = 1.3
    lambda_max: float = 1.0
    cold_start: bool = True
    penalty: str = "squared"
    partition: str = "iid"
    dirichlet_alpha: float = 0.5
    noise_sigma: float = 0.1
    input_width: int = 8
    encoder_widths: tuple[int, ...] = (32, 16)
    activation: str = "tanh"
    latent_dim: int = 6
    val_samples_per_task: int = 256
    out_dir: str | None = None
    baseline_dir: str | None = None
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "T": self.T,
            "m": self.m,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "clients_per_task": self.clients_per_task,
            "samples_per_client": self.samples_per_client,
            "schedule": {
                "lambda_0": self.lambda_0,
                "gamma": self.gamma,
                "lambda_max": self.lambda_max,
                "cold_start": self.cold_start,
            },
            "penalty": self.penalty,
            "partition": self.partition,
            "dirichlet_alpha": self.dirichlet_alpha,
            "noise_sigma": self.noise_sigma,
            "encoder": {
                "input_width": self.input_width,
                "layers": list(self.encoder_widths),
                "activation": self.activation,
            },
            "latent_dim": self.latent_dim,
            "val_samples_per_task": self.val_samples_per_task,
            "out_dir": self.out_dir,
            "baseline_dir": self.baseline_dir,
            "threads": self.threads,
            "tasks": [
                {"task_id": t.task_id, "kind": t.kind, "metric": t.metric,
                 "classes": t.classes, "positions": t.positions}
                for t in self.tasks
            ],
        }


def _require(mapping: dict, key: str, prefix: str = ""):
    if key not in mapping:
        raise ConfigError(prefix + key, "missing required field")
    return mapping[key]


def _typed(value, types, fieldname, typename):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(fieldname, f"expected {typename}")
    if not isinstance(value, types):
        raise ConfigError(fieldname, f"expected {typename}, got {type(value).__name__}")
    return value


def _int_field(mapping, key, prefix="", minimum=None, default=None):
    if default is not None and key not in mapping:
        return default
    v = _typed(_require(mapping, key, prefix), int, prefix + key, "an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(prefix + key, f"must be >= {minimum}")
    return v


def _float_field(mapping, key, prefix="", minimum=None, default=None):
    if default is not None and key not in mapping:
        return default
    v = _typed(_require(mapping, key, prefix), (int, float), prefix + key, "a number")
    v = float(v)
    if minimum is not None and v < minimum:
        raise ConfigError(prefix + key, f"must be >= {minimum}")
    return v


def _choice_field(mapping, key, choices, prefix="", default=None):
    if default is not None and key not in mapping:
        return default
    v = _require(mapping, key, prefix)
    if v not in choices:
        raise ConfigError(prefix + key, f"must be one of {choices}")
    return v


def _reject_unknown(mapping: dict, known: set[str], prefix: str = "") -> None:
    for key in mapping:
        if key not in known:
            raise ConfigError(prefix + str(key), "unknown field")


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {"seed", "mode", "T", "m", "alpha", "batch_size", "clients_per_task",
             "samples_per_client", "schedule", "penalty", "partition",
             "dirichlet_alpha", "noise_sigma", "encoder", "latent_dim",
             "val_samples_per_task", "out_dir", "baseline_dir", "threads",
             "tasks", "K"}
    _reject_unknown(raw, known)

    seed = _int_field(raw, "seed")
    mode = _choice_field(raw, "mode", MODES)
    T = _int_field(raw, "T", minimum=0)
    m = _int_field(raw, "m", minimum=1)
    alpha = _float_field(raw, "alpha")
    if alpha <= 0:
        raise ConfigError("alpha", "must be > 0")
    batch_size = _int_field(raw, "batch_size", minimum=1)
    clients_per_task = _int_field(raw, "clients_per_task", minimum=1)
    samples_per_client = _int_field(raw, "samples_per_client", minimum=1)

    sched = _typed(_require(raw, "schedule"), dict, "schedule", "a mapping")
    _reject_unknown(sched, {"lambda_0", "gamma", "lambda_max", "cold_start"},
                    "schedule.")
    lambda_0 = _float_field(sched, "lambda_0", "schedule.", minimum=0.0)
    gamma = _float_field(sched, "gamma", "schedule.")
    if gamma < 1.0:
        raise ConfigError("schedule.gamma", "must be >= 1")
    lambda_max = _float_field(sched, "lambda_max", "schedule.")
    if lambda_max <= 0:
        raise ConfigError("schedule.lambda_max", "must be > 0")
    if lambda_0 > lambda_max:
        raise ConfigError("schedule.lambda_0", "must be <= lambda_max")
    cold_start = sched.get("cold_start", True)
    _typed(cold_start, bool, "schedule.cold_start", "a boolean")

    penalty = _choice_field(raw, "penalty", ("squared", "norm"), default="squared")
    partition = _choice_field(raw, "partition", PARTITIONS, default="iid")
    dirichlet_alpha = _float_field(raw, "dirichlet_alpha", default=0.5)
    if dirichlet_alpha <= 0:
        raise ConfigError("dirichlet_alpha", "must be > 0")
    noise_sigma = _float_field(raw, "noise_sigma", minimum=0.0, default=0.1)

    enc = raw.get("encoder", {})
    _typed(enc, dict, "encoder", "a mapping")
    _reject_unknown(enc, {"input_width", "layers", "activation"}, "encoder.")
    input_width = _int_field(enc, "input_width", "encoder.", minimum=1, default=8)
    layers = enc.get("layers", [32, 16])
    if (not isinstance(layers, list) or not layers
            or not all(isinstance(w, int) and w >= 1 for w in layers)):
        raise ConfigError("encoder.layers", "must be a non-empty list of positive ints")
    activation = _choice_field(enc, "activation", ("tanh", "relu"), "encoder.",
                               default="tanh")

    latent_dim = _int_field(raw, "latent_dim", minimum=1, default=6)
    val_samples = _int_field(raw, "val_samples_per_task", minimum=1, default=256)

    tasks_raw = _typed(_require(raw, "tasks"), list, "tasks", "a list")
    if not tasks_raw:
        raise ConfigError("tasks", "at least one task is required")
    tasks = []
    for i, entry in enumerate(tasks_raw):
        prefix = f"tasks[{i}]."
        _typed(entry, dict, f"tasks[{i}]", "a mapping")
        _reject_unknown(entry, {"task_id", "kind", "metric", "classes", "positions"},
                        prefix)
        task_id = _int_field(entry, "task_id", prefix)
        kind = _choice_field(entry, "kind", TASK_KINDS, prefix)
        metric = _choice_field(entry, "metric", METRIC_KINDS, prefix)
        classes = _int_field(entry, "classes", prefix, minimum=2,
                             default=None if kind in ("categorical", "per_position") else 2)
        positions = _int_field(entry, "positions", prefix, minimum=1,
                               default=None if kind == "per_position" else 1)
        if kind == "binary" and classes != 2:
            raise ConfigError(prefix + "classes", "binary tasks always have 2 classes")
        _check_task_metric(kind, metric, prefix)
        tasks.append(TaskConfig(task_id, kind, metric, classes, positions))
    ids = [t.task_id for t in tasks]
    if sorted(ids) != list(range(min(ids), min(ids) + len(ids))) or len(set(ids)) != len(ids):
        raise ConfigError("tasks", "task_id values must be distinct and contiguous")
    if "K" in raw:
        k = _int_field(raw, "K")
        if k != len(tasks):
            raise ConfigError("K", f"does not match the {len(tasks)} entries in tasks")

    out_dir = raw.get("out_dir")
    if out_dir is not None:
        _typed(out_dir, str, "out_dir", "a string")
    baseline_dir = raw.get("baseline_dir")
    if baseline_dir is not None:
        _typed(baseline_dir, str, "baseline_dir", "a string")
    threads = _int_field(raw, "threads", minimum=1, default=1)

    if partition == "dirichlet":
        for i, t in enumerate(tasks):
            if t.kind not in ("binary", "categorical"):
                raise ConfigError(f"tasks[{i}].kind",
                                  "dirichlet partition needs a labeled task")

    return ExperimentConfig(
        seed=seed, mode=mode, T=T, m=m, alpha=alpha, batch_size=batch_size,
        clients_per_task=clients_per_task, samples_per_client=samples_per_client,
        tasks=tasks, lambda_0=lambda_0, gamma=gamma, lambda_max=lambda_max,
        cold_start=cold_start, penalty=penalty, partition=partition,
        dirichlet_alpha=dirichlet_alpha, noise_sigma=noise_sigma,
        input_width=input_width, encoder_widths=tuple(layers),
        activation=activation, latent_dim=latent_dim,
        val_samples_per_task=val_samples, out_dir=out_dir,
        baseline_dir=baseline_dir, threads=threads,
    )


def _check_task_metric(kind: str, metric: str, prefix: str) -> None:
    allowed = {
        "regression": ("mse",),
        "binary": ("accuracy", "ap", "odsf"),
        "categorical": ("accuracy",),
        "per_position": ("miou", "pq", "accuracy"),
    }[kind]
    if metric not in allowed:
        raise ConfigError(prefix + "metric",
                          f"metric {metric!r} does not apply to kind {kind!r}")


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("<config>", f"no such file: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"not valid YAML: {exc}") from None
    return parse_experiment_config(raw)


@dataclass
class RateCheckConfig:
    """Convex-suite configuration for the convergence harness."""

    seed: int = 0
    T: int = 1000
    num_tasks: int = 4
    dim: int = 6
    mu: float = 1.0
    start_radius: float = 2.0
    lam: float = 0.0
    noise: float = 0.5
    draws: int = 200
    rate_a: float | None = None
    eta: float | None = None
    out_dir: str | None = None


def parse_rate_config(raw: dict) -> RateCheckConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {"seed", "T", "num_tasks", "dim", "mu", "start_radius", "lambda",
             "noise", "draws", "A", "eta", "out_dir"}
    _reject_unknown(raw, known)
    cfg = RateCheckConfig(
        seed=_int_field(raw, "seed", default=0),
        T=_int_field(raw, "T", minimum=1, default=1000),
        num_tasks=_int_field(raw, "num_tasks", minimum=1, default=4),
        dim=_int_field(raw, "dim", minimum=1, default=6),
        mu=_float_field(raw, "mu", default=1.0),
        start_radius=_float_field(raw, "start_radius", minimum=0.0, default=2.0),
        lam=_float_field(raw, "lambda", minimum=0.0, default=0.0),
        noise=_float_field(raw, "noise", minimum=0.0, default=0.5),
        draws=_int_field(raw, "draws", minimum=1, default=200),
    )
    if cfg.mu <= 0:
        raise ConfigError("mu", "must be > 0")
    if "A" in raw:
        cfg.rate_a = _float_field(raw, "A")
        if cfg.rate_a <= 0:
            raise ConfigError("A", "must be > 0")
    if "eta" in raw:
        cfg.eta = _float_field(raw, "eta")
        if cfg.eta <= 0:
            raise ConfigError("eta", "must be > 0")
    if "out_dir" in raw and raw["out_dir"] is not None:
        cfg.out_dir = _typed(raw["out_dir"], str, "out_dir", "a string")
    return cfg


def load_rate_config(path) -> RateCheckConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("<config>", f"no such file: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"not valid YAML: {exc}") from None
    return parse_rate_config(raw)
