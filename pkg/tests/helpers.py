"""Shared builders for experiment configs used across test modules."""

from __future__ import annotations

import copy

from mfed.config import parse_experiment_config

TINY_RAW = {
    "seed": 0,
    "mode": "mfed",
    "T": 3,
    "m": 2,
    "alpha": 0.1,
    "batch_size": 8,
    "clients_per_task": 2,
    "samples_per_client": 16,
    "val_samples_per_task": 64,
    "schedule": {"lambda_0": 0.01, "gamma": 1.3, "lambda_max": 1.0,
                 "cold_start": True},
    "tasks": [
        {"task_id": 1, "kind": "regression", "metric": "mse"},
        {"task_id": 2, "kind": "categorical", "metric": "accuracy", "classes": 4},
    ],
    "encoder": {"input_width": 8, "layers": [16, 8], "activation": "tanh"},
}

# the default desk-scale benchmark: all four decoder kinds (section-5-style
# setup: 5 clients per task, 20 aggregations, 5 local epochs)
BENCH_RAW = {
    "seed": 0,
    "mode": "mfed",
    "T": 20,
    "m": 5,
    "alpha": 0.1,
    "batch_size": 10,
    "clients_per_task": 5,
    "samples_per_client": 20,
    "val_samples_per_task": 256,
    "schedule": {"lambda_0": 0.01, "gamma": 1.3, "lambda_max": 1.0,
                 "cold_start": True},
    "tasks": [
        {"task_id": 1, "kind": "regression", "metric": "mse"},
        {"task_id": 2, "kind": "binary", "metric": "ap"},
        {"task_id": 3, "kind": "categorical", "metric": "accuracy", "classes": 4},
        {"task_id": 4, "kind": "per_position", "metric": "miou",
         "classes": 3, "positions": 8},
    ],
    "encoder": {"input_width": 8, "layers": [32, 16], "activation": "tanh"},
}


def raw_config(base=None, **overrides) -> dict:
    raw = copy.deepcopy(base or TINY_RAW)
    for key, value in overrides.items():
        if key == "schedule":
            raw["schedule"].update(value)
        else:
            raw[key] = value
    return raw


def tiny_config(**overrides):
    return parse_experiment_config(raw_config(TINY_RAW, **overrides))


def bench_config(**overrides):
    return parse_experiment_config(raw_config(BENCH_RAW, **overrides))
