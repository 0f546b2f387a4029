"""Synthetic multi-task benchmark generation and client data partitioning.

All tasks in one experiment share a latent map z = tanh(W x); each task's
targets are a task-specific head applied to z plus noise. That shared latent
is what makes cross-task knowledge transfer possible at all, and it is the
structural premise the simulator preserves from full-scale dense-prediction
benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import derive_seed, stream

TASK_KINDS = ("regression", "binary", "categorical", "per_position")
METRIC_KINDS = ("mse", "accuracy", "miou", "ap", "pq", "odsf")


@dataclass(frozen=True)
class TaskSpec:
    """One task: decoder kind, loss kind, metric kind, generation law.

    head_align sets how related the tasks are: each task head mixes a
    latent direction shared by every task of the run (weight head_align)
    with task-specific random structure (weight 1 - head_align). At 0 the
    tasks merely share the input manifold; near 1 they are strongly related
    views of the same latent structure, which is the premise that makes
    cross-task transfer possible at all.
    """

    task_id: int
    kind: str
    metric: str
    classes: int = 2
    positions: int = 1
    input_width: int = 8
    latent_dim: int = 6
    latent_seed: int = 0
    head_seed: int = 0
    noise_sigma: float = 0.1
    head_scale: float = 1.0
    head_align: float = 0.8

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.metric not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.metric!r}")
        if self.kind in ("categorical", "per_position") and self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.kind == "per_position" and self.positions < 1:
            raise ValueError("positions must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.head_align <= 1.0:
            raise ValueError("head_align must be in [0, 1]")

    @property
    def loss_kind(self) -> str:
        if self.kind == "regression":
            return "mse"
        if self.kind == "per_position":
            return "per_position"
        return "categorical"  # binary is a 2-logit cross-entropy head

    @property
    def head_width(self) -> int:
        """Output width of the decoder head (per position for per_position)."""
        if self.kind == "regression":
            return 1
        if self.kind == "binary":
            return 2
        return self.classes


@dataclass(frozen=True)
class ClientShard:
    """One client's slice of a task dataset; disjoint by construction."""

    client_id: int
    task_id: int
    x: np.ndarray
    y: np.ndarray
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x.shape[0])


def latent_map(spec: TaskSpec) -> np.ndarray:
    """The shared input->latent matrix; identical for all tasks of a run."""
    rng = stream(spec.latent_seed, "latent")
    w = rng.standard_normal((spec.input_width, spec.latent_dim))
    return w / np.sqrt(spec.input_width)


def _head_weights(spec: TaskSpec) -> np.ndarray:
    if spec.kind in ("regression", "binary"):
        cols = 1
    elif spec.kind == "categorical":
        cols = spec.classes
    else:
        cols = spec.positions * spec.classes
    rng = stream(spec.head_seed, "head")
    specific = rng.standard_normal((spec.latent_dim, cols))
    readout = rng.standard_normal(cols)
    # direction shared by every task of the run (keyed by the latent seed)
    shared = stream(spec.latent_seed, "head-shared").standard_normal(spec.latent_dim)
    shared = shared / np.linalg.norm(shared)
    w = (spec.head_align * np.outer(shared, readout)
         + (1.0 - spec.head_align) * specific)
    return w * spec.head_scale


def generate_task_data(spec: TaskSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw n (input, target) pairs for a task; deterministic given seeds.

    Targets are float64 arrays; classification targets hold integral class
    ids ([n] for binary/categorical, [n, positions] for per_position),
    regression targets are [n, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = stream(seed, "x").standard_normal((n, spec.input_width))
    z = np.tanh(x @ latent_map(spec))
    head = _head_weights(spec)
    noise_rng = stream(seed, "noise")
    if spec.kind == "regression":
        y = z @ head + spec.noise_sigma * noise_rng.standard_normal((n, 1))
    elif spec.kind == "binary":
        score = (z @ head)[:, 0] + spec.noise_sigma * noise_rng.standard_normal(n)
        y = (score > 0).astype(np.float64)
    elif spec.kind == "categorical":
        logits = z @ head + spec.noise_sigma * noise_rng.standard_normal((n, spec.classes))
        y = np.argmax(logits, axis=1).astype(np.float64)
    else:
        logits = (z @ head).reshape(n, spec.positions, spec.classes)
        logits = logits + spec.noise_sigma * noise_rng.standard_normal(logits.shape)
        y = np.argmax(logits, axis=2).astype(np.float64)
    return x, y


def partition(x: np.ndarray, y: np.ndarray, task_id: int, clients_per_task: int,
              first_client_id: int = 0) -> list[ClientShard]:
    """Split a task dataset into equal contiguous shards; remainder to the last."""
    if clients_per_task < 1:
        raise ValueError("clients_per_task must be >= 1")
    n = x.shape[0]
    base = n // clients_per_task
    if base < 1:
        raise ValueError(f"dataset of {n} items cannot feed {clients_per_task} clients")
    shards = []
    start = 0
    for i in range(clients_per_task):
        end = start + base if i < clients_per_task - 1 else n
        idx = np.arange(start, end)
        shards.append(ClientShard(first_client_id + i, task_id, x[idx], y[idx], idx))
        start = end
    return shards


def partition_noniid(x: np.ndarray, y: np.ndarray, task_id: int, clients_per_task: int,
                     alpha: float, seed: int, first_client_id: int = 0) -> list[ClientShard]:
    """Dirichlet(alpha) label-proportion split for labeled tasks.

    Smaller alpha means more skewed per-client class proportions. Redraws
    (deterministically) when a client would end up empty.
    """
    if clients_per_task < 1:
        raise ValueError("clients_per_task must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    labels = y.reshape(y.shape[0], -1)[:, 0].astype(int)
    classes = np.unique(labels)
    rng = stream(seed, "dirichlet", task_id)
    for _attempt in range(100):
        assigned: list[list[np.ndarray]] = [[] for _ in range(clients_per_task)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(clients_per_task, alpha))
            cuts = np.floor(np.cumsum(props) * len(idx)).astype(int)[:-1]
            for i, part in enumerate(np.split(idx, cuts)):
                assigned[i].append(part)
        sizes = [sum(len(p) for p in parts) for parts in assigned]
        if min(sizes) > 0:
            break
    else:
        raise ValueError("could not draw a Dirichlet split with all clients non-empty")
    shards = []
    for i, parts in enumerate(assigned):
        idx = np.sort(np.concatenate(parts))
        shards.append(ClientShard(first_client_id + i, task_id, x[idx], y[idx], idx))
    return shards


def dump_csv(x: np.ndarray, y: np.ndarray, path) -> None:
    """Write a dataset as CSV: feature columns then target columns."""
    y2 = y.reshape(y.shape[0], -1)
    header = ",".join([f"x{i}" for i in range(x.shape[1])]
                      + [f"y{i}" for i in range(y2.shape[1])])
    data = np.hstack([x, y2])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset written by dump_csv; targets come back 2-D."""
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    n_x = sum(1 for c in names if c.startswith("x"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :n_x], data[:, n_x:]


def default_tasks(seed: int, noise_sigma: float = 0.1, input_width: int = 8,
                  latent_dim: int = 6) -> list[TaskSpec]:
    """The four-task desk-scale benchmark: one task per decoder/loss kind."""
    latent_seed = derive_seed(seed, "latent")
    common = dict(input_width=input_width, latent_dim=latent_dim,
                  latent_seed=latent_seed, noise_sigma=noise_sigma)
    return [
        TaskSpec(1, "regression", "mse", head_seed=derive_seed(seed, "head", 1), **common),
        TaskSpec(2, "binary", "ap", head_seed=derive_seed(seed, "head", 2), **common),
        TaskSpec(3, "categorical", "accuracy", classes=4,
                 head_seed=derive_seed(seed, "head", 3), **common),
        TaskSpec(4, "per_position", "miou", classes=3, positions=8,
                 head_seed=derive_seed(seed, "head", 4), **common),
    ]
