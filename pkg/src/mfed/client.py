"""Local training on one client.

A round of client work: adopt the task-global model, run m epochs of
mini-batch gradient descent on the task loss plus the lambda-weighted
encoder-proximity penalty (the global encoder target g stays fixed for the
whole round), then report the parameter delta for upload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError
from .model import ModelParams, TaskObjective, with_values
from .seeding import stream
from .taskgen import ClientShard

PENALTY_FORMS = ("squared", "norm")


@dataclass
class ClientState:
    """One client's task context; params only evolve in local mode."""

    client_id: int
    task_id: int
    shard: ClientShard
    params: ModelParams
    objective: TaskObjective
    batch_size: int
    seed: int


@dataclass(frozen=True)
class LocalReport:
    """Uploaded result of one local round."""

    client_id: int
    task_id: int
    delta: np.ndarray
    size: int
    final_loss: float
    drift_before: float
    drift_after: float


def penalty_value(encoder: np.ndarray, g: np.ndarray, lam: float, form: str) -> float:
    """Encoder-proximity penalty; squared form lam/2*||d||^2 or plain lam*||d||."""
    _check_penalty_args(encoder, g, lam, form)
    d = encoder - g
    if form == "squared":
        return float(0.5 * lam * np.sum(d * d))
    return float(lam * np.linalg.norm(d))


def penalty_grad(encoder: np.ndarray, g: np.ndarray, lam: float, form: str) -> np.ndarray:
    """Gradient of the penalty wrt the encoder; touches only encoder coordinates.

    The squared form has gradient lam*(w* - g), which is what the update rule
    of the algorithm actually applies. The plain-norm form uses subgradient 0
    at w* = g.
    """
    _check_penalty_args(encoder, g, lam, form)
    d = encoder - g
    if form == "squared":
        return lam * d
    nrm = np.linalg.norm(d)
    if nrm == 0.0:
        return np.zeros_like(d)
    return lam * d / nrm


def _check_penalty_args(encoder, g, lam, form):
    if g.size != encoder.size:
        raise ValueError(f"target length {g.size} != encoder length {encoder.size}")
    if not np.isfinite(lam) or lam < 0:
        raise ValueError("lambda must be finite and >= 0")
    if form not in PENALTY_FORMS:
        raise ValueError(f"unknown penalty form {form!r}")


def regularized_loss(objective: TaskObjective, params: ModelParams, x: np.ndarray,
                     y: np.ndarray, g: np.ndarray, lam: float,
                     form: str = "squared") -> float:
    """Task loss plus the encoder-proximity penalty."""
    return objective.loss(params, x, y) + penalty_value(params.encoder, g, lam, form)


def make_batches(shard: ClientShard, batch_size: int,
                 rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic shuffled mini-batches; every sample exactly once."""
    if shard.size < 1:
        raise ValueError("cannot batch an empty shard")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(shard.size)
    batches = []
    for start in range(0, shard.size, batch_size):
        idx = perm[start: start + batch_size]
        batches.append((shard.x[idx], shard.y[idx]))
    return batches


def local_train(state: ClientState, task_global: ModelParams, g: np.ndarray,
                lam: float, alpha: float, epochs: int, round_index: int,
                form: str = "squared") -> LocalReport:
    """Adopt the task-global model, train m epochs, report the delta.

    The penalty target g is held fixed for all epochs of the round. With
    lam = 0 the trajectory is exactly plain SGD on the task loss.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    _check_penalty_args(task_global.encoder, g, lam, form)
    enc_len = task_global.encoder_len
    vec = task_global.values.copy()
    drift_before = float(np.linalg.norm(vec[:enc_len] - g))
    rng = stream(state.seed, "client", state.client_id, "round", round_index)
    step = 0
    for _epoch in range(epochs):
        for bx, by in make_batches(state.shard, state.batch_size, rng):
            try:
                loss, grad = state.objective.loss_and_grad(
                    with_values(task_global, vec), bx, by)
            except ad.NonFiniteError as exc:
                raise DivergenceError(step, f"client {state.client_id}: {exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(step, f"client {state.client_id}: non-finite loss")
            if lam > 0:
                grad[:enc_len] += penalty_grad(vec[:enc_len], g, lam, form)
            vec = vec - alpha * grad
            step += 1
    # Canonical final params: base + delta, so the server reconstructs the
    # client's model bit-exactly from the uploaded delta (a + (b - a) need
    # not equal b in floats, so the report is computed from base + delta).
    delta = vec - task_global.values
    final_vec = task_global.values + delta
    final = with_values(task_global, final_vec)
    final_loss = regularized_loss(state.objective, final, state.shard.x,
                                  state.shard.y, g, lam, form)
    return LocalReport(
        client_id=state.client_id,
        task_id=state.task_id,
        delta=delta,
        size=state.shard.size,
        final_loss=final_loss,
        drift_before=drift_before,
        drift_after=float(np.linalg.norm(final_vec[:enc_len] - g)),
    )
