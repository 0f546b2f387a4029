"""Encoder-decoder models over a flat, partitioned parameter vector.

The encoder is a dense stack fixed by the server; each task supplies its own
decoder head. Parameters live in one flat float64 vector with a layout table,
so "the encoder component" is a well-defined slice and aggregation and norms
are single-pass vector ops.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .seeding import stream
from .taskgen import TaskSpec

CHECKPOINT_MAGIC = b"MFED"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector: encoder segment first, then the decoder."""

    values: np.ndarray
    encoder_len: int
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        total = sum(e.length for e in self.layout)
        if total != vals.size:
            raise ValueError(f"layout covers {total} values but vector has {vals.size}")
        if not 0 <= self.encoder_len <= vals.size:
            raise ValueError("encoder_len out of range")

    @property
    def total_len(self) -> int:
        return int(self.values.size)

    @property
    def encoder(self) -> np.ndarray:
        return self.values[: self.encoder_len]

    @property
    def decoder(self) -> np.ndarray:
        return self.values[self.encoder_len:]


def encoder_slice(params: ModelParams) -> np.ndarray:
    """Copy of the encoder segment (safe to mutate)."""
    return params.encoder.copy()


def replace_encoder(params: ModelParams, encoder: np.ndarray) -> ModelParams:
    if encoder.size != params.encoder_len:
        raise ValueError(
            f"encoder has {encoder.size} values, expected {params.encoder_len}"
        )
    values = np.concatenate([np.asarray(encoder, dtype=np.float64).ravel(),
                             params.decoder])
    return ModelParams(values, params.encoder_len, params.layout)


def with_values(params: ModelParams, values: np.ndarray) -> ModelParams:
    """Same layout, new parameter values."""
    return ModelParams(values, params.encoder_len, params.layout)


@dataclass(frozen=True)
class Architecture:
    """Server-fixed encoder stack; decoder shapes come from the TaskSpec."""

    input_width: int = 8
    encoder_widths: tuple[int, ...] = (32, 16)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.encoder_widths) < 1 or min(self.encoder_widths) < 1:
            raise ValueError("encoder_widths must be a non-empty list of positive ints")
        object.__setattr__(self, "encoder_widths", tuple(self.encoder_widths))

    @property
    def encoder_out(self) -> int:
        return self.encoder_widths[-1]


def _encoder_shapes(arch: Architecture) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    prev = arch.input_width
    for i, width in enumerate(arch.encoder_widths):
        shapes.append((f"enc{i}.w", (prev, width)))
        shapes.append((f"enc{i}.b", (width,)))
        prev = width
    return shapes


def _decoder_shapes(arch: Architecture, task: TaskSpec) -> list[tuple[str, tuple[int, ...]]]:
    h = arch.encoder_out
    w = task.head_width
    if task.kind == "per_position":
        shapes = []
        for p in range(task.positions):
            shapes.append((f"dec.p{p}.w", (h, w)))
            shapes.append((f"dec.p{p}.b", (w,)))
        return shapes
    return [("dec.w", (h, w)), ("dec.b", (w,))]


def _build_layout(arch: Architecture, task: TaskSpec):
    enc_shapes = _encoder_shapes(arch)
    dec_shapes = _decoder_shapes(arch, task)
    layout = []
    offset = 0
    for name, shape in enc_shapes + dec_shapes:
        length = int(np.prod(shape))
        layout.append(LayoutEntry(name, offset, length))
        offset += length
    encoder_len = sum(int(np.prod(s)) for _, s in enc_shapes)
    return tuple(layout), encoder_len, enc_shapes + dec_shapes


def init_params(arch: Architecture, task: TaskSpec, seed: int) -> ModelParams:
    """Scaled-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    The encoder stream depends only on the seed, so every task (and hence
    every client) starts from the same encoder; the decoder stream mixes in
    the task id.
    """
    layout, encoder_len, shapes = _build_layout(arch, task)
    rng_enc = stream(seed, "init", "encoder")
    rng_dec = stream(seed, "init", "decoder", task.task_id)
    chunks = []
    for (name, shape), entry in zip(shapes, layout):
        rng = rng_enc if entry.offset < encoder_len else rng_dec
        if name.endswith(".b"):
            chunks.append(np.zeros(shape[0]))
        else:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
    return ModelParams(np.concatenate(chunks), encoder_len, layout)


def _param_arrays(params: ModelParams, arch: Architecture, task: TaskSpec):
    """Views of the flat vector reshaped per layout entry."""
    _, _, shapes = _build_layout(arch, task)
    out = []
    for (name, shape), entry in zip(shapes, params.layout):
        out.append((name, params.values[entry.offset: entry.offset + entry.length]
                    .reshape(shape)))
    return out


def _activation_fn(arch: Architecture):
    return np.tanh if arch.activation == "tanh" else lambda a: np.maximum(a, 0.0)


def encoder_forward(params: ModelParams, arch: Architecture, task: TaskSpec,
                    x: np.ndarray) -> np.ndarray:
    """Encoder features for a batch; pure numpy, no graph."""
    if x.ndim != 2 or x.shape[1] != arch.input_width:
        raise ValueError(f"input shape {x.shape} does not match width {arch.input_width}")
    act = _activation_fn(arch)
    arrays = dict(_param_arrays(params, arch, task))
    h = x
    for i in range(len(arch.encoder_widths)):
        h = act(h @ arrays[f"enc{i}.w"] + arrays[f"enc{i}.b"])
    return h


def forward(params: ModelParams, arch: Architecture, task: TaskSpec,
            x: np.ndarray) -> np.ndarray:
    """Decoder output for a batch: [B, head] or [B, P, C] for per_position."""
    h = encoder_forward(params, arch, task, x)
    arrays = dict(_param_arrays(params, arch, task))
    if task.kind == "per_position":
        outs = [h @ arrays[f"dec.p{p}.w"] + arrays[f"dec.p{p}.b"]
                for p in range(task.positions)]
        return np.stack(outs, axis=1)
    return h @ arrays["dec.w"] + arrays["dec.b"]


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    return np.eye(classes, dtype=np.float64)[labels.astype(int)]


def _loss_value(task: TaskSpec, output: np.ndarray, y: np.ndarray) -> float:
    """Task loss on raw decoder output; mirrors the graph-path formulas."""
    if task.loss_kind == "mse":
        d = output - y
        return float(np.mean(d * d))
    if task.loss_kind == "categorical":
        return float(_cross_entropy(output, _one_hot(y, task.head_width)))
    total = None
    for p in range(task.positions):
        ce = _cross_entropy(output[:, p, :], _one_hot(y[:, p], task.classes))
        total = ce if total is None else total + ce
    return float(total * (1.0 / task.positions))


def _cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    per_row = -(targets * (shifted - log_z)).sum(axis=-1)
    return np.mean(per_row)


class TaskObjective:
    """Loss/gradient/prediction bundle for one (architecture, task) pair."""

    def __init__(self, arch: Architecture, task: TaskSpec):
        self.arch = arch
        self.task = task

    def predict(self, params: ModelParams, x: np.ndarray) -> np.ndarray:
        return forward(params, self.arch, self.task, x)

    def loss(self, params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
        return _loss_value(self.task, forward(params, self.arch, self.task, x), y)

    def loss_and_grad(self, params: ModelParams, x: np.ndarray,
                      y: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and its gradient as a flat vector over all parameters."""
        task, arch = self.task, self.arch
        if x.ndim != 2 or x.shape[1] != arch.input_width:
            raise ValueError(
                f"input shape {x.shape} does not match width {arch.input_width}"
            )
        g = ad.Graph()
        leaves = {}
        for (name, shape), entry in zip(_build_layout(arch, task)[2], params.layout):
            leaves[name] = g.leaf(
                params.values[entry.offset: entry.offset + entry.length].reshape(shape))
        act = ad.tanh if arch.activation == "tanh" else ad.relu
        h = g.constant(x)
        for i in range(len(arch.encoder_widths)):
            h = act(ad.add(ad.matmul(h, leaves[f"enc{i}.w"]), leaves[f"enc{i}.b"]))
        if task.loss_kind == "mse":
            pred = ad.add(ad.matmul(h, leaves["dec.w"]), leaves["dec.b"])
            loss = ad.mse(pred, g.constant(y))
        elif task.loss_kind == "categorical":
            logits = ad.add(ad.matmul(h, leaves["dec.w"]), leaves["dec.b"])
            loss = ad.softmax_cross_entropy(
                logits, g.constant(_one_hot(y, task.head_width)))
        else:
            total = None
            for p in range(task.positions):
                logits = ad.add(ad.matmul(h, leaves[f"dec.p{p}.w"]),
                                leaves[f"dec.p{p}.b"])
                ce = ad.softmax_cross_entropy(
                    logits, g.constant(_one_hot(y[:, p], task.classes)))
                total = ce if total is None else ad.add(total, ce)
            loss = ad.mul(total, 1.0 / task.positions)
        grads = ad.backward(g, loss)
        flat = np.zeros(params.total_len)
        for (name, _shape), entry in zip(_build_layout(arch, task)[2], params.layout):
            flat[entry.offset: entry.offset + entry.length] = \
                grads[leaves[name].node_id].ravel()
        return float(loss.data), flat


def save_params(params: ModelParams, path) -> None:
    """Write the MFED binary checkpoint; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<BQQI", CHECKPOINT_VERSION, params.encoder_len,
                             params.total_len, len(params.layout)))
        for entry in params.layout:
            name = entry.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<QQ", entry.offset, entry.length))
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not an MFED checkpoint (magic {magic!r})")
        version, encoder_len, total_len, n_entries = struct.unpack("<BQQI", fh.read(21))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        layout = []
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            offset, length = struct.unpack("<QQ", fh.read(16))
            layout.append(LayoutEntry(name, offset, length))
        raw = fh.read(total_len * 8)
        if len(raw) != total_len * 8:
            raise ValueError("checkpoint truncated")
        values = np.frombuffer(raw, dtype="<f8").copy()
    return ModelParams(values, encoder_len, tuple(layout))
