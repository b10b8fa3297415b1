"""Two-layer GCN / MLP with manual backpropagation and Adam."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .sampling import EpochGraph

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True, eq=False)
class GcnParams:
    """Layer weights plus Adam moments.

    ``weights[l]`` maps layer-l inputs to layer-l outputs (row vectors times
    matrix). With ``message_passing=False`` the model is an MLP.
    """

    weights: tuple
    activation: str = "relu"
    message_passing: bool = True
    m: tuple = field(default=())
    v: tuple = field(default=())
    step: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}")
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        for a, b in zip(ws, ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValidationError(f"weight shapes do not chain: {a.shape} -> {b.shape}")
        object.__setattr__(self, "weights", ws)
        if not self.m:
            object.__setattr__(self, "m", tuple(np.zeros_like(w) for w in ws))
        if not self.v:
            object.__setattr__(self, "v", tuple(np.zeros_like(w) for w in ws))

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_params(in_dim, hidden=128, n_classes=2, n_layers=2, activation="relu",
                message_passing=True, rng=None) -> GcnParams:
    """Glorot-uniform initialization."""
    rng = np.random.default_rng(rng)
    dims = [in_dim] + [hidden] * (n_layers - 1) + [n_classes]
    ws = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return GcnParams(tuple(ws), activation, message_passing)


@dataclass
class Forward:
    """Cached intermediate values of one forward pass.

    ``aggregated[l]`` is the layer-l input after message passing,
    ``pre[l]`` its product with ``W[l]``, ``outputs[l]`` the layer output
    (post-activation; raw logits for the last layer).
    """

    inputs: list
    aggregated: list
    pre: list
    outputs: list

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]


def _act(params, z):
    return np.maximum(z, 0.0) if params.activation == "relu" else z


def forward(params: GcnParams, eg: EpochGraph | None, features) -> Forward:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValidationError(f"features of shape {x.shape} do not match first layer {params.weights[0].shape}")
    if params.message_passing:
        if eg is None:
            raise ValidationError("a GCN forward pass needs an EpochGraph")
        if eg.n != x.shape[0]:
            raise ValidationError("EpochGraph and features disagree on node count")
    cache = Forward([], [], [], [])
    h = x
    last = params.n_layers - 1
    for l, w in enumerate(params.weights):
        agg = eg.matrix @ h if params.message_passing else h
        z = agg @ w
        out = z if l == last else _act(params, z)
        cache.inputs.append(h)
        cache.aggregated.append(agg)
        cache.pre.append(z)
        cache.outputs.append(out)
        h = out
    return cache


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _as_index(mask, n):
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ValidationError("boolean mask must have one entry per node")
        return np.flatnonzero(m)
    return m.astype(np.int64)


def loss_and_grads(params: GcnParams, eg, features, labels, train_mask, weight_decay=0.0):
    """Mean softmax cross-entropy over ``train_mask`` plus L2 penalty.

    ``train_mask`` is a boolean mask or an index array (repeats allowed).
    The penalty is ``weight_decay / 2 * sum ||W||_F^2``. Gradients treat the
    sampled graph as fixed.
    """
    fw = forward(params, eg, features)
    idx = _as_index(train_mask, fw.logits.shape[0])
    if idx.size == 0:
        raise ValidationError("train_mask is empty")
    y = np.asarray(labels)[idx]
    logp = log_softmax(fw.logits[idx])
    loss = -logp[np.arange(idx.size), y].mean()
    loss += 0.5 * weight_decay * sum(float((w * w).sum()) for w in params.weights)

    delta = np.exp(logp)
    delta[np.arange(idx.size), y] -= 1.0
    d_out = np.zeros_like(fw.logits)
    np.add.at(d_out, idx, delta / idx.size)

    grads = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        w = params.weights[l]
        d_z = d_out
        if l != params.n_layers - 1 and params.activation == "relu":
            d_z = d_out * (fw.pre[l] > 0)
        grads[l] = fw.aggregated[l].T @ d_z + weight_decay * w
        if l:
            d_agg = d_z @ w.T
            d_out = eg.matrix.T @ d_agg if params.message_passing else d_agg
    return float(loss), grads


def adam_step(params: GcnParams, grads, lr=1e-3, betas=(0.9, 0.999), eps=1e-8) -> GcnParams:
    """Bias-corrected Adam update; returns new parameters."""
    b1, b2 = betas
    t = params.step + 1
    ws, ms, vs = [], [], []
    for w, g, m, v in zip(params.weights, grads, params.m, params.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        ws.append(w - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return dataclasses.replace(params, weights=tuple(ws), m=tuple(ms), v=tuple(vs), step=t)


def predict_proba(params: GcnParams, eg, features) -> np.ndarray:
    return np.exp(log_softmax(forward(params, eg, features).logits))


def extract_embeddings(params: GcnParams, eg, features, layer: int = 1) -> np.ndarray:
    """Output of layer ``layer`` (1-based); the last layer gives logits."""
    if not 1 <= layer <= params.n_layers:
        raise ValidationError(f"layer must lie in 1..{params.n_layers}, got {layer}")
    return forward(params, eg, features).outputs[layer - 1]


# Checkpoint format (text, one record per line):
#   bemap-checkpoint 1
#   meta <key> <value>
#   tensor <name> <rows> <cols>
#   <rows*cols space-separated float reprs, row-major>

CHECKPOINT_MAGIC = "bemap-checkpoint 1"


def save_checkpoint(params: GcnParams, path) -> None:
    lines = [
        CHECKPOINT_MAGIC,
        f"meta activation {params.activation}",
        f"meta message_passing {int(params.message_passing)}",
        f"meta step {params.step}",
    ]
    for l, w in enumerate(params.weights):
        lines.append(f"tensor W{l} {w.shape[0]} {w.shape[1]}")
        lines.append(" ".join(repr(float(x)) for x in w.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> GcnParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    meta, weights = {}, []
    k = 1
    while k < len(lines):
        parts = lines[k].split()
        if parts[0] == "meta":
            meta[parts[1]] = parts[2]
            k += 1
        elif parts[0] == "tensor":
            rows, cols = int(parts[2]), int(parts[3])
            vals = np.array([float(x) for x in lines[k + 1].split()], dtype=np.float64)
            weights.append(vals.reshape(rows, cols))
            k += 2
        else:
            raise ValidationError(f"{path}:{k + 1}: unexpected record {parts[0]!r}")
    return GcnParams(tuple(weights), meta.get("activation", "relu"),
                     bool(int(meta.get("message_passing", "1"))), step=int(meta.get("step", "0")))
