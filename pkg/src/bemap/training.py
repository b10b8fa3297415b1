"""Training loop: per-epoch fair neighborhood sampling, backprop, Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import UndefinedMetricError
from .graph import Graph, SplitMasks
from .metrics import delta_eo, delta_sp, evaluate
from .model import GcnParams, adam_step, forward, init_params, log_softmax, loss_and_grads
from .sampling import BalanceTable, compute_balance_table, sample_epoch_graph

# independent RNG streams derived from (seed, stream, epoch)
_INIT, _EPOCH, _EVAL = 0, 1, 2


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), kind, int(index)])


@dataclass
class TrainResult:
    params: GcnParams
    log: list
    best_epoch: int
    eval_graphs: list
    balance: BalanceTable | None

    def predict_proba(self, features) -> np.ndarray:
        """Class probabilities averaged over the evaluation neighborhoods."""
        return _mean_proba(self.params, self.eval_graphs, features)


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def _mean_proba(params, graphs, x):
    return np.mean([np.exp(log_softmax(forward(params, eg, x).logits)) for eg in graphs], axis=0)


def train(g: Graph, splits: SplitMasks, cfg: ExperimentConfig, seed: int = 0, mode: str | None = None,
          bt: BalanceTable | None = None) -> TrainResult:
    """Train a GCN (or MLP) with the given sampler and keep the best-validation weights.

    Evaluation averages class probabilities over ``trainer.eval_samples``
    fixed sampled neighborhoods drawn from a dedicated stream, so validation
    scores are comparable across epochs.
    """
    mc, tc, sc = cfg.model, cfg.trainer, cfg.sampler
    mode = mode or sc.modes[0]
    if mc.mlp:
        mode = "none"
    if mode == "bemap" and bt is None:
        bt = compute_balance_table(g, sc.hops, sc.delta)
    params = init_params(g.features.shape[1], mc.hidden, 2, mc.layers, mc.activation,
                         not mc.mlp, stream(seed, _INIT))
    n_eval = 1 if mode == "none" else tc.eval_samples
    eval_graphs = [sample_epoch_graph(g, bt, mode, sc.beta, mc.norm_mode, stream(seed, _EVAL, k))
                   for k in range(n_eval)]
    x, y, s = g.features, g.labels, g.sensitive

    best_acc, best_params, best_epoch = -1.0, params, 0
    log = []
    for epoch in range(1, tc.epochs + 1):
        eg = sample_epoch_graph(g, bt, mode, sc.beta, mc.norm_mode, stream(seed, _EPOCH, epoch))
        loss, grads = loss_and_grads(params, eg, x, y, splits.train, tc.weight_decay)
        params = adam_step(params, grads, tc.lr)

        proba = _mean_proba(params, eval_graphs, x)
        val = splits.val
        pred = proba.argmax(axis=1)
        val_loss = float(-np.log(proba[val, y[val]]).mean()) if val.size else None
        val_acc = float(np.mean(pred[val] == y[val])) if val.size else 0.0
        log.append({
            "epoch": epoch,
            "train_loss": loss,
            "val_loss": val_loss,
            "val_acc": val_acc,
            "val_delta_sp": _maybe(delta_sp, pred, s, val),
            "val_delta_eo": _maybe(delta_eo, pred, y, s, val),
        })
        if val_acc > best_acc:
            best_acc, best_params, best_epoch = val_acc, params, epoch
    return TrainResult(best_params, log, best_epoch, eval_graphs, bt)


def evaluate_on_test(g: Graph, splits: SplitMasks, result: TrainResult):
    proba = result.predict_proba(g.features)[:, 1]
    return evaluate(proba, g.labels, g.sensitive, splits.test)
