"""Experiment orchestration behind the command-line interface.

Every entry point writes into an output directory and finishes with a
``manifest.json`` (config digest, seeds, package version). Outputs carry no
timestamps, so a rerun with the same manifest reproduces them byte for byte.
"""

from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict
from .errors import UndefinedMetricError, ValidationError
from .graph import Graph, generate_biased, load_graph, make_splits, majority_neighbor_ratios, ratio_bins
from .metrics import N_BINS, probe_sensitive_leakage, relative_reduction, write_csv, write_jsonl
from .model import extract_embeddings, save_checkpoint
from .sampling import compute_balance_table
from .theory import verify_lemma1, verify_lemma3_theorem2, verify_theorem1
from .training import evaluate_on_test, train

log = logging.getLogger(__name__)

METRICS = ("acc", "auc", "delta_sp", "delta_eo")
SUMMARY_FIELDS = ("mode", "n_seeds") + tuple(f"{m}_{stat}" for m in METRICS for stat in ("mean", "std"))


def load_dataset(cfg: ExperimentConfig) -> Graph:
    d = cfg.dataset
    if d.edges is not None:
        for p in (d.edges, d.nodes):
            if not Path(p).is_file():
                raise ValidationError(f"dataset file {p} not found")
        return load_graph(d.edges, d.nodes)
    try:
        return generate_biased(**d.synthetic)
    except TypeError as exc:
        raise ValidationError(f"dataset.synthetic: {exc}") from None


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seeds": list(cfg.trainer.seeds),
        "version": __version__,
        "config": cfg.experiment_dict(),
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def summarize(records) -> list[dict]:
    """Mean and sample std over seeds for each sampler mode (input order kept)."""
    modes = list(dict.fromkeys(r["mode"] for r in records))
    rows = []
    for mode in modes:
        rs = [r for r in records if r["mode"] == mode]
        row = {"mode": mode, "n_seeds": len(rs)}
        for m in METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = _mean_std(r[m] for r in rs)
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig, out) -> list[dict]:
    """Train every (mode, seed) pair; write logs, checkpoints and summaries.

    Layout under ``out``: ``logs/<mode>_seed<k>.jsonl`` (per-epoch records),
    ``checkpoints/<mode>_seed<k>.ckpt``, ``runs.jsonl`` (test metrics per
    run), ``summary.csv`` (one row per mode) and ``manifest.json``.
    """
    out = Path(out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    g = load_dataset(cfg)
    splits = make_splits(g, cfg.dataset.split, cfg.dataset.split_seed)
    sc = cfg.sampler
    bt = compute_balance_table(g, sc.hops, sc.delta) if "bemap" in sc.modes else None
    records = []
    for mode in sc.modes:
        for seed in cfg.trainer.seeds:
            log.info("training mode=%s seed=%d", mode, seed)
            result = train(g, splits, cfg, seed, mode, bt)
            name = f"{mode}_seed{seed}"
            write_jsonl(result.log, out / "logs" / f"{name}.jsonl")
            save_checkpoint(result.params, out / "checkpoints" / f"{name}.ckpt")
            rep = evaluate_on_test(g, splits, result)
            records.append({"mode": mode, "seed": seed, "best_epoch": result.best_epoch, **rep.to_record()})
    write_jsonl(records, out / "runs.jsonl")
    rows = summarize(records)
    write_csv(rows, out / "summary.csv", SUMMARY_FIELDS)
    write_manifest(out, cfg, "train")
    return rows


def build_report(out) -> list[dict]:
    """Summary rows plus percent reductions of the bias measures against mode ``none``.

    Reads ``runs.jsonl`` from a finished ``train`` directory and writes
    ``report.csv`` next to it.
    """
    out = Path(out)
    path = out / "runs.jsonl"
    if not path.is_file():
        raise ValidationError(f"{path} not found; run 'bemap train' first")
    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    rows = summarize(records)
    base = next((r for r in rows if r["mode"] == "none"), None)
    for row in rows:
        for m in ("delta_sp", "delta_eo"):
            red = None
            if base is not None and row[f"{m}_mean"] is not None and base[f"{m}_mean"] is not None:
                try:
                    red = relative_reduction(row[f"{m}_mean"], base[f"{m}_mean"])
                except UndefinedMetricError:
                    red = None
            row[f"{m}_reduction_pct"] = red
        row["acc_drop_pts"] = (None if base is None else 100.0 * (base["acc_mean"] - row["acc_mean"]))
    fields = SUMMARY_FIELDS + ("delta_sp_reduction_pct", "delta_eo_reduction_pct", "acc_drop_pts")
    write_csv(rows, out / "report.csv", fields)
    return rows


PROBE_FIELDS = ("model", "bin", "lo", "hi", "count", "accuracy")


def run_probe(cfg: ExperimentConfig, out) -> dict:
    """Leakage of the sensitive attribute into first-layer embeddings, MLP vs GCN.

    Both models are trained on the labels (sensitive attribute not among
    the inputs); a logistic probe then predicts the sensitive attribute
    from each model's embeddings. Writes ``probe.csv`` (per-bin accuracy,
    empty bins left blank), ``histogram.csv`` (majority-neighbor-ratio
    counts over all nodes), ``probe.json`` and ``manifest.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    g = load_dataset(cfg)
    splits = make_splits(g, cfg.dataset.split, cfg.dataset.split_seed)
    seed = cfg.trainer.seeds[0]
    summary, rows = {}, []
    for name, mlp in (("mlp", True), ("gcn", False)):
        mcfg = _with(cfg, mlp=mlp, epochs=cfg.probe.epochs)
        result = train(g, splits, mcfg, seed, "none")
        emb = extract_embeddings(result.params, result.eval_graphs[0], g.features, cfg.probe.layer)
        res = probe_sensitive_leakage(emb, g.sensitive, g, splits)
        summary[name] = {"accuracy": res.accuracy, "bins": res.bin_records()}
        rows.extend({"model": name, **r} for r in res.bin_records())
    write_csv(rows, out / "probe.csv", PROBE_FIELDS)
    bins = ratio_bins(g, N_BINS)
    hist = np.bincount(bins, minlength=N_BINS)
    write_csv([{"bin": k, "lo": k / N_BINS, "hi": (k + 1) / N_BINS, "count": int(hist[k])} for k in range(N_BINS)],
              out / "histogram.csv", ("bin", "lo", "hi", "count"))
    summary["majority_group"] = int(g.majority_group())
    summary["mean_majority_neighbor_ratio"] = float(majority_neighbor_ratios(g).mean())
    (out / "probe.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, cfg, "probe")
    return summary


def _with(cfg: ExperimentConfig, mlp: bool, epochs: int) -> ExperimentConfig:
    data = cfg.to_dict()
    data["model"]["mlp"] = mlp
    data["trainer"]["epochs"] = epochs
    return config_from_dict(data)


def run_theory(cfg: ExperimentConfig, out=None) -> list[dict]:
    """Run the four theory checks; one record per claim.

    Records carry ``claim``, ``predicted``, ``empirical``, ``tolerance``,
    ``pass`` and a ``details`` object; ``warning`` is set when the sample
    is too small to mean anything.
    """
    tc = cfg.theory
    root = np.random.SeedSequence(tc.seed)
    s_l1, s_t1, s_l3, s_skew = (np.random.default_rng(s) for s in root.spawn(4))
    records = []

    errs = [verify_lemma1(tc.lemma1_n, tc.lemma1_n, tc.lemma1_hops, s_l1) for _ in range(tc.lemma1_instances)]
    records.append({
        "claim": "lemma1_decomposition",
        "predicted": 0.0,
        "empirical": max(errs),
        "tolerance": tc.lemma1_tol,
        "pass": max(errs) <= tc.lemma1_tol,
        "details": {"instances": tc.lemma1_instances, "n": tc.lemma1_n, "hops": tc.lemma1_hops},
    })

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t1 = verify_theorem1(tc.theorem1_n, tc.theorem1_p, tc.dim, tc.theorem1_trials, s_t1)
    rec = {
        "claim": "theorem1_shrinkage",
        "predicted": t1.predicted_ratio,
        "empirical": t1.empirical_ratio,
        "tolerance": tc.theorem1_rel_tol,
        "pass": t1.relative_error <= tc.theorem1_rel_tol and t1.centroid_shift_z <= tc.z_max,
        "details": {"relative_error": t1.relative_error, "centroid_shift_z": t1.centroid_shift_z,
                    "trials": t1.trials, "rejected_graphs": t1.rejected_graphs},
    }
    if caught:
        rec["warning"] = "insufficient samples: " + "; ".join(str(w.message) for w in caught)
    records.append(rec)

    bal = verify_lemma3_theorem2(tc.lemma3_n, tc.lemma3_trials, tc.lemma3_size, s_l3, tc.dim)
    skew = verify_lemma3_theorem2(tc.lemma3_n, tc.lemma3_trials, tc.lemma3_size, s_skew, tc.dim, own_share=0.75)
    records.append({
        "claim": "lemma3_centroid_consistency",
        "predicted": 0.0,
        "empirical": bal.centroid_gap_z,
        "tolerance": tc.z_max,
        "pass": bal.centroid_gap_z <= tc.z_max and bal.group_separation_z <= tc.z_max
        and skew.group_separation_z > tc.z_max,
        "details": {"centroid_gap": bal.centroid_gap, "group_separation_z": bal.group_separation_z,
                    "skewed_centroid_gap": skew.centroid_gap,
                    "skewed_group_separation_z": skew.group_separation_z},
    })
    margin = tc.z_max * bal.shrinkage_se
    records.append({
        "claim": "theorem2_fair_shrinkage",
        "predicted": 1.0,
        "empirical": bal.shrinkage_ratio,
        "tolerance": margin,
        "pass": bal.shrinkage_ratio + margin < 1.0,
        "details": {"bound": "ratio < 1", "neighborhood_size": tc.lemma3_size,
                    "shrinkage_se": bal.shrinkage_se},
    })
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(records, out / "theory.jsonl")
        write_manifest(out, cfg, "theory")
    return records
