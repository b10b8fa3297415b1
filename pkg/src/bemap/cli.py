"""Command-line entry point: ``bemap {train,probe,theory,report}``.

Exit codes: 0 success, 1 invalid input (config, data, arguments), 2 a
theory check failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig, config_from_dict, load_config
from .errors import BemapError
from .experiment import build_report, run_experiment, run_probe, run_theory

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bemap", description="Balance-aware neighbor sampling for fair GCNs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train every sampler mode over all seeds and summarize test metrics",
        "probe": "measure sensitive-attribute leakage of MLP vs GCN embeddings",
        "theory": "run the Monte-Carlo checks of the bias-residual claims",
        "report": "add relative bias reductions to a finished train directory",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides 'outputs' in the config)")
        if name != "report":
            p.add_argument("--seed", type=int, help="run this single seed instead of trainer.seeds")
        if name == "train":
            p.add_argument("--sampler", choices=("bemap", "uniform", "degree", "none"),
                           help="run this single sampler mode instead of sampler.modes")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        data["trainer"]["seeds"] = [args.seed]
        data["theory"]["seed"] = args.seed
    if getattr(args, "sampler", None) is not None:
        data["sampler"]["modes"] = [args.sampler]
    if args.out is not None:
        data["outputs"] = args.out
    return config_from_dict(data)


def _print_rows(rows, fields):
    print("\t".join(fields))
    for r in rows:
        print("\t".join("" if r.get(f) is None else (f"{r[f]:.4f}" if isinstance(r[f], float) else str(r[f]))
                        for f in fields))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse signals usage errors with 2, which is reserved for failed checks
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "train":
            rows = run_experiment(cfg, cfg.outputs)
            _print_rows(rows, ("mode", "acc_mean", "auc_mean", "delta_sp_mean", "delta_eo_mean"))
        elif args.command == "probe":
            summary = run_probe(cfg, cfg.outputs)
            print(f"probe accuracy: mlp {summary['mlp']['accuracy']:.4f}  gcn {summary['gcn']['accuracy']:.4f}")
        elif args.command == "theory":
            records = run_theory(cfg, cfg.outputs)
            for r in records:
                status = "PASS" if r["pass"] else "FAIL"
                note = f"  [{r['warning']}]" if "warning" in r else ""
                print(f"{status} {r['claim']}: empirical={r['empirical']:.6g} "
                      f"predicted={r['predicted']:.6g} tolerance={r['tolerance']:.3g}{note}")
            if not all(r["pass"] for r in records):
                return EXIT_CHECK_FAILED
        elif args.command == "report":
            rows = build_report(cfg.outputs)
            _print_rows(rows, ("mode", "delta_sp_reduction_pct", "delta_eo_reduction_pct", "acc_drop_pts"))
    except BemapError as exc:
        print(f"bemap: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
