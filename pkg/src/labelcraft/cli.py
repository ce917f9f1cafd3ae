"""Command-line experiment surface.

Subcommands: generate, train, evaluate, compare, sweep, ablate. Every run
writes into a fresh timestamped subdirectory of --out together with a
manifest (config hash, seed, versions); reruns never append to old output.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .config import ABLATION_VARIANTS, ConfigError, apply_variant, config_hash, load_config
from .data import save_interactions
from .evaluation import (
    evaluate,
    write_comparison_csv,
    write_histogram_csv,
    write_metrics_json,
)
from .experiment import METHODS, build_records, prepare_bundle, run_method
from .features import EncodedDataset, EncoderConfig, FeatureEncoder
from .models import ModelSpec, RecommenderModel
from .objectives import ScaleParams, scale_values
from .params import load_checkpoint, save_checkpoint

DEFAULT_TAU_GRID = [round(0.1 * i, 1) for i in range(11)]  # 0, 0.1, ..., 1.0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        run_dir = args.func(args)
        print(run_dir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelcraft", description=__doc__)
    parser.add_argument("--version", action="version", version=f"labelcraft {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs", help="output base directory")
        p.add_argument("--k", type=int, default=None, help="override eval/objective top-k")

    p = sub.add_parser("generate", help="write a synthetic interaction CSV")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one method and save checkpoints + history")
    common(p)
    p.add_argument("--method", default="labelcraft", help=f"one of {METHODS}")
    p.add_argument("--variant", default=None, help=f"ablation variant, one of {sorted(ABLATION_VARIANTS)}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint on the test days")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train several methods and emit a comparison table")
    common(p)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--method", default="labelcraft", help="reference method for RI columns")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="train labelcraft across a tau grid")
    common(p)
    p.add_argument("--grid", default=",".join(str(t) for t in DEFAULT_TAU_GRID))
    p.add_argument("--baselines", default="", help="optional baseline list for reference lines")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train one labelcraft ablation variant and evaluate")
    common(p)
    p.add_argument("--variant", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


# -- helpers -------------------------------------------------------------------


def _fresh_run_dir(base: str, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    root = Path(base)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(10000):
        suffix = f"-{i}" if i else ""
        candidate = root / f"{command}-{stamp}-{os.getpid()}{suffix}"
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            continue
    raise RuntimeError("could not allocate a fresh run directory")


def _load(args, command: str) -> tuple[dict, Path]:
    cfg = load_config(args.config)
    if args.k is not None:
        cfg["eval"]["k"] = args.k
        cfg["objective"]["k"] = args.k
    run_dir = _fresh_run_dir(args.out, command)
    return cfg, run_dir


def _write_manifest(run_dir: Path, cfg: dict, args, extra: dict | None = None) -> None:
    manifest = {
        "command": args.command,
        "config_hash": config_hash(cfg),
        "seed": args.seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "kernel_backend": BACKEND,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest.update(extra or {})
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(run_dir / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_history(path: Path, result) -> None:
    with open(path, "w") as fh:
        for row in result.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_metrics_csv(path: Path, report) -> None:
    k = report.k
    with open(path, "w", newline="") as fh:
        fh.write(f"method,k,nwtg@{k},ds@{k},neg@{k},users_total,users_nwtg,users_neg,users_short\n")
        fh.write(
            f"{report.method},{k},{report.nwtg:.6f},{report.ds:.6f},{report.neg:.6f},"
            f"{report.users_total},{report.users_nwtg},{report.users_neg},{report.users_short}\n"
        )


def _scale_to_dict(s: ScaleParams) -> dict:
    return {
        "v_max": s.v_max,
        "v_beta": s.v_beta,
        "beta": s.beta,
        "beta_prime": s.beta_prime,
        "fitted_on": s.fitted_on,
        "mode": s.mode,
    }


def _report_files(run_dir: Path, report) -> None:
    write_metrics_json(run_dir / f"metrics-{report.method}.json", report)
    _write_metrics_csv(run_dir / f"metrics-{report.method}.csv", report)
    write_histogram_csv(
        run_dir / f"histogram-{report.method}.csv", report.histogram_edges, report.histogram_counts
    )


# -- commands --------------------------------------------------------------------


def cmd_generate(args) -> Path:
    cfg, run_dir = _load(args, "generate")
    records = build_records(cfg, args.seed)
    save_interactions(run_dir / "data.csv", records)
    _write_manifest(run_dir, cfg, args, {"records": len(records)})
    return run_dir


def cmd_train(args) -> Path:
    cfg, run_dir = _load(args, "train")
    variant = getattr(args, "variant", None)
    if variant and args.method != "labelcraft":
        raise ConfigError("ablation variants apply to the labelcraft method only")
    cfg = apply_variant(cfg, variant)
    bundle = prepare_bundle(cfg, args.seed)
    run = run_method(cfg, bundle, args.method)

    rec_spec, _ = _spec_meta(cfg, bundle)
    meta = {
        "method": run.method,
        "variant": variant or "",
        "spec": rec_spec,
        "encoder": {
            "user_hash_size": bundle.encoder.cfg.user_hash_size,
            "item_hash_size": bundle.encoder.cfg.item_hash_size,
            "history_length": bundle.encoder.cfg.history_length,
        },
        "scalers": {
            "watch": _scale_to_dict(bundle.watch_scale),
            "duration": _scale_to_dict(bundle.duration_scale),
        },
    }
    save_checkpoint(run_dir / "recommender.ckpt", run.result.theta, meta)
    if run.method == "labelcraft":
        save_checkpoint(run_dir / "labeling.ckpt", run.result.phi, {"method": "labelcraft-labeler"})
    _write_history(run_dir / "history.jsonl", run.result)
    if run.rule_params is not None:
        with open(run_dir / "rule.json", "w") as fh:
            json.dump(run.rule_params, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _report_files(run_dir, run.report)
    _write_manifest(
        run_dir, cfg, args, {"method": run.method, "variant": variant or "", "best_epoch": run.result.best_epoch}
    )
    return run_dir


def cmd_evaluate(args) -> Path:
    cfg, run_dir = _load(args, "evaluate")
    params, meta = load_checkpoint(args.checkpoint)
    if "spec" not in meta:
        raise ConfigError(f"{args.checkpoint}: checkpoint lacks the model spec metadata")
    spec = ModelSpec(**{**meta["spec"], "hidden": tuple(meta["spec"]["hidden"])})
    model = RecommenderModel(spec, params)

    records = build_records(cfg, args.seed)
    sp = cfg["split"]
    from .data import chronological_split

    split = chronological_split(records, sp["train_days"], sp["val_days"], sp["test_days"])
    enc = meta["encoder"]
    encoder = FeatureEncoder(EncoderConfig(**enc))
    test_set = EncodedDataset(split.test, encoder, context=split.train + split.validation)
    duration_scale = ScaleParams(**meta["scalers"]["duration"])
    watch_scale = ScaleParams(**meta["scalers"]["watch"])
    test_set.attach_scales(
        scale_values(duration_scale, test_set.duration), scale_values(watch_scale, test_set.watch_time)
    )
    report = evaluate(
        model,
        test_set,
        k=cfg["eval"]["k"],
        method=meta.get("method", "unknown"),
        histogram_bins=cfg["eval"]["histogram_bins"],
    )
    _report_files(run_dir, report)
    _write_manifest(run_dir, cfg, args, {"checkpoint": str(args.checkpoint), "method": report.method})
    return run_dir


def cmd_compare(args) -> Path:
    cfg, run_dir = _load(args, "compare")
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("no methods given")
    reference = args.method.lower()
    if reference not in methods:
        raise ConfigError(f"reference method {reference!r} is not in --methods")
    bundle = prepare_bundle(cfg, args.seed)
    reports = []
    for method in methods:
        run = run_method(cfg, bundle, method)
        reports.append(run.report)
        _report_files(run_dir, run.report)
    write_comparison_csv(run_dir / "comparison.csv", reports, reference)
    _write_manifest(run_dir, cfg, args, {"methods": methods, "reference": reference})
    return run_dir


def cmd_sweep(args) -> Path:
    cfg, run_dir = _load(args, "sweep")
    try:
        grid = [float(t) for t in args.grid.split(",") if t.strip() != ""]
    except ValueError:
        raise ConfigError(f"invalid tau grid {args.grid!r}") from None
    if not grid:
        raise ConfigError("tau grid is empty")
    bundle = prepare_bundle(cfg, args.seed)

    rows = []
    for tau in grid:
        tau_cfg = json.loads(json.dumps(cfg))
        tau_cfg["objective"]["tau"] = tau
        run = run_method(tau_cfg, bundle, "labelcraft")
        rows.append((tau, run.report))
    k = cfg["eval"]["k"]
    with open(run_dir / "sweep.csv", "w", newline="") as fh:
        fh.write(f"tau,nwtg@{k},neg@{k},ds@{k}\n")
        for tau, report in rows:
            fh.write(f"{tau},{report.nwtg:.6f},{report.neg:.6f},{report.ds:.6f}\n")

    baselines = [m.strip().lower() for m in args.baselines.split(",") if m.strip()]
    if baselines:
        reports = [run_method(cfg, bundle, m).report for m in baselines]
        best = {
            "nwtg": max(reports, key=lambda r: r.nwtg),
            "neg": max(reports, key=lambda r: r.neg),
            "ds": max(reports, key=lambda r: r.ds),
        }
        with open(run_dir / "best_baseline.csv", "w", newline="") as fh:
            fh.write("metric,method,value\n")
            for metric, report in best.items():
                fh.write(f"{metric},{report.method},{getattr(report, metric):.6f}\n")
    _write_manifest(run_dir, cfg, args, {"grid": grid, "baselines": baselines})
    return run_dir


def cmd_ablate(args) -> Path:
    cfg, run_dir = _load(args, "ablate")
    cfg = apply_variant(cfg, args.variant)
    bundle = prepare_bundle(cfg, args.seed)
    run = run_method(cfg, bundle, "labelcraft")
    _write_history(run_dir / "history.jsonl", run.result)
    _report_files(run_dir, run.report)
    _write_manifest(run_dir, cfg, args, {"variant": args.variant, "best_epoch": run.result.best_epoch})
    return run_dir


def _spec_meta(cfg: dict, bundle) -> tuple[dict, dict]:
    from .experiment import _model_specs

    rec_spec, lab_spec = _model_specs(cfg, bundle)
    def to_dict(s: ModelSpec) -> dict:
        return {
            "user_vocab": s.user_vocab,
            "item_vocab": s.item_vocab,
            "embed_dim": s.embed_dim,
            "n_numeric": s.n_numeric,
            "hidden": list(s.hidden),
            "use_history": s.use_history,
            "sigmoid_head": s.sigmoid_head,
        }
    return to_dict(rec_spec), to_dict(lab_spec)


if __name__ == "__main__":
    sys.exit(main())
