"""Command-line pipeline: prepare | train | eval | spectral.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure. Every
command is reproducible from its recorded config and seed; run directories
are append-only (existing outputs are never overwritten).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, NumericalError
from .evaluation import evaluate, frequency_bias_report, naive_baselines
from .model import (
    ABLATIONS,
    ModelConfig,
    ModelParams,
    ablate,
    load_checkpoint,
    save_checkpoint,
)
from .patching import PatchPlan, plan_patches_dataset
from .spectral import interp_distortion_report
from .svg import line_chart
from .train import TrainConfig, default_learning_rate, fit


def _seed_override(seed: int) -> int:
    env = os.environ.get("CTF_SEED")
    return int(env) if env else seed


def cmd_prepare(args) -> int:
    manifest = D.load_manifest(args.manifest)
    ds = D.dataset_from_manifest(manifest, Path(args.manifest).parent)
    out = Path(args.out_dir)
    if (out / "dataset.json").exists():
        raise ConfigError(f"{out}: dataset.json already exists (run dirs are append-only)")
    D.save_dataset_dir(ds, out)
    window = manifest.get("window", {})
    if "input_length" in window:
        plan, peaks = plan_patches_dataset(ds, int(window["input_length"]))
        preview = json.loads(plan.to_json())
        preview["dominant_bins"] = peaks
        preview["input_length"] = int(window["input_length"])
        (out / "patch_plan.json").write_text(
            json.dumps(preview, indent=2, sort_keys=True) + "\n"
        )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for split in args.dump_split or []:
        D.dump_split_csv(ds, split, out / f"{split}.csv")
    print(f"prepared dataset {ds.name!r}: {ds.n_channels} channels, "
          f"{ds.base_len} fine steps -> {out}")
    return 0


def _load_train_configs(args) -> tuple[ModelConfig, TrainConfig, list]:
    blob = {}
    if args.config:
        try:
            blob = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {args.config}: line {exc.lineno}: {exc.msg}")
    model_blob = dict(blob.get("model", {}))
    train_blob = dict(blob.get("train", {}))
    if "input_len" not in model_blob or "horizon" not in model_blob:
        raise ConfigError("config must set model.input_len and model.horizon")
    if args.mask_strategy:
        model_blob["mask_strategy"] = args.mask_strategy
    if args.channel_tokens:
        model_blob["channel_tokens"] = args.channel_tokens
    if args.dropout_ratio is not None:
        model_blob["dropout_ratio"] = args.dropout_ratio
    if "learning_rate" not in train_blob and "style" in blob:
        train_blob["learning_rate"] = default_learning_rate(blob["style"])
    if args.seed is not None:
        train_blob["rng_seed"] = args.seed
    train_blob["rng_seed"] = _seed_override(train_blob.get("rng_seed", 0))
    model_config = ModelConfig.from_dict(model_blob)
    ablations = list(args.ablate or [])
    for toggle in ablations:
        model_config = ablate(model_config, toggle)
    return model_config, TrainConfig(**train_blob), ablations


def cmd_train(args) -> int:
    ds = D.load_dataset_dir(args.dataset_dir)
    model_config, train_config, ablations = _load_train_configs(args)
    run_dir = Path(args.run_dir)
    if (run_dir / "checkpoint.bin").exists():
        raise ConfigError(f"{run_dir}: checkpoint.bin already exists (run dirs are append-only)")
    run_dir.mkdir(parents=True, exist_ok=True)
    result = fit(ds, model_config, train_config)
    record = {
        "dataset_dir": str(args.dataset_dir),
        "dataset": ds.name,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "ablations": ablations,
        "best_epoch": result.best_epoch,
        "best_val_cmse": result.best_val,
        "diverged": result.diverged,
    }
    (run_dir / "config.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    (run_dir / "patch_plan.json").write_text(result.plan.to_json() + "\n")
    lines = ["epoch,train_cmse,val_cmse"]
    lines += [f"{h['epoch']},{h['train_cmse']!r},{h['val_cmse']!r}" for h in result.history]
    (run_dir / "history.csv").write_text("\n".join(lines) + "\n")
    save_checkpoint(result.params, run_dir / "checkpoint.bin")
    print(f"{'epoch':>5} {'train_cmse':>12} {'val_cmse':>12}")
    for h in result.history:
        print(f"{h['epoch']:>5} {h['train_cmse']:>12.6f} {h['val_cmse']:>12.6f}")
    if result.diverged:
        print(f"training aborted: {result.message}; best checkpoint kept", file=sys.stderr)
        return 3
    print(f"best epoch {result.best_epoch} (val CMSE {result.best_val:.6f}) -> {run_dir}")
    return 0


def _load_run(run_dir: Path):
    record = json.loads((run_dir / "config.json").read_text())
    model_config = ModelConfig.from_dict(record["model"])
    plan = PatchPlan.from_json((run_dir / "patch_plan.json").read_text())
    ds = D.load_dataset_dir(record["dataset_dir"])
    params = ModelParams(model_config, plan, ds.factors, seed=0)
    load_checkpoint(params, run_dir / "checkpoint.bin")
    return ds, params, model_config, record


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    ds, params, model_config, record = _load_run(run_dir)
    seed = _seed_override(args.seed if args.seed is not None else 0)
    ratios = args.missing_ratio if args.missing_ratio else [0.0]
    if args.input_length is not None and args.input_length % ds.max_factor:
        raise ConfigError(
            f"--input-length must be a multiple of {ds.max_factor}, got {args.input_length}"
        )
    baselines = naive_baselines(ds, model_config.input_len, model_config.horizon)
    for ratio in ratios:
        report = evaluate(
            ds,
            params,
            model_config,
            missing_ratio=ratio,
            protocol=args.protocol,
            seed=seed,
            input_len=args.input_length,
            collect_forecasts=True,
        )
        forecasts = report.pop("forecasts")
        freq = frequency_bias_report(forecasts, [c.name for c in ds.channels])
        report["frequency_bias"] = freq
        report["baselines"] = baselines
        tag = f"m{ratio:g}_{args.protocol}_L{report['input_len']}"
        out = run_dir / f"eval_{tag}"
        if out.exists():
            raise ConfigError(f"{out}: already exists (run dirs are append-only)")
        out.mkdir(parents=True)
        windows = report.pop("windows")
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        lines = ["origin,cmse,cmae"]
        lines += [f"{r['origin']},{r['cmse']!r},{r['cmae']!r}" for r in windows]
        (out / "per_window.csv").write_text("\n".join(lines) + "\n")
        plots = out / "plots"
        plots.mkdir()
        preds, targets = forecasts[len(forecasts) // 2]
        for i, c in enumerate(ds.channels):
            line_chart(
                [("truth", targets[i]), ("forecast", preds[i])],
                plots / f"{c.name}.svg",
                title=f"{ds.name}/{c.name} ({report['scenario']})",
            )
        print(
            f"m={ratio:<6g} CMSE {report['cmse']:.6f}  CMAE {report['cmae']:.6f}  "
            f"(mean baseline {baselines['mean']['cmse']:.6f}, "
            f"persistence {baselines['persistence']['cmse']:.6f}) -> {out}"
        )
    return 0


def cmd_spectral(args) -> int:
    ds = D.load_dataset_dir(args.dataset_dir)
    names = [c.name for c in ds.channels]
    if args.channel not in names:
        raise ConfigError(f"unknown channel {args.channel!r}; dataset has {names}")
    idx = names.index(args.channel)
    values = ds.values[idx]
    limit = args.max_points
    if limit and values.size > limit:
        values = values[:limit]
    if args.factor > 1 and values.size % args.factor:
        values = values[: values.size - values.size % args.factor]
    if values.size == 0:
        raise ConfigError(f"channel {args.channel!r} has no points")
    report = interp_distortion_report(values, args.factor)
    out = Path(args.out_dir) if args.out_dir else Path(args.dataset_dir) / f"spectral_{args.channel}_r{args.factor}"
    if out.exists():
        raise ConfigError(f"{out}: already exists (run dirs are append-only)")
    out.mkdir(parents=True)
    freqs = report.original.frequencies()
    lines = ["bin,frequency,attenuation,phase_delay"]
    for k in range(freqs.size):
        lines.append(
            f"{k},{float(freqs[k])!r},{float(report.attenuation[k])!r},"
            f"{float(report.phase_delay[k])!r}"
        )
    (out / "distortion.csv").write_text("\n".join(lines) + "\n")
    line_chart(
        [("attenuation", report.attenuation)],
        out / "attenuation.svg",
        title=f"{args.channel}: |interp|/|orig| at r={args.factor}",
    )
    line_chart(
        [("phase delay", report.phase_delay)],
        out / "phase_delay.svg",
        title=f"{args.channel}: phase delay (rad) at r={args.factor}",
    )
    finite = report.attenuation[np.isfinite(report.attenuation)]
    print(
        f"channel {args.channel} r={args.factor}: median attenuation "
        f"{np.median(finite):.4f} over {finite.size} bins -> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctformer",
        description="Forecasting for asynchronously sampled multivariate series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a dataset directory from a manifest")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--dump-split", action="append", choices=("train", "val", "test"),
                   default=None, help="also write this split in the fine-grid CSV format")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--config", required=True, help="JSON with model/train sections")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--mask-strategy", default=None)
    p.add_argument("--channel-tokens", type=int, default=None)
    p.add_argument("--dropout-ratio", type=float, default=None)
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on the test split")
    p.add_argument("run_dir")
    p.add_argument("--missing-ratio", action="append", type=float, default=None)
    p.add_argument("--protocol", choices=("patch_aligned", "short_range"), default="patch_aligned")
    p.add_argument("--input-length", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectral", help="interpolation-distortion report for one channel")
    p.add_argument("dataset_dir")
    p.add_argument("--channel", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--max-points", type=int, default=4096)
    p.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
