"""Command line entry point.

Subcommands: synth, train, sweep, oracle, sensitivity, plot.  Everything is
driven by one JSON config file plus --set key.path=value overrides; the
resolved config is echoed into the output directory so a run is fully
described by one artifact.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import data_io, fusion_oracle, harness
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    InputError,
    NumericalError,
    TrifusionError,
)


def load_config(args) -> harness.ExperimentConfig:
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        harness.set_override(doc, key, raw)
    cfg = harness.ExperimentConfig.from_dict(doc)
    return cfg


def _echo_config(cfg: harness.ExperimentConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    doc = {
        "dims": cfg.dims.__dict__,
        "train": {
            "lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2,
            "adam_eps": cfg.adam_eps, "batch_size": cfg.batch_size,
            "epochs": cfg.epochs, "enabled": cfg.train_enabled,
        },
        "data": {
            "n_scenes": cfg.n_scenes, "train_frac": cfg.train_frac,
            "seed": cfg.data_seed, "split_seed": cfg.split_seed,
        },
        "seeds": {"model": cfg.model_seed, "attack": cfg.attack_seed},
        "sweep": {
            "kind": cfg.kind, "levels": cfg.levels, "pgd_step": cfg.pgd_step,
            "pgd_iters": cfg.pgd_iters, "pgd_step_rule": cfg.pgd_step_rule,
            "clamp_to_range": cfg.clamp_to_range,
        },
        "metrics": {
            "psnr_max_mode": cfg.metric_cfg.psnr_max_mode,
            "psnr_max_value": cfg.metric_cfg.max_value,
        },
        "output_dir": cfg.out_dir,
    }
    with open(os.path.join(cfg.out_dir, "config_resolved.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    scenes = data_io.synth_scenes(cfg.n_scenes, cfg.data_seed, cfg.dims)
    train, test = data_io.split_dataset(list(range(cfg.n_scenes)), cfg.train_frac, cfg.split_seed)
    membership = {i: "train" for i in train}
    membership.update({i: "test" for i in test})
    scene_dir = os.path.join(cfg.out_dir, "scenes")
    os.makedirs(scene_dir, exist_ok=True)
    records = []
    for i, sample in enumerate(scenes):
        rel = os.path.join("scenes", f"scene_{i:04d}.tnsr")
        data_io.save_scene(os.path.join(cfg.out_dir, rel), sample)
        records.append({"path": rel, "split": membership[i]})
    data_io.write_manifest(
        os.path.join(cfg.out_dir, "manifest.json"),
        records,
        meta={"count": cfg.n_scenes, "seed": cfg.data_seed, "split_seed": cfg.split_seed,
              "train_frac": cfg.train_frac},
    )
    print(f"wrote {cfg.n_scenes} scenes and manifest.json under {cfg.out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    train_set, _ = harness.make_dataset(cfg)
    _, losses = harness.train_model(cfg, args.model, train_set)
    print(f"{args.model}: trained {cfg.epochs} epochs, "
          f"loss {losses[0]:.3f} -> {losses[-1]:.3f}; "
          f"checkpoint at {harness.checkpoint_path(cfg, args.model)}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    records, clean, csv_path = harness.run_sweep(cfg)
    print(f"{len(records)} records -> {csv_path}")
    for model in harness.MODEL_IDS:
        print(f"  clean {model}: mse={clean[model][0]:.3f} psnr={clean[model][1]:.3f}")
    return 0


def cmd_oracle(args) -> int:
    p = fusion_oracle.OracleParams(
        sigma_l2=args.sigma_l2, a_norm2=args.a_norm2,
        sigma_p2=args.sigma_p2, b_norm2=args.b_norm2,
    )
    v_x, v_p = fusion_oracle.effective_errors(p)
    alpha_star, err_min = fusion_oracle.optimal_alpha(v_x, v_p)
    lines = ["alpha,error"]
    for i in range(args.steps + 1):
        alpha = i / args.steps
        lines.append(f"{alpha:.6f},{fusion_oracle.error_at_alpha(v_x, v_p, alpha):.6f}")
    lines.append(f"# v_x={v_x:.6f} v_p={v_p:.6f}")
    lines.append(f"# alpha_star={alpha_star:.6f}")
    lines.append(f"# error_min={err_min:.6f}")
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_sensitivity(args) -> int:
    rows = harness.reproduce_table4(args.csv, out_path=args.out)
    if not args.out:
        print("kind,model,s_mse,s_psnr")
        for kind, model, s_mse, s_psnr in rows:
            print(f"{kind},{model},{s_mse:.6f},{s_psnr:.6f}")
    return 0


def cmd_plot(args) -> int:
    rows = harness.read_sweep_csv(args.csv)
    if not rows:
        raise InputError(f"{args.csv} has no data rows")
    records = harness.records_from_rows(rows)
    harness.emit_plot(records, args.metric, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trifusion")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
        return p

    with_config(sub.add_parser("synth", help="generate scenes + manifest")).set_defaults(fn=cmd_synth)

    p = with_config(sub.add_parser("train", help="train one model, write a checkpoint"))
    p.add_argument("--model", choices=list(harness.MODEL_IDS), required=True)
    p.set_defaults(fn=cmd_train)

    with_config(sub.add_parser("sweep", help="run the configured perturbation sweep")).set_defaults(fn=cmd_sweep)

    p = sub.add_parser("oracle", help="tabulate the fusion error model as CSV")
    p.add_argument("--sigma-l2", type=float, default=1.0)
    p.add_argument("--a-norm2", type=float, default=0.0)
    p.add_argument("--sigma-p2", type=float, default=1.0)
    p.add_argument("--b-norm2", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("sensitivity", help="fit metric-vs-level slopes from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("plot", help="render a sweep CSV as an SVG line plot")
    p.add_argument("--csv", required=True)
    p.add_argument("--metric", choices=["mse", "psnr"], default="mse")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (InputError, FormatError, DimensionError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except TrifusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
