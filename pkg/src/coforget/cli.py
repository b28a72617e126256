"""Command-line surface: build datasets, generate/import oracles, run
config-driven experiments, compare runs, and launch sweeps.

Run outputs land under --outdir, the config's run.outdir, or
$COFORGET_RUNS_DIR/run-<confighash>-s<seed> in that order of precedence.
"""

import argparse
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, driver, oracle
from .config import load_config
from .errors import ConfigurationError, IngestionError, InputError, StateError
from .util import fmt_float

logger = logging.getLogger("coforget")

RUNS_DIR_ENV = "COFORGET_RUNS_DIR"


def _parse_pair_map(text: str):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"pair map must be comma-separated class indices, got {text!r}") from None


def cmd_make_data(args) -> int:
    ds = data.make_blobs(
        args.classes, args.per_class, args.dim, args.spread, args.seed,
        test_per_class=args.test_per_class,
    )
    if args.noise == "none":
        transition = np.eye(args.classes)
    elif args.noise == "symmetric":
        transition = data.symmetric_matrix(args.classes, args.eta)
        ds = data.inject_noise(ds, transition, args.noise_seed)
    elif args.noise == "asymmetric":
        if not args.pair_map:
            raise ConfigurationError("--pair-map is required for asymmetric noise")
        transition = data.asymmetric_matrix(args.classes, args.eta, _parse_pair_map(args.pair_map))
        ds = data.inject_noise(ds, transition, args.noise_seed)
    else:
        ds = data.instance_noise(ds, args.eta, args.noise_seed)
        train = ds.train_ids()
        transition = data.empirical_transition(
            ds.true_labels[train], ds.observed_labels[train], ds.n_classes
        ).matrix
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_dataset(ds, out)
    sidecar = {
        "classes": args.classes,
        "per_class": args.per_class,
        "test_per_class": args.test_per_class,
        "dim": args.dim,
        "spread": args.spread,
        "seed": args.seed,
        "noise": {"kind": args.noise, "eta": args.eta, "seed": args.noise_seed},
        "transition_matrix": [[float(v) for v in row] for row in transition],
    }
    out.with_suffix(out.suffix + ".manifest.json").write_text(
        json.dumps(sidecar, indent=2) + "\n"
    )
    print(f"wrote {out} ({ds.n} samples, {ds.n_classes} classes)")
    return 0


def cmd_make_oracle(args) -> int:
    ds = data.load_dataset(args.data)
    table = oracle.synthetic_oracle(ds, args.accuracy, args.confidence, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    oracle.save_oracle_file(table, out)
    train = ds.train_ids()
    acc = float((table.argmax()[train] == ds.true_labels[train]).mean())
    print(f"wrote {out} (empirical train accuracy {acc:.4f})")
    return 0


def _resolve_outdir(args, cfg) -> Path:
    if args.outdir:
        return Path(args.outdir)
    if cfg.run.outdir:
        return Path(cfg.run.outdir)
    root = os.environ.get(RUNS_DIR_ENV, "runs")
    return Path(root) / f"run-{cfg.config_hash()}-s{cfg.run.seed}"


def cmd_train(args) -> int:
    cfg = load_config(args.config, overrides=args.override)
    out_dir = _resolve_outdir(args, cfg)
    result = driver.run(cfg, out_dir)
    print(f"run complete: {out_dir}")
    for key in ("acc_scratch", "acc_embed", "acc_ens"):
        print(
            f"  {key}: best {fmt_float(result.best[key])}, "
            f"last(10) {fmt_float(result.last[key])}"
        )
    return 0


def _parse_window(text):
    if text is None:
        return None
    try:
        lo, hi = (int(v) for v in text.split(":"))
        return lo, hi
    except ValueError:
        raise ConfigurationError(f"--window must look like START:END, got {text!r}") from None


def cmd_report(args) -> int:
    summary = report_module().write_report(
        args.run_dirs, args.out, window=_parse_window(args.window)
    )
    width = max(len(r) for r in summary)
    print(f"{'run':<{width}}  best_scr  last_scr  best_emb  last_emb  best_ens  last_ens")
    for run_id, bl in summary.items():
        print(
            f"{run_id:<{width}}  "
            f"{bl['best_acc_scratch']:.4f}    {bl['last_acc_scratch']:.4f}    "
            f"{bl['best_acc_embed']:.4f}    {bl['last_acc_embed']:.4f}    "
            f"{bl['best_acc_ens']:.4f}    {bl['last_acc_ens']:.4f}"
        )
    print(f"report files under {args.out}")
    return 0


def report_module():
    from . import report

    return report


def cmd_sweep(args) -> int:
    """Run the cartesian product of --set values as independent processes."""
    axes = []
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set {item!r} must look like section.key=v1,v2,...")
        key, values = item.split("=", 1)
        axes.append((key.strip(), values.split(",")))
    combos = [[]]
    for key, values in axes:
        combos = [prev + [(key, v)] for prev in combos for v in values]
    out_root = Path(args.outdir)
    out_root.mkdir(parents=True, exist_ok=True)
    failures = 0
    for idx, combo in enumerate(combos):
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in combo) or f"run{idx}"
        run_dir = out_root / label
        cmd = [
            sys.executable, "-m", "coforget", "train",
            "--config", args.config, "--outdir", str(run_dir),
        ]
        for k, v in combo:
            cmd += ["--override", f"{k}={v}"]
        print(f"[sweep {idx + 1}/{len(combos)}] {label}")
        proc = subprocess.run(cmd)
        if proc.returncode != 0:
            failures += 1
            logger.warning("sweep member %s exited with %d", label, proc.returncode)
    if failures:
        print(f"{failures} of {len(combos)} sweep members failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coforget",
        description="Noisy-label co-teaching with selective unlearning, desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"coforget {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a blob dataset with injected label noise")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=["none", "symmetric", "asymmetric", "instance"],
                   default="symmetric")
    p.add_argument("--eta", type=float, default=0.4)
    p.add_argument("--pair-map", default="", help="comma-separated target class per class")
    p.add_argument("--noise-seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_data)

    p = sub.add_parser("make-oracle", help="emit a synthetic zero-shot oracle file for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--accuracy", type=float, default=0.7)
    p.add_argument("--confidence", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_oracle)

    p = sub.add_parser("train", help="run one experiment from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[],
                   help="section.key=value (bare seed=N targets run.seed); repeatable")
    p.add_argument("--outdir", default="")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("report", help="summarize one or more completed run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report")
    p.add_argument("--window", default=None,
                   help="epoch window START:END for selection-quality tallies")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("sweep", help="run a config across a grid of overrides, one process each")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[],
                   help="section.key=v1,v2,... sweep axis; repeatable")
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, InputError, IngestionError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
