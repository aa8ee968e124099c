"""Command-line entry point: ``metassd {gen,meta-train,eval,ablate,baseline}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .channel import save_task_set
from .harness import ExperimentConfig


def _int_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        if sep and lo:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _common(p: argparse.ArgumentParser):
    prof = p.add_mutually_exclusive_group()
    prof.add_argument("--reduced", dest="profile", action="store_const", const="reduced",
                      help="desk-scale profile (default)")
    prof.add_argument("--paper", dest="profile", action="store_const", const="paper",
                      help="full-scale profile from the original experiments")
    p.add_argument("--config", type=Path, help="TOML file with ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", choices=harness.SCENARIOS)
    p.add_argument("--sigma-n-sq", type=float)
    p.add_argument("--snr-grid", type=_int_list, help="e.g. 0-15 or 0,4,8,12")
    p.add_argument("--tasks-per-snr", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--meta-iters", type=int)
    p.add_argument("--meta-tasks", type=int, help="meta-training set size T")
    p.add_argument("--workers", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_time_s as 0 so reruns are byte-identical")
    p.add_argument("--no-resume", action="store_true", help="ignore cached result cells")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metassd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate and save task sets")
    _common(g)

    t = sub.add_parser("meta-train", help="meta-train (or naive-train) a detector")
    _common(t)
    t.add_argument("--variant", choices=harness.VARIANTS, default="meta")
    t.add_argument("--tasks", type=Path, help="task-set file (default: regenerate from seed)")
    t.add_argument("--log", type=Path, help="progress log (JSON lines); default stderr")

    e = sub.add_parser("eval", help="SNR sweep over the configured methods")
    _common(e)
    e.add_argument("--methods", type=lambda s: tuple(s.split(",")))

    a = sub.add_parser("ablate", help="paired ablation study")
    _common(a)
    a.add_argument("kind", choices=sorted(harness.ABLATIONS))

    b = sub.add_parser("baseline", help="sweep a single classical baseline")
    _common(b)
    b.add_argument("name", choices=("bcjr", "mmse"))
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = harness.full_profile() if args.profile == "paper" else harness.reduced_profile()
    cfg = harness.load_config(args.config, base) if args.config else base
    direct = {"seed": "seed", "scenario": "scenario", "sigma_n_sq": "sigma_n_sq",
              "snr_grid": "snr_grid", "tasks_per_snr": "tasks_per_snr", "K": "K", "N": "N",
              "workers": "workers", "data_dir": "data_dir", "checkpoint_dir": "checkpoint_dir",
              "out": "out"}
    upd = {dst: getattr(args, src) for src, dst in direct.items()
           if getattr(args, src, None) is not None}
    if getattr(args, "methods", None):
        upd["methods"] = args.methods
    if args.no_timing:
        upd["record_timing"] = False
    meta_upd = {}
    if args.meta_iters is not None:
        meta_upd["max_meta_iters"] = args.meta_iters
    if args.meta_tasks is not None:
        meta_upd["T"] = args.meta_tasks
        meta_upd["val_task_count"] = min(cfg.meta.val_task_count, args.meta_tasks // 5)
    if args.K is not None:
        meta_upd["K"] = args.K
    if meta_upd:
        upd["meta"] = replace(cfg.meta, **meta_upd)
    return replace(cfg, **upd)


def cmd_gen(cfg: ExperimentConfig) -> int:
    out = Path(cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = harness.training_tasks(cfg)
    save_task_set(train, out / f"train-{cfg.scenario}.mssd", cfg.task_config(None), cfg.seed)
    for snr in cfg.snr_grid:
        tasks = harness.test_tasks(cfg, snr)
        save_task_set(tasks, out / f"test-{cfg.scenario}-snr{snr:02d}.mssd",
                      cfg.task_config(snr), cfg.seed)
    print(f"wrote {len(train)} training tasks and {len(cfg.snr_grid)} test sets to {out}")
    return 0


def cmd_meta_train(cfg: ExperimentConfig, args) -> int:
    from .channel import load_task_set
    tasks = load_task_set(args.tasks) if args.tasks else None
    sink = open(args.log, "w") if args.log else sys.stderr
    try:
        def progress(event):
            print(json.dumps(event, sort_keys=True), file=sink, flush=True)
        ckpt = harness.train_variant(cfg, args.variant, tasks, progress=progress)
    finally:
        if args.log:
            sink.close()
    path = harness.checkpoint_path(cfg, args.variant)
    print(f"saved {path} (best validation SER {ckpt.meta['best_val_ser']})")
    return 0


def _report(records, cfg: ExperimentConfig) -> int:
    harness.emit_csv(records, cfg.out)
    harness.save_config(cfg, harness.config_sidecar(cfg.out))
    for r in records:
        print(f"{r.method:24s} {r.scenario:8s} {r.snr_db:3d} dB  SER {r.ser_mean:.5f} "
              f"± {r.ser_stderr:.5f}")
    print(f"wrote {len(records)} records to {cfg.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "meta-train":
            return cmd_meta_train(cfg, args)
        resume = not args.no_resume
        if args.command == "eval":
            return _report(harness.run_sweep(cfg, resume), cfg)
        if args.command == "ablate":
            return _report(harness.run_ablation(args.kind, cfg, resume),
                           harness.ablation_config(args.kind, cfg))
        if args.command == "baseline":
            return _report(harness.run_sweep(replace(cfg, methods=(args.name,)), resume), cfg)
    except (FileNotFoundError, ValueError, OSError) as e:
        print(f"metassd: error: {e}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
