"""The three paired ablations (meta-learning, self-supervision, temperature).

Trains the checkpoints each study needs, runs it on the configured SNR grid and
prints paired differences against the first method of the study.

    python scripts/run_ablations.py --snr-grid 4 10 --out-dir runs/ablate
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from metassd import harness

NEEDS = {"meta": ("meta", "naive"), "ssl": ("meta", "no_ssl"), "temp": ("meta", "no_temp")}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("kinds", nargs="*", default=sorted(harness.ABLATIONS))
    ap.add_argument("--paper", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr-grid", type=int, nargs="+", default=[4, 10])
    ap.add_argument("--out-dir", type=Path, default=Path("runs/ablate"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = harness.full_profile() if args.paper else harness.reduced_profile()
    base = replace(base, seed=args.seed, snr_grid=tuple(args.snr_grid),
                   data_dir=str(args.out_dir / "data"),
                   checkpoint_dir=str(args.out_dir / "checkpoints"))
    for kind in args.kinds:
        cfg = harness.ablation_config(kind, base)
        for variant in NEEDS[kind]:
            if not harness.checkpoint_path(cfg, variant).exists():
                logging.info("training %s-%s", variant, cfg.scenario)
                harness.train_variant(cfg, variant)
        records = harness.run_ablation(kind, cfg)
        out = args.out_dir / f"ablate-{kind}.csv"
        harness.emit_csv(records, out)
        harness.save_config(cfg, harness.config_sidecar(out))
        for snr in cfg.snr_grid:
            at = [r for r in records if r.snr_db == snr]
            ref = at[0]
            for r in at[1:]:
                mean, se = harness.paired_difference(ref, r)
                print(f"{kind:5s} {snr:3d} dB  {ref.method} - {r.method}: {mean:+.5f} (se {se:.5f})")


if __name__ == "__main__":
    main()
