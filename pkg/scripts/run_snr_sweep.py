"""SER-vs-SNR curves for MetaSSD and the classical baselines, both CSI scenarios.

Trains any missing MetaSSD checkpoint first, then writes one CSV per scenario
plus a combined ``sweep-all.csv``.

    python scripts/run_snr_sweep.py --out-dir runs/sweep            # reduced profile
    python scripts/run_snr_sweep.py --paper --workers 8 --out-dir runs/paper
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from metassd import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paper", action="store_true", help="full-scale profile")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/sweep"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = harness.full_profile() if args.paper else harness.reduced_profile()
    base = replace(base, seed=args.seed, workers=args.workers,
                   methods=("metassd", "bcjr", "mmse"),
                   data_dir=str(args.out_dir / "data"),
                   checkpoint_dir=str(args.out_dir / "checkpoints"))
    everything = []
    for scenario in harness.SCENARIOS:
        cfg = replace(base, scenario=scenario, out=str(args.out_dir / f"sweep-{scenario}.csv"))
        if not harness.checkpoint_path(cfg, "meta").exists():
            logging.info("meta-training %s checkpoint", scenario)
            harness.train_variant(cfg, "meta", progress=lambda e: logging.info("%s", e))
        records = harness.run_sweep(cfg, progress=lambda r: logging.info(
            "%s %s %d dB: %.5f", r.method, r.scenario, r.snr_db, r.ser_mean))
        harness.emit_csv(records, cfg.out)
        harness.save_config(cfg, harness.config_sidecar(cfg.out))
        everything += records
    harness.emit_csv(everything, args.out_dir / "sweep-all.csv")


if __name__ == "__main__":
    main()
