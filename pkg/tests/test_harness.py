from dataclasses import replace

import numpy as np
import pytest

from metassd import channel, harness, meta, nn
from metassd.cli import main
from metassd.harness import ResultRecord


def tiny(tmp_path, **kw):
    mc = meta.MetaConfig(T=20, B=4, K=2, lam=3e-3, eta=1e-4, alpha=0.05,
                         max_meta_iters=4, val_every=2, val_task_count=4)
    base = harness.reduced_profile(N=120, P=20, hidden_dims=(8,), tasks_per_snr=4,
                                   snr_grid=(4, 10), meta=mc, data_dir=str(tmp_path / "data"),
                                   checkpoint_dir=str(tmp_path / "ck"),
                                   out=str(tmp_path / "res.csv"), K=2)
    return replace(base, **kw)


def rec(method, scenario, snr, mean=0.1):
    return ResultRecord(method, scenario, snr, 10, mean, 0.01, 1.5, "abc")


def test_csv_header_only(tmp_path):
    harness.emit_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == (
        "method,scenario,snr_db,n_tasks,ser_mean,ser_stderr,wall_time_s,config_hash\n")


def test_csv_round_trip_and_order(tmp_path):
    recs = [rec("mmse", "perfect", 4), rec("bcjr", "noisy", 12, 1 / 3),
            rec("bcjr", "noisy", 2, 0.123456789123), rec("bcjr", "perfect", 0)]
    harness.emit_csv(recs, tmp_path / "r.csv")
    back = harness.read_csv(tmp_path / "r.csv")
    assert back == sorted(recs, key=lambda r: (r.method, r.scenario, r.snr_db))
    assert [(r.method, r.snr_db) for r in back] == [("bcjr", 2), ("bcjr", 12), ("bcjr", 0),
                                                     ("mmse", 4)]
    assert "0.333333333" in (tmp_path / "r.csv").read_text()


def test_csv_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.emit_csv([], blocker / "sub" / "r.csv")


def test_record_rejects_bad_ser():
    with pytest.raises(ValueError):
        rec("bcjr", "perfect", 0, 1.5)


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        harness.ExperimentConfig(methods=("viterbi",))
    assert harness.resolve_method("only_adaptation_100").K == 100
    assert harness.resolve_method("naive_4").variant == "naive"


def test_sweep_bookkeeping(tmp_path):
    cfg = tiny(tmp_path, methods=("bcjr", "mmse"), snr_grid=tuple(range(16)), tasks_per_snr=3)
    recs = harness.run_sweep(cfg, resume=False)
    assert len(recs) == 32
    assert all(r.n_tasks == 3 for r in recs)
    assert {(r.method, r.snr_db) for r in recs} == {(m, s) for m in ("bcjr", "mmse") for s in range(16)}


def test_perfect_scenario_forces_true_csi(tmp_path):
    cfg = tiny(tmp_path, sigma_n_sq=0.4)
    assert cfg.effective_sigma_n_sq == 0.0
    for t in harness.test_tasks(cfg, 4) + harness.training_tasks(cfg, 5):
        assert np.array_equal(t.h_est, t.h_true)
    noisy = harness.test_tasks(replace(cfg, scenario="noisy"), 4)
    assert all(not np.array_equal(t.h_est, t.h_true) for t in noisy)


def test_scenarios_share_everything_but_csi(tmp_path):
    cfg = tiny(tmp_path)
    a = harness.test_task(cfg, 8, 2)
    b = harness.test_task(replace(cfg, scenario="noisy"), 8, 2)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert np.array_equal(a.h_true, b.h_true) and a.seed == b.seed


def test_config_hash_ignores_plumbing(tmp_path):
    cfg = tiny(tmp_path)
    h = harness.config_hash(cfg)
    assert h == harness.config_hash(replace(cfg, out="elsewhere.csv", workers=3))
    assert h != harness.config_hash(replace(cfg, seed=1))
    assert h != harness.config_hash(replace(cfg, meta=replace(cfg.meta, lam=1e-2)))


def test_config_file_round_trip(tmp_path):
    cfg = tiny(tmp_path, scenario="noisy", methods=("bcjr",))
    harness.save_config(cfg, tmp_path / "c.toml")
    back = harness.load_config(tmp_path / "c.toml")
    assert back == cfg
    assert harness.config_hash(back) == harness.config_hash(cfg)
    (tmp_path / "bad.toml").write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        harness.load_config(tmp_path / "bad.toml")


def test_missing_checkpoint_names_method(tmp_path):
    cfg = tiny(tmp_path, methods=("metassd",))
    with pytest.raises(FileNotFoundError, match="metassd"):
        harness.run_sweep(cfg)


def test_resume_reuses_completed_cells(tmp_path):
    cfg = tiny(tmp_path, methods=("only_adaptation_3",))
    first = harness.run_sweep(cfg)
    # tamper with one stored cell: a resumed sweep must read it back, not recompute
    cells = sorted((tmp_path / "data" / "cells").rglob("*.json"))
    assert len(cells) == 2
    text = cells[0].read_text()
    cells[0].write_text(text.replace('"sers": [', '"sers": [0.5, ', 1))
    again = harness.run_sweep(cfg)
    assert sum(r.n_tasks for r in again) == sum(r.n_tasks for r in first) + 1
    fresh = harness.run_sweep(cfg, resume=False)
    assert [list(r.task_sers) for r in fresh] == [list(r.task_sers) for r in first]


def test_sweep_is_reproducible(tmp_path):
    cfg = tiny(tmp_path, methods=("only_adaptation_2", "bcjr"))
    a = harness.run_sweep(cfg, resume=False)
    b = harness.run_sweep(cfg, resume=False)
    assert [r.ser_mean for r in a] == [r.ser_mean for r in b]


def test_parallel_matches_serial(tmp_path):
    cfg = tiny(tmp_path, methods=("mmse",), tasks_per_snr=5)
    a = harness.run_sweep(cfg, resume=False)
    b = harness.run_sweep(replace(cfg, workers=2), resume=False)
    assert [list(r.task_sers) for r in a] == [list(r.task_sers) for r in b]
    assert [r.task_seeds for r in a] == [r.task_seeds for r in b]


def test_ablation_pairs_tasks(tmp_path):
    cfg = tiny(tmp_path)
    harness.train_variant(cfg, "meta")
    harness.train_variant(cfg, "naive")
    recs = harness.run_ablation("meta", cfg, resume=False)
    assert {r.method for r in recs} == {"metassd_2", "only_adaptation_2", "only_adaptation_100",
                                        "naive_2"}
    for snr in cfg.snr_grid:
        at = [r for r in recs if r.snr_db == snr]
        assert len({r.task_seeds for r in at}) == 1
        mean, se = harness.paired_difference(at[0], at[1])
        assert se >= 0 and np.isfinite(mean)
    temp = harness.ablation_config("temp", cfg)
    assert temp.scenario == "noisy" and temp.methods == ("metassd", "metassd_no_temp")


def test_paired_difference_refuses_unpaired():
    a = ResultRecord.from_sers("a", "perfect", 0, [0.1, 0.2], 0, "h", (1, 2))
    b = ResultRecord.from_sers("b", "perfect", 0, [0.1, 0.1], 0, "h", (1, 3))
    with pytest.raises(ValueError):
        harness.paired_difference(a, b)
    c = ResultRecord.from_sers("c", "perfect", 0, [0.0, 0.3], 0, "h", (1, 2))
    mean, se = harness.paired_difference(a, c)
    assert mean == pytest.approx(0.0) and se == pytest.approx(np.std([0.1, -0.1], ddof=1) / np.sqrt(2))


def test_variant_configs(tmp_path):
    cfg = tiny(tmp_path, seed=9)
    assert harness.variant_meta_config(cfg, "no_ssl").alpha == 0.0
    assert harness.variant_meta_config(cfg, "no_temp").learn_temps is False
    assert harness.variant_meta_config(cfg, "meta").seed == 9
    with pytest.raises(ValueError):
        harness.variant_meta_config(cfg, "bogus")


# -- command line -------------------------------------------------------------------------

def cli_args(tmp_path, *extra):
    return ["--N", "120", "--snr-grid", "4,10", "--tasks-per-snr", "3", "--meta-tasks", "20",
            "--meta-iters", "2", "--K", "2", "--data-dir", str(tmp_path / "data"),
            "--checkpoint-dir", str(tmp_path / "ck"), "--out", str(tmp_path / "out.csv"),
            "--no-timing", *extra]


def test_cli_gen(tmp_path, capsys):
    assert main(["gen", *cli_args(tmp_path)]) == 0
    ts = channel.load_task_set(tmp_path / "data" / "test-perfect-snr04.mssd")
    assert len(ts) == 3 and ts[0].N == 120
    assert len(channel.load_task_set(tmp_path / "data" / "train-perfect.mssd")) == 20


def test_cli_baseline_and_sidecar(tmp_path, capsys):
    assert main(["baseline", "bcjr", *cli_args(tmp_path)]) == 0
    recs = harness.read_csv(tmp_path / "out.csv")
    assert [(r.method, r.snr_db, r.wall_time_s) for r in recs] == [("bcjr", 4, 0.0), ("bcjr", 10, 0.0)]
    cfg = harness.load_config(tmp_path / "out.config.toml")
    assert all(r.config_hash == harness.config_hash(cfg) for r in recs)


def test_cli_train_then_eval(tmp_path, capsys):
    log = tmp_path / "train.jsonl"
    assert main(["meta-train", "--log", str(log), *cli_args(tmp_path)]) == 0
    assert (tmp_path / "ck" / "meta-perfect.ckpt").exists()
    assert '"event": "val"' in log.read_text()
    assert main(["eval", "--methods", "metassd,mmse", *cli_args(tmp_path)]) == 0
    assert len(harness.read_csv(tmp_path / "out.csv")) == 4


def test_cli_missing_checkpoint_exit_code(tmp_path, capsys):
    assert main(["ablate", "ssl", *cli_args(tmp_path)]) == 2
    assert "meta-train" in capsys.readouterr().err


def test_cli_snr_grid_parsing():
    from metassd.cli import _int_list
    assert _int_list("0-3") == (0, 1, 2, 3)
    assert _int_list("0,4,8") == (0, 4, 8)
    assert _int_list("0-1,5") == (0, 1, 5)
