"""Experiment orchestration: training variants, SNR sweeps, ablations, CSV."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli
import tomli_w

from . import baselines, detector, meta
from .channel import Task, TaskConfig, make_task, make_task_set, task_seed, with_scenario
from .meta import MetaConfig
from .nn import FULL_HIDDEN, Architecture, Checkpoint, init_params, load_checkpoint, save_checkpoint
from .rng import RngStream

log = logging.getLogger(__name__)

SCENARIOS = ("perfect", "noisy")
FIXED_METHODS = ("metassd", "metassd_no_ssl", "metassd_no_temp", "bcjr", "mmse")
VARIANTS = ("meta", "no_ssl", "no_temp", "naive")
CSV_FIELDS = ("method", "scenario", "snr_db", "n_tasks", "ser_mean", "ser_stderr",
              "wall_time_s", "config_hash")

# task-stream groups under the root seed
TRAIN_GROUP = 0
TEST_GROUP = 1


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "perfect"
    sigma_n_sq: float = 0.4
    snr_grid: tuple[int, ...] = tuple(range(16))
    tasks_per_snr: int = 500
    methods: tuple[str, ...] = ("metassd", "bcjr", "mmse")
    K: int = 4
    seed: int = 0
    N: int = 10_000
    P: int = 100
    L: int = 4
    gamma: float = 2.0
    hidden_dims: tuple[int, ...] = FULL_HIDDEN
    block_size: int = 64
    tap_map: str = "reverse"
    score_pilots: bool = False
    record_timing: bool = True
    workers: int = 1
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    out: str = "results.csv"
    meta: MetaConfig = MetaConfig()

    def __post_init__(self):
        object.__setattr__(self, "snr_grid", tuple(int(s) for s in self.snr_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if isinstance(self.meta, dict):
            object.__setattr__(self, "meta", replace(MetaConfig(), **self.meta))
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        for m in self.methods:
            resolve_method(m)

    @property
    def effective_sigma_n_sq(self) -> float:
        return 0.0 if self.scenario == "perfect" else self.sigma_n_sq

    @property
    def arch(self) -> Architecture:
        return Architecture(L=self.L, hidden_dims=self.hidden_dims)

    def task_config(self, snr_db: int | None = None) -> TaskConfig:
        base = TaskConfig(N=self.N, P=self.P, L=self.L, gamma=self.gamma, snr_db=snr_db)
        return with_scenario(base, self.scenario, self.sigma_n_sq)

    @property
    def lam(self) -> float:
        return self.meta.lam

    @property
    def alpha(self) -> float:
        return self.meta.alpha


def full_profile(**overrides) -> ExperimentConfig:
    """Settings quoted for the full-scale experiments (hours of compute)."""
    return replace(ExperimentConfig(), **overrides)


# Desk-scale profile.  The network, meta-batch and step sizes are shrunk so a
# meta-training run takes minutes on one core; see README for the rationale.
REDUCED_META = MetaConfig(T=2000, B=16, K=4, lam=3e-3, eta=5e-5, alpha=0.05,
                          max_meta_iters=500, val_every=50, val_task_count=100)


def reduced_profile(**overrides) -> ExperimentConfig:
    base = ExperimentConfig(tasks_per_snr=100, N=4000, hidden_dims=(128, 128, 64),
                            meta=REDUCED_META)
    return replace(base, **overrides)


# -- config files and hashing ----------------------------------------------------------

def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["snr_grid"] = list(cfg.snr_grid)
    d["methods"] = list(cfg.methods)
    d["hidden_dims"] = list(cfg.hidden_dims)
    return d


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "wb") as f:
        tomli_w.dump(config_to_dict(cfg), f)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "rb") as f:
        data = tomli.load(f)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    base = base or ExperimentConfig()
    if "meta" in data:
        data["meta"] = replace(base.meta, **data["meta"])
    return replace(base, **data)


_UNHASHED = ("methods", "record_timing", "workers", "data_dir", "checkpoint_dir", "out")


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of everything that can change a result cell."""
    d = config_to_dict(cfg)
    for k in _UNHASHED:
        d.pop(k)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- records and CSV -------------------------------------------------------------------

def _sig9(v: float) -> float:
    return float(f"{float(v):.9g}")


@dataclass
class ResultRecord:
    method: str
    scenario: str
    snr_db: int
    n_tasks: int
    ser_mean: float
    ser_stderr: float
    wall_time_s: float
    config_hash: str
    task_sers: np.ndarray = field(default=None, repr=False, compare=False)
    task_seeds: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        # stored at CSV precision so write -> read is the identity
        self.ser_mean = _sig9(self.ser_mean)
        self.ser_stderr = _sig9(self.ser_stderr)
        self.wall_time_s = _sig9(self.wall_time_s)
        self.snr_db = int(self.snr_db)
        self.n_tasks = int(self.n_tasks)
        if not (0.0 <= self.ser_mean <= 1.0) or self.ser_stderr < 0:
            raise ValueError(f"invalid SER statistics for {self.method}: "
                             f"{self.ser_mean}, {self.ser_stderr}")

    @classmethod
    def from_sers(cls, method, scenario, snr_db, sers, wall, chash, seeds=()):
        sers = np.asarray(sers, dtype=float)
        stderr = float(np.std(sers, ddof=1) / np.sqrt(len(sers))) if len(sers) > 1 else 0.0
        return cls(method, scenario, snr_db, len(sers), float(np.mean(sers)), stderr, wall, chash,
                   task_sers=sers, task_seeds=tuple(seeds))


def _sort_key(r: ResultRecord):
    return (r.method, r.scenario, r.snr_db)


def emit_csv(records: Sequence[ResultRecord], path) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in sorted(records, key=_sort_key):
                w.writerow([r.method, r.scenario, r.snr_db, r.n_tasks, f"{r.ser_mean:.9g}",
                            f"{r.ser_stderr:.9g}", f"{r.wall_time_s:.9g}", r.config_hash])
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e}") from e


def config_sidecar(path) -> Path:
    """Where the config behind a results CSV is stored."""
    path = Path(path)
    return path.with_name(path.stem + ".config.toml")


def read_csv(path) -> list[ResultRecord]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [ResultRecord(r["method"], r["scenario"], int(r["snr_db"]), int(r["n_tasks"]),
                         float(r["ser_mean"]), float(r["ser_stderr"]), float(r["wall_time_s"]),
                         r["config_hash"]) for r in rows]


# -- methods ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Method:
    name: str
    kind: str  # "learned", "random_init", "bcjr", "mmse"
    variant: str | None = None
    K: int | None = None  # None: use the experiment's K
    alpha_zero: bool = False
    learn_temps: bool = True


def resolve_method(name: str) -> Method:
    if name == "metassd":
        return Method(name, "learned", "meta")
    if name == "metassd_no_ssl":
        return Method(name, "learned", "no_ssl", alpha_zero=True)
    if name == "metassd_no_temp":
        return Method(name, "learned", "no_temp", learn_temps=False)
    if name in ("bcjr", "mmse"):
        return Method(name, name)
    for prefix, kind, variant in (("only_adaptation_", "random_init", None),
                                  ("naive_", "learned", "naive"),
                                  ("metassd_", "learned", "meta")):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            return Method(name, kind, variant, K=int(name[len(prefix):]))
    raise ValueError(f"unknown method {name!r}")


def checkpoint_path(cfg: ExperimentConfig, variant: str, scenario: str | None = None) -> Path:
    return Path(cfg.checkpoint_dir) / f"{variant}-{scenario or cfg.scenario}.ckpt"


def variant_meta_config(cfg: ExperimentConfig, variant: str) -> MetaConfig:
    mc = replace(cfg.meta, seed=cfg.seed, tap_map=cfg.tap_map)
    if variant == "no_ssl":
        mc = replace(mc, alpha=0.0)
    elif variant == "no_temp":
        mc = replace(mc, learn_temps=False)
    elif variant not in VARIANTS:
        raise ValueError(f"unknown training variant {variant!r}")
    return mc


def training_tasks(cfg: ExperimentConfig, count: int | None = None) -> list[Task]:
    count = cfg.meta.T if count is None else count
    return make_task_set(cfg.task_config(None), cfg.seed, count, group=TRAIN_GROUP)


def test_task(cfg: ExperimentConfig, snr_db: int, index: int) -> Task:
    seed = task_seed(cfg.seed, TEST_GROUP, snr_db, index)
    return make_task(cfg.task_config(snr_db), RngStream(seed))


def test_tasks(cfg: ExperimentConfig, snr_db: int) -> list[Task]:
    return [test_task(cfg, snr_db, t) for t in range(cfg.tasks_per_snr)]


def train_variant(cfg: ExperimentConfig, variant: str, tasks: Sequence[Task] | None = None,
                  progress=None, path=None) -> Checkpoint:
    tasks = training_tasks(cfg) if tasks is None else tasks
    mc = variant_meta_config(cfg, variant)
    trainer = meta.baseline_naive_train if variant == "naive" else meta.train
    ckpt = trainer(tasks, mc, cfg.arch, progress=progress)
    ckpt.meta.update({"variant": variant, "scenario": cfg.scenario})
    path = checkpoint_path(cfg, variant) if path is None else Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, path)
    return ckpt


def _method_seed(cfg: ExperimentConfig) -> int:
    return task_seed(cfg.seed, 7)


def evaluate_task(method: Method, task: Task, cfg: ExperimentConfig, params=None) -> float:
    """SER of one method on one task."""
    P = 0 if cfg.score_pilots else task.P
    if method.kind == "bcjr":
        _, x_hat = baselines.bcjr_detect(task.y, task.h_est, task.noise_var)
        return detector.symbol_error_rate(x_hat, task.x, P)
    if method.kind == "mmse":
        x_hat = baselines.mmse_ofdm_detect(task.y, task.h_est, task.noise_var, cfg.block_size,
                                           rng=RngStream(task.seed, (99,)))
        return detector.symbol_error_rate(x_hat, task.x, P)
    if method.kind == "random_init":
        params = init_params(cfg.arch, RngStream(_method_seed(cfg)))
    K = cfg.K if method.K is None else method.K
    alpha = 0.0 if method.alpha_zero else cfg.alpha
    adapted = detector.adapt(params, task, cfg.lam, K, alpha, cfg.tap_map, method.learn_temps)
    return detector.detect(adapted, task, cfg.tap_map, cfg.score_pilots)[1]


def _evaluate_chunk(args):
    method, tasks, cfg, params = args
    return [evaluate_task(method, t, cfg, params) for t in tasks]


def load_method_params(method: Method, cfg: ExperimentConfig):
    if method.kind != "learned":
        return None, ""
    path = checkpoint_path(cfg, method.variant)
    if not path.exists():
        raise FileNotFoundError(
            f"method {method.name!r} needs checkpoint {path}; run "
            f"`metassd meta-train --variant {method.variant} --scenario {cfg.scenario}` first")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    return load_checkpoint(path).params, digest


def _cell_path(cfg: ExperimentConfig, chash: str, method: str, snr: int, digest: str) -> Path:
    name = f"{method}-{cfg.scenario}-{snr}" + (f"-{digest}" if digest else "") + ".json"
    return Path(cfg.data_dir) / "cells" / chash / name


def run_cell(cfg: ExperimentConfig, method_name: str, snr_db: int, params=None,
             digest: str = "", resume: bool = True) -> ResultRecord:
    method = resolve_method(method_name)
    chash = config_hash(cfg)
    cell = _cell_path(cfg, chash, method_name, snr_db, digest)
    if resume and cell.exists():
        saved = json.loads(cell.read_text())
        return ResultRecord.from_sers(method_name, cfg.scenario, snr_db, saved["sers"],
                                      saved["wall_time_s"], chash, saved["seeds"])
    tasks = test_tasks(cfg, snr_db)
    t0 = time.perf_counter()
    if cfg.workers > 1:
        chunks = [tasks[i:: cfg.workers] for i in range(cfg.workers)]
        with ProcessPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(_evaluate_chunk, [(method, c, cfg, params) for c in chunks]))
        sers = [None] * len(tasks)
        for i, part in enumerate(parts):
            sers[i:: cfg.workers] = part
    else:
        sers = [evaluate_task(method, t, cfg, params) for t in tasks]
    wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
    seeds = [t.seed for t in tasks]
    if resume:
        cell.parent.mkdir(parents=True, exist_ok=True)
        cell.write_text(json.dumps({"sers": sers, "seeds": seeds, "wall_time_s": wall}))
    return ResultRecord.from_sers(method_name, cfg.scenario, snr_db, sers, wall, chash, seeds)


def run_sweep(cfg: ExperimentConfig, resume: bool = True, progress=None) -> list[ResultRecord]:
    """Evaluate every configured method at every SNR of the grid.

    All methods at one SNR see the same task list.  Learned methods start from
    their checkpoint and take ``K`` adaptation steps per task.
    """
    records = []
    for name in cfg.methods:
        method = resolve_method(name)
        params, digest = load_method_params(method, cfg)
        for snr in cfg.snr_grid:
            rec = run_cell(cfg, name, snr, params, digest, resume)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return records


ABLATIONS = {
    "meta": ("perfect", lambda K: (f"metassd_{K}", f"only_adaptation_{K}", "only_adaptation_100",
                                   f"naive_{K}")),
    "ssl": ("perfect", lambda K: ("metassd", "metassd_no_ssl")),
    "temp": ("noisy", lambda K: ("metassd", "metassd_no_temp")),
}


def ablation_config(kind: str, cfg: ExperimentConfig) -> ExperimentConfig:
    if kind not in ABLATIONS:
        raise ValueError(f"unknown ablation {kind!r}; choose from {sorted(ABLATIONS)}")
    scenario, methods = ABLATIONS[kind]
    return replace(cfg, scenario=scenario, methods=methods(cfg.K))


def run_ablation(kind: str, cfg: ExperimentConfig, resume: bool = True,
                 progress=None) -> list[ResultRecord]:
    """Paired comparison: every method sees identical tasks at each SNR."""
    return run_sweep(ablation_config(kind, cfg), resume, progress)


def paired_difference(a: ResultRecord, b: ResultRecord) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` over tasks shared by both records."""
    if a.task_seeds != b.task_seeds:
        raise ValueError("records are not paired: task lists differ")
    d = np.asarray(a.task_sers) - np.asarray(b.task_sers)
    se = float(np.std(d, ddof=1) / np.sqrt(len(d))) if len(d) > 1 else 0.0
    return float(np.mean(d)), se
