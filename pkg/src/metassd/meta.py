"""First-order MAML over a set of channel tasks, plus a pooled-SGD baseline."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import detector
from .channel import Task
from .detector import DetectorConfig
from .nn import Architecture, Checkpoint, ModelParams, init_params
from .rng import RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    T: int = 10_500
    B: int = 50
    K: int = 4
    lam: float = 0.01
    eta: float = 0.001
    alpha: float = 0.05
    max_meta_iters: int = 2000
    val_every: int = 100
    val_task_count: int = 500
    seed: int = 0
    tap_map: str = "reverse"
    learn_temps: bool = True

    def validate(self):
        if self.B < 1 or self.B > self.T - self.val_task_count:
            raise ValueError(f"need 1 <= B <= T - val_task_count, got B={self.B}")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.lam <= 0 or self.eta < 0:
            raise ValueError("learning rates must be positive")
        if self.val_task_count < 0 or self.val_task_count >= self.T:
            raise ValueError("val_task_count must leave at least one training task")
        return self

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig(alpha=self.alpha, tap_map=self.tap_map,
                              learn_temps=self.learn_temps)


@dataclass
class TrainState:
    params: ModelParams
    meta_iter: int
    best_val_ser: float
    best_params: ModelParams
    rng: RngStream
    history: list[dict] = field(default_factory=list)


def task_grad(params, task, cfg: MetaConfig):
    """Default ``(loss, gradient)`` oracle: the detector's combined objective."""
    loss, g = detector.loss_and_grad(params, task, cfg.alpha, cfg.tap_map, cfg.learn_temps)
    return loss.total, g.flat


def inner_adapt(params: ModelParams, task, cfg: MetaConfig, grad_fn=task_grad) -> ModelParams:
    theta = params.flat
    for _ in range(cfg.K):
        _, g = grad_fn(params.with_flat(theta), task, cfg)
        theta = theta - cfg.lam * g
    return params.with_flat(theta)


def meta_step(params: ModelParams, batch: Sequence[Task], cfg: MetaConfig,
              return_loss: bool = False, grad_fn=task_grad):
    """One outer update: adapt to each task, then step along the summed
    gradients taken at the adapted parameters (first-order: the inner
    trajectory is not differentiated)."""
    if not batch:
        raise ValueError("empty meta-batch")
    outer = np.zeros_like(params.flat)
    inner_loss = 0.0
    for task in batch:
        adapted = inner_adapt(params, task, cfg, grad_fn)
        loss, g = grad_fn(adapted, task, cfg)
        outer += g
        inner_loss += loss
    new = params.with_flat(params.flat - cfg.eta * outer)
    return (new, inner_loss / len(batch)) if return_loss else new


def naive_step(params: ModelParams, batch: Sequence[Task], cfg: MetaConfig,
               return_loss: bool = False, grad_fn=task_grad):
    """Plain SGD on the pooled loss, no inner adaptation."""
    if not batch:
        raise ValueError("empty batch")
    outer = np.zeros_like(params.flat)
    total = 0.0
    for task in batch:
        loss, g = grad_fn(params, task, cfg)
        outer += g
        total += loss
    new = params.with_flat(params.flat - cfg.eta * outer)
    return (new, total / len(batch)) if return_loss else new


def split_tasks(tasks: Sequence[Task], cfg: MetaConfig):
    """Hold out ``val_task_count`` tasks, chosen at random from the seed."""
    if len(tasks) < cfg.T:
        raise ValueError(f"need {cfg.T} tasks, got {len(tasks)}")
    perm = RngStream(cfg.seed, (1,)).gen.permutation(cfg.T)
    val_idx = np.sort(perm[: cfg.val_task_count])
    train_idx = np.sort(perm[cfg.val_task_count:])
    return train_idx, val_idx


def validation_ser(params: ModelParams, tasks: Sequence[Task], cfg: MetaConfig, K=None) -> float:
    K = cfg.K if K is None else K
    sers = []
    for task in tasks:
        adapted = detector.adapt(params, task, cfg.lam, K, cfg.alpha, cfg.tap_map, cfg.learn_temps)
        sers.append(detector.detect(adapted, task, cfg.tap_map)[1])
    return float(np.mean(sers)) if sers else float("nan")


def train(tasks: Sequence[Task], cfg: MetaConfig, arch: Architecture,
          step: Callable = meta_step, init: ModelParams | None = None,
          progress: Callable[[dict], None] | None = None) -> Checkpoint:
    """Run the outer loop for ``cfg.max_meta_iters`` iterations and return the
    parameters with the best validation SER.

    With ``val_every=0`` no validation runs and the final parameters are
    returned.  Batches of ``B`` distinct training tasks are drawn independently at every
    iteration.  ``progress`` receives one dict per logged event.
    """
    cfg.validate()
    train_idx, val_idx = split_tasks(tasks, cfg)
    val_tasks = [tasks[i] for i in val_idx]
    rng = RngStream(cfg.seed, (2,))
    params = init if init is not None else init_params(arch, RngStream(cfg.seed, (0,)))
    state = TrainState(params=params, meta_iter=0, best_val_ser=np.inf,
                       best_params=params, rng=rng)
    seen: set[int] = set()
    t0 = time.perf_counter()

    def emit(event):
        state.history.append(event)
        if progress is not None:
            progress(event)
        log.info(json.dumps(event))

    def validate():
        ser = validation_ser(state.params, val_tasks, cfg) if val_tasks else np.nan
        if val_tasks and ser < state.best_val_ser:
            state.best_val_ser = ser
            state.best_params = state.params
        emit({"event": "val", "iter": state.meta_iter, "val_ser": ser,
              "best_val_ser": state.best_val_ser})

    if cfg.val_every:
        validate()
    batch_rng = rng.child(0).gen
    running = []
    for it in range(1, cfg.max_meta_iters + 1):
        pick = batch_rng.choice(len(train_idx), size=cfg.B, replace=False)
        ids = train_idx[pick]
        seen.update(int(i) for i in ids)
        state.params, loss = step(state.params, [tasks[i] for i in ids], cfg, return_loss=True)
        state.meta_iter = it
        running.append(loss)
        if cfg.val_every and it % cfg.val_every == 0:
            emit({"event": "train", "iter": it, "mean_inner_loss": float(np.mean(running)),
                  "elapsed_s": round(time.perf_counter() - t0, 3)})
            running = []
            validate()
    if not (val_tasks and cfg.val_every):
        state.best_params = state.params
    meta = {
        "trainer": step.__name__,
        "meta_iters": str(state.meta_iter),
        "best_val_ser": repr(float(state.best_val_ser)),
        "config": json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":")),
        "train_tasks_seen": str(len(seen)),
    }
    ckpt = Checkpoint(state.best_params, meta)
    ckpt.state = state  # not serialised; handy for inspection
    ckpt.val_ids = val_idx
    ckpt.seen_ids = np.array(sorted(seen), dtype=int)
    return ckpt


def baseline_naive_train(tasks: Sequence[Task], cfg: MetaConfig, arch: Architecture,
                         progress=None) -> Checkpoint:
    # validation still adapts K steps so checkpoint selection matches test usage
    return train(tasks, cfg, arch, step=naive_step, progress=progress)


def config_from_json(text: str) -> MetaConfig:
    return replace(MetaConfig(), **json.loads(text))
