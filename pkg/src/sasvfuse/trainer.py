"""Mini-batch training loop: seeded shuffling, mean-over-batch gradients,
Adam updates, per-epoch dev metrics, and best-epoch model selection on the
dev SASV-EER.

Reproducibility: model init and shuffling draw from one generator seeded by
the train config, per-trial gradients are reduced in trial order regardless
of thread count, and the returned log records everything except wall time
deterministically.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dataio import TrialFeatures
from .errors import ConfigError, NumericalError
from .fusion import FusionParams, ModelConfig, forward, init_model, loss_and_grads
from .metrics import eval_report
from .numerics import AdamState, Rng, adam_step


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 40
    lr: float = 1e-4
    seed: int = 42
    shuffle: bool = True
    selection_metric: str = "dev-sasv-eer"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.selection_metric != "dev-sasv-eer":
            raise ConfigError(
                f"unknown selection_metric {self.selection_metric!r}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    sv_eer: Optional[float]
    spf_eer: Optional[float]
    sasv_eer: Optional[float]
    seconds: float


@dataclass
class TrainLog:
    entries: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def _map_ordered(fn, items, threads: int):
    """Apply fn to every item, preserving order; results are identical for
    any thread count because the reduction happens on the ordered list."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def select_best_epoch(sasv_eers: list[Optional[float]]) -> int:
    """Index of the smallest dev SASV-EER; ties go to the earliest epoch."""
    if not sasv_eers:
        raise ConfigError("select_best_epoch: empty log")
    keyed = [np.inf if v is None else v for v in sasv_eers]
    best = 0
    for i, v in enumerate(keyed):
        if v < keyed[best]:
            best = i
    return best


def _batch_grads(batch: list[TrialFeatures], params: FusionParams,
                 cfg: ModelConfig, threads: int):
    """Mean loss and mean gradient over one batch, reduced in trial order."""
    results = _map_ordered(lambda f: loss_and_grads(f, f.label, params, cfg),
                           batch, threads)
    inv = 1.0 / len(batch)
    loss = sum(r[0] for r in results) * inv
    acc = [a.copy() for a in results[0][1].flatten()]
    for _, grads in results[1:]:
        for a, g in zip(acc, grads.flatten()):
            a += g
    for a in acc:
        a *= inv
    return loss, acc


def evaluate_scores(features: list[TrialFeatures], params: FusionParams,
                    cfg: ModelConfig, threads: int = 1):
    """Final score per trial, order preserved: list of (index, score, label)."""
    scores = _map_ordered(lambda f: forward(f, params, cfg).final_score,
                          features, threads)
    return [(i, s, f.label) for i, (s, f) in enumerate(zip(scores, features))]


def train(train_features: list[TrialFeatures], dev_features: list[TrialFeatures],
          model_cfg: ModelConfig, train_cfg: TrainConfig, threads: int = 1,
          progress: Optional[Callable[[EpochStats], None]] = None
          ) -> tuple[FusionParams, TrainLog]:
    """Train the fusion model and return the parameters of the epoch with the
    best dev SASV-EER (ties resolved to the earliest epoch) plus the log."""
    if not train_features:
        raise ConfigError("train: empty training set")
    if not dev_features:
        raise ConfigError("train: empty dev set (required for model selection)")

    rng = Rng(train_cfg.seed)
    params = init_model(model_cfg, rng)
    arrays = params.flatten()
    adam = AdamState.for_params(arrays, lr=train_cfg.lr)

    log = TrainLog()
    best_params = params.copy()
    best_eer = np.inf
    order = list(range(len(train_features)))

    for epoch in range(1, train_cfg.epochs + 1):
        started = time.perf_counter()
        if train_cfg.shuffle:
            rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch_idx = order[start:start + train_cfg.batch_size]
            batch = [train_features[i] for i in batch_idx]
            loss, grads = _batch_grads(batch, params, model_cfg, threads)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {start // train_cfg.batch_size}")
            adam_step(adam, arrays, grads)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(order)

        scored = evaluate_scores(dev_features, params, model_cfg, threads)
        report = eval_report([s for _, s, _ in scored], [l for _, _, l in scored])
        stats = EpochStats(epoch=epoch, loss=epoch_loss, sv_eer=report.sv_eer,
                           spf_eer=report.spf_eer, sasv_eer=report.sasv_eer,
                           seconds=time.perf_counter() - started)
        log.entries.append(stats)
        if progress is not None:
            progress(stats)
        current = np.inf if report.sasv_eer is None else report.sasv_eer
        if current < best_eer:
            best_eer = current
            best_params = params.copy()
            log.best_epoch = epoch

    return best_params, log


def write_train_log(log: TrainLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,sv_eer,spf_eer,sasv_eer,seconds\n")
        for e in log.entries:
            def fmt(v):
                return "" if v is None else repr(float(v))
            fh.write(f"{e.epoch},{fmt(e.loss)},{fmt(e.sv_eer)},{fmt(e.spf_eer)},"
                     f"{fmt(e.sasv_eer)},{e.seconds:.3f}\n")
