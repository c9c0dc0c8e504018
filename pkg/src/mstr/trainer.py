"""Cross-entropy training with Adam, evaluation metrics and history files."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Sample, batch_iter
from .errors import ConfigurationError, ContractError, DimensionError, DivergenceError
from .model import ModelParams, MstrConfig, init_params, model_forward_batch, predict, write_checkpoint
from .tensor import Tape, backward, cross_entropy


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 3e-3
    batch_size: int = 32
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or not self.seeds:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and at least one seed are required")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")


@dataclass
class EvalMetrics:
    wa: float
    ua: float
    wf1: float
    confusion: np.ndarray
    missing_classes: list[int] = field(default_factory=list)

    def report(self) -> str:
        lines = [f"wa={self.wa:.6f}", f"ua={self.ua:.6f}", f"wf1={self.wf1:.6f}",
                 f"n={int(self.confusion.sum())}"]
        if self.missing_classes:
            lines.append("missing_classes=" + ",".join(map(str, self.missing_classes)))
        for i, row in enumerate(self.confusion):
            lines.append(f"confusion[{i}]=" + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def cross_entropy_loss(logits, label: int):
    """Scalar loss -log softmax(logits)[label] for one 1 x C row."""
    return cross_entropy(logits, [label])


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> EvalMetrics:
    """WA (micro accuracy), UA (macro recall over supported classes), WF1."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DimensionError("y_true and y_pred differ in length")
    C = num_classes
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    total = conf.sum()
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    tp = np.diag(conf)
    wa = tp.sum() / total if total else 0.0
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros(C), where=present)
    precision = np.divide(tp, predicted, out=np.zeros(C), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(C), where=denom > 0)
    ua = recall[present].mean() if present.any() else 0.0
    wf1 = (f1 * support).sum() / total if total else 0.0
    return EvalMetrics(float(wa), float(ua), float(wf1), conf,
                       [int(c) for c in np.flatnonzero(~present)])


def evaluate(params: ModelParams, samples: Sequence[Sample], batch_size: int = 64) -> EvalMetrics:
    cfg = params.config
    if not samples:
        raise ContractError("cannot evaluate an empty split")
    for s in samples:
        if s.features.shape[1] != cfg.input_dim:
            raise ConfigurationError(
                f"checkpoint expects input_dim={cfg.input_dim}, sample {s.sample_id} has {s.features.shape[1]}")
        if s.label >= cfg.num_classes:
            raise ConfigurationError(f"label {s.label} outside the model's {cfg.num_classes} classes")
    ordered = sorted(samples, key=lambda s: s.sample_id)
    preds = predict(params, [s.features for s in ordered], [s.valid_len for s in ordered], batch_size)
    return compute_metrics([s.label for s in ordered], preds, cfg.num_classes)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place; returns (params, state)."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        elif m.shape != p.shape:
            raise ContractError(f"{name}: optimizer state shape {m.shape} != parameter shape {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        params[name] = (p - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
        state.m[name], state.v[name] = m, v
    return params, state


def batch_loss_and_grads(params: ModelParams, batch: Sequence[Sample],
                         rng: Optional[np.random.Generator] = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over ``batch`` and its parameter gradients."""
    tape = Tape()
    logits = model_forward_batch([s.features for s in batch], [s.valid_len for s in batch],
                                 params, tape=tape, rng=rng)
    loss = cross_entropy(logits, [s.label for s in batch])
    grads = backward(tape, loss)
    return float(loss.data[0, 0]), grads


def dataset_loss(params: ModelParams, samples: Sequence[Sample], batch_size: int = 64) -> float:
    total = 0.0
    for batch in batch_iter(samples, batch_size):
        logits = model_forward_batch([s.features for s in batch], [s.valid_len for s in batch], params)
        total += float(cross_entropy(logits, [s.label for s in batch]).data[0, 0]) * len(batch)
    return total / len(samples)


@dataclass
class HistoryRow:
    seed: int
    epoch: int
    train_loss: float
    val_wa: float
    val_ua: float
    val_wf1: float


@dataclass
class SeedRun:
    seed: int
    best_params: ModelParams
    best_epoch: int
    best_val_wa: float
    history: list[HistoryRow]


@dataclass
class TrainResult:
    runs: list[SeedRun]

    @property
    def history(self) -> list[HistoryRow]:
        return [r for run in self.runs for r in run.history]

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(rows: Sequence[HistoryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "epoch", "train_loss", "val_wa", "val_ua", "val_wf1"])
    for r in rows:
        w.writerow([r.seed, r.epoch, f"{r.train_loss:.10g}", f"{r.val_wa:.10g}",
                    f"{r.val_ua:.10g}", f"{r.val_wf1:.10g}"])
    return buf.getvalue()


def train_seed(model_config: MstrConfig, train_config: TrainConfig, dataset: Dataset, seed: int,
               log=None) -> SeedRun:
    cfg = dataclasses.replace(model_config, dropout_rate=train_config.dropout_rate)
    train_set, val_set = dataset["train"], dataset.splits.get("val") or dataset["train"]
    params = init_params(cfg, seed)
    state = AdamState()
    drop_rng = np.random.default_rng(seed + 7919) if cfg.dropout_rate > 0 else None
    betas = (train_config.adam_beta1, train_config.adam_beta2)

    def record(epoch, loss):
        m = evaluate(params, val_set)
        history.append(HistoryRow(seed, epoch, loss, m.wa, m.ua, m.wf1))
        if log:
            log(f"seed={seed} epoch={epoch} train_loss={loss:.4f} val_wa={m.wa:.4f} val_ua={m.ua:.4f}")
        return m.wa

    history: list[HistoryRow] = []
    best_wa = record(0, dataset_loss(params, train_set))
    best, best_epoch = params.copy(), 0
    for epoch in range(1, train_config.epochs + 1):
        total, n = 0.0, 0
        for b, batch in enumerate(batch_iter(train_set, train_config.batch_size, shuffle_seed=seed * 100003 + epoch)):
            loss, grads = batch_loss_and_grads(params, batch, drop_rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at seed {seed}, epoch {epoch}, batch {b}")
            adam_step(params.arrays, grads, state, train_config.learning_rate, betas, train_config.adam_eps)
            total += loss * len(batch)
            n += len(batch)
        wa = record(epoch, total / n)
        if wa > best_wa:
            best_wa, best, best_epoch = wa, params.copy(), epoch
    return SeedRun(seed, best, best_epoch, best_wa, history)


def train(model_config: MstrConfig, train_config: TrainConfig, dataset: Dataset,
          out_dir=None, log=None) -> TrainResult:
    """Train one model per seed; keep each seed's best-validation-WA weights.

    With ``out_dir``, writes ``history.csv`` and ``checkpoints/seed<N>.ckpt``.
    """
    train_config.validate()
    if not dataset.splits.get("train"):
        raise ContractError("training split is empty")
    if dataset.input_dim and dataset.input_dim != model_config.input_dim:
        raise ConfigurationError(
            f"dataset input_dim={dataset.input_dim} does not match model input_dim={model_config.input_dim}")
    runs = [train_seed(model_config, train_config, dataset, s, log) for s in train_config.seeds]
    result = TrainResult(runs)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
        for run in runs:
            write_checkpoint(out / "checkpoints" / f"seed{run.seed}.ckpt", run.best_params)
    return result
