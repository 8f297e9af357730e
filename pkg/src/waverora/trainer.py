"""Adam training loop with early stopping, plus MSE/MAE evaluation.

Batches are drawn from precomputed (input, target) window pairs, shuffled
each epoch from a seeded stream, so a fixed seed reproduces the whole
trajectory bitwise. The loss is either time-domain MSE on the denormalized
forecast or coefficient-domain MSE against the wavelet transform of the
normalized target, per the model's loss_domain. Gradients are clipped by
global norm before each step; the checkpoint with the best validation MSE
wins and is restored into the model when training ends.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from .model import (
    forward,
    forward_with_pyramid,
    save_checkpoint,
)
from .numerics import RngState, ShapeError, Tensor
from .wavelet import dwt, make_filter_bank


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or inconsistent setup)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        positive = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "clip_norm": self.clip_norm,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.patience > self.max_epochs:
            raise ValueError(
                f"patience {self.patience} exceeds max_epochs {self.max_epochs}"
            )


@dataclass
class MetricsReport:
    mse: float
    mae: float
    windows: int
    per_horizon: list = None

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0 or self.windows <= 0:
            raise ValueError(
                f"metrics must be non-negative over at least one window, got "
                f"mse={self.mse} mae={self.mae} windows={self.windows}"
            )


@dataclass
class TrainResult:
    history: list  # rows: {epoch, train_loss, val_mse, val_mae, seconds}
    best_val_mse: float
    best_epoch: int
    steps: int
    checkpoint_path: str = None


def mse(y, y_hat):
    a, b = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes disagree: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).mean())


def mae(y, y_hat):
    a, b = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"mae shapes disagree: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def init_adam(params):
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to params in place."""
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def clip_global_norm(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


def _stack_batch(pairs, indices):
    xs = np.stack([pairs[i][0] for i in indices])
    ys = np.stack([pairs[i][1] for i in indices])
    return xs, ys


def _swap_last_array(a):
    return np.swapaxes(a, -1, -2)


def _loss_for_batch(model, xb, yb, drop_rng):
    cfg = model.config
    if cfg.loss_domain == "time":
        out = forward(model, Tensor(xb), training=True, rng=drop_rng)
        diff = out - Tensor(yb)
        return (diff * diff).mean()
    out, predicted, state = forward_with_pyramid(
        model, Tensor(xb), training=True, rng=drop_rng
    )
    target_norm = (yb - state.mu) / state.sigma
    fb = make_filter_bank(cfg.basis)
    target = dwt(Tensor(_swap_last_array(target_norm)), fb, cfg.levels)
    total = None
    count = 0
    for got, want in zip(predicted.components, target.components):
        diff = got - Tensor(want.data)
        term = (diff * diff).sum()
        total = term if total is None else total + term
        count += want.data.size
    return total * (1.0 / count)


def train(model, train_pairs, val_pairs, cfg, checkpoint_path=None):
    """Fit the model; returns history plus best-epoch bookkeeping.

    The model is left holding the best-validation weights. When a checkpoint
    path is given, the best weights are also written there each time the
    validation MSE improves.
    """
    if not train_pairs:
        raise TrainingError("no training windows")
    if not val_pairs:
        raise TrainingError("no validation windows")
    params = model.parameters()
    adam = init_adam(params)
    shuffle_rng = RngState(cfg.seed)
    drop_rng = RngState(cfg.seed + 1)
    history = []
    best_val = math.inf
    best_epoch = -1
    best_snapshot = None
    stale = 0
    steps = 0
    n = len(train_pairs)
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        seen = 0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            xb, yb = _stack_batch(train_pairs, batch)
            loss = _loss_for_batch(model, xb, yb, drop_rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            for p in params:
                p.grad[...] = 0.0
            loss.backward()
            grads = [p.grad for p in params]
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, adam, cfg.learning_rate)
            steps += 1
            loss_sum += value * len(batch)
            seen += len(batch)
        val = evaluate(model, val_pairs)
        seconds = time.perf_counter() - started
        history.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / seen,
                "val_mse": val.mse,
                "val_mae": val.mae,
                "seconds": seconds,
            }
        )
        if val.mse < best_val:
            best_val = val.mse
            best_epoch = epoch
            best_snapshot = [p.data.copy() for p in params]
            stale = 0
            if checkpoint_path:
                save_checkpoint(model, checkpoint_path)
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_snapshot is not None:
        for p, data in zip(params, best_snapshot):
            p.data[...] = data
    return TrainResult(
        history=history,
        best_val_mse=best_val,
        best_epoch=best_epoch,
        steps=steps,
        checkpoint_path=checkpoint_path,
    )


def evaluate(model, pairs, batch_size=64, predict_fn=None):
    """Eval-mode metrics over all windows, aggregated elementwise."""
    if not pairs:
        raise ValueError("no windows to evaluate")
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for lo in range(0, len(pairs), batch_size):
        indices = range(lo, min(lo + batch_size, len(pairs)))
        xb, yb = _stack_batch(pairs, indices)
        if predict_fn is not None:
            out = np.asarray(predict_fn(xb))
        else:
            out = forward(model, Tensor(xb), training=False).data
        if out.shape != yb.shape:
            raise ShapeError(f"prediction shape {out.shape} vs target {yb.shape}")
        diff = out - yb
        sq_sum += float((diff * diff).sum())
        abs_sum += float(np.abs(diff).sum())
        count += diff.size
    return MetricsReport(mse=sq_sum / count, mae=abs_sum / count, windows=len(pairs))


def write_history(path, history):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["epoch", "train_loss", "val_mse", "val_mae", "seconds"]
        )
        writer.writeheader()
        for row in history:
            writer.writerow(row)
