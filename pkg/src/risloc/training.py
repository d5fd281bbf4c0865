"""Shared minibatch training loop for every learned estimator."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .dataset import make_batch, measure_batch
from .rng import stream
from .scene import Scene

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 800
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    steps_per_epoch: int = 4
    val_size: int = 512
    patience: int | None = None
    warmup_samples: int = 10_000
    seed: int = 1
    val_seed: int = 2
    warmup_seed: int = 3

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_mse: float = float("inf")
    initial_val_mse: float | None = None
    steps_run: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.epochs)


def position_scalers(scene: Scene):
    scale = np.asarray(scene.ue_half_extent, dtype=float)
    return np.asarray(scene.ue_center, dtype=float), np.where(scale > 0, scale, 1.0)


def feature_stats(scene: Scene, power: float, mode: str, n: int, seed: int):
    """Mean and std of raw features under random RIS phases (warm-up set)."""
    from .policy.network import raw_features

    batch = make_batch(scene, seed, np.arange(n), 1)
    phases = np.stack([stream(seed, i, "warmup").uniform(0, 2 * np.pi, scene.n_elements) for i in range(n)])
    y = measure_batch(batch, np.exp(1j * phases), power, scene.noise_power, 0)
    f = raw_features(y, mode)
    sd = f.std(axis=0)
    return f.mean(axis=0), np.where(sd > 0, sd, 1.0)


def _snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params, snap):
    for k, v in snap.items():
        params[k].data[...] = v


def fit(params: dict, forward, loss_fn, scene: Scene, power: float, frames: int,
        config: TrainConfig, on_epoch=None) -> TrainLog:
    """Train ``params`` in place.

    ``forward(batch)`` returns the list of per-frame position estimates
    (tensors); ``loss_fn(estimates, positions)`` reduces them to a scalar.
    Validation tracks final-frame MSE; the best-validation weights are
    restored at the end.
    """
    train_log = TrainLog()
    if config.steps <= 0:
        return train_log
    val = make_batch(scene, config.val_seed, np.arange(config.val_size), frames)

    def val_mse():
        est = forward(val)[-1].data
        return float(np.mean(np.sum((est - val.positions) ** 2, axis=1)))

    train_log.initial_val_mse = val_mse()
    best = _snapshot(params)
    train_log.best_val_mse = train_log.initial_val_mse
    state = ad.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    bad_epochs = 0
    epoch_losses = []
    t0 = time.time()
    for step in range(config.steps):
        idx = np.arange(step * config.batch_size, (step + 1) * config.batch_size)
        batch = make_batch(scene, config.seed, idx, frames)
        with ad.Tape() as tape:
            loss = loss_fn(forward(batch), batch.positions)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step}")
        grads = tape.backward(loss, params)
        norm = ad.clip_grad_norm(grads, config.clip_norm)
        if not np.isfinite(norm):
            raise TrainingDiverged(f"non-finite gradient norm at step {step}")
        lr = ad.step_decay(config.lr, step, config.steps)
        ad.adam_step(params, grads, state, lr=lr)
        epoch_losses.append(value)
        train_log.steps_run = step + 1

        last = step == config.steps - 1
        if (step + 1) % config.steps_per_epoch == 0 or last:
            mse = val_mse()
            if not np.isfinite(mse):
                raise TrainingDiverged(f"non-finite validation MSE at step {step}")
            entry = {"epoch": len(train_log.epochs), "step": step + 1, "train_loss": float(np.mean(epoch_losses)),
                     "val_mse": mse, "lr": lr, "elapsed": time.time() - t0}
            train_log.epochs.append(entry)
            epoch_losses = []
            if on_epoch is not None:
                on_epoch(entry)
            if mse < train_log.best_val_mse:
                train_log.best_val_mse = mse
                train_log.best_epoch = entry["epoch"]
                best = _snapshot(params)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if config.patience is not None and bad_epochs >= config.patience:
                    train_log.stopped_early = True
                    log.info("early stop after %d epochs without improvement", bad_epochs)
                    break
    _restore(params, best)
    return train_log
