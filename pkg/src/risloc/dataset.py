"""Batches of (UE position, channel, noise) episodes drawn from keyed streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import sample_channel
from .rng import complex_normal, stream
from .scene import Scene


@dataclass
class EpisodeBatch:
    positions: np.ndarray  # (B, 3)
    h_d: np.ndarray  # (B,)
    h_r: np.ndarray  # (B, N)
    g_r: np.ndarray  # (B, N)
    v_r: np.ndarray  # (B, N)
    noise: np.ndarray  # (B, T) unit-variance CN(0, 1)
    indices: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def frames(self) -> int:
        return self.noise.shape[1]

    def subset(self, idx) -> "EpisodeBatch":
        return EpisodeBatch(
            self.positions[idx], self.h_d[idx], self.h_r[idx], self.g_r[idx],
            self.v_r[idx], self.noise[idx], self.indices[idx],
        )


def sample_position(scene: Scene, seed: int, index: int) -> np.ndarray:
    gen = stream(seed, index, "position")
    return scene.region_low + gen.random(3) * (scene.region_high - scene.region_low)


def sample_noise(seed: int, index: int, frames: int) -> np.ndarray:
    return complex_normal(stream(seed, index, "noise"), frames)


def make_batch(scene: Scene, seed: int, indices, frames: int, positions=None) -> EpisodeBatch:
    """Episodes for the given sample indices.

    Sample ``i`` depends only on ``(seed, i)``; ``positions`` overrides the
    uniform draw over the UE region (channel and noise streams unchanged).
    """
    indices = np.asarray(indices, dtype=np.int64)
    n = scene.n_elements
    b = len(indices)
    pos = np.empty((b, 3))
    h_d = np.empty(b, dtype=complex)
    h_r = np.empty((b, n), dtype=complex)
    g_r = np.empty((b, n), dtype=complex)
    noise = np.empty((b, frames), dtype=complex)
    for k, i in enumerate(indices):
        pos[k] = sample_position(scene, seed, i) if positions is None else positions[k]
        ch = sample_channel(scene, pos[k], stream(seed, i, "channel"))
        h_d[k], h_r[k], g_r[k] = ch.h_d, ch.h_r, ch.g_r
        noise[k] = sample_noise(seed, i, frames)
    return EpisodeBatch(pos, h_d, h_r, g_r, h_r * g_r, noise, indices)


def measure_batch(batch: EpisodeBatch, thetas, power: float, noise_power: float, frame: int,
                  pilot_symbol: complex = 1.0) -> np.ndarray:
    """Vectorized measurement for frame ``frame``; ``thetas`` shape (B, N) or (N,)."""
    clean = np.sqrt(power) * (batch.h_d + np.sum(batch.v_r * thetas, axis=-1)) * pilot_symbol
    return clean + np.sqrt(noise_power) * batch.noise[:, frame]
