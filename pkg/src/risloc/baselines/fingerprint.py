"""RSS fingerprinting with weighted k-nearest-neighbour matching.

RSS values are stored in units of the noise power (|y|^2 / sigma^2) so
distances are on an O(1)-to-O(1e3) scale rather than ~1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff.checkpoint import read_container, write_container
from ..dataset import make_batch, measure_batch
from ..scene import ConfigError, PilotParams, Scene

FP_MAGIC = b"RISLFPDB"
WEIGHT_EPS = 1e-9


@dataclass
class FingerprintDB:
    centers: np.ndarray  # (K, 3)
    rss: np.ndarray  # (K, T)
    thetas: np.ndarray  # (T, N) complex
    grid: dict
    seed: int = 0
    realizations: int = 1

    @property
    def frames(self) -> int:
        return self.rss.shape[1]

    def __len__(self):
        return len(self.centers)


def block_grid(scene: Scene, pitch: float = 1.0):
    """Centers of the ``pitch`` x ``pitch`` blocks tiling the UE region in x-y."""
    low, high = scene.region_low, scene.region_high
    nx = int(round((high[0] - low[0]) / pitch))
    ny = int(round((high[1] - low[1]) / pitch))
    if nx < 1 or ny < 1:
        raise ConfigError("UE region is empty at this block pitch")
    xs = low[0] + (np.arange(nx) + 0.5) * pitch
    ys = low[1] + (np.arange(ny) + 0.5) * pitch
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    z = scene.ue_center[2]
    centers = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
    spec = {"x0": float(xs[0]), "y0": float(ys[0]), "z": float(z), "nx": nx, "ny": ny, "pitch": float(pitch)}
    return centers, spec


def normalized_rss(y, noise_power: float) -> np.ndarray:
    return np.abs(y) ** 2 / noise_power


def build_fingerprints(scene: Scene, pilot: PilotParams, thetas, realizations: int, seed: int,
                       noise_power: float | None = None, pitch: float = 1.0) -> FingerprintDB:
    """Average RSS over ``realizations`` independent channel draws per block center."""
    if realizations < 1:
        raise ConfigError("need at least one realization per block")
    thetas = np.asarray(thetas, dtype=complex)
    frames = thetas.shape[0]
    noise = scene.noise_power if noise_power is None else noise_power
    centers, spec = block_grid(scene, pitch)
    k = len(centers)
    pos = np.repeat(centers, realizations, axis=0)
    batch = make_batch(scene, seed, np.arange(k * realizations), frames, positions=pos)
    rss = np.empty((k * realizations, frames))
    for t in range(frames):
        y = measure_batch(batch, thetas[t], pilot.power, noise, t, pilot.pilot_symbol)
        rss[:, t] = normalized_rss(y, scene.noise_power)
    rss = rss.reshape(k, realizations, frames).mean(axis=1)
    return FingerprintDB(centers, rss, thetas, spec, seed, realizations)


def _neighbours(db_rss, query, k):
    d = np.linalg.norm(db_rss[None, :, :] - query[:, None, :], axis=-1)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(d, order, axis=1)


def wknn_localize(db: FingerprintDB, rss, k: int = 5) -> np.ndarray:
    """Inverse-distance weighted mean of the k closest block centers.

    ``rss`` may be one fingerprint (T,) or a batch (B, T).
    """
    if k > len(db):
        raise ValueError(f"k={k} exceeds database size {len(db)}")
    q = np.atleast_2d(np.asarray(rss, dtype=float))
    idx, dist = _neighbours(db.rss, q, k)
    w = 1.0 / (dist + WEIGHT_EPS)
    est = np.einsum("bk,bkj->bj", w, db.centers[idx]) / w.sum(axis=1, keepdims=True)
    return est[0] if np.ndim(rss) == 1 else est


def save_fingerprints(db: FingerprintDB, path) -> None:
    rows = np.concatenate([db.centers, db.rss], axis=1)
    header = {"grid": db.grid, "frames": db.frames, "seed": db.seed, "realizations": db.realizations,
              "n_elements": db.thetas.shape[1]}
    write_container(path, {"rows": rows, "theta_re": db.thetas.real, "theta_im": db.thetas.imag},
                    header, magic=FP_MAGIC)


def load_fingerprints(path) -> FingerprintDB:
    header, arrays = read_container(path, magic=FP_MAGIC)
    rows = arrays["rows"]
    return FingerprintDB(rows[:, :3].copy(), rows[:, 3:].copy(), arrays["theta_re"] + 1j * arrays["theta_im"],
                         header["grid"], header["seed"], header["realizations"])
