"""RSS radio maps of the RIS configurations an episode actually used."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..baselines.fingerprint import block_grid
from ..channel import los_model
from ..dataset import make_batch
from ..policy.network import PolicyWeights, run_episodes
from ..scene import Scene


@dataclass
class RadioMap:
    grid: dict  # x0, y0, z, nx, ny, pitch
    rss: np.ndarray  # (T, nx, ny)
    ue_position: np.ndarray
    thetas: np.ndarray  # (T, N)

    @property
    def frames(self) -> int:
        return self.rss.shape[0]

    def cell_of(self, position) -> tuple[int, int]:
        g = self.grid
        i = int(np.clip(np.floor((position[0] - g["x0"]) / g["pitch"] + 0.5), 0, g["nx"] - 1))
        j = int(np.clip(np.floor((position[1] - g["y0"]) / g["pitch"] + 0.5), 0, g["ny"] - 1))
        return i, j


def los_rss(scene: Scene, positions, thetas, power: float) -> np.ndarray:
    """|sqrt(P) (h_d + v^T theta_t)|^2 from the LOS model; returns (T, len(positions))."""
    h, v = los_model(scene, positions)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=complex))
    return power * np.abs(h[None] + thetas @ v.T) ** 2


def radio_map(scene: Scene, thetas, power: float, ue_position, pitch: float = 1.0) -> RadioMap:
    centers, grid = block_grid(scene, pitch)
    rss = los_rss(scene, centers, thetas, power).reshape(-1, grid["nx"], grid["ny"])
    return RadioMap(grid, rss, np.asarray(ue_position, dtype=float), np.atleast_2d(np.asarray(thetas)))


def matched_theta(scene: Scene, position) -> np.ndarray:
    """Phases that align every reflected LOS term with the direct path at ``position``."""
    h, v = los_model(scene, position)
    return np.exp(1j * (np.angle(h) - np.angle(v)))


def focusing_fraction(rmap: RadioMap) -> np.ndarray:
    """q_t: share of grid cells whose RSS exceeds the UE cell's, per frame."""
    i, j = rmap.cell_of(rmap.ue_position)
    ue = rmap.rss[:, i, j]
    return np.mean(rmap.rss > ue[:, None, None], axis=(1, 2))


def episode_radiomaps(weights: PolicyWeights, scene: Scene, power: float, frames: int, seed: int, indices,
                      pitch: float = 1.0) -> list[RadioMap]:
    """Replay test episodes ``indices`` of ``seed`` and map each designed configuration."""
    batch = make_batch(scene, seed, indices, frames)
    trace = run_episodes(weights, batch, power, scene.noise_power, frames)
    return [radio_map(scene, trace.thetas[k], power, batch.positions[k], pitch) for k in range(len(batch))]


def write_radiomap(rmap: RadioMap, out_dir, extra: dict | None = None) -> list[Path]:
    """One CSV matrix per frame (rows = x, columns = y) plus metadata.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(rmap.frames):
        p = out / f"frame_{t + 1}.csv"
        np.savetxt(p, rmap.rss[t], delimiter=",", fmt="%.17g")
        paths.append(p)
    meta = {"grid": rmap.grid, "frames": rmap.frames, "ue_position": rmap.ue_position.tolist(),
            "ue_cell": list(rmap.cell_of(rmap.ue_position)), "theta_phase": np.angle(rmap.thetas).tolist(),
            "focusing_fraction": focusing_fraction(rmap).tolist(), "units": "W (noise-free LOS RSS)"}
    meta.update(extra or {})
    p = out / "metadata.json"
    p.write_text(json.dumps(meta, indent=2))
    paths.append(p)
    return paths


def read_radiomap(out_dir) -> RadioMap:
    out = Path(out_dir)
    meta_path = out / "metadata.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no radio-map metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    g = meta["grid"]
    rss = []
    for t in range(meta["frames"]):
        m = np.loadtxt(out / f"frame_{t + 1}.csv", delimiter=",", ndmin=2)
        if m.shape != (g["nx"], g["ny"]):
            raise ValueError(f"frame {t + 1}: shape {m.shape} does not match grid {(g['nx'], g['ny'])}")
        rss.append(m)
    return RadioMap(g, np.array(rss), np.array(meta["ue_position"]), np.exp(1j * np.array(meta["theta_phase"])))
