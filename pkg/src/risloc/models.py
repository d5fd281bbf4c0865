"""Saving and loading trained estimators in the checkpoint container."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .autodiff import AdamState, load_checkpoint, save_checkpoint
from .baselines.static_dnn import StaticDNN
from .policy.network import PolicyWeights
from .scene import Scene


class ModelMismatch(ValueError):
    pass


def save_model(path, model, scene: Scene, frames: int, extra: dict | None = None,
               step: int = 0, optimizer: AdamState | None = None) -> str:
    """Write ``model`` and return the file's sha256."""
    meta = dict(model.metadata())
    meta.update({"scene_fingerprint": scene.fingerprint(), "frames": int(frames)})
    meta.update(extra or {})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, model.arrays(), meta, step=step, optimizer=optimizer)
    return file_hash(path)


def load_model(path, n_elements: int | None = None, feature_mode: str | None = None,
               scene: Scene | None = None):
    ck = load_checkpoint(path)
    meta = ck.metadata
    if n_elements is not None and meta.get("n_elements") != n_elements:
        raise ModelMismatch(f"{path}: trained for N={meta.get('n_elements')}, requested N={n_elements}")
    if feature_mode is not None and meta.get("feature_mode") != feature_mode:
        raise ModelMismatch(f"{path}: feature mode {meta.get('feature_mode')!r}, requested {feature_mode!r}")
    if scene is not None and meta.get("scene_fingerprint") != scene.fingerprint():
        raise ModelMismatch(f"{path}: trained on a different scene")
    kind = meta.get("kind")
    if kind == "active-policy":
        return PolicyWeights.from_arrays(ck.arrays, meta), meta
    if kind == "static-dnn":
        return StaticDNN.from_arrays(ck.arrays, meta), meta
    raise ModelMismatch(f"{path}: unknown model kind {kind!r}")


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
