"""Train, evaluate and tabulate every method on a shared, seeded test set."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .. import __version__
from ..autodiff import load_checkpoint
from ..baselines import crlb
from ..baselines.fingerprint import (build_fingerprints, load_fingerprints, normalized_rss, save_fingerprints,
                                     wknn_localize)
from ..baselines.static_dnn import StaticRISDesign, static_dnn_train
from ..channel import snr_to_power
from ..dataset import EpisodeBatch, make_batch, measure_batch
from ..models import ModelMismatch, file_hash, load_model, save_model
from ..policy.network import run_episodes
from ..policy.training import train as train_policy
from ..scene import PilotParams
from .config import LEARNED, ExperimentConfig, dump_config

log = logging.getLogger(__name__)

COLUMNS = ("method", "snr_db", "frames", "episodes", "mse", "rmse", "median", "max_modulus_error")


class MetricsError(RuntimeError):
    pass


class RunDirLocked(RuntimeError):
    pass


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, method, snr_db, frames, errors, modulus_error):
        errors = np.asarray(errors, dtype=float)
        if errors.size == 0:
            raise MetricsError(f"{method} @ {snr_db} dB: no episodes evaluated")
        mse = float(np.mean(errors ** 2))
        row = {"method": method, "snr_db": float(snr_db), "frames": int(frames), "episodes": int(errors.size),
               "mse": mse, "rmse": float(np.sqrt(mse)), "median": float(np.median(errors)),
               "max_modulus_error": float(modulus_error)}
        if not all(np.isfinite(row[k]) for k in ("mse", "median", "max_modulus_error")):
            raise MetricsError(f"{method} @ {snr_db} dB, T={frames}: non-finite metrics {row}")
        self.rows.append(row)
        return row

    def get(self, method, snr_db=None, frames=None) -> dict:
        for row in self.rows:
            if row["method"] == method and (snr_db is None or row["snr_db"] == float(snr_db)) \
                    and (frames is None or row["frames"] == int(frames)):
                return row
        raise KeyError((method, snr_db, frames))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            rows = []
            for r in reader:
                rows.append({"method": r["method"], "snr_db": float(r["snr_db"]), "frames": int(r["frames"]),
                             "episodes": int(r["episodes"]), "mse": float(r["mse"]), "rmse": float(r["rmse"]),
                             "median": float(r["median"]), "max_modulus_error": float(r["max_modulus_error"])})
        return cls(rows)


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _modulus_error(thetas) -> float:
    return float(np.max(np.abs(np.abs(np.asarray(thetas)) - 1.0)))


def eval_set(config: ExperimentConfig, frames: int | None = None) -> EpisodeBatch:
    frames = config.frames if frames is None else frames
    return make_batch(config.scene, config.seeds.eval, np.arange(config.evaluation.episodes), frames)


def _chunks(batch: EpisodeBatch, size: int):
    for start in range(0, len(batch), size):
        yield batch.subset(slice(start, start + size))


def artifact_path(config: ExperimentConfig, method: str, snr_db: float) -> Path:
    ext = "fpdb" if method == "wknn" else "ckpt"
    return Path(config.output_dir) / "checkpoints" / f"{method}_snr{snr_db:g}_T{config.frames}.{ext}"


def training_key(config: ExperimentConfig, method: str, snr_db: float) -> str:
    """Hash of everything that determines a trained artifact."""
    blob = {"scene": config.scene.to_dict(), "frames": config.frames, "snr_db": float(snr_db), "method": method,
            "feature_mode": config.feature_mode, "training": config.to_dict()["training"],
            "fingerprint": config.to_dict()["fingerprint"],
            "seeds": {k: v for k, v in config.to_dict()["seeds"].items() if k not in ("eval", "crlb")}}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def train_method(config: ExperimentConfig, method: str, snr_db: float, path=None):
    """Fit one learned method (or build the fingerprint DB) and save it."""
    path = Path(path or artifact_path(config, method, snr_db))
    path.parent.mkdir(parents=True, exist_ok=True)
    scene, t = config.scene, config.training
    pilot = PilotParams(snr_to_power(snr_db), config.frames)
    key = training_key(config, method, snr_db)
    design = StaticRISDesign.random(config.frames, scene.n_elements, config.seeds.design)
    if method == "wknn":
        db = build_fingerprints(scene, pilot, design.thetas(), config.fingerprint.realizations,
                                config.seeds.fingerprint, pitch=config.fingerprint.pitch)
        save_fingerprints(db, path)
        return db
    on_epoch = _progress(method, snr_db)
    if method == "active":
        model, tlog = train_policy(scene, pilot, config.train_config(), loss=t.loss, feature_mode=config.feature_mode,
                                   hidden=t.hidden, head_width=t.head_width, head_layers=t.head_layers,
                                   init_seed=config.seeds.init, on_epoch=on_epoch)
    elif method in ("static-random", "static-learned"):
        if method == "static-learned":
            design = StaticRISDesign(design.logits, "learned")
        model, tlog = static_dnn_train(scene, pilot, design, config.feature_mode, config.train_config(),
                                       init_seed=config.seeds.init, on_epoch=on_epoch, layers=t.dnn_layers)
    else:
        raise ValueError(f"{method} has nothing to train")
    save_model(path, model, scene, config.frames,
               extra={"training_key": key, "loss": t.loss if method == "active" else "final",
                      "best_val_mse": tlog.best_val_mse, "steps_run": tlog.steps_run})
    return model


def _progress(method, snr_db):
    def on_epoch(entry):
        log.info("%s @ %g dB epoch %d step %d train %.3f val %.3f", method, snr_db, entry["epoch"], entry["step"],
                 entry["train_loss"], entry["val_mse"])
    return on_epoch


def load_method(config: ExperimentConfig, method: str, snr_db: float, path=None):
    path = Path(path or artifact_path(config, method, snr_db))
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint for {method} @ {snr_db:g} dB: {path}")
    if method == "wknn":
        db = load_fingerprints(path)
        if db.frames != config.frames or db.thetas.shape[1] != config.scene.n_elements:
            raise ModelMismatch(f"{path}: fingerprint DB does not match the configured scene/frames")
        return db
    model, meta = load_model(path, n_elements=config.scene.n_elements, feature_mode=config.feature_mode,
                             scene=config.scene)
    if meta.get("frames") != config.frames:
        raise ModelMismatch(f"{path}: trained for T={meta.get('frames')}, config has T={config.frames}")
    return model


def _is_current(config, method, snr_db, path) -> bool:
    if not path.exists():
        return False
    if method == "wknn":
        db = load_fingerprints(path)
        fp = config.fingerprint
        return (db.realizations, db.seed, db.grid.get("pitch"), db.frames) == \
            (fp.realizations, config.seeds.fingerprint, float(fp.pitch), config.frames)
    return load_checkpoint(path).metadata.get("training_key") == training_key(config, method, snr_db)


def evaluate_method(config: ExperimentConfig, method: str, snr_db: float, model, batch: EpisodeBatch,
                    frames: int | None = None):
    """Per-frame estimates (E, T', 3) and every RIS configuration used.

    Non-adaptive methods only report the final estimate (T' = 1).
    """
    frames = config.frames if frames is None else frames
    scene = config.scene
    power = snr_to_power(snr_db)
    pilot = PilotParams(power, frames)
    size = config.evaluation.chunk
    if method == "active":
        parts = [run_episodes(model, b, power, scene.noise_power, frames) for b in _chunks(batch, size)]
        return np.concatenate([p.estimates for p in parts]), np.concatenate([p.thetas for p in parts])
    if method in ("static-random", "static-learned"):
        est = np.concatenate([model.forward(b, power, scene.noise_power).data for b in _chunks(batch, size)])
        return est[:, None], model.design.thetas()
    if method == "wknn":
        rss = np.stack([normalized_rss(measure_batch(batch, model.thetas[t], power, scene.noise_power, t),
                                       scene.noise_power) for t in range(frames)], axis=1)
        return wknn_localize(model, rss, config.fingerprint.k)[:, None], model.thetas
    if method == "crlb-gd":
        parts = [crlb.crlb_active_episodes(scene, b, pilot, config.seeds.crlb, config.crlb)
                 for b in _chunks(batch, size)]
        return np.concatenate([p.estimates for p in parts]), np.concatenate([p.thetas for p in parts])
    raise ValueError(f"unknown method {method!r}")


def _lock(run_dir: Path) -> FileLock:
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RunDirLocked(f"run directory {run_dir} is in use by another process") from None
    return lock


def _versions() -> dict:
    return {"risloc": __version__, "numpy": np.__version__, "python": platform.python_version()}


def run_experiment(config: ExperimentConfig, train: bool = True, methods=None,
                   table_name: str = "results.csv") -> ResultTable:
    """Evaluate each (method, SNR) on ``evaluation.episodes`` shared test episodes.

    With ``train=False`` every learned method must already have a checkpoint in
    the run directory; otherwise missing or stale ones are (re)trained.
    """
    run_dir = Path(config.output_dir)
    methods = list(config.methods if methods is None else methods)
    lock = _lock(run_dir)
    try:
        batch = eval_set(config)
        table = ResultTable()
        manifest = {"config": config.to_dict(), "versions": _versions(), "checkpoints": {}, "wall_time_s": {},
                    "eval_episodes": len(batch), "eval_seed": config.seeds.eval}
        for method in methods:
            for snr in config.snr_db:
                key = f"{method}@{snr:g}dB"
                times = {}
                model = None
                if method in LEARNED or method == "wknn":
                    path = artifact_path(config, method, snr)
                    if train and not _is_current(config, method, snr, path):
                        t0 = time.perf_counter()
                        train_method(config, method, snr, path)
                        times["train"] = time.perf_counter() - t0
                    model = load_method(config, method, snr, path)
                    manifest["checkpoints"][str(path.relative_to(run_dir))] = file_hash(path)
                t0 = time.perf_counter()
                est, thetas = evaluate_method(config, method, snr, model, batch)
                times["eval"] = time.perf_counter() - t0
                errors = np.linalg.norm(est[:, -1] - batch.positions, axis=1)
                row = table.add(method, snr, config.frames, errors, _modulus_error(thetas))
                manifest["wall_time_s"][key] = times
                log.info("%s: mse %.3f median %.3f", key, row["mse"], row["median"])
        table.to_csv(run_dir / table_name)
        (run_dir / "config.yaml").write_text(dump_config(config))
        (run_dir / (Path(table_name).stem + ".manifest.json")).write_text(json.dumps(manifest, indent=2))
        return table
    finally:
        lock.release()


def sweep_frames(config: ExperimentConfig, snr_db: float | None = None, checkpoint=None,
                 table_name: str = "sweep.csv") -> ResultTable:
    """Evaluate one active policy truncated at t = 1..T without retraining."""
    snr_db = config.snr_db[0] if snr_db is None else snr_db
    run_dir = Path(config.output_dir)
    model = load_method(config, "active", snr_db, checkpoint)
    lock = _lock(run_dir)
    try:
        batch = eval_set(config)
        est, thetas = evaluate_method(config, "active", snr_db, model, batch)
        table = ResultTable()
        for t in range(config.frames):
            errors = np.linalg.norm(est[:, t] - batch.positions, axis=1)
            table.add("active", snr_db, t + 1, errors, _modulus_error(thetas[:, : t + 1]))
        table.to_csv(run_dir / table_name)
        return table
    finally:
        lock.release()
