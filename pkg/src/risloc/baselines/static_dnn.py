"""Non-adaptive baselines: a feed-forward estimator over a fixed RIS sequence.

The RIS sequence is either random (fixed by seed) or learned jointly with
the estimator; in both cases it does not depend on the measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..dataset import EpisodeBatch
from ..policy.network import decode_position, feature_tensor, loss_final, measure_tensor, FEATURE_DIMS
from ..rng import stream
from ..scene import PilotParams, RISConfig, Scene
from ..training import TrainConfig, TrainLog, feature_stats, fit, position_scalers

LAYERS = (200, 200, 200, 3)


@dataclass
class StaticRISDesign:
    logits: np.ndarray  # (T, 2N): real parts then imaginary parts
    provenance: str = "random"

    @property
    def frames(self) -> int:
        return self.logits.shape[0]

    @property
    def n_elements(self) -> int:
        return self.logits.shape[1] // 2

    def thetas(self) -> np.ndarray:
        """Unit-modulus configurations, shape (T, N)."""
        n = self.n_elements
        out = []
        for row in self.logits:
            re, im = ad.unit_normalize(row[:n], row[n:])
            out.append(RISConfig(re.data + 1j * im.data).theta)
        return np.array(out)

    @classmethod
    def random(cls, frames: int, n_elements: int, seed: int) -> "StaticRISDesign":
        rows = []
        for t in range(frames):
            phase = stream(seed, t, "theta").uniform(0, 2 * np.pi, n_elements)
            rows.append(np.concatenate([np.cos(phase), np.sin(phase)]))
        return cls(np.array(rows), "random")


class StaticDNN:
    """MLP [200, 200, 200, 3] from concatenated per-frame features to position."""

    def __init__(self, design: StaticRISDesign, feature_mode: str = "pilot", seed: int = 0,
                 layers=LAYERS, feature_shift=None, feature_scale=None, position_center=None,
                 position_scale=None):
        self.design = design
        self.feature_mode = feature_mode
        self.layers = tuple(layers)
        fd = FEATURE_DIMS[feature_mode]
        self.feature_shift = np.zeros(fd) if feature_shift is None else np.asarray(feature_shift, float)
        self.feature_scale = np.ones(fd) if feature_scale is None else np.asarray(feature_scale, float)
        self.position_center = np.zeros(3) if position_center is None else np.asarray(position_center, float)
        self.position_scale = np.ones(3) if position_scale is None else np.asarray(position_scale, float)
        gen = stream(seed, 1, "init")
        widths = [fd * design.frames] + list(self.layers)
        self.params = {}
        for k in range(len(self.layers)):
            limit = np.sqrt(6.0 / (widths[k] + widths[k + 1]))
            self.params[f"W_{k + 1}"] = Tensor(gen.uniform(-limit, limit, (widths[k], widths[k + 1])),
                                               requires_grad=True, name=f"W_{k + 1}")
            self.params[f"c_{k + 1}"] = Tensor(np.zeros(widths[k + 1]), requires_grad=True, name=f"c_{k + 1}")
        self.theta_logits = Tensor(design.logits, requires_grad=design.provenance == "learned", name="theta_logits")
        if design.provenance == "learned":
            self.params["theta_logits"] = self.theta_logits

    def thetas(self):
        n = self.design.n_elements
        logits = self.theta_logits
        return [ad.unit_normalize(logits[t, :n], logits[t, n:]) for t in range(self.design.frames)]

    def forward(self, batch: EpisodeBatch, power: float, noise_power: float, offsets=None) -> Tensor:
        feats = []
        for t, theta in enumerate(self.thetas()):
            y = measure_tensor(batch, theta, power, noise_power, t, offsets)
            feats.append(feature_tensor(*y, self.feature_mode, self.feature_shift, self.feature_scale))
        h = ad.concat(feats, axis=1)
        for k in range(1, len(self.layers) + 1):
            h = h @ self.params[f"W_{k}"] + self.params[f"c_{k}"]
            if k < len(self.layers):
                h = ad.relu(h)
        return decode_position(h, self.position_center, self.position_scale)

    def sync_design(self):
        self.design = StaticRISDesign(self.theta_logits.data.copy(), self.design.provenance)
        return self.design

    def arrays(self) -> dict:
        out = {k: v.data for k, v in self.params.items() if k != "theta_logits"}
        out["theta_logits"] = self.theta_logits.data
        return out

    def metadata(self) -> dict:
        return {
            "kind": "static-dnn",
            "provenance": self.design.provenance,
            "feature_mode": self.feature_mode,
            "layers": list(self.layers),
            "frames": self.design.frames,
            "n_elements": self.design.n_elements,
            "feature_shift": self.feature_shift.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "position_center": self.position_center.tolist(),
            "position_scale": self.position_scale.tolist(),
        }

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict) -> "StaticDNN":
        design = StaticRISDesign(np.array(arrays["theta_logits"]), meta["provenance"])
        model = cls(design, meta["feature_mode"], 0, meta["layers"], meta["feature_shift"], meta["feature_scale"],
                    meta["position_center"], meta["position_scale"])
        for k, v in arrays.items():
            if k != "theta_logits":
                model.params[k].data[...] = v
        return model


def static_dnn_train(scene: Scene, pilot: PilotParams, design: StaticRISDesign, feature_mode: str,
                     config: TrainConfig, init_seed: int | None = None, on_epoch=None,
                     model: StaticDNN | None = None, layers=LAYERS) -> tuple[StaticDNN, TrainLog]:
    """Fit the estimator (and, for a learned design, the RIS logits) on the final-position MSE."""
    if design.frames != pilot.frames:
        raise ValueError(f"design has {design.frames} frames, pilot has {pilot.frames}")
    if model is None:
        shift, scale = feature_stats(scene, pilot.power, feature_mode, config.warmup_samples, config.warmup_seed)
        center, pscale = position_scalers(scene)
        model = StaticDNN(design, feature_mode, config.seed if init_seed is None else init_seed, layers,
                          feature_shift=shift, feature_scale=scale, position_center=center, position_scale=pscale)

    def forward(batch):
        return [model.forward(batch, pilot.power, scene.noise_power)]

    log = fit(model.params, forward, loss_final, scene, pilot.power, pilot.frames, config, on_epoch)
    model.sync_design()
    return model, log
