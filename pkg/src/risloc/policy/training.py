from __future__ import annotations

from ..scene import PilotParams, Scene
from ..training import TrainConfig, TrainLog, feature_stats, fit, position_scalers
from .network import HEAD_LAYERS, HEAD_WIDTH, HIDDEN, LOSSES, PolicyWeights, init_policy, rollout


def train(scene: Scene, pilot: PilotParams, config: TrainConfig, loss: str = "final",
          feature_mode: str = "pilot", hidden: int = HIDDEN, head_width: int = HEAD_WIDTH,
          head_layers: int = HEAD_LAYERS, init_seed: int | None = None, on_epoch=None,
          weights: PolicyWeights | None = None) -> tuple[PolicyWeights, TrainLog]:
    """Train the active-sensing policy with the final-frame or frame-averaged loss.

    Fresh episodes are drawn for every minibatch; the feature standardization
    constants are fixed beforehand from a warm-up set at the training power.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; choose from {sorted(LOSSES)}")
    if weights is None:
        shift, scale = feature_stats(scene, pilot.power, feature_mode, config.warmup_samples, config.warmup_seed)
        center, pscale = position_scalers(scene)
        weights = init_policy(scene.n_elements, feature_mode, config.seed if init_seed is None else init_seed,
                              hidden, head_width, head_layers, feature_shift=shift, feature_scale=scale,
                              position_center=center, position_scale=pscale)

    def forward(batch):
        return rollout(weights, batch, pilot.power, scene.noise_power, pilot.frames).estimates

    log = fit(weights.params, forward, LOSSES[loss], scene, pilot.power, pilot.frames, config, on_epoch)
    return weights, log
