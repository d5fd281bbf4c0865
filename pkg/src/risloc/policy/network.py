"""Recurrent active-sensing policy: LSTM state update, RIS head, position head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..dataset import EpisodeBatch, make_batch
from ..rng import complex_normal, stream
from ..scene import ChannelRealization, PilotParams, Scene

HIDDEN = 512
HEAD_WIDTH = 1024
HEAD_LAYERS = 4
FEATURE_DIMS = {"rss": 1, "pilot": 2}
GATES = ("c", "f", "i", "o")


@dataclass
class PolicyWeights:
    params: dict
    n_elements: int
    feature_mode: str = "pilot"
    hidden: int = HIDDEN
    head_width: int = HEAD_WIDTH
    head_layers: int = HEAD_LAYERS
    feature_shift: np.ndarray = None
    feature_scale: np.ndarray = None
    position_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    position_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        fd = self.feature_dim
        if self.feature_shift is None:
            self.feature_shift = np.zeros(fd)
        if self.feature_scale is None:
            self.feature_scale = np.ones(fd)
        self.feature_shift = np.asarray(self.feature_shift, dtype=float)
        self.feature_scale = np.asarray(self.feature_scale, dtype=float)
        self.position_center = np.asarray(self.position_center, dtype=float)
        self.position_scale = np.asarray(self.position_scale, dtype=float)

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIMS[self.feature_mode]

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def expected_shapes(self) -> dict:
        return policy_shapes(self.n_elements, self.feature_dim, self.hidden, self.head_width, self.head_layers)

    def check(self):
        for name, shape in self.expected_shapes().items():
            if name not in self.params:
                raise ValueError(f"policy weights missing {name}")
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name].data)):
                raise ValueError(f"{name} has non-finite entries")

    def copy(self) -> "PolicyWeights":
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        return PolicyWeights(params, self.n_elements, self.feature_mode, self.hidden, self.head_width,
                             self.head_layers, self.feature_shift.copy(), self.feature_scale.copy(),
                             self.position_center.copy(), self.position_scale.copy())

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    def metadata(self) -> dict:
        return {
            "kind": "active-policy",
            "n_elements": self.n_elements,
            "feature_mode": self.feature_mode,
            "hidden": self.hidden,
            "head_width": self.head_width,
            "head_layers": self.head_layers,
            "feature_shift": self.feature_shift.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "position_center": self.position_center.tolist(),
            "position_scale": self.position_scale.tolist(),
        }

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict) -> "PolicyWeights":
        params = {k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in arrays.items()}
        w = cls(params, meta["n_elements"], meta["feature_mode"], meta["hidden"], meta["head_width"],
                meta["head_layers"], meta["feature_shift"], meta["feature_scale"],
                meta["position_center"], meta["position_scale"])
        w.check()
        return w


def policy_shapes(n_elements, feature_dim, hidden=HIDDEN, head_width=HEAD_WIDTH, head_layers=HEAD_LAYERS) -> dict:
    shapes = {}
    for g in GATES:
        shapes[f"u_{g}"] = (feature_dim, hidden)
        shapes[f"w_{g}"] = (hidden, hidden)
        shapes[f"bias_{g}"] = (hidden,)
    widths = [hidden] + [head_width] * (head_layers - 1) + [2 * n_elements]
    for layer in range(head_layers):
        shapes[f"A_{layer + 1}"] = (widths[layer], widths[layer + 1])
        shapes[f"b_{layer + 1}"] = (widths[layer + 1],)
    shapes["ell_p"] = (hidden, 3)
    shapes["theta0"] = (2 * n_elements,)
    return shapes


def _glorot(gen, shape):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return gen.uniform(-limit, limit, size=shape)


def _orthogonal(gen, n):
    q, r = np.linalg.qr(gen.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_policy(n_elements: int, feature_mode: str = "pilot", seed: int = 0, hidden: int = HIDDEN,
                head_width: int = HEAD_WIDTH, head_layers: int = HEAD_LAYERS, zero: bool = False,
                **scalers) -> PolicyWeights:
    """Glorot-uniform input/head maps, orthogonal recurrent maps, zero biases.

    The initial RIS logits get i.i.d. random phases so the first probe is a
    random configuration until training moves it.
    """
    gen = stream(seed, 0, "init")
    shapes = policy_shapes(n_elements, FEATURE_DIMS[feature_mode], hidden, head_width, head_layers)
    params = {}
    for name, shape in shapes.items():
        if zero or name.startswith(("bias_", "b_")):
            value = np.zeros(shape)
        elif name.startswith("w_"):
            value = _orthogonal(gen, shape[0])
        elif name == "theta0":
            phase = gen.uniform(0, 2 * np.pi, n_elements)
            value = np.concatenate([np.cos(phase), np.sin(phase)])
        else:
            value = _glorot(gen, shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return PolicyWeights(params, n_elements, feature_mode, hidden, head_width, head_layers, **scalers)


@dataclass
class LSTMState:
    s: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LSTMState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def lstm_step(state: LSTMState, feature: Tensor, weights: PolicyWeights) -> LSTMState:
    feature = ad.as_tensor(feature)
    if feature.data.ndim != 2 or feature.shape[1] != weights.feature_dim:
        raise ad.ShapeError(f"feature shape {feature.shape} does not match mode {weights.feature_mode}")

    def pre(g):
        return feature @ weights[f"u_{g}"] + state.s @ weights[f"w_{g}"] + weights[f"bias_{g}"]

    f = ad.sigmoid(pre("f"))
    i = ad.sigmoid(pre("i"))
    o = ad.sigmoid(pre("o"))
    c = f * state.c + i * ad.tanh(pre("c"))
    s = o * ad.tanh(c)
    return LSTMState(s, c)


def ris_head(s: Tensor, weights: PolicyWeights):
    """Next RIS configuration as a unit-modulus (re, im) tensor pair."""
    h = s
    for layer in range(1, weights.head_layers + 1):
        h = h @ weights[f"A_{layer}"] + weights[f"b_{layer}"]
        if layer < weights.head_layers:
            h = ad.relu(h)
    n = weights.n_elements
    return ad.unit_normalize(h[:, :n], h[:, n:])


def initial_theta(weights: PolicyWeights):
    n = weights.n_elements
    logits = weights["theta0"]
    return ad.unit_normalize(logits[:n], logits[n:])


def position_head(c: Tensor, weights: PolicyWeights) -> Tensor:
    """Linear read-out of the cell state, in standardized coordinates."""
    return ad.as_tensor(c) @ weights["ell_p"]


def decode_position(raw: Tensor, center, scale) -> Tensor:
    return raw * scale + center


def raw_features(y: np.ndarray, mode: str) -> np.ndarray:
    """Unscaled features of complex measurements: |y|^2, or (Re y, Im y)."""
    y = np.asarray(y)
    if mode == "rss":
        return (np.abs(y) ** 2)[..., None]
    if mode == "pilot":
        return np.stack([y.real, y.imag], axis=-1)
    raise ValueError(f"unknown feature mode {mode!r}")


def feature_tensor(y_re: Tensor, y_im: Tensor, mode: str, shift, scale) -> Tensor:
    b = y_re.shape[0]
    if mode == "rss":
        f = ad.reshape(ad.square(y_re) + ad.square(y_im), (b, 1))
    else:
        f = ad.concat([ad.reshape(y_re, (b, 1)), ad.reshape(y_im, (b, 1))], axis=1)
    return (f - shift) * (1.0 / np.asarray(scale))


def measure_tensor(batch: EpisodeBatch, theta, power: float, noise_power: float, frame: int,
                   offsets=None):
    """Differentiable received pilot for every episode of the batch."""
    v = (Tensor(batch.v_r.real), Tensor(batch.v_r.imag))
    prod_re, prod_im = ad.complex_mul(v, theta)
    amp = np.sqrt(power)
    n = np.sqrt(noise_power) * batch.noise[:, frame]
    if offsets is not None:
        n = n + offsets[:, frame]
    y_re = (ad.tsum(prod_re, axis=1) + batch.h_d.real) * amp + n.real
    y_im = (ad.tsum(prod_im, axis=1) + batch.h_d.imag) * amp + n.imag
    return y_re, y_im


@dataclass
class Rollout:
    """Graph-level record of a batched episode (tensors, not arrays)."""

    thetas: list
    ys: list
    features: list
    states: list
    estimates: list


@dataclass
class EpisodeTrace:
    """Per-frame arrays with leading batch axis: thetas (B,T,N) complex, ys (B,T), ..."""

    thetas: np.ndarray
    ys: np.ndarray
    features: np.ndarray
    s: np.ndarray
    c: np.ndarray
    estimates: np.ndarray

    @property
    def frames(self) -> int:
        return self.ys.shape[1]

    @property
    def final_estimate(self) -> np.ndarray:
        return self.estimates[:, -1]

    @classmethod
    def from_rollout(cls, r: Rollout, batch_size: int) -> "EpisodeTrace":
        thetas = np.stack([np.broadcast_to(re.data + 1j * im.data, (batch_size, re.shape[-1]))
                           for re, im in r.thetas], axis=1)
        ys = np.stack([re.data + 1j * im.data for re, im in r.ys], axis=1)
        return cls(
            thetas=thetas,
            ys=ys,
            features=np.stack([f.data for f in r.features], axis=1),
            s=np.stack([st.s.data for st in r.states], axis=1),
            c=np.stack([st.c.data for st in r.states], axis=1),
            estimates=np.stack([e.data for e in r.estimates], axis=1),
        )


def rollout(weights: PolicyWeights, batch: EpisodeBatch, power: float, noise_power: float,
            frames: int | None = None, offsets=None) -> Rollout:
    """Unroll the policy for ``frames`` pilot frames on every episode of ``batch``."""
    frames = batch.frames if frames is None else frames
    if frames < 1:
        raise ValueError("need at least one frame")
    state = LSTMState.zeros(len(batch), weights.hidden)
    theta = initial_theta(weights)
    out = Rollout([], [], [], [], [])
    for t in range(frames):
        y = measure_tensor(batch, theta, power, noise_power, t, offsets)
        feat = feature_tensor(*y, weights.feature_mode, weights.feature_shift, weights.feature_scale)
        state = lstm_step(state, feat, weights)
        est = decode_position(position_head(state.c, weights), weights.position_center, weights.position_scale)
        out.thetas.append(theta)
        out.ys.append(y)
        out.features.append(feat)
        out.states.append(state)
        out.estimates.append(est)
        if t < frames - 1:
            theta = ris_head(state.s, weights)
    return out


def run_episodes(weights: PolicyWeights, batch: EpisodeBatch, power: float, noise_power: float,
                 frames: int | None = None, offsets=None) -> EpisodeTrace:
    return EpisodeTrace.from_rollout(rollout(weights, batch, power, noise_power, frames, offsets), len(batch))


def run_episode(scene: Scene, channel: ChannelRealization, pilot: PilotParams, weights: PolicyWeights,
                gen: np.random.Generator | None = None, ue_position=None) -> EpisodeTrace:
    """Single-episode convenience wrapper; noise drawn from ``gen`` (noise-free when None)."""
    noise = np.zeros((1, pilot.frames), dtype=complex)
    noise_power = 0.0
    if gen is not None:
        noise[0] = complex_normal(gen, pilot.frames)
        noise_power = scene.noise_power
    pos = np.zeros((1, 3)) if ue_position is None else np.asarray(ue_position, dtype=float)[None]
    batch = EpisodeBatch(pos, np.array([channel.h_d]), channel.h_r[None], channel.g_r[None],
                         channel.v_r[None], noise, np.zeros(1, dtype=np.int64))
    return run_episodes(weights, batch, pilot.power * abs(pilot.pilot_symbol) ** 2, noise_power)


def squared_errors(estimates, positions) -> list:
    pos = np.asarray(positions, dtype=float)
    return [ad.tsum(ad.square(ad.as_tensor(e) - pos), axis=1) for e in estimates]


def loss_final(estimates, positions) -> Tensor:
    """Mean over the batch of ||p_T - p||^2; ``estimates`` is the per-frame list."""
    return ad.mean(squared_errors(estimates[-1:], positions)[0])


def loss_average(estimates, positions) -> Tensor:
    """Mean over batch and frames of ||p_t - p||^2."""
    errs = squared_errors(estimates, positions)
    total = errs[0]
    for e in errs[1:]:
        total = total + e
    return ad.mean(total) * (1.0 / len(errs))


LOSSES = {"final": loss_final, "average": loss_average}
