"""Greedy CRLB-driven active sensing with MAP position estimates.

After every pilot the position is re-estimated by maximizing the LOS-model
likelihood; the next RIS configuration then minimizes the trace of the
inverse Fisher information evaluated at that estimate. Functions operate on
a leading batch axis so many episodes advance together.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..channel import los_model
from ..dataset import EpisodeBatch, measure_batch
from ..rng import stream
from ..scene import PilotParams, RISConfig, Scene

REG = 1e-9


@dataclass
class GDConfig:
    iterations: int = 100
    step: float = 0.1
    map_pitch: float = 2.0
    refine_steps: int = 50
    refine_step: float = 1.0


@dataclass
class FisherInfo:
    matrix: np.ndarray
    position: np.ndarray

    @property
    def crlb(self) -> float:
        return float(np.trace(np.linalg.inv(self.matrix)))


def fisher_from_jacobians(jac, power: float, noise_power: float) -> np.ndarray:
    """J = (2P/sigma^2) sum_t Re{conj(d mu_t) d mu_t^T} for jac of shape (..., T, k)."""
    jac = np.asarray(jac, dtype=complex)
    outer = np.einsum("...ti,...tj->...ij", np.conj(jac), jac).real
    return (2.0 * power / noise_power) * outer


def mean_and_jacobian(scene: Scene, position, thetas, pilot_symbol=1.0):
    """Noise-free LOS mean mu_t and d mu_t / dp for each configuration.

    ``position`` (..., 3); ``thetas`` (..., T, N). Returns (..., T) and (..., T, 3).
    """
    h, v, dh, dv = los_model(scene, position, with_gradient=True)
    thetas = np.asarray(thetas, dtype=complex)
    mu = (h[..., None] + np.einsum("...n,...tn->...t", v, thetas)) * pilot_symbol
    dmu = (dh[..., None, :] + np.einsum("...kn,...tn->...tk", dv, thetas)) * pilot_symbol
    return mu, dmu


def fisher_info(position, thetas, scene: Scene, pilot: PilotParams, noise_power: float | None = None) -> FisherInfo:
    noise = scene.noise_power if noise_power is None else noise_power
    thetas = np.atleast_2d(np.asarray([getattr(t, "theta", t) for t in thetas], dtype=complex))
    _, dmu = mean_and_jacobian(scene, position, thetas, pilot.pilot_symbol)
    return FisherInfo(fisher_from_jacobians(dmu, pilot.power, noise), np.asarray(position, dtype=float))


def _regularize(J):
    eig = np.linalg.eigvalsh(J)
    bad = eig[..., 0] <= 1e-12 * np.maximum(eig[..., -1], 1e-300)
    if np.any(bad):
        warnings.warn("singular Fisher information; adding 1e-9 * I", RuntimeWarning, stacklevel=3)
        J = J + np.where(bad[..., None, None], REG * np.eye(J.shape[-1]), 0.0)
    return J


def crlb_objective(phases, dh, dv, J_past, gain):
    """trace(J^-1) for candidate phases and its gradient w.r.t. the phases.

    Shapes: phases (B, N), dh (B, 3), dv (B, 3, N), J_past (B, 3, 3).
    """
    theta = np.exp(1j * phases)
    g = dh + np.einsum("bkn,bn->bk", dv, theta)
    J = J_past + gain * np.einsum("bi,bj->bij", np.conj(g), g).real
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        J = _regularize(J)
    inv = np.linalg.inv(J)
    f = np.trace(inv, axis1=1, axis2=2)
    m = inv @ inv
    w = np.einsum("bkn,bk->bn", np.conj(dv), np.einsum("bkj,bj->bk", m, g))
    grad = -2.0 * gain * np.imag(np.conj(theta) * w)
    return f, grad


def _gd_batch(p_hat, past_thetas, scene, pilot, noise_power, config: GDConfig, init_phases):
    h, v, dh, dv = los_model(scene, p_hat, with_gradient=True)
    dh = dh * pilot.pilot_symbol
    dv = dv * pilot.pilot_symbol
    gain = 2.0 * pilot.power / noise_power
    if past_thetas is not None and past_thetas.shape[1] > 0:
        dmu = dh[:, None, :] + np.einsum("bkn,btn->btk", dv, past_thetas)
        J_past = fisher_from_jacobians(dmu, pilot.power, noise_power)
    else:
        J_past = np.zeros((len(p_hat), 3, 3))

    phases = np.array(init_phases, dtype=float)
    f, grad = crlb_objective(phases, dh, dv, J_past, gain)
    best_f, best_phases = f.copy(), phases.copy()
    step = np.full(len(phases), config.step)
    for _ in range(config.iterations):
        scale = np.max(np.abs(grad), axis=1, keepdims=True)
        direction = np.where(scale > 0, grad / np.where(scale > 0, scale, 1.0), 0.0)
        trial = phases - step[:, None] * direction
        f_new, grad_new = crlb_objective(trial, dh, dv, J_past, gain)
        ok = f_new < f
        phases = np.where(ok[:, None], trial, phases)
        f = np.where(ok, f_new, f)
        grad = np.where(ok[:, None], grad_new, grad)
        step = np.where(ok, step, 0.5 * step)
        better = f < best_f
        best_f = np.where(better, f, best_f)
        best_phases = np.where(better[:, None], phases, best_phases)
    g = dh + np.einsum("bkn,bn->bk", dv, np.exp(1j * best_phases))
    _regularize(J_past + gain * np.einsum("bi,bj->bij", np.conj(g), g).real)
    return np.mod(best_phases, 2 * np.pi), best_f


def crlb_gd_next_theta(p_hat, past_thetas, scene: Scene, pilot: PilotParams, config: GDConfig | None = None,
                       gen: np.random.Generator | None = None, noise_power: float | None = None,
                       init_phases=None) -> RISConfig:
    """Phase-domain descent on trace(J^-1) for the next pilot; returns the best iterate."""
    config = config or GDConfig()
    gen = gen or np.random.default_rng(0)
    noise = scene.noise_power if noise_power is None else noise_power
    n = scene.n_elements
    past = np.asarray([getattr(t, "theta", t) for t in past_thetas], dtype=complex).reshape(1, -1, n)
    if init_phases is None:
        init_phases = gen.uniform(0, 2 * np.pi, n)
    phases, _ = _gd_batch(np.asarray(p_hat, float)[None], past, scene, pilot, noise, config,
                          np.asarray(init_phases, float)[None])
    return RISConfig.from_phases(phases[0])


@lru_cache(maxsize=16)
def _coarse_grid(scene: Scene, pitch: float):
    low, high = scene.region_low, scene.region_high
    axes = []
    for k in range(3):
        span = high[k] - low[k]
        m = max(1, int(round(span / pitch)))
        axes.append(low[k] + (np.arange(m) + 0.5) * span / m if span > 0 else np.array([low[k]]))
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    h, v = los_model(scene, g)
    return g, h, v


def coarse_grid(scene: Scene, pitch: float = 2.0) -> np.ndarray:
    return _coarse_grid(scene, float(pitch))[0]


def log_likelihood(y, thetas, positions, scene: Scene, pilot: PilotParams, noise_power: float = 1.0):
    """-sum_t |y_t - sqrt(P) mu_t(p)|^2 / sigma^2 for (..., 3) positions."""
    mu, _ = mean_and_jacobian(scene, positions, thetas, pilot.pilot_symbol)
    return -np.sum(np.abs(np.asarray(y) - np.sqrt(pilot.power) * mu) ** 2, axis=-1) / noise_power


def map_estimate_batch(ys, thetas, scene: Scene, pilot: PilotParams, config: GDConfig | None = None):
    """MAP positions under a uniform prior on the UE region.

    ``ys`` (B, t) complex, ``thetas`` (B, t, N). The likelihood is scaled by
    sigma^2 (irrelevant for the maximizer), so noise-free data is allowed.
    """
    config = config or GDConfig()
    ys = np.asarray(ys, dtype=complex)
    thetas = np.asarray(thetas, dtype=complex)
    amp = np.sqrt(pilot.power) * pilot.pilot_symbol
    grid, gh, gv = _coarse_grid(scene, float(config.map_pitch))
    mu = gh[None, :, None] + np.einsum("gn,btn->bgt", gv, thetas)
    score = -np.sum(np.abs(ys[:, None, :] - amp * mu) ** 2, axis=-1)
    best = np.argmax(score, axis=1)
    p = grid[best].copy()
    f = score[np.arange(len(best)), best]
    low, high = scene.region_low, scene.region_high

    def value_and_grad(pos):
        m, dm = mean_and_jacobian(scene, pos, thetas)
        r = ys - amp * m
        val = -np.sum(np.abs(r) ** 2, axis=-1)
        grad = 2.0 * np.sum(np.real(np.conj(r)[..., None] * amp * dm), axis=-2)
        return val, grad

    _, grad = value_and_grad(p)
    step = np.full(len(p), config.refine_step)
    for _ in range(config.refine_steps):
        norm = np.linalg.norm(grad, axis=1, keepdims=True)
        trial = np.clip(p + step[:, None] * grad / np.where(norm > 0, norm, 1.0), low, high)
        f_new, g_new = value_and_grad(trial)
        ok = f_new > f
        p = np.where(ok[:, None], trial, p)
        f = np.where(ok, f_new, f)
        grad = np.where(ok[:, None], g_new, grad)
        step = np.where(ok, step, 0.5 * step)
    return p


def map_estimate(ys, thetas, scene: Scene, pilot: PilotParams, config: GDConfig | None = None) -> np.ndarray:
    ys = np.atleast_1d(np.asarray(ys, dtype=complex))
    if ys.size < 1:
        raise ValueError("MAP estimate needs at least one measurement")
    thetas = np.asarray([getattr(t, "theta", t) for t in thetas], dtype=complex)
    return map_estimate_batch(ys[None], thetas[None], scene, pilot, config)[0]


@dataclass
class CRLBTrace:
    thetas: np.ndarray  # (B, T, N)
    ys: np.ndarray  # (B, T)
    estimates: np.ndarray  # (B, T, 3)
    objective: np.ndarray  # (B, T-1) trace(J^-1) of each designed configuration

    @property
    def final_estimate(self):
        return self.estimates[:, -1]


def crlb_active_episodes(scene: Scene, batch: EpisodeBatch, pilot: PilotParams, seed: int,
                         config: GDConfig | None = None, noise_power: float | None = None) -> CRLBTrace:
    """Alternate measure -> MAP -> CRLB design for every episode of ``batch``."""
    config = config or GDConfig()
    noise = scene.noise_power if noise_power is None else noise_power
    b, n, frames = len(batch), scene.n_elements, pilot.frames
    gens = [stream(seed, int(i), "crlb") for i in batch.indices]
    theta = np.exp(1j * np.stack([g.uniform(0, 2 * np.pi, n) for g in gens]))
    thetas = np.empty((b, frames, n), dtype=complex)
    ys = np.empty((b, frames), dtype=complex)
    est = np.empty((b, frames, 3))
    obj = np.empty((b, max(frames - 1, 0)))
    for t in range(frames):
        thetas[:, t] = theta
        ys[:, t] = measure_batch(batch, theta, pilot.power, noise, t, pilot.pilot_symbol)
        est[:, t] = map_estimate_batch(ys[:, : t + 1], thetas[:, : t + 1], scene, pilot, config)
        if t < frames - 1:
            init = np.stack([g.uniform(0, 2 * np.pi, n) for g in gens])
            phases, f = _gd_batch(est[:, t], thetas[:, : t + 1], scene, pilot, scene.noise_power, config, init)
            obj[:, t] = f
            theta = np.exp(1j * phases)
    return CRLBTrace(thetas, ys, est, obj)
