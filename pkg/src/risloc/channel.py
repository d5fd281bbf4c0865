"""Geometry, Rician channel sampling and the pilot measurement model."""

from __future__ import annotations

import numpy as np

from .rng import complex_normal
from .scene import AnglePair, ChannelRealization, DegenerateGeometryError, PilotParams, Scene

_MIN_DISTANCE = 1e-9


def angles_from_positions(source, ris_position) -> AnglePair:
    """Direction cosines of ``source`` as seen from the RIS.

    Accepts a single 3-vector or an array of shape (..., 3).
    """
    diff = np.asarray(source, dtype=float) - np.asarray(ris_position, dtype=float)
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d < _MIN_DISTANCE):
        raise DegenerateGeometryError("source coincides with the RIS position")
    u = diff[..., 1] / d
    w = diff[..., 2] / d
    if np.ndim(u) == 0:
        u, w = float(u), float(w)
    return AnglePair(u, w)


def element_indices(scene: Scene):
    n = np.arange(1, scene.n_elements + 1)
    cols = int(scene.ris_cols)
    return np.mod(n - 1, cols).astype(float), np.floor((n - 1) / cols).astype(float)


def steering_vector(angles: AnglePair, scene: Scene) -> np.ndarray:
    """RIS array response; output shape (..., N) for array-valued angles."""
    v1, v2 = element_indices(scene)
    u = np.asarray(angles.sin_az_cos_el, dtype=float)[..., None]
    w = np.asarray(angles.sin_el, dtype=float)[..., None]
    return np.exp(1j * scene.spacing_factor * (v1 * u + v2 * w))


def pathloss_amplitude(distance, model) -> np.ndarray | float:
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("pathloss distance must be > 0")
    a, b = model
    out = 10.0 ** (-(a + b * np.log10(d)) / 20.0)
    return float(out) if out.ndim == 0 else out


def snr_to_power(snr_db: float) -> float:
    return float(10.0 ** (snr_db / 10.0))


def _check_ue(scene: Scene, ue):
    ue = np.asarray(ue, dtype=float)
    if np.any(np.linalg.norm(ue - scene.bs, axis=-1) < _MIN_DISTANCE):
        raise DegenerateGeometryError("UE coincides with the BS")
    if np.any(np.linalg.norm(ue - scene.ris, axis=-1) < _MIN_DISTANCE):
        raise DegenerateGeometryError("UE coincides with the RIS")
    return ue


def _rician_weights(eps: float):
    return np.sqrt(eps / (1.0 + eps)), np.sqrt(1.0 / (1.0 + eps))


def bs_steering(scene: Scene) -> np.ndarray:
    """Conjugated array response toward the BS (LOS part of the BS-RIS link)."""
    return np.conj(steering_vector(angles_from_positions(scene.bs, scene.ris), scene))


def sample_channel(scene: Scene, ue_position, gen: np.random.Generator) -> ChannelRealization:
    """Draw one block-fading realization.

    NLOS draws are taken from ``gen`` in a fixed order (h_r, g_r, h_d), so a
    keyed stream reproduces the same realization anywhere.
    """
    ue = _check_ue(scene, ue_position)
    n = scene.n_elements
    w_los, w_nlos = _rician_weights(scene.rician_factor)
    kappa = pathloss_amplitude(np.linalg.norm(ue - scene.ris), scene.pathloss_reflected)
    xi = pathloss_amplitude(np.linalg.norm(scene.bs - scene.ris), scene.pathloss_reflected)
    rho = pathloss_amplitude(np.linalg.norm(ue - scene.bs), scene.pathloss_direct)

    n1 = complex_normal(gen, n)
    n2 = complex_normal(gen, n)
    n3 = complex_normal(gen, 1)[0]

    a_ue = steering_vector(angles_from_positions(ue, scene.ris), scene)
    h_r = kappa * (w_los * a_ue + w_nlos * n1)
    g_r = xi * (w_los * bs_steering(scene) + w_nlos * n2)
    h_d = rho * (w_los * 1.0 + w_nlos * n3)
    return ChannelRealization(h_d=complex(h_d), h_r=h_r, g_r=g_r)


def measure(channel: ChannelRealization, theta, pilot: PilotParams, gen=None, noise_power: float = 0.0) -> complex:
    """Received pilot sqrt(P)(h_d + v_r^T theta) x + n.

    ``theta`` may be a RISConfig or a complex vector. With ``noise_power`` 0
    (or no generator) the result is noise-free.
    """
    theta = getattr(theta, "theta", theta)
    theta = np.asarray(theta, dtype=complex)
    if theta.shape != channel.v_r.shape:
        raise ValueError(f"theta shape {theta.shape} does not match channel {channel.v_r.shape}")
    y = np.sqrt(pilot.power) * (channel.h_d + channel.v_r @ theta) * pilot.pilot_symbol
    if noise_power > 0 and gen is not None:
        y = y + np.sqrt(noise_power) * complex_normal(gen, 1)[0]
    return complex(y)


def los_model(scene: Scene, positions, with_gradient: bool = False):
    """Expected (LOS) direct gain and cascade vector at the given positions.

    Returns ``(h_d, v_r)`` of shapes (...,) and (..., N); with
    ``with_gradient`` also their derivatives w.r.t. position, shapes (..., 3)
    and (..., 3, N). The Rician LOS weights are included so the values are
    the channel means under the fading model.
    """
    p = _check_ue(scene, positions)
    w_los, _ = _rician_weights(scene.rician_factor)
    a1, b1 = scene.pathloss_direct
    a2, b2 = scene.pathloss_reflected

    diff_bs = p - scene.bs
    d1 = np.linalg.norm(diff_bs, axis=-1)
    rho = 10.0 ** (-(a1 + b1 * np.log10(d1)) / 20.0)

    diff_ris = p - scene.ris
    d2 = np.linalg.norm(diff_ris, axis=-1)
    kappa = 10.0 ** (-(a2 + b2 * np.log10(d2)) / 20.0)
    xi = pathloss_amplitude(np.linalg.norm(scene.bs - scene.ris), scene.pathloss_reflected)

    u = diff_ris[..., 1] / d2
    w = diff_ris[..., 2] / d2
    v1, v2 = element_indices(scene)
    a_ue = np.exp(1j * scene.spacing_factor * (v1 * u[..., None] + v2 * w[..., None]))
    coef = xi * w_los * w_los * bs_steering(scene)

    h_d = w_los * rho
    v_r = coef * kappa[..., None] * a_ue
    if not with_gradient:
        return h_d, v_r

    unit_bs = diff_bs / d1[..., None]
    unit_ris = diff_ris / d2[..., None]
    # d(c d^-b/20)/dp = -(b/20) * value * unit / d
    d_rho = (-(b1 / 20.0) * rho / d1)[..., None] * unit_bs
    d_kappa = (-(b2 / 20.0) * kappa / d2)[..., None] * unit_ris

    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    du = (ey - u[..., None] * unit_ris) / d2[..., None]
    dw = (ez - w[..., None] * unit_ris) / d2[..., None]
    dphase = scene.spacing_factor * (du[..., :, None] * v1 + dw[..., :, None] * v2)
    d_a = 1j * dphase * a_ue[..., None, :]

    dh_d = w_los * d_rho
    dv_r = coef * (d_kappa[..., :, None] * a_ue[..., None, :] + kappa[..., None, None] * d_a)
    return h_d, v_r, dh_d, dv_r
