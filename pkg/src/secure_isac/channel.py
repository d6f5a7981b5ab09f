"""Large-scale path loss with shadowing, receiver noise, and near-field Rician
channel realization.

Base-station links carry exact spherical-wave phases per element, so near-field
geometry inside the Fraunhofer distance is handled without approximation.
Hybrid-node links are quasi-static; eavesdropper links redraw their scattered
component every slot. All randomness flows through counter-based substreams
keyed on (seed, purpose, entity, slot), which makes every realization a pure
function of the scenario configuration and seed.
"""

from dataclasses import dataclass

import numpy as np

from .arrays import ArraySpec

# substream purpose codes (spawn keys must be stable across runs)
STREAM_PLACEMENT = 1
STREAM_SHADOW = 2
STREAM_HN_NLOS = 3
STREAM_EVE_NLOS = 4
STREAM_FADE = 5
STREAM_MEASUREMENT = 6
STREAM_WAYPOINT = 7


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent deterministic generator for (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=keys))


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss: reference loss at 1 m, exponent, shadowing std (dB)."""

    pl_1m_db: float
    exponent: float
    shadow_sigma_db: float = 0.0

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError(f"path-loss exponent must be > 0, got {self.exponent}")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")

    @classmethod
    def friis_reference(cls, carrier_hz: float, exponent: float,
                        shadow_sigma_db: float = 0.0) -> "PathLossModel":
        """Anchor the 1 m reference loss at free-space Friis for the carrier."""
        lam = 299792458.0 / carrier_hz
        pl_1m = 20.0 * np.log10(4.0 * np.pi / lam)
        return cls(pl_1m, exponent, shadow_sigma_db)


@dataclass(frozen=True)
class NoiseSpec:
    """Receiver noise: thermal PSD (dBm/Hz), bandwidth (Hz), noise figure (dB)."""

    psd_dbm_per_hz: float = -174.0
    bandwidth_hz: float = 1e8
    noise_figure_db: float = 7.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be > 0")


def noise_power(spec: NoiseSpec) -> float:
    """Front-end noise power in watts: 10^((N0 + 10 log10 BW + NF - 30) / 10)."""
    db = spec.psd_dbm_per_hz + 10.0 * np.log10(spec.bandwidth_hz) + spec.noise_figure_db
    return float(10.0 ** ((db - 30.0) / 10.0))


def path_loss_db(model: PathLossModel, distance: float, shadow_draw: float = 0.0) -> float:
    """PL_1m + 10 n log10(d) + sigma_sh * shadow_draw, distances clamped to >= 1 m."""
    if distance <= 0:
        raise ValueError(f"distance must be > 0, got {distance}")
    d = max(distance, 1.0)
    return model.pl_1m_db + 10.0 * model.exponent * np.log10(d) \
        + model.shadow_sigma_db * shadow_draw


def linear_gain(pl_db: float) -> float:
    """Large-scale amplitude gain 10^(-PL/20)."""
    return float(10.0 ** (-pl_db / 20.0))


def fraunhofer_distance(spec: ArraySpec) -> float:
    """Far-field boundary 2 D^2 / lambda with aperture D = (N-1) d."""
    return 2.0 * spec.aperture ** 2 / spec.wavelength


def los_channel(bs_positions: np.ndarray, node_pos: np.ndarray, gain: float,
                wavelength: float) -> np.ndarray:
    """Spherical-wave LOS channel: entry n = g * exp(-j 2 pi d_n / lambda) / sqrt(N)."""
    deltas = bs_positions - np.asarray(node_pos, dtype=float)[None, :]
    dists = np.linalg.norm(deltas, axis=1)
    if np.any(dists < 1e-9):
        raise ValueError("node position coincides with an array element")
    n = bs_positions.shape[0]
    return gain * np.exp(-2j * np.pi * dists / wavelength) / np.sqrt(n)


def rician_channel(k_factor: float, los: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rician mix sqrt(K/(K+1)) LOS + sqrt(1/(K+1)) NLOS, K linear.

    The scattered part is i.i.d. complex Gaussian with per-entry variance
    g^2/N, g being the LOS large-scale amplitude, so K only sets the power
    split and E||h||^2 stays independent of K.
    """
    if k_factor < 0:
        raise ValueError("k_factor must be >= 0")
    n = los.shape[0]
    g = np.linalg.norm(los)
    scale = g / np.sqrt(2.0 * n)
    nlos = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return np.sqrt(k_factor / (k_factor + 1.0)) * los \
        + np.sqrt(1.0 / (k_factor + 1.0)) * nlos


def eve_channel(k_factor: float, los: np.ndarray, slot: int, seed: int,
                eve_id: int) -> np.ndarray:
    """Eavesdropper link at a given slot: fixed LOS, scattered part redrawn per slot."""
    rng = substream(seed, STREAM_EVE_NLOS, eve_id, slot)
    return rician_channel(k_factor, los, rng)
