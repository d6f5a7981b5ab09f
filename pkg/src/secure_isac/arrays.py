"""Uniform linear arrays: element geometry, steering, tapered sensing beams,
and null-steered beam synthesis.

All arrays are ULAs on the y-axis. Angles are radians here; azimuth is
measured from the array normal (x-axis), elevation from the horizontal plane.
Every synthesis routine returns unit-norm complex weights.
"""

from dataclasses import dataclass

import numpy as np


class InfeasibleNullError(ValueError):
    """Requested null set leaves no usable beam energy."""


@dataclass(frozen=True)
class ArraySpec:
    """ULA geometry: element count, spacing and carrier wavelength (meters)."""

    num_elements: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        if self.num_elements < 1:
            raise ValueError(f"num_elements must be >= 1, got {self.num_elements}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be > 0, got {self.wavelength}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be > 0, got {self.spacing}")

    @classmethod
    def half_wavelength(cls, num_elements: int, wavelength: float) -> "ArraySpec":
        return cls(num_elements, wavelength / 2.0, wavelength)

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def aperture(self) -> float:
        return (self.num_elements - 1) * self.spacing


def element_indices(spec: ArraySpec) -> np.ndarray:
    """Signed element indices n in {-(N-1)/2, ..., (N-1)/2}, centroid at 0."""
    n = spec.num_elements
    return np.arange(n) - (n - 1) / 2.0


def ula_positions(spec: ArraySpec) -> np.ndarray:
    """3D element positions (N, 3) on the y-axis at n*d around the origin."""
    pos = np.zeros((spec.num_elements, 3))
    pos[:, 1] = element_indices(spec) * spec.spacing
    return pos


def steering_vector(spec: ArraySpec, azimuth: float, elevation: float = 0.0) -> np.ndarray:
    """Unit-norm plane-wave steering vector; element-n phase k0*d*n*cos(el)*sin(az)."""
    phase = spec.wavenumber * spec.spacing * np.cos(elevation) * np.sin(azimuth)
    return np.exp(1j * phase * element_indices(spec)) / np.sqrt(spec.num_elements)


def array_gain(weights: np.ndarray, steering: np.ndarray) -> float:
    """Normalized power gain |w^H a|^2; in [0, 1] for unit-norm inputs."""
    if weights.shape != steering.shape:
        raise ValueError(
            f"weight/steering length mismatch: {weights.shape} vs {steering.shape}"
        )
    return float(np.abs(np.vdot(weights, steering)) ** 2)


def sensing_beam(spec: ArraySpec, taper: float, steer_angle: float) -> np.ndarray:
    """Steered sensing beam with a convex uniform/Hamming amplitude blend.

    taper=0 keeps the plain steering vector (widest main lobe), taper=1 applies
    the full Hamming profile (lower sidelobes). The window is normalized to
    unit mean so the taper reshapes the beam without changing total power.
    """
    if not 0.0 <= taper <= 1.0:
        raise ValueError(f"taper must be in [0, 1], got {taper}")
    n = spec.num_elements
    hamming = np.hamming(n) if n > 1 else np.ones(1)
    hamming = hamming / hamming.mean()
    profile = (1.0 - taper) * np.ones(n) + taper * hamming
    weights = profile * steering_vector(spec, steer_angle)
    return weights / np.linalg.norm(weights)


def sensing_response(weights: np.ndarray, spec: ArraySpec, probe_angle: float) -> float:
    """Power-normalized response |w^H a(probe)|^2 of a sensing beam."""
    return array_gain(weights, steering_vector(spec, probe_angle))


def null_steer(weights: np.ndarray, null_angles, spec: ArraySpec) -> np.ndarray:
    """Project weights onto the orthogonal complement of the nulled directions.

    Gain at each nulled angle ends up at numerical zero. Raises
    InfeasibleNullError when the projection removes (almost) all beam energy.
    """
    angles = list(null_angles)
    if not angles:
        return weights.copy()
    if len(angles) >= spec.num_elements:
        raise InfeasibleNullError(
            f"{len(angles)} nulls requested for {spec.num_elements} elements"
        )
    basis = np.column_stack([steering_vector(spec, a) for a in angles])
    q, _ = np.linalg.qr(basis)
    projected = weights - q @ (q.conj().T @ weights)
    norm = np.linalg.norm(projected)
    if norm < 1e-9:
        raise InfeasibleNullError("null set spans the entire beam space")
    return projected / norm


def beampattern_db(weights: np.ndarray, spec: ArraySpec, angles: np.ndarray) -> np.ndarray:
    """Gain pattern in dB over the given angles, normalized to a 0 dB peak."""
    gains = np.array([sensing_response(weights, spec, a) for a in angles])
    peak = gains.max()
    if peak <= 0:
        return np.full_like(gains, -np.inf)
    floor = peak * 1e-16
    return 10.0 * np.log10(np.maximum(gains, floor) / peak)
