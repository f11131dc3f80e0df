"""Per-instant DOA measurements: synthesis from a known transform and noise."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .frames import DoaAngles, FrameTransform, angles_from_vector, apply_transform, wrap_angle


@dataclass(frozen=True)
class DoaMeasurement:
    k: int
    pos_a_global: tuple[float, float, float]
    pos_b_ins: tuple[float, float, float]
    doa: DoaAngles

    def __post_init__(self):
        object.__setattr__(self, "pos_a_global", tuple(float(v) for v in self.pos_a_global))
        object.__setattr__(self, "pos_b_ins", tuple(float(v) for v in self.pos_b_ins))
        object.__setattr__(self, "doa", DoaAngles(float(self.doa[0]), float(self.doa[1])))
        if self.k < 1:
            raise ValueError(f"time index must be >= 1, got {self.k}")
        if not (np.all(np.isfinite(self.pos_a_global)) and np.all(np.isfinite(self.pos_b_ins))):
            raise ValueError("positions must be finite")
        theta, phi = self.doa
        if not (-np.pi < theta <= np.pi) or not (-np.pi / 2 <= phi <= np.pi / 2):
            raise ValueError(f"DOA angles out of range: theta={theta}, phi={phi}")


class MeasurementSet(tuple):
    """Immutable ordered sequence of measurements with strictly increasing ``k``."""

    def __new__(cls, measurements: Iterable[DoaMeasurement] = ()):
        ms = tuple(measurements)
        if not ms:
            raise ValueError("a measurement set needs at least one measurement")
        ks = [m.k for m in ms]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("measurement indices must be strictly increasing")
        return super().__new__(cls, ms)

    @property
    def K(self) -> int:
        return len(self)

    @property
    def pos_a(self) -> np.ndarray:
        return np.array([m.pos_a_global for m in self])

    @property
    def pos_b(self) -> np.ndarray:
        return np.array([m.pos_b_ins for m in self])

    @property
    def angles(self) -> np.ndarray:
        """``(K, 2)`` array of (theta, phi)."""
        return np.array([m.doa for m in self])

    def head(self, K: int) -> MeasurementSet:
        return MeasurementSet(self[:K])


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian DOA noise, same std-dev on azimuth and elevation.

    Draws come from numpy's PCG64 generator (``np.random.default_rng(seed)``)
    as standard normals in the order theta_1, phi_1, theta_2, phi_2, ...
    """

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def synthesize_measurement(transform: FrameTransform, pos_a_global, pos_b_ins, k: int = 1) -> DoaMeasurement:
    """Noiseless DOA from B towards A, observed in B's INS frame."""
    a_ins = apply_transform(transform, pos_a_global)
    doa = angles_from_vector(a_ins - np.asarray(pos_b_ins, dtype=float))
    return DoaMeasurement(k, tuple(pos_a_global), tuple(pos_b_ins), doa)


def synthesize_set(transform: FrameTransform, pos_a_global: Sequence, pos_b_ins: Sequence) -> MeasurementSet:
    return MeasurementSet(
        synthesize_measurement(transform, a, b, k=i + 1)
        for i, (a, b) in enumerate(zip(pos_a_global, pos_b_ins))
    )


def perturb(m: DoaMeasurement, zeta_theta: float, zeta_phi: float) -> DoaMeasurement:
    """Add explicit noise values, wrapping azimuth and clamping elevation."""
    if zeta_theta == 0.0 and zeta_phi == 0.0:
        return m
    theta = wrap_angle(m.doa.theta + zeta_theta)
    phi = float(np.clip(m.doa.phi + zeta_phi, -np.pi / 2, np.pi / 2))
    return replace(m, doa=DoaAngles(theta, phi))


def draw_noise(spec: NoiseSpec, K: int) -> np.ndarray:
    """``(K, 2)`` array of (zeta_theta, zeta_phi) draws."""
    z = np.random.default_rng(spec.seed).standard_normal(2 * K).reshape(K, 2)
    return spec.sigma * z


def add_noise(m: DoaMeasurement, spec: NoiseSpec) -> DoaMeasurement:
    zt, zp = draw_noise(spec, 1)[0]
    return perturb(m, zt, zp)


def add_noise_to_set(ms: MeasurementSet, spec: NoiseSpec, zeta: np.ndarray | None = None):
    """Return ``(noisy_set, zeta)``; pass ``zeta`` to replay recorded draws."""
    if zeta is None:
        zeta = draw_noise(spec, ms.K)
    zeta = np.asarray(zeta, dtype=float).reshape(ms.K, 2)
    noisy = MeasurementSet(perturb(m, zt, zp) for m, (zt, zp) in zip(ms, zeta))
    return noisy, zeta
