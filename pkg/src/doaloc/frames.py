"""Frame algebra between the global frame and Agent B's INS frame.

Rotations are plain ``(3, 3)`` float arrays whose entries are the unknowns
the estimators solve for directly; translations and positions are ``(3,)``
arrays in metres.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ORTHO_TOL = 1e-9


class DegenerateDisplacementError(ValueError):
    """Raised when a direction is requested for a zero-length vector."""

    def __init__(self, msg: str = "degenerate displacement"):
        super().__init__(msg)


class DoaAngles(NamedTuple):
    """Azimuth in (-pi, pi] and elevation in [-pi/2, pi/2], radians."""

    theta: float
    phi: float


@dataclass(frozen=True)
class FrameTransform:
    """``p_ins = rotation @ p_global + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> FrameTransform:
        return cls(np.eye(3), np.zeros(3))


def is_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return (np.linalg.norm(r @ r.T - np.eye(3)) < tol
            and abs(np.linalg.det(r) - 1.0) < tol)


def apply_transform(t: FrameTransform, p_global) -> np.ndarray:
    """Map global coordinates into the INS frame. Accepts ``(3,)`` or ``(n, 3)``."""
    p = np.asarray(p_global, dtype=float)
    return p @ t.rotation.T + t.translation


def invert_transform(t: FrameTransform) -> FrameTransform:
    rt = t.rotation.T
    return FrameTransform(rt, -rt @ t.translation)


def compose(outer: FrameTransform, inner: FrameTransform) -> FrameTransform:
    """Transform equivalent to applying ``inner`` first, then ``outer``."""
    return FrameTransform(outer.rotation @ inner.rotation,
                          outer.rotation @ inner.translation + outer.translation)


def doa_unit_vector(a) -> np.ndarray:
    theta, phi = a
    cp = np.cos(phi)
    return np.array([np.cos(theta) * cp, np.sin(theta) * cp, np.sin(phi)])


def angles_from_vector(d) -> DoaAngles:
    """Azimuth/elevation of ``d``. Azimuth is reported as 0 at the poles."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d)
    if not np.isfinite(n) or n == 0.0:
        raise DegenerateDisplacementError()
    rho = np.hypot(d[0], d[1])
    # atan2 keeps full precision near the poles where asin(z/n) does not
    phi = float(np.arctan2(d[2], rho))
    if rho <= 1e-15 * n:
        return DoaAngles(0.0, float(np.copysign(np.pi / 2, d[2])))
    theta = float(np.arctan2(d[1], d[0]))
    if theta == -np.pi:
        theta = np.pi
    return DoaAngles(theta, phi)


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def geodesic_distance(r1, r2) -> float:
    """Rotation angle of ``r1.T @ r2``, in [0, pi].

    Equal to ``arccos((tr - 1) / 2)`` but evaluated with atan2 of the sine and
    cosine parts, which keeps full precision for nearly equal rotations
    (arccos alone bottoms out around 1e-8 rad).
    """
    m = np.asarray(r1, dtype=float).T @ np.asarray(r2, dtype=float)
    c = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    return float(np.arctan2(s, c))


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_rotation(w) -> np.ndarray:
    """Rodrigues' formula for the rotation vector ``w`` (axis times angle)."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (np.eye(3) + np.sin(th) / th * W
            + (1.0 - np.cos(th)) / th**2 * (W @ W))


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return axis_angle_to_rotation(axis / np.linalg.norm(axis) * angle)


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalised 4-D Gaussian quaternion."""
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.standard_normal(4)
    return quaternion_to_rotation(q)
