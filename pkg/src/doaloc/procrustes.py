"""Nearest orthogonal / rotation matrix in Frobenius norm."""
from __future__ import annotations

import numpy as np

NONUNIQUE_TOL = 1e-8


class IllDefinedProjectionError(ValueError):
    def __init__(self, sv):
        super().__init__(f"ill-defined projection: singular values {np.array2string(np.asarray(sv), precision=3)}")


def _svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError("expected a finite 3x3 matrix")
    U, s, Vt = np.linalg.svd(m)
    if s[0] == 0 or s[1] <= 1e-12 * s[0]:
        raise IllDefinedProjectionError(s)
    return U, s, Vt


def nearest_orthogonal(m) -> np.ndarray:
    """``U V^T``; may be a reflection (det = -1)."""
    U, _, Vt = _svd(m)
    return U @ Vt


def nearest_rotation_flagged(m) -> tuple[np.ndarray, bool]:
    """Nearest proper rotation, plus a flag set when the minimiser is not unique.

    Non-uniqueness arises when a determinant flip is needed and the two
    smallest singular values coincide.
    """
    U, s, Vt = _svd(m)
    d = np.sign(np.linalg.det(U @ Vt))
    r = U @ np.diag([1.0, 1.0, d]) @ Vt
    nonunique = bool(d < 0 and (s[1] - s[2]) / s[0] < NONUNIQUE_TOL)
    return r, nonunique


def nearest_rotation(m) -> np.ndarray:
    return nearest_rotation_flagged(m)[0]
