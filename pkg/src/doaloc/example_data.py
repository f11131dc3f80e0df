"""Reference two-agent example: transform, K = 6 positions and DOA readings.

Values are as printed (three decimals). They are not mutually consistent at
that precision: recomputing the DOA angles from the positions and transform
gives azimuths that differ by up to ~0.9 rad, and the printed rotation is only
orthogonal to ~1e-3. Use :func:`example_scenario` for a self-consistent
version built from the printed positions and the projected rotation.
"""
from __future__ import annotations

import numpy as np

from .frames import FrameTransform, apply_transform
from .measurement import DoaMeasurement, MeasurementSet, synthesize_set
from .procrustes import nearest_rotation

ROTATION = np.array([
    [-0.627, -0.776, 0.072],
    [-0.747, 0.625, 0.228],
    [-0.222, 0.090, -0.971],
])
TRANSLATION = np.array([247.490, 110.382, 229.784])

POS_A_GLOBAL = np.array([
    [0.0, 0.0, 300.0],
    [82.962, -235.407, 314.161],
    [141.084, -478.270, 302.352],
    [139.079, -726.308, 271.157],
    [-109.876, -704.457, 277.792],
    [-252.217, -499.403, 291.634],
])
POS_B_INS = np.array([
    [89.680, 1035.199, 474.865],
    [-40.633, 1157.514, 649.672],
    [-182.218, 1255.810, 830.757],
    [-165.197, 1416.859, 1021.213],
    [-217.778, 1581.963, 1201.424],
    [-452.605, 1649.158, 1254.728],
])
DOA = np.array([
    [-1.500, -0.851],
    [-1.679, -0.835],
    [-1.789, -0.812],
    [-1.977, -0.733],
    [-1.828, -0.790],
    [-1.499, -0.833],
])

# sigma = 3 deg noise draws (zeta_theta, zeta_phi) in radians, and the
# tabulated true / reconstructed global positions of B
NOISE = np.array([
    [0.0747, -0.0637],
    [-0.0350, 0.0699],
    [-0.0478, -0.1032],
    [0.0243, 0.0084],
    [-0.0247, 0.0165],
    [0.0937, -0.0031],
])
POS_B_GLOBAL = np.array([
    [800.0, 0.0, 350.0],
    [1017.5, -122.5, 364.1],
    [1225.7, -260.8, 358.0],
    [1474.1, -233.5, 363.9],
    [1719.3, -272.8, 392.6],
    [1810.6, -496.1, 458.0],
])
POS_B_GLOBAL_ESTIMATED = np.array([
    [695.7, -61.6, 309.1],
    [902.6, -201.4, 321.9],
    [1098.9, -355.9, 314.3],
    [1348.7, -348.8, 320.9],
    [1589.9, -408.2, 349.5],
    [1662.8, -639.0, 412.0],
])


def printed_transform() -> FrameTransform:
    """Printed translation with the printed rotation projected onto SO(3)."""
    return FrameTransform(nearest_rotation(ROTATION), TRANSLATION)


def printed_measurements() -> MeasurementSet:
    """The six measurements exactly as tabulated."""
    return MeasurementSet(
        DoaMeasurement(k + 1, POS_A_GLOBAL[k], POS_B_INS[k], DOA[k]) for k in range(len(DOA))
    )


def example_scenario(source: str = "global") -> tuple[FrameTransform, MeasurementSet]:
    """Self-consistent noiseless measurements on the printed trajectories.

    ``source="global"`` maps the tabulated true global positions of B into
    the INS frame through :func:`printed_transform`; ``source="ins"`` keeps
    the tabulated INS positions instead. Either way the angles are
    recomputed, so they differ from :data:`DOA`.
    """
    truth = printed_transform()
    if source == "global":
        pb_ins = apply_transform(truth, POS_B_GLOBAL)
    elif source == "ins":
        pb_ins = POS_B_INS
    else:
        raise ValueError(f"unknown source {source!r}")
    return truth, synthesize_set(truth, POS_A_GLOBAL, pb_ins)
