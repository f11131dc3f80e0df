import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from doaloc.frames import geodesic_distance, is_rotation, random_rotation
from doaloc.procrustes import (IllDefinedProjectionError, nearest_orthogonal, nearest_rotation,
                               nearest_rotation_flagged)

matrices = arrays(np.float64, (3, 3), elements=st.floats(-10, 10)).filter(
    lambda m: np.linalg.svd(m, compute_uv=False)[1] > 1e-6)


def test_rotation_is_fixed_point():
    r = random_rotation(np.random.default_rng(0))
    np.testing.assert_allclose(nearest_rotation(r), r, atol=1e-14)
    np.testing.assert_allclose(nearest_orthogonal(r), r, atol=1e-14)


def test_positive_scaling_is_ignored():
    r = random_rotation(np.random.default_rng(1))
    np.testing.assert_allclose(nearest_rotation(2 * r), r, atol=1e-14)


def test_reflection_is_fixed_point_of_plain_projection():
    m = np.diag([1.0, 1.0, -1.0])
    np.testing.assert_allclose(nearest_orthogonal(m), m, atol=1e-15)


def test_reflection_forces_a_flip():
    m = np.diag([1.0, 1.0, -1.0])
    r, nonunique = nearest_rotation_flagged(m)
    assert is_rotation(r)
    assert np.linalg.norm(r - m) == pytest.approx(2.0)
    assert nonunique


def test_flag_clear_for_well_separated_flip():
    r, nonunique = nearest_rotation_flagged(np.diag([3.0, 2.0, -1.0]))
    np.testing.assert_allclose(r, np.diag([1.0, 1.0, 1.0]), atol=1e-15)
    assert not nonunique
    _, nonunique = nearest_rotation_flagged(np.eye(3))
    assert not nonunique


def test_random_negative_determinant_inputs():
    rng = np.random.default_rng(2)
    n = 0
    while n < 1000:
        m = rng.normal(size=(3, 3))
        if np.linalg.det(m) >= 0:
            continue
        n += 1
        assert abs(np.linalg.det(nearest_rotation(m)) - 1) < 1e-12


def test_small_perturbation_stays_close():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = random_rotation(rng)
        e = rng.normal(size=(3, 3))
        e *= 1e-6 / np.linalg.norm(e)
        assert geodesic_distance(nearest_rotation(r + e), r) < 1e-5


def test_minimality_against_random_rotations():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        m = rng.normal(size=(3, 3))
        d = np.linalg.norm(nearest_rotation(m) - m)
        qs = [random_rotation(rng) for _ in range(100)]
        assert all(d <= np.linalg.norm(q - m) + 1e-12 for q in qs)


def test_output_is_always_a_rotation():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        r = nearest_rotation(rng.normal(size=(3, 3)) * rng.uniform(0.01, 100))
        assert np.linalg.norm(r @ r.T - np.eye(3)) < 1e-9
        assert abs(np.linalg.det(r) - 1) < 1e-9


def test_idempotence_and_equivariance():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        m = rng.normal(size=(3, 3))
        r = nearest_rotation(m)
        np.testing.assert_allclose(nearest_rotation(r), r, atol=1e-12)
        a, b = random_rotation(rng), random_rotation(rng)
        np.testing.assert_allclose(nearest_rotation(a @ m @ b), a @ r @ b, atol=1e-9)


@settings(max_examples=300)
@given(matrices)
def test_projection_properties_hypothesis(m):
    r = nearest_rotation(m)
    assert is_rotation(r)
    o = nearest_orthogonal(m)
    assert np.linalg.norm(o @ o.T - np.eye(3)) < 1e-9
    # the unconstrained orthogonal minimiser is never further away
    assert np.linalg.norm(o - m) <= np.linalg.norm(r - m) + 1e-9
    if np.linalg.det(m) > 0 and np.linalg.svd(m, compute_uv=False)[2] > 1e-6:
        np.testing.assert_allclose(r, o, atol=1e-9)


@pytest.mark.parametrize("m", [np.zeros((3, 3)), np.outer([1, 2, 3], [1, 0, 0])])
def test_rank_deficient_input_is_ill_defined(m):
    with pytest.raises(IllDefinedProjectionError, match="ill-defined projection"):
        nearest_rotation(m)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        nearest_rotation(np.full((3, 3), np.nan))
