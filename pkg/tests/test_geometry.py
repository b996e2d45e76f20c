"""Tests for quaternions, similarity transforms, normalization and point utilities."""

import numpy as np
import pytest

from errors import DegenerateInputError, InvalidParameterError
from geometry import (
    Aabb,
    Normalization,
    Ray,
    SimilarityTransform,
    as_points,
    denormalize_transform,
    normalize_to_unit_cube,
    point_ray_distance,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_rotate,
    quat_rotation_jacobian,
    quat_to_matrix,
    subsample,
    transform_apply,
    transform_compose,
    transform_inverse,
)


def test_quarter_turn_about_z():
    q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat_rotate(q, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)


def test_unnormalized_quaternion_rotates_like_its_unit_version():
    q = quat_from_axis_angle([1, 2, 3], 0.7)
    np.testing.assert_allclose(quat_to_matrix(5.0 * q), quat_to_matrix(q), atol=1e-15)


def test_rotation_matrix_is_orthonormal(rng):
    R = quat_to_matrix(rng.normal(size=4))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_quaternion_matrix_round_trip(rng):
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        back = quat_from_matrix(quat_to_matrix(q))
        assert min(np.linalg.norm(back - q), np.linalg.norm(back + q)) < 1e-12


def test_hamilton_product_composes_rotations():
    a = quat_from_axis_angle([0, 0, 1], 0.3)
    b = quat_from_axis_angle([1, 0, 0], 0.5)
    p = np.array([0.2, -1.0, 0.4])
    np.testing.assert_allclose(quat_rotate(quat_multiply(a, b), p), quat_rotate(a, quat_rotate(b, p)), atol=1e-14)


def test_rotation_jacobian_matches_central_differences(rng):
    q = rng.normal(size=4) * 1.7
    P = rng.normal(size=(6, 3))
    J = quat_rotation_jacobian(q, P)
    h = 1e-6
    for k in range(4):
        dq = np.zeros(4)
        dq[k] = h
        fd = (quat_rotate(q + dq, P) - quat_rotate(q - dq, P)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, atol=1e-7)


def test_zero_quaternion_is_rejected():
    with pytest.raises(InvalidParameterError):
        SimilarityTransform(q=np.zeros(4))


def test_nonpositive_scale_is_rejected():
    with pytest.raises(InvalidParameterError):
        SimilarityTransform(s=0.0)


def test_compose_applies_right_operand_first(rng):
    A = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=1.3)
    B = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=0.6)
    P = rng.normal(size=(10, 3))
    np.testing.assert_allclose(transform_compose(A, B).apply(P), A.apply(B.apply(P)), atol=1e-12)


def test_inverse_undoes_transform(rng):
    T = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=2.5)
    P = rng.normal(size=(10, 3))
    np.testing.assert_allclose(transform_inverse(T).apply(T.apply(P)), P, atol=1e-12)
    I = transform_compose(T, T.inverse())
    np.testing.assert_allclose(I.matrix(), np.eye(4), atol=1e-12)


def test_apply_preserves_order_and_matches_matrix(rng):
    T = SimilarityTransform(q=rng.normal(size=4), t=[1, 2, 3], s=0.5)
    P = rng.normal(size=(8, 3))
    homogeneous = np.column_stack([P, np.ones(len(P))]) @ T.matrix().T
    np.testing.assert_allclose(T.apply(P), homogeneous[:, :3], atol=1e-12)
    np.testing.assert_array_equal(transform_apply(T, P), T.apply(P))
    np.testing.assert_allclose(transform_apply(SimilarityTransform(t=[1, 0, 0]), [[0.0, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])


def test_from_matrix_recovers_similarity(rng):
    T = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=1.7)
    back = SimilarityTransform.from_matrix(T.matrix())
    np.testing.assert_allclose(back.matrix(), T.matrix(), atol=1e-12)


def test_rotation_about_center_fixes_center():
    center = np.array([1.0, -2.0, 0.5])
    T = SimilarityTransform.from_rotation([0, 1, 1], 40.0, center=center)
    np.testing.assert_allclose(T.apply(center[None, :])[0], center, atol=1e-14)


def test_params_round_trip_in_similarity_mode():
    T = SimilarityTransform(q=[2.0, 0.1, 0.0, 0.3], t=[1, 2, 3], s=1.5)
    back = SimilarityTransform.from_params(T.to_params("similarity"), "similarity")
    np.testing.assert_allclose(back.q, T.q)
    assert back.s == pytest.approx(1.5)
    assert len(T.to_params("rigid")) == 7


def test_point_ray_distance():
    r = Ray([0.0, 0.0, 2.0])
    np.testing.assert_allclose(r.d, [0, 0, 1])
    assert point_ray_distance([3.0, 4.0, 10.0], r) == pytest.approx(5.0)
    # the line extends behind the origin
    assert point_ray_distance([0.0, 0.0, -7.0], r) == pytest.approx(0.0)


def test_zero_ray_is_rejected():
    with pytest.raises(InvalidParameterError):
        Ray([0.0, 0.0, 0.0])


def test_unit_cube_normalization_uses_target_only():
    S = np.array([[0.0, 0.0, 0.0], [4.0, 2.0, 1.0]])
    D = np.array([[10.0, 10.0, 10.0]])
    S_u, D_u, norm = normalize_to_unit_cube(S, D)
    np.testing.assert_allclose(S_u.max(axis=0) - S_u.min(axis=0), [1.0, 0.5, 0.25])
    np.testing.assert_allclose(Aabb.from_points(S_u).center, 0.0, atol=1e-15)
    np.testing.assert_allclose(D_u, [[2.0, 2.25, 2.375]])
    np.testing.assert_allclose(norm.revert(D_u), D)


def test_flat_target_is_degenerate():
    with pytest.raises(DegenerateInputError):
        normalize_to_unit_cube(np.ones((5, 3)), np.zeros((2, 3)))


def test_denormalize_conjugates_by_normalization(rng):
    norm = Normalization(center=[1.0, 2.0, 3.0], scale=0.25)
    theta_unit = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=1.2)
    theta = denormalize_transform(theta_unit, norm)
    P = rng.normal(size=(5, 3))
    np.testing.assert_allclose(theta.apply(P), norm.revert(theta_unit.apply(norm.apply(P))), atol=1e-12)


def test_subsample_is_seeded_nested_and_order_preserving(rng):
    P = rng.normal(size=(100, 3))
    small = subsample(P, 10, seed=7)
    large = subsample(P, 40, seed=7)
    np.testing.assert_array_equal(small, subsample(P, 10, seed=7))
    assert {tuple(p) for p in small} <= {tuple(p) for p in large}
    rows = [int(np.flatnonzero((P == p).all(axis=1))[0]) for p in large]
    assert rows == sorted(rows)
    assert subsample(P, 500, seed=0) is P


def test_as_points_rejects_bad_shapes():
    with pytest.raises(InvalidParameterError):
        as_points(np.zeros((4, 2)))
    with pytest.raises(InvalidParameterError):
        as_points([[0.0, np.nan, 1.0]])
    assert as_points([1.0, 2.0, 3.0]).shape == (1, 3)
