import itertools

import numpy as np
import pytest

from gesturediff.rotations import euler_to_rotmat, is_rotation, orthonormalize, rotmat_to_euler

ORDERS = ["".join(p) for p in itertools.permutations("XYZ")]


def test_zero_angles_give_identity():
    for order in ORDERS:
        np.testing.assert_allclose(euler_to_rotmat([0, 0, 0], order), np.eye(3), atol=1e-12)


def test_z_last_quarter_turn_maps_x_to_y():
    # Hand-composed oracle: with Z applied last, (0, 0, 90) is a pure Rz(90).
    r = euler_to_rotmat([0, 0, 90], "XYZ")
    np.testing.assert_allclose(r @ np.array([1.0, 0, 0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_matches_hand_composed_axis_matrices():
    a, b, c = np.radians([31.0, -47.0, 112.0])
    rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    rx = np.array([[1, 0, 0], [0, np.cos(b), -np.sin(b)], [0, np.sin(b), np.cos(b)]])
    ry = np.array([[np.cos(c), 0, np.sin(c)], [0, 1, 0], [-np.sin(c), 0, np.cos(c)]])
    np.testing.assert_allclose(
        euler_to_rotmat([31.0, -47.0, 112.0], "ZXY"), rz @ rx @ ry, atol=1e-12
    )


def test_invalid_order_rejected():
    with pytest.raises(ValueError):
        euler_to_rotmat([0, 0, 0], "XXY")
    with pytest.raises(ValueError):
        euler_to_rotmat([0, 0, 0], "XY")


def test_identity_round_trips_to_zero():
    for order in ORDERS:
        np.testing.assert_allclose(rotmat_to_euler(np.eye(3), order), [0, 0, 0], atol=1e-12)


def test_euler_round_trip_specific():
    angles = np.array([30.0, 40.0, 50.0])
    for order in ORDERS:
        r = euler_to_rotmat(angles, order)
        np.testing.assert_allclose(rotmat_to_euler(r, order), angles, atol=1e-5)


def test_euler_round_trip_random_away_from_lock():
    rng = np.random.default_rng(0)
    for order in ORDERS:
        for _ in range(50):
            angles = rng.uniform(-180, 180, size=3)
            angles[1] = rng.uniform(-88.5, 88.5)  # keep clear of gimbal lock
            r = euler_to_rotmat(angles, order)
            back = euler_to_rotmat(rotmat_to_euler(r, order), order)
            np.testing.assert_allclose(back, r, atol=1e-9)


def test_gimbal_lock_recomposition():
    rng = np.random.default_rng(1)
    for order in ORDERS:
        for sign in (90.0, -90.0):
            angles = np.array([rng.uniform(-180, 180), sign, rng.uniform(-180, 180)])
            r = euler_to_rotmat(angles, order)
            recovered = rotmat_to_euler(r, order)
            assert recovered[2] == pytest.approx(0.0, abs=1e-9)
            np.testing.assert_allclose(euler_to_rotmat(recovered, order), r, atol=1e-9)


def test_rotmat_to_euler_rejects_non_orthonormal():
    bad = np.eye(3) * 1.2
    with pytest.raises(ValueError, match="orthonormal"):
        rotmat_to_euler(bad, "XYZ")


def test_euler_to_rotmat_is_valid_rotation():
    rng = np.random.default_rng(2)
    angles = rng.uniform(-720, 720, size=(100, 3))
    r = euler_to_rotmat(angles, "ZYX")
    assert is_rotation(r, tol=1e-9)


def test_orthonormalize_idempotent_on_rotations():
    r = euler_to_rotmat([12.0, 34.0, -56.0], "XYZ")
    np.testing.assert_allclose(orthonormalize(r), r, atol=1e-9)


def test_orthonormalize_removes_scaling():
    np.testing.assert_allclose(orthonormalize(1.1 * np.eye(3)), np.eye(3), atol=1e-12)


def test_orthonormalize_near_rotation_property():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = euler_to_rotmat(rng.uniform(-180, 180, size=3), "ZXY")
        noisy = r + 1e-2 * rng.standard_normal((3, 3))
        fixed = orthonormalize(noisy)
        assert is_rotation(fixed, tol=1e-9)
        # Same projection twice changes nothing.
        np.testing.assert_allclose(orthonormalize(fixed), fixed, atol=1e-12)


def test_orthonormalize_rejects_degenerate_input():
    with pytest.raises(ValueError, match="singular"):
        orthonormalize(np.zeros((3, 3)))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError, match="reflective"):
        orthonormalize(reflection)


def test_orthonormalize_accepts_flat_nine():
    r = euler_to_rotmat([10.0, 20.0, 30.0], "XYZ")
    np.testing.assert_allclose(orthonormalize(r.reshape(9)), r, atol=1e-12)
