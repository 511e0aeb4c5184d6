"""Rotation conversions for skeleton motion data.

Euler angles follow the BVH convention: intrinsic rotations composed by
pre-multiplication in channel order, R = R_first @ R_second @ R_third.
Angles are in degrees at this API boundary (matching BVH files); matrices
are dimensionless row-major 3x3.

All functions accept a single rotation or a batch (leading dimensions).
"""

from __future__ import annotations

import numpy as np

_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}

# Even permutations of (0, 1, 2); everything else is odd.
_EVEN_PERMS = {(0, 1, 2), (1, 2, 0), (2, 0, 1)}

ORTHONORMAL_TOL = 1e-6
EULER_INPUT_TOL = 1e-3


def _parse_order(order) -> tuple[int, int, int]:
    """Turn 'ZXY' / ['Zrotation','Xrotation','Yrotation'] into axis indices."""
    if isinstance(order, str):
        letters = list(order.upper())
    else:
        letters = [str(ch)[0].upper() for ch in order]
    if len(letters) != 3 or sorted(letters) != ["X", "Y", "Z"]:
        raise ValueError(f"rotation order must be a permutation of X,Y,Z, got {order!r}")
    return tuple(_AXIS_INDEX[ch] for ch in letters)  # type: ignore[return-value]


def _axis_rotmat(angle_rad: np.ndarray, axis: int) -> np.ndarray:
    """Elementary rotation matrices about one axis, batched over angle."""
    angle_rad = np.asarray(angle_rad, dtype=np.float64)
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    out = np.zeros(angle_rad.shape + (3, 3), dtype=np.float64)
    out[..., axis, axis] = 1.0
    i, j = [k for k in range(3) if k != axis]
    # (i, j) keep cyclic orientation: x->(y,z), y->(z,x), z->(x,y)
    if axis == 1:
        i, j = j, i
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


def euler_to_rotmat(angles_deg, order) -> np.ndarray:
    """Compose a rotation matrix from Euler angles in BVH channel order.

    Parameters
    ----------
    angles_deg : (*, 3) angles in degrees, one per channel in `order`.
    order : rotation order, e.g. 'ZXY' or ['Zrotation', 'Xrotation', 'Yrotation'].

    Returns
    -------
    (*, 3, 3) rotation matrices, R = R_first @ R_second @ R_third.
    """
    axes = _parse_order(order)
    angles = np.radians(np.asarray(angles_deg, dtype=np.float64))
    if angles.shape[-1] != 3:
        raise ValueError(f"expected 3 angles per rotation, got shape {angles.shape}")
    r = _axis_rotmat(angles[..., 0], axes[0])
    r = r @ _axis_rotmat(angles[..., 1], axes[1])
    r = r @ _axis_rotmat(angles[..., 2], axes[2])
    return r


def rotmat_to_euler(r, order) -> np.ndarray:
    """Extract Euler angles (degrees) in BVH channel order from rotation matrices.

    Inverse of :func:`euler_to_rotmat` away from gimbal lock. At gimbal lock
    (|middle angle| = 90 deg) the third angle is set to 0 and the remaining
    freedom folded into the first angle, so re-composition still reproduces
    the input matrix.

    Raises
    ------
    ValueError
        If the input deviates from orthonormality by more than 1e-3
        (Frobenius norm of R^T R - I); orthonormalize first.
    """
    axes = _parse_order(order)
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3):
        raise ValueError(f"expected (*, 3, 3) matrices, got shape {r.shape}")

    err = np.linalg.norm(np.swapaxes(r, -1, -2) @ r - np.eye(3), axis=(-2, -1))
    if np.any(err > EULER_INPUT_TOL):
        raise ValueError(
            f"matrix deviates from orthonormality by {float(np.max(err)):.2e} "
            f"(tolerance {EULER_INPUT_TOL:g}); orthonormalize before conversion"
        )

    i, j, k = axes
    eps = 1.0 if axes in _EVEN_PERMS else -1.0

    sin_mid = np.clip(eps * r[..., i, k], -1.0, 1.0)
    mid = np.arcsin(sin_mid)
    locked = np.abs(sin_mid) > 1.0 - 1e-9

    first = np.arctan2(-eps * r[..., j, k], r[..., k, k])
    third = np.arctan2(-eps * r[..., i, j], r[..., i, i])

    # At lock the first/third rotations share an axis; keep third = 0.
    first_locked = np.arctan2(eps * r[..., k, j], r[..., j, j])
    first = np.where(locked, first_locked, first)
    third = np.where(locked, 0.0, third)

    return np.degrees(np.stack([first, mid, third], axis=-1))


def orthonormalize(m) -> np.ndarray:
    """Project near-rotation 3x3 matrices to the closest rotation (Frobenius).

    Returns the orthogonal polar factor; idempotent on rotations.

    Raises
    ------
    ValueError
        If the input is singular (rank collapse) or its polar factor is a
        reflection (det <= 0): there is no nearby rotation to return.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] == 9:
        m = m.reshape(m.shape[:-1] + (3, 3))
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (*, 3, 3) or (*, 9) input, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite values in rotation input")

    u, s, vt = np.linalg.svd(m)
    if np.any(s[..., -1] < 1e-8):
        raise ValueError("singular matrix: no unique nearest rotation")
    det = np.linalg.det(u @ vt)
    if np.any(det <= 0):
        raise ValueError("reflective matrix (det <= 0): not near a rotation")
    return u @ vt


def is_rotation(r, tol: float = ORTHONORMAL_TOL) -> bool:
    """True when R^T R = I and det(R) = +1 within `tol`."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] == 9:
        r = r.reshape(r.shape[:-1] + (3, 3))
    ortho = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(r) - 1.0).max() <= tol)
