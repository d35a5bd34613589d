"""Quaternion and rotation helpers.

Convention
----------
Quaternions are stored **scalar-last** as ``[x, y, z, w]`` and multiplied with
the Hamilton product, so that ``quat_to_rot(quat_mul(a, b)) ==
quat_to_rot(a) @ quat_to_rot(b)``.  The attitude ``q`` of the robot maps body
vectors into the world frame (``R_WB``).  Body-frame angular rates therefore
compose on the right: ``q_next = quat_mul(q, quat_exp(omega, dt))``.

Mixing this up with the scalar-first or JPL conventions is the classic
integration bug, so every function here takes and returns the layout above.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def skew(v) -> np.ndarray:
    """Return the matrix ``S`` with ``S @ u == cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``, renormalized."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    q = np.array(
        [
            aw * bx + bw * ax + ay * bz - az * by,
            aw * by + bw * ay + az * bx - ax * bz,
            aw * bz + bw * az + ax * by - ay * bx,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )
    return q / np.linalg.norm(q)


def quat_exp(omega, dt: float = 1.0) -> np.ndarray:
    """Unit quaternion of the rotation ``omega * dt``.

    Returns ``[sin(θ/2) ω/|ω| ; cos(θ/2)]`` with ``θ = |ω| dt``.  Below
    ``SMALL_ANGLE`` the ratio ``sin(θ/2)/θ`` is replaced by ``1/2 - θ²/48``.
    """
    phi = np.asarray(omega, dtype=float) * dt
    theta = float(np.linalg.norm(phi))
    if theta < SMALL_ANGLE:
        vec = phi * (0.5 - theta * theta / 48.0)
    else:
        vec = phi * (np.sin(0.5 * theta) / theta)
    q = np.array([vec[0], vec[1], vec[2], np.cos(0.5 * theta)])
    return q / np.linalg.norm(q)


def quat_log(q) -> np.ndarray:
    """Rotation vector of ``q`` (the shorter of ``q`` and ``-q``)."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0.0:
        q = -q
    vec = q[:3]
    s = float(np.linalg.norm(vec))
    if s < SMALL_ANGLE:
        return 2.0 * vec / q[3]
    return 2.0 * np.arctan2(s, q[3]) * vec / s


def quat_canonical(q) -> np.ndarray:
    """Sign-fix ``q`` so that ``w >= 0`` (serialization only)."""
    q = np.asarray(q, dtype=float)
    return -q if q[3] < 0.0 else q.copy()


def quat_to_rot(q) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def rot_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the ``w >= 0`` representative."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_canonical(quat_normalize(q))


def so3_exp(phi) -> np.ndarray:
    return quat_to_rot(quat_exp(phi))


def so3_log(R) -> np.ndarray:
    return quat_log(rot_to_quat(R))


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): ``Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    S = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * S + S @ S / 6.0
    t2 = theta * theta
    return np.eye(3) - (1.0 - np.cos(theta)) / t2 * S + (theta - np.sin(theta)) / (t2 * theta) * S @ S


def geodesic_distance(a, b) -> float:
    """Rotation angle between two attitudes, in radians."""
    return float(np.linalg.norm(quat_log(quat_mul(quat_conj(a), b))))


def euler_zyx(q) -> np.ndarray:
    """``(roll, pitch, yaw)`` of ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    R = quat_to_rot(q)
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def quat_from_euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    qz = quat_exp([0.0, 0.0, yaw])
    qy = quat_exp([0.0, pitch, 0.0])
    qx = quat_exp([roll, 0.0, 0.0])
    return quat_mul(quat_mul(qz, qy), qx)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi
