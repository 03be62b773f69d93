"""Rotation helpers: Hamilton quaternions stored (w, x, y, z) and SO(3) exp/log.

Most functions accept a single element or a stacked batch along the leading
axis, since the optimizer evaluates every edge at once.
"""
import numpy as np

_SMALL = 1e-10


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero quaternion")
    q = q / n
    # canonical hemisphere, w >= 0
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def quat_multiply(a, b):
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(R):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    # branch 0 uses the trace, branches 1..3 the dominant diagonal entry
    branch = np.where(tr >= diag.max(axis=1), 0, 1 + np.argmax(diag, axis=1))
    q = np.empty((R.shape[0], 4))
    b = branch == 0
    if b.any():
        m = R[b]
        s = 2.0 * np.sqrt(1.0 + tr[b])
        q[b] = np.stack([0.25 * s, (m[:, 2, 1] - m[:, 1, 2]) / s, (m[:, 0, 2] - m[:, 2, 0]) / s,
                         (m[:, 1, 0] - m[:, 0, 1]) / s], axis=1)
    for i in range(3):
        b = branch == i + 1
        if not b.any():
            continue
        m = R[b]
        j, l = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + m[:, i, i] - m[:, j, j] - m[:, l, l])
        out = np.empty((len(m), 4))
        out[:, 0] = (m[:, l, j] - m[:, j, l]) / s
        out[:, 1 + i] = 0.25 * s
        out[:, 1 + j] = (m[:, j, i] + m[:, i, j]) / s
        out[:, 1 + l] = (m[:, l, i] + m[:, i, l]) / s
        q[b] = out
    return quat_normalize(q).reshape(batch + (4,))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * np.asarray(angle, dtype=float)
    q = np.concatenate([np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1)
    return quat_normalize(q)


def quat_from_yaw(yaw):
    return quat_from_axis_angle([0.0, 0.0, 1.0], yaw)


def quat_angle(q):
    """Rotation angle in [0, pi] of a unit quaternion."""
    q = np.asarray(q, dtype=float)
    v = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(v, np.abs(q[..., 0]))


def skew(v):
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([z, -w, y, w, z, -x, -y, x, z], axis=-1).reshape(v.shape[:-1] + (3, 3))


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = skew(phi)
    K2 = K @ K
    small = theta < _SMALL
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * K2


def so3_log(R):
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    cos = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    sin = np.sin(theta)
    small = theta < 1e-7
    near_pi = theta > np.pi - 1e-6
    scale = np.where(small, 0.5 + theta**2 / 12.0, theta / (2.0 * np.where(small | near_pi, 1.0, sin)))
    out = scale[..., None] * w
    if np.any(near_pi):
        # axis from the symmetric part when sin(theta) vanishes
        flat_R = R.reshape(-1, 3, 3)
        flat_out = out.reshape(-1, 3)
        flat_theta = theta.reshape(-1)
        for k in np.flatnonzero(near_pi.reshape(-1)):
            B = 0.5 * (flat_R[k] + np.eye(3))
            i = int(np.argmax(np.diag(B)))
            axis = B[:, i] / np.sqrt(B[i, i])
            wk = np.array([flat_R[k][2, 1] - flat_R[k][1, 2], flat_R[k][0, 2] - flat_R[k][2, 0],
                           flat_R[k][1, 0] - flat_R[k][0, 1]])
            if axis @ wk < 0:
                axis = -axis
            flat_out[k] = flat_theta[k] * axis
        out = flat_out.reshape(out.shape)
    return out


def so3_right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = skew(phi)
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    return np.eye(3) + 0.5 * K + c * (K @ K)
