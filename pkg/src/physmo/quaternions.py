"""Batched quaternion and rotation helpers (torch, float64).

Quaternions are (..., 4) tensors in (w, x, y, z) order. All functions are
differentiable and broadcast over leading dimensions.
"""

import numpy as np
import torch

DTYPE = torch.float64

_EPS = 1e-12


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def quat_identity(shape=()) -> torch.Tensor:
    q = torch.zeros(tuple(shape) + (4,), dtype=DTYPE)
    q[..., 0] = 1.0
    return q


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    return q / torch.linalg.norm(q, dim=-1, keepdim=True).clamp_min(_EPS)


def quat_conjugate(q: torch.Tensor) -> torch.Tensor:
    return torch.cat([q[..., :1], -q[..., 1:]], dim=-1)


def quat_mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def quat_rotate(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    qvec = q[..., 1:]
    uv = torch.cross(qvec, v, dim=-1)
    uuv = torch.cross(qvec, uv, dim=-1)
    return v + 2.0 * (q[..., :1] * uv + uuv)


def quat_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternion (..., 4) to rotation matrix (..., 3, 3)."""
    w, x, y, z = q.unbind(-1)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = torch.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        dim=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) to quaternions (..., 4), numpy.

    Shepperd's method; used in (non-differentiated) initialization only.
    """
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    q = np.empty((m.shape[0], 4))
    t = np.trace(m, axis1=-2, axis2=-1)
    for i in range(m.shape[0]):
        r = m[i]
        if t[i] > 0:
            s = np.sqrt(t[i] + 1.0) * 2
            q[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s,
                    (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                    (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                    0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                    (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(batch + (4,))


def rotvec_to_quat(v: torch.Tensor) -> torch.Tensor:
    """Exponential map: rotation vector (..., 3) to unit quaternion.

    Smooth at the origin via a series expansion of sin(t/2)/t.
    """
    v = as_tensor(v)
    t2 = (v * v).sum(-1, keepdim=True)
    t = torch.sqrt(t2 + _EPS**2)
    small = t < 1e-4
    # sin(t/2)/t and cos(t/2)
    k = torch.where(small, 0.5 - t2 / 48.0, torch.sin(t / 2) / t)
    w = torch.where(small, 1.0 - t2 / 8.0, torch.cos(t / 2))
    return torch.cat([w, k * v], dim=-1)


def quat_to_rotvec(q: torch.Tensor) -> torch.Tensor:
    """Quaternion log map: unit quaternion (..., 4) to rotation vector."""
    q = torch.where(q[..., :1] < 0, -q, q)  # shortest branch
    xyz = q[..., 1:]
    n2 = (xyz * xyz).sum(-1, keepdim=True)
    n = torch.sqrt(n2 + _EPS**2)
    w = q[..., :1]
    angle = 2.0 * torch.atan2(n, w)
    small = n < 1e-6
    k = torch.where(small, 2.0 / w.clamp_min(_EPS), angle / n)
    return k * xyz


def yaw_quat(angle: torch.Tensor) -> torch.Tensor:
    """Rotation about the world z (gravity) axis, angle (...,) -> (..., 4)."""
    angle = as_tensor(angle)
    half = angle / 2
    zero = torch.zeros_like(half)
    return torch.stack([torch.cos(half), zero, zero, torch.sin(half)], dim=-1)
