"""Forward kinematics, yaw decomposition, time differencing, IK, filtering."""

from dataclasses import dataclass

import numpy as np
import torch
from scipy.signal import butter, filtfilt, lfilter

from physmo.body import ScaledBody, Skeleton
from physmo.quaternions import (
    DTYPE,
    as_tensor,
    matrix_to_quat,
    quat_conjugate,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    quat_to_rotvec,
    rotvec_to_quat,
    yaw_quat,
)


@dataclass
class GeneralizedCoord:
    """Per-frame generalized coordinates of the character.

    root_pos: (T, 3) world offset added to the skeleton's standing root
    position. yaw_delta: (T,) per-frame yaw increments about world z (the
    composed yaw at frame t is their prefix sum). root_xy: (T, 2)
    unnormalized xy tilt quaternion components (w fixed at 1, z at 0
    before normalization). joint_rotvec: (T, J-1, 3) exponential-map local
    joint rotations.
    """

    root_pos: torch.Tensor
    yaw_delta: torch.Tensor
    root_xy: torch.Tensor
    joint_rotvec: torch.Tensor

    def root_quat(self) -> torch.Tensor:
        return compose_root_rotation(self.yaw_delta, self.root_xy)

    def joint_quats(self) -> torch.Tensor:
        return rotvec_to_quat(self.joint_rotvec)

    @property
    def n_frames(self) -> int:
        return self.root_pos.shape[0]


def compose_root_rotation(yaw_delta, root_xy) -> torch.Tensor:
    """Compose per-frame root quaternions from yaw increments and xy tilt.

    yaw(t) is the prefix sum of the increments applied about the gravity
    (z) axis, then composed with the normalized tilt quaternion
    (1, x, y, 0)/|..|.
    """
    yaw_delta = as_tensor(yaw_delta)
    root_xy = as_tensor(root_xy)
    if yaw_delta.shape[0] != root_xy.shape[0]:
        raise ValueError("yaw and xy sequences must have the same length")
    yaw = torch.cumsum(yaw_delta, dim=0)
    ones = torch.ones_like(yaw)
    zeros = torch.zeros_like(yaw)
    tilt = quat_normalize(
        torch.stack([ones, root_xy[:, 0], root_xy[:, 1], zeros], dim=-1)
    )
    return quat_mul(yaw_quat(yaw), tilt)


def decompose_yaw_xy(quats: np.ndarray):
    """Invert compose_root_rotation: quaternions -> (yaw_delta, xy).

    Swing-twist split about world z; the yaw series is unwrapped before
    differencing so increments stay small. Numpy, initialization only.
    """
    q = np.asarray(quats, dtype=np.float64)
    q = np.where(q[:, :1] < 0, -q, q)
    w, x, y, z = q.T
    n = np.sqrt(w**2 + z**2)
    n = np.maximum(n, 1e-12)
    tw = np.stack([w / n, np.zeros_like(w), np.zeros_like(w), z / n], axis=-1)
    yaw = 2.0 * np.arctan2(tw[:, 3], tw[:, 0])
    # swing = conj(twist) * q, which has zero z component by construction
    sw_w = tw[:, 0] * w + tw[:, 3] * z
    sw_x = tw[:, 0] * x + tw[:, 3] * y
    sw_y = tw[:, 0] * y - tw[:, 3] * x
    sw_w = np.maximum(sw_w, 1e-9)
    xy = np.stack([sw_x / sw_w, sw_y / sw_w], axis=-1)
    yaw = np.unwrap(yaw)
    delta = np.empty_like(yaw)
    delta[0] = yaw[0]
    delta[1:] = np.diff(yaw)
    return delta, xy


def forward_kinematics(body: ScaledBody, coord: GeneralizedCoord):
    """World transforms for all joints and contact sites.

    Returns (R_w (T, J, 3, 3), p_w (T, J, 3), sites (T, n_sites, 3)).
    Differentiable with respect to the coordinates and the shape factors
    baked into `body`.
    """
    J = body.n_joints
    if coord.joint_rotvec.shape[1] != J - 1:
        raise ValueError("coordinate layout does not match body")
    root_quat = coord.root_quat()
    joint_R = quat_to_matrix(coord.joint_quats())  # (T, J-1, 3, 3)
    return fk_transforms(body, coord.root_pos, quat_to_matrix(root_quat), joint_R)


def fk_transforms(body: ScaledBody, root_pos, root_R, joint_R):
    """FK from precomputed rotation matrices (root and per-joint local)."""
    parents = body.parents
    rest = body.rest_offsets
    R = [root_R]
    p = [as_tensor(root_pos) + rest[0]]
    for j in range(1, body.n_joints):
        pj = parents[j]
        R.append(R[pj] @ joint_R[:, j - 1])
        p.append(p[pj] + (R[pj] @ rest[j]))
    R_w = torch.stack(R, dim=1)
    p_w = torch.stack(p, dim=1)
    site_bodies = list(body.skeleton.site_body)
    sites = p_w[:, site_bodies] + torch.einsum(
        "tkij,kj->tki", R_w[:, site_bodies], body.site_offsets
    )
    return R_w, p_w, sites


def _forward_diff(x: torch.Tensor, dt: float) -> torch.Tensor:
    """(x[t+1]-x[t])/dt with the last frame replicated from its neighbor."""
    d = (x[1:] - x[:-1]) / dt
    return torch.cat([d, d[-1:]], dim=0)


def finite_difference(q_seq, dt: float):
    """First and second time derivatives of a per-frame value sequence.

    Forward differences matching implicit integration: qdot_t =
    (q_{t+1}-q_t)/dt, qddot_t = (qdot_{t+1}-qdot_t)/dt. Boundary frames
    replicate the nearest interior value so end-of-clip forces are not
    spurious.
    """
    q = as_tensor(q_seq)
    if q.shape[0] < 3:
        raise ValueError("need at least 3 frames for finite differences")
    if dt <= 0:
        raise ValueError("dt must be positive")
    vel = _forward_diff(q, dt)
    acc = (vel[1:] - vel[:-1]) / dt
    # vel already replicates its last frame, so acc[-1] would be zero;
    # replicate the last interior acceleration over the final two frames.
    acc = torch.cat([acc[:-1], acc[-2:-1], acc[-2:-1]], dim=0)
    return vel, acc


def angular_velocity(quats: torch.Tensor, dt: float) -> torch.Tensor:
    """Body-frame angular velocity from quaternion-log differencing.

    omega_t = log(q_t^{-1} q_{t+1}) / dt, last frame replicated.
    """
    rel = quat_mul(quat_conjugate(quats[:-1]), quats[1:])
    w = quat_to_rotvec(rel) / dt
    return torch.cat([w, w[-1:]], dim=0)


def angular_derivatives(quats: torch.Tensor, dt: float):
    """(omega, alpha) from a quaternion sequence, same boundary rule as
    finite_difference."""
    w = angular_velocity(quats, dt)
    a = (w[1:] - w[:-1]) / dt
    a = torch.cat([a[:-1], a[-2:-1], a[-2:-1]], dim=0)
    return w, a


def estimate_root_rotation(keypoints: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Per-frame root orientation from hip and spine keypoint directions."""
    li, ri = skel.index("l_hip"), skel.index("r_hip")
    si, pi = skel.index("spine"), skel.index("pelvis")
    x = keypoints[:, li] - keypoints[:, ri]
    z = keypoints[:, si] - keypoints[:, pi]
    z = z / np.linalg.norm(z, axis=-1, keepdims=True)
    x = x - (x * z).sum(-1, keepdims=True) * z
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=-1)
    return matrix_to_quat(R)


def swing_twist_ik(keypoints3d: np.ndarray, skel: Skeleton, root_quats=None,
                   level_joints=()):
    """Analytic IK with zero twist: minimal rotations aligning bone directions.

    Each joint gets the swing rotation taking its rest-pose primary-child
    bone direction to the observed direction; the twist component about
    the bone axis is zero by construction. Leaf joints stay at identity,
    except those in `level_joints`, whose world orientation is forced to
    the yaw component of the parent frame. Keypoints carry no signal about
    a leaf segment's orientation, and for feet the flat-in-world guess is
    far better than inheriting the pitch of the shank.
    Returns (joint_quats (T, J-1, 4), flags) where flags counts frames that
    fell back to identity because of a zero-length observed bone.
    """
    kp = np.asarray(keypoints3d, dtype=np.float64)
    T, J = kp.shape[0], skel.n_joints
    if J != kp.shape[1]:
        raise ValueError("keypoints must cover the skeleton joint set")
    if root_quats is None:
        root_quats = estimate_root_rotation(kp, skel)
    R_w = np.zeros((T, J, 3, 3))
    R_w[:, 0] = quat_to_matrix(as_tensor(root_quats)).numpy()
    out = np.zeros((T, J - 1, 4))
    out[:, :, 0] = 1.0
    fallbacks = 0
    for j in range(1, J):
        pj = skel.parents[j]
        c = skel.primary_child(j)
        if c is None:
            if j in level_joints:
                Rp = R_w[:, pj]
                psi = np.arctan2(Rp[:, 1, 0], Rp[:, 0, 0])
                cz, sz = np.cos(psi), np.sin(psi)
                Rl = np.zeros((T, 3, 3))
                Rl[:, 0, 0] = cz
                Rl[:, 0, 1] = -sz
                Rl[:, 1, 0] = sz
                Rl[:, 1, 1] = cz
                Rl[:, 2, 2] = 1.0
                q_loc = matrix_to_quat(Rp.transpose(0, 2, 1) @ Rl)
                out[:, j - 1] = q_loc
                R_w[:, j] = Rl
            else:
                R_w[:, j] = R_w[:, pj]
            continue
        u = skel.rest_offsets[c]
        ul = np.linalg.norm(u)
        if ul <= 0:
            raise ValueError(f"zero rest bone length at joint {j}")
        u = u / ul
        d = kp[:, c] - kp[:, j]
        dl = np.linalg.norm(d, axis=-1, keepdims=True)
        bad = dl[:, 0] < 1e-8
        fallbacks += int(bad.sum())
        d = np.where(bad[:, None], u[None, :], d / np.maximum(dl, 1e-12))
        # local target direction: R_local @ u = R_parent^T d
        v = np.einsum("tij,tj->ti", R_w[:, pj].transpose(0, 2, 1), d)
        axis = np.cross(u[None, :], v)
        s = np.linalg.norm(axis, axis=-1)
        cth = np.clip(v @ u, -1.0, 1.0)
        ang = np.arctan2(s, cth)
        safe = np.maximum(s, 1e-12)
        axis = axis / safe[:, None]
        # antiparallel bones: rotate about any axis perpendicular to u
        anti = (s < 1e-8) & (cth < 0)
        if anti.any():
            perp = np.cross(u, [1.0, 0.0, 0.0])
            if np.linalg.norm(perp) < 1e-6:
                perp = np.cross(u, [0.0, 1.0, 0.0])
            axis[anti] = perp / np.linalg.norm(perp)
            ang[anti] = np.pi
        q = np.concatenate(
            [np.cos(ang / 2)[:, None], np.sin(ang / 2)[:, None] * axis], axis=-1
        )
        q[bad] = [1.0, 0.0, 0.0, 0.0]
        out[:, j - 1] = q
        R_w[:, j] = R_w[:, pj] @ quat_to_matrix(as_tensor(q)).numpy()
    return out, fallbacks


def butterworth_lowpass(signal, cutoff: float, order: int = 2,
                        rate: float = 50.0, zero_phase: bool = True):
    """Low-pass Butterworth filter along axis 0.

    Zero-phase (forward-backward) by default, which squares the magnitude
    response and cancels the phase delay.
    """
    if not 0 < cutoff < rate / 2:
        raise ValueError(f"cutoff must lie in (0, rate/2), got {cutoff}")
    if order < 1:
        raise ValueError("order must be >= 1")
    x = np.asarray(signal, dtype=np.float64)
    b, a = butter(order, cutoff, btype="low", fs=rate)
    if zero_phase:
        return filtfilt(b, a, x, axis=0)
    return lfilter(b, a, x, axis=0)
