"""Synthetic test scenes with physics-consistent ground truth.

Each scene yields a truth motion whose contact forces are solved per frame
so the residual root wrench vanishes (least-norm distribution over the
foot sites around a uniform vertical baseline), plus noiseless and noisy
observation sequences rendered through a fixed pinhole camera. The truth
spline places a knot on every frame, so sampling at frame times reproduces
the constructed values exactly.
"""

from dataclasses import dataclass

import numpy as np
import torch

from physmo.body import (GRAVITY, ScaledBody, Skeleton, apply_shape,
                         build_default_humanoid)
from physmo.dynamics import rnea, state_from_motion
from physmo.kinematics import GeneralizedCoord, forward_kinematics
from physmo.observations import Camera, ObservationSequence
from physmo.quaternions import as_tensor
from physmo.splines import MotionParams, catmull_rom_tangents

SCENES = ("standing_sway", "squat", "ballistic_hop")

DEFAULT_NOISE_STD = 0.020        # [m] on 3D keypoints
DEFAULT_DEPTH_BIAS = 0.030       # [m] constant shift along the camera ray
DEFAULT_DEPTH_WOBBLE = 0.040     # [m] slow depth "breathing" amplitude
DEFAULT_DEPTH_WOBBLE_HZ = 0.3
DEFAULT_GROUND_BIAS = 0.0        # [m] world-z shift shared by 2D and 3D
DEFAULT_PIXEL_STD = 3.0          # [px] on 2D keypoints
DEFAULT_ANKLE_CONF = 0.2         # estimators are least certain at the feet


@dataclass
class SyntheticScene:
    name: str
    fps: float
    skeleton: Skeleton
    truth_params: MotionParams          # includes solved force channels
    truth_positions: np.ndarray         # (T, J, 3) world [m]
    truth_forces_bw: np.ndarray         # (T, n_sites, 3) body-weight units
    obs_clean: ObservationSequence
    obs_noisy: ObservationSequence


def look_at_camera(position, target, fx=1000.0, fy=1000.0,
                   cx=500.0, cy=500.0) -> Camera:
    """Camera at `position` with optical axis through `target`; x right,
    y down, z forward."""
    c = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - c
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=R, translation=-R @ c)


def _solve_contact_forces(body: ScaledBody, coord: GeneralizedCoord,
                          dt: float, contact_mask: np.ndarray) -> np.ndarray:
    """Per-frame least-norm site forces cancelling the rnea root wrench.

    Solves A f = b with A the site-force-to-root-wrench map and baseline
    f0 = uniform vertical body weight / n_sites; frames with contact_mask
    False get zero force. Returns body-weight units.
    """
    state = state_from_motion(coord, dt)
    f_r = rnea(body, state)
    b_all = f_r.root_wrench().numpy()  # (T, 6), torque in root frame
    _, p_w, sites = forward_kinematics(body, coord)
    p_w = p_w.numpy()
    sites = sites.numpy()
    R0 = state.root_R.numpy()

    T, S = sites.shape[0], sites.shape[1]
    bw = float(body.body_weight)
    forces = np.zeros((T, S, 3))
    f0 = np.zeros(3 * S)
    f0[2::3] = bw / S
    for t in range(T):
        if not contact_mask[t]:
            continue
        A = np.zeros((6, 3 * S))
        for i in range(S):
            A[:3, 3 * i:3 * i + 3] = np.eye(3)
            r = sites[t, i] - p_w[t, 0]
            skew = np.array([[0, -r[2], r[1]],
                             [r[2], 0, -r[0]],
                             [-r[1], r[0], 0]])
            A[3:, 3 * i:3 * i + 3] = R0[t].T @ skew
        rhs = b_all[t] - A @ f0
        lam = np.linalg.solve(A @ A.T, rhs)
        forces[t] = (f0 + A.T @ lam).reshape(S, 3)
    return forces / bw


def _params_from_frames(frame_times, root_pos, joint_rotvec, forces_bw,
                        n_joints: int, n_sites: int) -> MotionParams:
    """Truth spline with one knot per frame (exact at the frame grid)."""
    params = MotionParams.zeros(frame_times, n_joints, n_sites)
    T = len(frame_times)
    params.values[:, params.layout.root_pos] = root_pos
    params.values[:, params.layout.joints] = joint_rotvec.reshape(T, -1)
    params.values[:, params.layout.forces] = forces_bw.reshape(T, -1)
    params.tangents = catmull_rom_tangents(np.asarray(frame_times),
                                           params.values)
    return params


def _scene_motion(name: str, t: np.ndarray):
    """Per-frame (root_pos offset, joint rotation vectors, contact mask)."""
    skel = build_default_humanoid()
    T = len(t)
    J = skel.n_joints
    root = np.zeros((T, 3))
    rv = np.zeros((T, J - 1, 3))
    mask = np.ones(T, dtype=bool)
    idx = {n: i for i, n in enumerate(skel.joint_names)}

    if name == "standing_sway":
        sway = 0.55 * np.sin(2.0 * np.pi * 0.8 * t)
        rv[:, idx["l_shoulder"] - 1, 0] = sway
        rv[:, idx["r_shoulder"] - 1, 0] = -sway
        rv[:, idx["l_elbow"] - 1, 0] = 0.15 * sway
        rv[:, idx["r_elbow"] - 1, 0] = -0.15 * sway
        rv[:, idx["spine"] - 1, 0] = 0.08 * np.sin(2.0 * np.pi * 0.4 * t)
    elif name == "squat":
        L = abs(skel.rest_offsets[idx["l_knee"]][2])
        phi = 0.45 * (1.0 - np.cos(2.0 * np.pi * t / 2.5))
        for side in ("l", "r"):
            rv[:, idx[f"{side}_hip"] - 1, 0] = phi
            rv[:, idx[f"{side}_knee"] - 1, 0] = -2.0 * phi
            rv[:, idx[f"{side}_ankle"] - 1, 0] = phi
        root[:, 2] = -2.0 * L * (1.0 - np.cos(phi))
    elif name == "ballistic_hop":
        t_a = 0.4 * t[-1]
        v0 = 1.5
        dur = 2.0 * v0 / GRAVITY
        tau = t - t_a
        z = np.where((tau >= 0) & (tau <= dur),
                     v0 * tau - 0.5 * GRAVITY * tau * tau, 0.0)
        root[:, 2] = z
        mask = z <= 1e-12
    else:
        raise ValueError(f"unknown scene {name!r}, expected one of {SCENES}")
    return skel, root, rv, mask


def _render_observations(positions: np.ndarray, camera: Camera, fps: float,
                         joint_names, rng=None,
                         noise_std: float = DEFAULT_NOISE_STD,
                         depth_bias: float = DEFAULT_DEPTH_BIAS,
                         pixel_std: float = DEFAULT_PIXEL_STD) -> ObservationSequence:
    p_world = positions
    if rng is not None:
        # a miscalibrated ground plane shifts the whole estimate vertically,
        # consistently in both the 2D and 3D channels
        p_world = positions + np.array([0.0, 0.0, DEFAULT_GROUND_BIAS])
    p_cam = camera.world_to_cam(p_world)
    if rng is not None:
        p_cam = p_cam + rng.normal(0.0, noise_std, p_cam.shape)
        # monocular depth error: constant offset plus slow breathing,
        # shared by all joints within a frame
        t = np.arange(positions.shape[0]) / fps
        wobble = DEFAULT_DEPTH_WOBBLE * np.sin(
            2.0 * np.pi * DEFAULT_DEPTH_WOBBLE_HZ * t
            + rng.uniform(0.0, 2.0 * np.pi))
        p_cam[..., 2] += depth_bias + wobble[:, None]
    p_2d = camera.project(camera.world_to_cam(p_world))
    if rng is not None:
        p_2d = p_2d + rng.normal(0.0, pixel_std, p_2d.shape)
    conf = np.ones(positions.shape[:2])
    if rng is not None:
        names = list(joint_names)
        for j, n in enumerate(names):
            if n.endswith("_ankle"):
                conf[:, j] = DEFAULT_ANKLE_CONF
    return ObservationSequence(
        fps=fps, keypoints_3d=p_cam, keypoints_2d=p_2d, confidence=conf,
        camera=camera, ground_height=0.0, joint_names=tuple(joint_names))


def generate_synthetic(scene: str, duration: float = 10.0, seed: int = 0,
                       fps: float = 50.0,
                       noise_std: float = DEFAULT_NOISE_STD) -> SyntheticScene:
    """Build one named scene: truth motion + analytic contact forces +
    clean and noisy observations. Deterministic for a fixed seed."""
    if duration < 2.0:
        raise ValueError("duration must be at least 2 seconds")
    T = int(round(duration * fps))
    t = np.arange(T) / fps
    dt = 1.0 / fps

    skel, root, rv, mask = _scene_motion(scene, t)
    body = apply_shape(skel, torch.ones(skel.n_joints - 1, dtype=torch.float64))

    coord = GeneralizedCoord(
        root_pos=as_tensor(root),
        yaw_delta=torch.zeros(T, dtype=torch.float64),
        root_xy=torch.zeros(T, 2, dtype=torch.float64),
        joint_rotvec=as_tensor(rv),
    )
    forces_bw = _solve_contact_forces(body, coord, dt, mask)
    params = _params_from_frames(t, root, rv, forces_bw,
                                 skel.n_joints, skel.n_sites)

    _, p_w, _ = forward_kinematics(body, coord)
    positions = p_w.numpy()

    camera = look_at_camera((0.0, -3.5, 1.0), (0.0, 0.0, 0.9))
    obs_clean = _render_observations(positions, camera, fps, skel.joint_names)
    rng = np.random.default_rng(seed)
    obs_noisy = _render_observations(positions, camera, fps, skel.joint_names,
                                     rng=rng, noise_std=noise_std)
    return SyntheticScene(
        name=scene, fps=fps, skeleton=skel, truth_params=params,
        truth_positions=positions, truth_forces_bw=forces_bw,
        obs_clean=obs_clean, obs_noisy=obs_noisy)
