"""End-to-end refinement driver.

load -> initialize (filter, IK, yaw split, spline fit) -> two-stage
optimization -> dense sampling -> export. Clips longer than the chunk
limit are split with a one-second overlap and stitched by linear
crossfade of the per-frame coordinate samples.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from physmo.body import Skeleton, apply_shape, build_default_humanoid
from physmo.kinematics import (
    GeneralizedCoord,
    butterworth_lowpass,
    decompose_yaw_xy,
    estimate_root_rotation,
    forward_kinematics,
    swing_twist_ik,
)
from physmo.lbfgs import LbfgsConfig, minimize, two_stage_refine, write_trace_csv
from physmo.objective import GmmPrior, LossWeights, RefinementProblem
from physmo.observations import ObservationSequence, ValidationError
from physmo.quaternions import as_tensor, quat_to_rotvec
from physmo.splines import ChannelLayout, MotionParams, SplineSampler, knot_grid
from physmo.synthetic import generate_synthetic  # noqa: F401  (CLI surface)


@dataclass
class RefinementConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: LbfgsConfig = field(default_factory=LbfgsConfig)
    subsample: int = 8
    butterworth_cutoff_hz: float = 6.0
    enable_physics: bool = True
    chunk_frames: int = 2000
    chunk_overlap_s: float = 1.0
    stance_height_m: float = 0.05
    force_init_bw: float = 0.125
    pose_guard_factor: float = 2.0
    gmm_path: str = None

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RefinementConfig":
        doc = json.loads(text)
        kwargs = dict(doc)
        if "weights" in kwargs:
            kwargs["weights"] = LossWeights(**kwargs["weights"])
        if "optimizer" in kwargs:
            kwargs["optimizer"] = LbfgsConfig(**kwargs["optimizer"])
        return cls(**kwargs)


@dataclass
class RefinedMotion:
    fps: float
    frame_times: np.ndarray      # (T,)
    coordinates: np.ndarray      # (T, C_q) dense generalized coordinates
    positions: np.ndarray        # (T, J, 3) world [m]
    forces_n: np.ndarray         # (T, n_sites, 3) [N]
    shape: np.ndarray            # (J-1,) bone-length factors
    scale: float
    joint_names: tuple
    trace: list = field(default_factory=list)
    optimizer_failed: bool = False
    pose_guard_exceeded: bool = False

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]


def load_observations(path: str) -> ObservationSequence:
    with open(path) as fh:
        return ObservationSequence.from_json(fh.read())


def _continuous_rotvec(quats: np.ndarray) -> np.ndarray:
    """Exponential maps with the branch chosen for frame-to-frame continuity."""
    rv = quat_to_rotvec(as_tensor(quats)).numpy()
    out = rv.copy()
    flat = out.reshape(out.shape[0], -1, 3)
    for t in range(1, flat.shape[0]):
        for j in range(flat.shape[1]):
            v = flat[t, j]
            prev = flat[t - 1, j]
            n = np.linalg.norm(v)
            if n < 1e-12:
                continue
            # step to the 2*pi-shifted branch while it is closer to the
            # previous frame
            while True:
                alt = v * (1.0 - 2.0 * np.pi / n)
                if np.linalg.norm(alt - prev) < np.linalg.norm(v - prev):
                    v = alt
                    n = np.linalg.norm(v)
                    if n < 1e-12:
                        break
                else:
                    break
            flat[t, j] = v
    return out


def _anchor_forces(skel, sites, stance, root_pos, force_init_bw):
    """Initial vertical contact forces, concentrated per foot.

    An even spread across all sites leaves the contact variable c ~ 5e-5
    everywhere and the contact term cannot anchor the feet at all, so each
    foot gets one strongly loaded heel corner (c = 0.5) plus a lighter toe
    corner chosen so the initial center of pressure sits under the ankle.
    Starting the pressure at the bare heel instead makes the optimizer
    drag the feet forward until the heel is under the center of mass,
    which costs tens of mm of leg pose error. Of each corner pair take
    the one nearest the body midline so the left/right anchors do not
    share a lateral bias.
    """
    T = stance.shape[0]
    forces = np.zeros((T, skel.n_sites, 3))
    site_x = sites[..., 0].numpy().mean(axis=0)
    pelvis_x = float(np.mean(root_pos[:, 0]))
    for j in sorted(set(skel.site_body)):
        ks = [k for k, b in enumerate(skel.site_body) if b == j]
        ys = skel.site_offsets[ks, 1]
        back = [k for k in ks if skel.site_offsets[k, 1] <= ys.min() + 1e-9]
        front = [k for k in ks if skel.site_offsets[k, 1] >= ys.max() - 1e-9]
        kb = min(back, key=lambda k: abs(site_x[k] - pelvis_x))
        kf = min(front, key=lambda k: abs(site_x[k] - pelvis_x))
        y_b, y_f = skel.site_offsets[kb, 1], skel.site_offsets[kf, 1]
        # toe share that puts the heel/toe pressure centroid at y = 0
        share = -y_b / max(y_f - y_b, 1e-9)
        f_heel = 4.0 * force_init_bw
        f_toe = f_heel * share / max(1.0 - share, 1e-9)
        forces[:, kb, 2] = np.where(stance[:, kb], f_heel, 0.0)
        forces[:, kf, 2] = np.where(stance[:, kf], f_toe, 0.0)
    return forces


def initialize(obs: ObservationSequence, skel: Skeleton,
               config: RefinementConfig = None) -> MotionParams:
    """Smoothed keypoints -> IK rotations -> yaw-split root -> splines."""
    config = config or RefinementConfig()
    fps = obs.fps
    kp = obs.keypoints_world()
    cutoff = min(config.butterworth_cutoff_hz, 0.45 * fps)
    smooth = butterworth_lowpass(kp, cutoff, rate=fps)

    root_quats = estimate_root_rotation(smooth, skel)
    yaw_delta, xy = decompose_yaw_xy(root_quats)
    joint_quats, _ = swing_twist_ik(smooth, skel, root_quats,
                                    level_joints=skel.foot_joints)
    rv = _continuous_rotvec(joint_quats)

    pelvis = skel.index("pelvis")
    root_pos = smooth[:, pelvis] - np.asarray(skel.rest_offsets[0])

    T = obs.n_frames
    sub = config.subsample
    params = MotionParams.zeros(knot_grid(T, fps, sub),
                                skel.n_joints, skel.n_sites)
    params.set_channel("root_pos", root_pos, fps, sub)
    params.set_channel("yaw", yaw_delta.reshape(T, 1), fps, sub)
    params.set_channel("xy", xy, fps, sub)
    params.set_channel("joints", rv.reshape(T, -1), fps, sub)

    # stance-like sites (near the ground in the initialized pose) get a
    # small vertical force so the contact variable has usable gradient
    coord = GeneralizedCoord(
        root_pos=as_tensor(root_pos),
        yaw_delta=as_tensor(yaw_delta),
        root_xy=as_tensor(xy),
        joint_rotvec=as_tensor(rv),
    )
    body = apply_shape(skel, torch.ones(skel.n_joints - 1, dtype=torch.float64))
    _, _, sites = forward_kinematics(body, coord)
    stance = (sites[..., 2].numpy() - obs.ground_height) < config.stance_height_m
    forces = _anchor_forces(skel, sites, stance, root_pos, config.force_init_bw)
    params.set_channel("forces", forces.reshape(T, -1), fps, sub)
    return params


def _slice_observations(obs: ObservationSequence, a: int, b: int) -> ObservationSequence:
    return ObservationSequence(
        fps=obs.fps,
        keypoints_3d=obs.keypoints_3d[a:b],
        keypoints_2d=obs.keypoints_2d[a:b],
        confidence=obs.confidence[a:b],
        camera=obs.camera,
        ground_height=obs.ground_height,
        joint_names=obs.joint_names,
        warning_count=obs.warning_count,
    )


def _chunk_ranges(n_frames: int, chunk: int, overlap: int):
    if n_frames <= chunk:
        return [(0, n_frames)]
    step = chunk - overlap
    ranges = []
    a = 0
    while True:
        b = min(a + chunk, n_frames)
        ranges.append((a, b))
        if b == n_frames:
            return ranges
        a += step


def _pose_terms(rec) -> float:
    return rec.terms.get("pose2d", 0.0) + rec.terms.get("pose3d", 0.0)


def _refine_chunk(obs, skel, config, gmm):
    problem = RefinementProblem(skel, obs, config.weights,
                                subsample=config.subsample,
                                enable_physics=config.enable_physics,
                                gmm=gmm)
    x0 = problem.pack(initialize(obs, skel, config))
    if config.enable_physics:
        x, trace, info = two_stage_refine(problem, x0, config.optimizer)
        failed = info.get("line_search_failed", False)
    else:
        from physmo.gradient import value_and_gradient

        problem.enable_physics = False
        budget = (config.optimizer.max_iter_kinematic
                  + config.optimizer.max_iter_physics)

        def terms():
            bd = problem.last_breakdown
            return bd.as_dict() if bd is not None else {}

        trace = []
        res = minimize(lambda v: value_and_gradient(problem, v), x0,
                       config.optimizer, max_iter=budget, stage=1,
                       trace=trace, term_fn=terms)
        x, failed = res.x, res.line_search_failed

    guard = False
    stage1 = [r for r in trace if r.stage == 1]
    if stage1 and config.enable_physics:
        base = _pose_terms(stage1[-1])
        final = _pose_terms(trace[-1])
        guard = final > config.pose_guard_factor * max(base, 1e-12)
    return problem.unpack(x), trace, failed, guard


def _dense_samples(params: MotionParams, frame_times) -> np.ndarray:
    sampler = SplineSampler(params.knot_times, np.asarray(frame_times))
    return sampler.eval(as_tensor(params.values),
                        as_tensor(params.tangents)).numpy()


def refine(obs: ObservationSequence, skel: Skeleton = None,
           config: RefinementConfig = None) -> RefinedMotion:
    """Full pipeline on one observation sequence."""
    skel = skel or build_default_humanoid()
    config = config or RefinementConfig()
    gmm = None
    if config.gmm_path:
        with open(config.gmm_path) as fh:
            gmm = GmmPrior.from_json(fh.read())

    T = obs.n_frames
    fps = obs.fps
    overlap = int(round(config.chunk_overlap_s * fps))
    ranges = _chunk_ranges(T, config.chunk_frames, overlap)
    layout = ChannelLayout(skel.n_joints, skel.n_sites)

    samples = np.zeros((T, layout.n_columns))
    weight = np.zeros(T)
    shapes, scales, trace = [], [], []
    failed = guard = False
    for a, b in ranges:
        sub_obs = _slice_observations(obs, a, b)
        params, tr, fl, gd = _refine_chunk(sub_obs, skel, config, gmm)
        chunk_samples = _dense_samples(params, sub_obs.frame_times())
        w = np.ones(b - a)
        if a > 0:
            w[:overlap] = np.linspace(0.0, 1.0, overlap, endpoint=False)
        samples[a:b] = (samples[a:b] * weight[a:b, None]
                        + chunk_samples * w[:, None])
        weight[a:b] += w
        samples[a:b] /= weight[a:b, None]
        weight[a:b] = 1.0
        shapes.append(params.shape)
        scales.append(params.scale)
        trace.extend(tr)
        failed = failed or fl
        guard = guard or gd

    shape = np.mean(shapes, axis=0)
    scale = float(np.mean(scales))
    frame_times = obs.frame_times()

    body = apply_shape(skel, as_tensor(shape))
    coord = GeneralizedCoord(
        root_pos=as_tensor(samples[:, layout.root_pos]),
        yaw_delta=as_tensor(samples[:, layout.yaw][:, 0]),
        root_xy=as_tensor(samples[:, layout.xy]),
        joint_rotvec=as_tensor(
            samples[:, layout.joints].reshape(T, skel.n_joints - 1, 3)),
    )
    _, p_w, _ = forward_kinematics(body, coord)
    forces_bw = samples[:, layout.forces].reshape(T, skel.n_sites, 3)
    forces_n = forces_bw * float(body.body_weight)

    n_coord = layout.forces.start
    return RefinedMotion(
        fps=fps,
        frame_times=frame_times,
        coordinates=samples[:, :n_coord],
        positions=p_w.numpy(),
        forces_n=forces_n,
        shape=shape,
        scale=scale,
        joint_names=tuple(skel.joint_names),
        trace=trace,
        optimizer_failed=failed,
        pose_guard_exceeded=guard,
    )


# --- export / import ---------------------------------------------------

def _result_doc(result: RefinedMotion) -> dict:
    return {
        "fps": result.fps,
        "joint_names": list(result.joint_names),
        "shape": result.shape.tolist(),
        "scale": result.scale,
        "optimizer_failed": result.optimizer_failed,
        "pose_guard_exceeded": result.pose_guard_exceeded,
        "frame_times": result.frame_times.tolist(),
        "coordinates": result.coordinates.tolist(),
        "positions": result.positions.tolist(),
        "forces_N": result.forces_n.tolist(),
    }


def export(result: RefinedMotion, path: str, format: str = "json",
           trace_path: str = None):
    """Write the result; JSON round-trips exactly, CSV is plot-ready."""
    if trace_path:
        write_trace_csv(result.trace, trace_path)
    if format == "json":
        with open(path, "w") as fh:
            json.dump(_result_doc(result), fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        _export_csv(result, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def _export_csv(result: RefinedMotion, path: str):
    """One row per frame and joint; ankle rows carry the summed forces of
    their contact sites in Newtons."""
    skel = build_default_humanoid()
    per_joint_force = {}
    if tuple(result.joint_names) == tuple(skel.joint_names):
        for k, j in enumerate(skel.site_body):
            per_joint_force.setdefault(j, []).append(k)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "time_s", "joint",
                     "pos_x_m", "pos_y_m", "pos_z_m",
                     "force_x_N", "force_y_N", "force_z_N"])
        for t in range(result.n_frames):
            for j, name in enumerate(result.joint_names):
                row = [t, repr(float(result.frame_times[t])), name]
                row += [repr(float(v)) for v in result.positions[t, j]]
                if j in per_joint_force:
                    f = result.forces_n[t, per_joint_force[j]].sum(axis=0)
                    row += [repr(float(v)) for v in f]
                else:
                    row += ["", "", ""]
                wr.writerow(row)


def load_result(path: str) -> RefinedMotion:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return RefinedMotion(
            fps=float(doc["fps"]),
            frame_times=np.asarray(doc["frame_times"], dtype=np.float64),
            coordinates=np.asarray(doc["coordinates"], dtype=np.float64),
            positions=np.asarray(doc["positions"], dtype=np.float64),
            forces_n=np.asarray(doc["forces_N"], dtype=np.float64),
            shape=np.asarray(doc["shape"], dtype=np.float64),
            scale=float(doc["scale"]),
            joint_names=tuple(doc["joint_names"]),
            optimizer_failed=bool(doc["optimizer_failed"]),
            pose_guard_exceeded=bool(doc["pose_guard_exceeded"]),
        )
    except KeyError as e:
        raise ValidationError(str(e), "missing field in result file") from e
