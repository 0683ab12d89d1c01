"""Total differentiable loss: dynamics + contact + pose + smoothness.

All terms are averaged per frame so weights stay meaningful across clip
lengths, and forces are normalized by body weight before squaring so the
dynamics weight is meaningful across body sizes.
"""

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import torch

from physmo.body import GRAVITY, ScaledBody, Skeleton, apply_shape
from physmo.dynamics import (
    GeneralizedState,
    contact_force_to_generalized,
    rnea,
    root_residual,
)
from physmo.kinematics import (
    GeneralizedCoord,
    angular_derivatives,
    compose_root_rotation,
    fk_transforms,
    finite_difference,
)
from physmo.observations import ObservationSequence
from physmo.quaternions import DTYPE, as_tensor, quat_to_matrix, rotvec_to_quat
from physmo.splines import ChannelLayout, MotionParams, SplineSampler, split_samples

_NORM_EPS = 1e-18  # keeps |f| differentiable at f = 0
_FRICTION_EPS = 1e-6  # guard on the squared normal force [bw^2]


@dataclass
class LossWeights:
    """All loss multipliers and contact constants with their defaults.

    k2 is chosen so the contact variable is ~0 at zero force (c(0) ~ 4.5e-5)
    and the contact-force cap is 1.0 body weight per site (8 sites carry 8x
    the evenly balanced standing force).
    """

    w_dynamics: float = 50.0
    w_e: float = 200.0
    w_edot: float = 50.0
    k1: float = 10.0
    k2: float = 5.0
    w_mu: float = 1.0
    w_pen: float = 100.0
    w_2d: float = 1e-3
    w_3d: float = 0.5
    w_scale: float = 1e-3
    w_beta: float = 5e-3
    w_gmm: float = 2.5e-3
    w_pdd: float = 0.15
    w_tdd: float = 1e-4
    k_margin: float = 0.0
    mu: float = 1.0
    force_cap: float = 1.0  # body weights per site
    w_cap: float = 1.0
    robust_scale_px: float = 100.0

    def __post_init__(self):
        if self.mu <= 0 or self.k1 <= 0:
            raise ValueError("mu and k1 must be positive")
        for name, v in asdict(self).items():
            if name.startswith("w_") and v < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LossWeights":
        return cls(**json.loads(text))


@dataclass
class LossBreakdown:
    """Per-term scalar losses; total is their sum (bookkeeping identity)."""

    dynamics: torch.Tensor
    contact: torch.Tensor
    penetration: torch.Tensor
    friction: torch.Tensor
    force_cap: torch.Tensor
    pose2d: torch.Tensor
    pose3d: torch.Tensor
    prior: torch.Tensor
    smooth: torch.Tensor

    TERMS = ("dynamics", "contact", "penetration", "friction", "force_cap",
             "pose2d", "pose3d", "prior", "smooth")

    @property
    def total(self) -> torch.Tensor:
        return sum(getattr(self, t) for t in self.TERMS)

    def as_dict(self) -> dict:
        return {t: float(getattr(self, t).detach()) for t in self.TERMS} | {
            "total": float(self.total.detach())
        }


def _safe_norm(v: torch.Tensor) -> torch.Tensor:
    return torch.sqrt((v * v).sum(-1) + _NORM_EPS)


def contact_variable(f_norm, k1: float = 10.0, k2: float = 5.0) -> torch.Tensor:
    """Soft step of contact-force magnitude: c = (tanh(k1 |f| - k2) + 1)/2."""
    return 0.5 * (torch.tanh(k1 * as_tensor(f_norm) - k2) + 1.0)


def l_dynamics(residual: torch.Tensor, w_dynamics: float = 50.0) -> torch.Tensor:
    """w_dynamics * mean over frames of the squared root-residual norm.

    `residual` (T, 6) must already be normalized by body weight.
    """
    return w_dynamics * (residual * residual).sum(-1).mean()


def l_contact(e: torch.Tensor, edot: torch.Tensor, f_norm: torch.Tensor,
              w: LossWeights) -> torch.Tensor:
    """Signorini violation: sum_i c_i (w_e |e_i|^2 + w_edot |edot_i|^2).

    e (T, n, 3) is the displacement from each site to the ground plane and
    edot (T, n, 3) the site velocity (its derivative while in contact),
    which penalizes slip.
    """
    c = contact_variable(f_norm, w.k1, w.k2)
    per_site = w.w_e * (e * e).sum(-1) + w.w_edot * (edot * edot).sum(-1)
    return (c * per_site).sum(-1).mean()


def l_penetration(d: torch.Tensor, w_pen: float = 100.0,
                  k_margin: float = 0.0) -> torch.Tensor:
    """w_pen * sum_i max(k_margin - d_i, 0)^2, d = signed height above ground."""
    pen = torch.clamp(k_margin - d, min=0.0)
    return w_pen * (pen * pen).sum(-1).mean()


def l_friction(forces_bw: torch.Tensor, mu: float = 1.0,
               w_mu: float = 1.0) -> torch.Tensor:
    """Friction-cone violation: sum_i max(|f_par|^2 / |f_perp|^2 - mu, 0)."""
    f_par2 = (forces_bw[..., :2] ** 2).sum(-1)
    f_perp2 = forces_bw[..., 2] ** 2 + _FRICTION_EPS
    return w_mu * torch.clamp(f_par2 / f_perp2 - mu, min=0.0).sum(-1).mean()


def l_force_cap(forces_bw: torch.Tensor, cap: float = 1.0,
                w_cap: float = 1.0) -> torch.Tensor:
    """Quadratic penalty on per-site force magnitudes above the cap [bw]."""
    excess = torch.clamp(_safe_norm(forces_bw) - cap, min=0.0)
    return w_cap * (excess * excess).sum(-1).mean()


def l_pose3d(p_world: torch.Tensor, obs3d: torch.Tensor, conf: torch.Tensor,
             cam_R: torch.Tensor, s: torch.Tensor, w: LossWeights,
             root_index: int = 0) -> torch.Tensor:
    """Root-relative 3D keypoint error in camera axes plus scale regularizer."""
    p_rel = p_world - p_world[:, root_index:root_index + 1]
    obs_rel = obs3d - obs3d[:, root_index:root_index + 1]
    resid = torch.einsum("ab,tjb->tja", cam_R, p_rel) - s * obs_rel
    n = conf.shape[0] * conf.shape[1]
    return (w.w_3d * (conf * (resid * resid).sum(-1)).sum() / n
            + w.w_scale * (s - 1.0) ** 2)


def geman_mcclure(r2: torch.Tensor, sigma: float) -> torch.Tensor:
    """Robust loss on squared residuals; saturates at sigma^2."""
    s2 = sigma * sigma
    return s2 * r2 / (r2 + s2)


def l_pose2d(p_world: torch.Tensor, obs2d: torch.Tensor, conf: torch.Tensor,
             cam_R: torch.Tensor, cam_t: torch.Tensor,
             intrinsics: tuple, w: LossWeights):
    """Robust reprojection error in pixel space.

    Points behind the camera are excluded and counted in the returned
    flag. Returns (loss, n_excluded).
    """
    fx, fy, cx, cy = intrinsics
    p_cam = torch.einsum("ab,tjb->tja", cam_R, p_world) + cam_t
    z = p_cam[..., 2]
    valid = z > 1e-3
    z_safe = torch.where(valid, z, torch.ones_like(z))
    u = fx * p_cam[..., 0] / z_safe + cx
    v = fy * p_cam[..., 1] / z_safe + cy
    resid = torch.stack([u, v], dim=-1) - obs2d
    rho = geman_mcclure((resid * resid).sum(-1), w.robust_scale_px)
    weight = conf * valid
    n = conf.shape[0] * conf.shape[1]
    return w.w_2d * (weight * rho).sum() / n, int((~valid).sum())


class GmmPrior:
    """Gaussian-mixture pose prior over flattened joint rotation vectors."""

    def __init__(self, weights, means, covariances):
        self.weights = as_tensor(weights)
        self.means = as_tensor(means)
        covs = as_tensor(covariances)
        self.chol = torch.linalg.cholesky(covs)
        self.logdet = 2.0 * torch.log(
            torch.diagonal(self.chol, dim1=-2, dim2=-1)).sum(-1)
        self.dim = self.means.shape[1]

    def nll(self, theta: torch.Tensor) -> torch.Tensor:
        """Negative log-likelihood per frame, theta (T, D)."""
        diff = theta[:, None, :] - self.means[None]  # (T, G, D)
        sol = torch.linalg.solve_triangular(
            self.chol[None], diff.unsqueeze(-1), upper=False).squeeze(-1)
        maha = (sol * sol).sum(-1)
        logp = (torch.log(self.weights)[None] - 0.5 * maha
                - 0.5 * self.logdet[None]
                - 0.5 * self.dim * np.log(2 * np.pi))
        return -torch.logsumexp(logp, dim=-1)

    @classmethod
    def from_json(cls, text: str) -> "GmmPrior":
        doc = json.loads(text)
        try:
            return cls(doc["weights"], doc["means"], doc["covariances"])
        except (KeyError, RuntimeError, ValueError) as e:
            raise ValueError(f"malformed GMM prior file: {e}") from e


def l_prior(joint_rotvec: torch.Tensor, shape: torch.Tensor, w: LossWeights,
            gmm: GmmPrior = None) -> torch.Tensor:
    """Shape regularizer toward nominal 1 plus pose prior penalty.

    With a GMM the pose term is the mean per-frame negative log-likelihood;
    without one it falls back to a quadratic pull toward the rest pose.
    """
    shape_term = w.w_beta * ((shape - 1.0) ** 2).sum()
    theta = joint_rotvec.reshape(joint_rotvec.shape[0], -1)
    if gmm is not None:
        pose_term = gmm.nll(theta).mean()
    else:
        pose_term = (theta * theta).sum(-1).mean()
    return shape_term + w.w_gmm * pose_term


def l_smooth(theta_acc: torch.Tensor, p_acc: torch.Tensor,
             w: LossWeights) -> torch.Tensor:
    """Acceleration penalty (rotational + global linear):
    (1/n_joints)(w_tdd |thetadd|^2 + w_pdd |pdd|^2) averaged over frames."""
    n_joints = p_acc.shape[1]
    per_frame = (w.w_tdd * (theta_acc * theta_acc).sum((-1, -2))
                 + w.w_pdd * (p_acc * p_acc).sum((-1, -2))) / n_joints
    return per_frame.mean()


class RefinementProblem:
    """Differentiable objective over a flat variable vector.

    Owns the observation tensors, loss weights, knot grid and the fixed
    frame-time sampler. `loss_torch` evaluates a LossBreakdown from a flat
    torch vector; pack/unpack between MotionParams and the flat layout is
    delegated to the template params.
    """

    def __init__(self, skeleton: Skeleton, obs: ObservationSequence,
                 weights: LossWeights = None, subsample: int = 8,
                 enable_physics: bool = True, gmm: GmmPrior = None,
                 knot_times=None):
        from physmo.splines import knot_grid

        self.skeleton = skeleton
        self.obs = obs
        self.weights = weights or LossWeights()
        self.enable_physics = enable_physics
        self.gmm = gmm
        self.dt = 1.0 / obs.fps
        self.frame_times = obs.frame_times()
        if knot_times is None:
            knot_times = knot_grid(obs.n_frames, obs.fps, subsample)
        self.template = MotionParams.zeros(knot_times, skeleton.n_joints,
                                           skeleton.n_sites)
        self.layout = self.template.layout
        self.sampler = SplineSampler(knot_times, self.frame_times)
        self.obs3d = as_tensor(obs.keypoints_3d)
        self.obs2d = as_tensor(obs.keypoints_2d)
        self.conf = as_tensor(obs.confidence)
        self.cam_R = as_tensor(obs.camera.rotation)
        self.cam_t = as_tensor(obs.camera.translation)
        self.intrinsics = (obs.camera.fx, obs.camera.fy,
                           obs.camera.cx, obs.camera.cy)
        self.ground = obs.ground_height
        self.last_breakdown = None

    @property
    def n_variables(self) -> int:
        return self.template.n_variables

    @property
    def n_frozen_tail(self) -> int:
        """Shape factors and scale: held fixed during the physics stage."""
        return self.skeleton.n_joints

    def pack(self, params: MotionParams) -> np.ndarray:
        return params.pack()

    def unpack(self, x: np.ndarray) -> MotionParams:
        return self.template.unpack(x)

    def _split(self, x: torch.Tensor):
        K, C = self.template.values.shape
        nv = K * C
        values = x[:nv].view(K, C)
        tangents = x[nv:2 * nv].view(K, C)
        shape = x[2 * nv:2 * nv + self.skeleton.n_joints - 1]
        s = x[-1]
        return values, tangents, shape, s

    def loss_torch(self, x: torch.Tensor) -> LossBreakdown:
        w = self.weights
        values, tangents, shape, s = self._split(x)
        # shape factors act as bone proportions only: their mean component
        # is projected out so global size is carried solely by the scale
        # variable, which the pose terms constrain. Without this, a uniform
        # shrink combined with matching scale and camera-distance shifts is
        # invisible to every data term and the optimizer drifts along it.
        body = apply_shape(self.skeleton,
                           shape / shape.mean().clamp_min(1e-6))
        samples = self.sampler.eval(values, tangents)
        root_pos, yaw, xy, joint_rv, forces_bw = split_samples(samples, self.layout)

        root_quat = compose_root_rotation(yaw, xy)
        joint_quats = rotvec_to_quat(joint_rv)
        root_R = quat_to_matrix(root_quat)
        joint_R = quat_to_matrix(joint_quats)
        R_w, p_w, sites = fk_transforms(body, root_pos, root_R, joint_R)

        # pose terms
        pose3d = l_pose3d(p_w, self.obs3d, self.conf, self.cam_R, s, w)
        pose2d, _ = l_pose2d(p_w, self.obs2d, self.conf, self.cam_R,
                             self.cam_t, self.intrinsics, w)
        prior = l_prior(joint_rv, shape, w, self.gmm)

        # smoothness on joint-rotation and global joint-position accelerations
        _, theta_acc = angular_derivatives(joint_quats, self.dt)
        _, p_acc = finite_difference(p_w, self.dt)
        smooth = l_smooth(theta_acc, p_acc, w)

        zero = x.new_zeros(())
        if not self.enable_physics:
            bd = LossBreakdown(zero, zero, zero, zero, zero,
                               pose2d, pose3d, prior, smooth)
            self.last_breakdown = bd
            return bd

        v_root, a_root = finite_difference(root_pos, self.dt)
        w_root, al_root = angular_derivatives(root_quat, self.dt)
        w_j, _ = angular_derivatives(joint_quats, self.dt)
        state = GeneralizedState(
            root_pos=root_pos, root_R=root_R, joint_R=joint_R,
            v_root=v_root, w_root=w_root, w_joints=w_j,
            a_root=a_root, alpha_root=al_root, alpha_joints=theta_acc,
            dt=self.dt,
        )
        f_r = rnea(body, state)
        bw = body.body_weight
        f_c = contact_force_to_generalized(body, R_w, p_w, sites,
                                           forces_bw * bw)
        residual = root_residual(f_r, f_c) / bw  # torque lever arm 1 m
        dynamics = l_dynamics(residual, w.w_dynamics)

        height = sites[..., 2] - self.ground
        e = torch.cat([torch.zeros_like(sites[..., :2]), height.unsqueeze(-1)],
                      dim=-1)
        edot = _forward_diff_sites(sites, self.dt)
        f_norm = _safe_norm(forces_bw)
        contact = l_contact(e, edot, f_norm, w)
        penetration = l_penetration(height, w.w_pen, w.k_margin)
        friction = l_friction(forces_bw, w.mu, w.w_mu)
        cap = l_force_cap(forces_bw, w.force_cap, w.w_cap)

        bd = LossBreakdown(dynamics, contact, penetration, friction, cap,
                           pose2d, pose3d, prior, smooth)
        self.last_breakdown = bd
        return bd

    def breakdown(self, x: np.ndarray) -> LossBreakdown:
        with torch.no_grad():
            return self.loss_torch(as_tensor(x))

    def stage_boundary_adjust(self, x: np.ndarray) -> np.ndarray:
        """Lift the root height channel so no contact site starts below
        the ground. The kinematic stage inherits any vertical bias in the
        observations; starting the physics stage with the feet underground
        makes the penetration term dominate the first iterations and the
        optimizer wrecks the pose to escape it. A constant shift of the
        root-z knot values is exact for the spline and touches nothing else.
        """
        with torch.no_grad():
            xt = as_tensor(x)
            values, tangents, shape, s = self._split(xt)
            body = apply_shape(self.skeleton,
                               shape / shape.mean().clamp_min(1e-6))
            samples = self.sampler.eval(values, tangents)
            root_pos, yaw, xy, joint_rv, _ = split_samples(samples, self.layout)
            root_R = quat_to_matrix(compose_root_rotation(yaw, xy))
            joint_R = quat_to_matrix(rotvec_to_quat(joint_rv))
            _, _, sites = fk_transforms(body, root_pos, root_R, joint_R)
            # per-frame lowest site, then a low percentile over frames so a
            # single noisy dip cannot hoist the whole trajectory into the air
            frame_min = sites[..., 2].min(dim=1).values.numpy()
            low = float(np.percentile(frame_min, 10.0))
        if low >= self.ground:
            return x
        x = x.copy()
        K, C = self.template.values.shape
        x[np.arange(K) * C + 2] += self.ground - low
        return x


def _forward_diff_sites(sites: torch.Tensor, dt: float) -> torch.Tensor:
    d = (sites[1:] - sites[:-1]) / dt
    return torch.cat([d, d[-1:]], dim=0)


def total_loss(params: MotionParams, skeleton: Skeleton,
               obs: ObservationSequence, weights: LossWeights = None,
               enable_physics: bool = True, gmm: GmmPrior = None) -> LossBreakdown:
    """Evaluate the full objective for explicit MotionParams."""
    problem = RefinementProblem(skeleton, obs, weights,
                                enable_physics=enable_physics, gmm=gmm,
                                knot_times=params.knot_times)
    return problem.breakdown(params.pack())
