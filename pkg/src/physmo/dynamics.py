"""Recursive Newton-Euler inverse dynamics on the scaled body.

State convention: the root is a free joint with world-frame linear
velocity/acceleration and body-frame angular velocity/acceleration; every
other joint is spherical with angular velocity expressed in its own (child)
frame, matching quaternion-log finite differencing of the local rotations.
Full link inertia is used; no centroidal approximation.
"""

from dataclasses import dataclass

import numpy as np
import torch

from physmo.body import GRAVITY, ScaledBody
from physmo.kinematics import (
    GeneralizedCoord,
    angular_derivatives,
    finite_difference,
    forward_kinematics,
)
from physmo.quaternions import DTYPE, as_tensor, quat_to_matrix

GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])


@dataclass
class GeneralizedState:
    """(q, qdot, qddot) sampled at evaluation times.

    Rotations are carried as matrices; velocity layout is
    [v_root (world), w_root (root frame), w_joint_j (joint j frame)].
    """

    root_pos: torch.Tensor      # (T, 3)
    root_R: torch.Tensor        # (T, 3, 3)
    joint_R: torch.Tensor       # (T, J-1, 3, 3)
    v_root: torch.Tensor        # (T, 3) world
    w_root: torch.Tensor        # (T, 3) body frame
    w_joints: torch.Tensor      # (T, J-1, 3) local frames
    a_root: torch.Tensor        # (T, 3) world
    alpha_root: torch.Tensor    # (T, 3) body frame
    alpha_joints: torch.Tensor  # (T, J-1, 3)
    dt: float

    @property
    def n_frames(self) -> int:
        return self.root_pos.shape[0]


@dataclass
class GeneralizedForce:
    """Root wrench plus per-joint torques, congruent with the DOF layout."""

    root_force: torch.Tensor    # (T, 3) world
    root_torque: torch.Tensor   # (T, 3) root frame
    joint_torques: torch.Tensor  # (T, J-1, 3) local frames

    def root_wrench(self) -> torch.Tensor:
        return torch.cat([self.root_force, self.root_torque], dim=-1)

    def flat(self) -> torch.Tensor:
        T = self.root_force.shape[0]
        return torch.cat(
            [self.root_force, self.root_torque,
             self.joint_torques.reshape(T, -1)], dim=-1)


def state_from_motion(coord: GeneralizedCoord, dt: float) -> GeneralizedState:
    """Build a state sequence via the implicit finite-difference scheme.

    Linear DOFs use raw forward differences; rotational DOFs are
    differenced in the local tangent space (quaternion log of relative
    rotations), giving body-frame angular velocities.
    """
    root_quat = coord.root_quat()
    joint_quats = coord.joint_quats()
    v, a = finite_difference(coord.root_pos, dt)
    w_root, al_root = angular_derivatives(root_quat, dt)
    w_j, al_j = angular_derivatives(joint_quats, dt)
    return GeneralizedState(
        root_pos=coord.root_pos,
        root_R=quat_to_matrix(root_quat),
        joint_R=quat_to_matrix(joint_quats),
        v_root=v, w_root=w_root, w_joints=w_j,
        a_root=a, alpha_root=al_root, alpha_joints=al_j,
        dt=dt,
    )


def _fk_from_state(body: ScaledBody, state: GeneralizedState):
    parents = body.parents
    rest = body.rest_offsets
    R = [state.root_R]
    p = [state.root_pos + rest[0]]
    for j in range(1, body.n_joints):
        pj = parents[j]
        R.append(R[pj] @ state.joint_R[:, j - 1])
        p.append(p[pj] + (R[pj] @ rest[j]))
    return R, p


def rnea(body: ScaledBody, state: GeneralizedState,
         gravity=GRAVITY_VEC) -> GeneralizedForce:
    """Exact inverse dynamics of the rigid-body tree.

    Returns the generalized force f^r = M qddot + C qdot + g that would
    have to act on the character to realize the given state.
    """
    J = body.n_joints
    g = as_tensor(gravity)
    R, p = _fk_from_state(body, state)

    # forward pass: body-frame angular vel/acc, world-frame origin acc
    w = [state.w_root]
    al = [state.alpha_root]
    a = [state.a_root - g]
    for j in range(1, J):
        pj = body.parents[j]
        Rrel = state.joint_R[:, j - 1]
        RrelT = Rrel.transpose(-1, -2)
        wj = state.w_joints[:, j - 1]
        alj = state.alpha_joints[:, j - 1]
        w_par = (RrelT @ w[pj].unsqueeze(-1)).squeeze(-1)
        w.append(w_par + wj)
        al.append((RrelT @ al[pj].unsqueeze(-1)).squeeze(-1) + alj
                  + torch.cross(w_par, wj, dim=-1))
        r_w = R[pj] @ body.rest_offsets[j]
        w_pw = (R[pj] @ w[pj].unsqueeze(-1)).squeeze(-1)
        al_pw = (R[pj] @ al[pj].unsqueeze(-1)).squeeze(-1)
        a.append(a[pj] + torch.cross(al_pw, r_w, dim=-1)
                 + torch.cross(w_pw, torch.cross(w_pw, r_w, dim=-1), dim=-1))

    # per-body Newton-Euler wrench about each body origin, world frame
    f = [None] * J
    n = [None] * J
    for j in range(J):
        rc = (R[j] @ body.coms[j])
        w_w = (R[j] @ w[j].unsqueeze(-1)).squeeze(-1)
        al_w = (R[j] @ al[j].unsqueeze(-1)).squeeze(-1)
        a_com = (a[j] + torch.cross(al_w, rc, dim=-1)
                 + torch.cross(w_w, torch.cross(w_w, rc, dim=-1), dim=-1))
        F = body.masses[j] * a_com
        Iw = body.inertias[j] @ w[j].unsqueeze(-1)
        N_body = (body.inertias[j] @ al[j].unsqueeze(-1)).squeeze(-1) \
            + torch.cross(w[j], Iw.squeeze(-1), dim=-1)
        N = (R[j] @ N_body.unsqueeze(-1)).squeeze(-1)
        f[j] = F
        n[j] = N + torch.cross(rc, F, dim=-1)

    # backward pass: accumulate child wrenches onto parents
    for j in range(J - 1, 0, -1):
        pj = body.parents[j]
        f[pj] = f[pj] + f[j]
        n[pj] = n[pj] + n[j] + torch.cross(p[j] - p[pj], f[j], dim=-1)

    root_torque = (R[0].transpose(-1, -2) @ n[0].unsqueeze(-1)).squeeze(-1)
    if J > 1:
        joint_torques = torch.stack(
            [(R[j].transpose(-1, -2) @ n[j].unsqueeze(-1)).squeeze(-1)
             for j in range(1, J)], dim=1)
    else:
        joint_torques = torch.zeros(n[0].shape[0], 0, 3, dtype=n[0].dtype)
    return GeneralizedForce(f[0], root_torque, joint_torques)


def _static_state(body: ScaledBody, coord: GeneralizedCoord) -> GeneralizedState:
    T = coord.n_frames
    J = body.n_joints
    z3 = torch.zeros(T, 3, dtype=DTYPE)
    zj = torch.zeros(T, J - 1, 3, dtype=DTYPE)
    return GeneralizedState(
        root_pos=coord.root_pos,
        root_R=quat_to_matrix(coord.root_quat()),
        joint_R=quat_to_matrix(coord.joint_quats()),
        v_root=z3, w_root=z3.clone(), w_joints=zj,
        a_root=z3.clone(), alpha_root=z3.clone(), alpha_joints=zj.clone(),
        dt=1.0,
    )


def _dof_view(state: GeneralizedState):
    return [state.a_root, state.alpha_root, state.alpha_joints]


def mass_matrix_oracle(body: ScaledBody, coord: GeneralizedCoord) -> np.ndarray:
    """Mass matrix built column-wise: M e_j = rnea(q, 0, e_j) with gravity off.

    Independent verification oracle for rnea linearity; single frame only.
    """
    if coord.n_frames != 1:
        raise ValueError("mass matrix oracle expects a single frame")
    J = body.n_joints
    ndof = 6 + 3 * (J - 1)
    M = np.zeros((ndof, ndof))
    for k in range(ndof):
        st = _static_state(body, coord)
        if k < 3:
            st.a_root[0, k] = 1.0
        elif k < 6:
            st.alpha_root[0, k - 3] = 1.0
        else:
            st.alpha_joints[0, (k - 6) // 3, (k - 6) % 3] = 1.0
        M[:, k] = rnea(body, st, gravity=(0.0, 0.0, 0.0)).flat()[0].numpy()
    return M


def bias_oracle(body: ScaledBody, coord: GeneralizedCoord, w_root, w_joints,
                gravity=GRAVITY_VEC) -> np.ndarray:
    """Bias forces C qdot + g = rnea(q, qdot, 0)."""
    st = _static_state(body, coord)
    st.w_root = as_tensor(w_root)
    st.w_joints = as_tensor(w_joints)
    return rnea(body, st, gravity=gravity).flat().numpy()


def contact_force_to_generalized(body: ScaledBody, R_w: torch.Tensor,
                                 p_w: torch.Tensor, sites: torch.Tensor,
                                 forces: torch.Tensor) -> GeneralizedForce:
    """Map world contact forces at the sites to generalized coordinates.

    Equals J^T f with J the site positional Jacobian: each site force
    contributes its moment about every joint on its ancestor chain.
    """
    skel = body.skeleton
    T, J = p_w.shape[0], body.n_joints
    root_force = forces.sum(dim=1)
    joint_n = [torch.zeros(T, 3, dtype=forces.dtype) for _ in range(J)]
    for k in range(skel.n_sites):
        lever = sites[:, k]
        fk = forces[:, k]
        for j in skel.ancestors_of_site(k):
            joint_n[j] = joint_n[j] + torch.cross(lever - p_w[:, j], fk, dim=-1)
    root_torque = (R_w[:, 0].transpose(-1, -2) @ joint_n[0].unsqueeze(-1)).squeeze(-1)
    torques = []
    for j in range(1, J):
        torques.append(
            (R_w[:, j].transpose(-1, -2) @ joint_n[j].unsqueeze(-1)).squeeze(-1))
    return GeneralizedForce(root_force, root_torque, torch.stack(torques, dim=1))


def root_residual(f_r: GeneralizedForce, f_c_gen: GeneralizedForce) -> torch.Tensor:
    """Root-block residual (T, 6); joint torques are realized by actuation."""
    return torch.cat(
        [f_r.root_force - f_c_gen.root_force,
         f_r.root_torque - f_c_gen.root_torque], dim=-1)
