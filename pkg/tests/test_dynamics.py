"""Inverse dynamics: RNEA against independent oracles."""

import numpy as np
import pytest
import torch

from physmo import RigidPrimitive, ShapeParams, Skeleton, apply_shape
from physmo.body import GRAVITY
from physmo.dynamics import (
    GeneralizedState,
    bias_oracle,
    contact_force_to_generalized,
    mass_matrix_oracle,
    rnea,
    root_residual,
    state_from_motion,
)
from physmo.kinematics import GeneralizedCoord, forward_kinematics
from physmo.quaternions import as_tensor


def static_coord(skel, rotvec=None, root_pos=None, T=1):
    J = skel.n_joints
    return GeneralizedCoord(
        root_pos=as_tensor(np.zeros((T, 3)) if root_pos is None else root_pos),
        yaw_delta=as_tensor(np.zeros(T)),
        root_xy=as_tensor(np.zeros((T, 2))),
        joint_rotvec=as_tensor(
            np.zeros((T, J - 1, 3)) if rotvec is None else rotvec),
    )


def static_state(body, coord):
    T, J = coord.n_frames, body.n_joints
    z3 = torch.zeros(T, 3, dtype=torch.float64)
    zj = torch.zeros(T, J - 1, 3, dtype=torch.float64)
    from physmo.quaternions import quat_to_matrix
    return GeneralizedState(
        root_pos=coord.root_pos,
        root_R=quat_to_matrix(coord.root_quat()),
        joint_R=quat_to_matrix(coord.joint_quats()),
        v_root=z3, w_root=z3.clone(), w_joints=zj,
        a_root=z3.clone(), alpha_root=z3.clone(), alpha_joints=zj.clone(),
        dt=1.0,
    )


def random_state(body, rng, T=1):
    J = body.n_joints
    coord = static_coord(body.skeleton,
                         rotvec=rng.normal(scale=0.5, size=(T, J - 1, 3)),
                         root_pos=rng.normal(size=(T, 3)), T=T)
    st = static_state(body, coord)
    st.v_root = as_tensor(rng.normal(size=(T, 3)))
    st.w_root = as_tensor(rng.normal(size=(T, 3)))
    st.w_joints = as_tensor(rng.normal(size=(T, J - 1, 3)))
    st.a_root = as_tensor(rng.normal(size=(T, 3)))
    st.alpha_root = as_tensor(rng.normal(size=(T, 3)))
    st.alpha_joints = as_tensor(rng.normal(size=(T, J - 1, 3)))
    return coord, st


@pytest.fixture(scope="module")
def body():
    from physmo import build_default_humanoid
    skel = build_default_humanoid()
    return apply_shape(skel, ShapeParams.identity(skel).factors)


def single_body_skeleton():
    prim = RigidPrimitive(kind="sphere", dims=(0.15,), offset=(0, 0, 0))
    return Skeleton(joint_names=("body",), parents=(-1,),
                    rest_offsets=np.array([[0.0, 0.0, 1.0]]),
                    primitives=((0, prim),),
                    site_body=(), site_offsets=np.zeros((0, 3)))


class TestStaticCases:
    def test_rest_no_gravity_zero_force(self, body):
        st = static_state(body, static_coord(body.skeleton))
        f = rnea(body, st, gravity=(0.0, 0.0, 0.0))
        np.testing.assert_allclose(f.flat().numpy(), 0.0, atol=1e-10)

    def test_static_gravity_supports_weight(self, body):
        st = static_state(body, static_coord(body.skeleton))
        f = rnea(body, st)
        np.testing.assert_allclose(
            f.root_force.numpy()[0], [0.0, 0.0, float(body.total_mass) * GRAVITY],
            rtol=1e-8)

    def test_static_joint_torques_match_lever_oracle(self, body):
        # in a static pose the torque at joint j is the moment of the
        # supported segments' weights about the joint
        skel = body.skeleton
        rv = np.zeros((1, skel.n_joints - 1, 3))
        rv[0, skel.index("l_shoulder") - 1] = [0.0, 0.9, 0.0]
        coord = static_coord(skel, rotvec=rv)
        st = static_state(body, coord)
        f = rnea(body, st)
        R_w, p_w, _ = forward_kinematics(body, coord)
        g = np.array([0.0, 0.0, -GRAVITY])
        for j in range(1, skel.n_joints):
            supported = [c for c in range(skel.n_joints)
                         if j in _chain(skel, c) or c == j]
            n = np.zeros(3)
            for c in supported:
                com_w = (p_w[0, c].numpy()
                         + R_w[0, c].numpy() @ body.coms[c].numpy())
                n -= np.cross(com_w - p_w[0, j].numpy(),
                              float(body.masses[c]) * g)
            local = R_w[0, j].numpy().T @ n
            np.testing.assert_allclose(
                f.joint_torques[0, j - 1].numpy(), local, atol=1e-8)

    def test_free_fall_zero_force(self, body):
        st = static_state(body, static_coord(body.skeleton))
        st.a_root = as_tensor(np.array([[0.0, 0.0, -GRAVITY]]))
        f = rnea(body, st)
        np.testing.assert_allclose(f.flat().numpy(), 0.0, atol=1e-8)


class TestMassMatrixOracle:
    def test_symmetric_positive_definite(self, body, rng):
        coord = static_coord(
            body.skeleton,
            rotvec=rng.normal(scale=0.4, size=(1, body.n_joints - 1, 3)))
        M = mass_matrix_oracle(body, coord)
        np.testing.assert_allclose(M, M.T, atol=1e-9)
        assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_single_body_translational_block(self):
        skel = single_body_skeleton()
        b = apply_shape(skel, np.zeros(0))
        M = mass_matrix_oracle(b, static_coord(skel))
        m = float(b.total_mass)
        np.testing.assert_allclose(M[:3, :3], m * np.eye(3), atol=1e-12)
        # translation/rotation coupling vanishes for a centered sphere
        np.testing.assert_allclose(M[:3, 3:], 0.0, atol=1e-12)
        np.testing.assert_allclose(M[3:, 3:], b.inertias[0].numpy(),
                                   atol=1e-12)

    def test_rnea_equals_mass_matrix_plus_bias(self, body, rng):
        # 100 random single-frame states: f = M qddot + bias
        skel = body.skeleton
        for _ in range(100):
            coord, st = random_state(body, rng)
            f = rnea(body, st).flat().numpy()[0]
            M = mass_matrix_oracle(body, coord)
            qdd = np.concatenate([
                st.a_root.numpy()[0], st.alpha_root.numpy()[0],
                st.alpha_joints.numpy()[0].ravel()])
            bias = bias_oracle(body, coord, st.w_root, st.w_joints)[0]
            # v_root enters the bias only through products with omega
            st0 = static_state(body, coord)
            st0.v_root = st.v_root
            st0.w_root = st.w_root
            st0.w_joints = st.w_joints
            bias = rnea(body, st0).flat().numpy()[0]
            ref = M @ qdd + bias
            err = np.linalg.norm(f - ref) / max(np.linalg.norm(ref), 1.0)
            assert err < 1e-8

    def test_linearity_in_acceleration(self, body, rng):
        coord, st = random_state(body, rng)
        st2 = static_state(body, coord)
        st2.v_root, st2.w_root, st2.w_joints = st.v_root, st.w_root, st.w_joints
        st2.a_root = 2.0 * st.a_root
        st2.alpha_root = 2.0 * st.alpha_root
        st2.alpha_joints = 2.0 * st.alpha_joints
        f1 = rnea(body, st).flat().numpy()
        f2 = rnea(body, st2).flat().numpy()
        f0 = rnea(body, _zero_acc(body, coord, st)).flat().numpy()
        np.testing.assert_allclose(f2 - f0, 2.0 * (f1 - f0), atol=1e-9)


class TestStateFromMotion:
    def test_constant_velocity_translation(self, body):
        T, dt = 10, 0.02
        rp = np.outer(np.arange(T) * dt, [1.0, 0.0, 0.0])
        st = state_from_motion(static_coord(body.skeleton, root_pos=rp, T=T),
                               dt)
        np.testing.assert_allclose(st.v_root.numpy(), [[1.0, 0, 0]] * T,
                                   atol=1e-10)
        np.testing.assert_allclose(st.a_root.numpy(), 0.0, atol=1e-8)

    def test_ballistic_root_needs_no_force(self, body):
        # z(t) = z0 + v0 t - g t^2 / 2 sampled densely: rnea residual ~ 0
        T, dt = 50, 0.01
        t = np.arange(T) * dt
        rp = np.zeros((T, 3))
        rp[:, 2] = 1.5 * t - 0.5 * GRAVITY * t**2
        st = state_from_motion(static_coord(body.skeleton, root_pos=rp, T=T),
                               dt)
        f = rnea(body, st)
        # interior frames only: boundary frames replicate accelerations
        resid = f.flat().numpy()[1:-2]
        assert np.abs(resid).max() < 1e-6 * float(body.total_mass) * GRAVITY


class TestContactMap:
    def test_zero_forces_zero_generalized(self, body):
        coord = static_coord(body.skeleton)
        R_w, p_w, sites = forward_kinematics(body, coord)
        f = contact_force_to_generalized(
            body, R_w, p_w, sites,
            torch.zeros(1, body.skeleton.n_sites, 3, dtype=torch.float64))
        np.testing.assert_allclose(f.flat().numpy(), 0.0, atol=1e-15)

    def test_root_wrench_is_total_force_and_moment(self, body, rng):
        coord = static_coord(body.skeleton)
        R_w, p_w, sites = forward_kinematics(body, coord)
        forces = as_tensor(rng.normal(size=(1, body.skeleton.n_sites, 3)))
        f = contact_force_to_generalized(body, R_w, p_w, sites, forces)
        np.testing.assert_allclose(
            f.root_force.numpy()[0], forces.numpy()[0].sum(axis=0),
            atol=1e-12)
        n = np.zeros(3)
        for k in range(body.skeleton.n_sites):
            n += np.cross(sites[0, k].numpy() - p_w[0, 0].numpy(),
                          forces[0, k].numpy())
        # root torque is expressed in the root frame (identity here)
        np.testing.assert_allclose(f.root_torque.numpy()[0], n, atol=1e-12)

    def test_jacobian_transpose_identity(self, body, rng):
        # <J^T f, qdot> must equal <f, site velocities> for any motion;
        # verified against finite-difference site velocities
        skel = body.skeleton
        eps = 1e-6
        rv = rng.normal(scale=0.3, size=(1, skel.n_joints - 1, 3))
        drv = rng.normal(size=rv.shape)
        drp = rng.normal(size=(1, 3))
        forces = rng.normal(size=(1, skel.n_sites, 3))

        def sites_at(a):
            coord = static_coord(skel, rotvec=rv + a * eps * drv,
                                 root_pos=a * eps * drp)
            return forward_kinematics(body, coord)

        R0, p0, s0 = sites_at(0.0)
        _, _, s1 = sites_at(1.0)
        _, _, sm = sites_at(-1.0)
        site_vel = (s1.numpy() - sm.numpy()) / (2 * eps)
        power_sites = float((forces * site_vel).sum())

        fg = contact_force_to_generalized(body, R0, p0, s0,
                                          as_tensor(forces))
        # generalized velocity of the perturbation direction: root linear
        # drp plus local angular rates d(rotvec) mapped through the
        # rotation-vector derivative; use torch autograd for exactness
        rv_t = torch.tensor(rv, requires_grad=True)
        rp_t = torch.tensor(np.zeros((1, 3)), requires_grad=True)
        coord = GeneralizedCoord(
            root_pos=rp_t, yaw_delta=as_tensor(np.zeros(1)),
            root_xy=as_tensor(np.zeros((1, 2))), joint_rotvec=rv_t)
        _, _, s = forward_kinematics(body, coord)
        power_auto = (as_tensor(forces) * s).sum()
        power_auto.backward()
        power_gen = float((rp_t.grad.numpy() * drp).sum()
                          + (rv_t.grad.numpy() * drv).sum())
        assert power_sites == pytest.approx(power_gen, rel=1e-5)

    def test_static_equilibrium_forces_cancel_gravity(self, body):
        # least-squares vertical site forces supporting the body weight:
        # the root residual of gravity rnea minus the contact map is zero
        skel = body.skeleton
        coord = static_coord(skel)
        st = static_state(body, coord)
        f_r = rnea(body, st)
        R_w, p_w, sites = forward_kinematics(body, coord)

        # solve for site z-forces that reproduce the root wrench
        A = np.zeros((6, skel.n_sites))
        for k in range(skel.n_sites):
            A[2, k] = 1.0
            A[3:, k] = np.cross(sites[0, k].numpy() - p_w[0, 0].numpy(),
                                [0.0, 0.0, 1.0])
        b = f_r.root_wrench().numpy()[0]
        fz, *_ = np.linalg.lstsq(A, b, rcond=None)
        forces = torch.zeros(1, skel.n_sites, 3, dtype=torch.float64)
        for k in range(skel.n_sites):
            forces[0, k, 2] = fz[k]
        f_c = contact_force_to_generalized(body, R_w, p_w, sites, forces)
        resid = root_residual(f_r, f_c).numpy()
        assert np.abs(resid).max() < 1e-6 * float(body.total_mass) * GRAVITY


def _chain(skel, c):
    out = []
    j = skel.parents[c]
    while j >= 0:
        out.append(j)
        j = skel.parents[j]
    return out


def _zero_acc(body, coord, st):
    out = static_state(body, coord)
    out.v_root, out.w_root, out.w_joints = st.v_root, st.w_root, st.w_joints
    return out
