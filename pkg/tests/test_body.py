"""Rigid-body model: primitives, mass properties, shape scaling."""

import json

import numpy as np
import pytest
import torch

from physmo import (
    RigidPrimitive,
    ShapeParams,
    Skeleton,
    apply_shape,
    build_default_humanoid,
    primitive_mass_properties,
)
from physmo.body import DENSITY, InvalidPrimitiveError
from physmo.kinematics import GeneralizedCoord, forward_kinematics
from physmo.quaternions import as_tensor


def rest_coord(skel, T=1):
    # root_pos is a displacement on top of the rest root position
    return GeneralizedCoord(
        root_pos=as_tensor(np.zeros((T, 3))),
        yaw_delta=as_tensor(np.zeros(T)),
        root_xy=as_tensor(np.zeros((T, 2))),
        joint_rotvec=as_tensor(np.zeros((T, skel.n_joints - 1, 3))),
    )


class TestPrimitiveMassProperties:
    def test_sphere_analytic(self):
        # m = rho * 4/3 pi r^3, I = 2/5 m r^2 on every axis
        prim = RigidPrimitive(kind="sphere", dims=(0.1,), offset=(0, 0, 0))
        m, com, inertia = primitive_mass_properties(prim)
        m_ref = DENSITY * 4.0 / 3.0 * np.pi * 0.1**3
        assert m == pytest.approx(m_ref, rel=1e-12)
        np.testing.assert_allclose(com, 0.0, atol=1e-15)
        np.testing.assert_allclose(
            inertia, np.eye(3) * 0.4 * m_ref * 0.01, rtol=1e-12)

    def test_box_analytic(self):
        prim = RigidPrimitive(kind="box", dims=(0.2, 0.1, 0.05),
                              offset=(0.0, 0.0, -0.1))
        m, com, inertia = primitive_mass_properties(prim)
        assert m == pytest.approx(DENSITY * 0.2 * 0.1 * 0.05, rel=1e-12)
        np.testing.assert_allclose(com, [0.0, 0.0, -0.1])
        diag = m / 12.0 * np.array(
            [0.1**2 + 0.05**2, 0.2**2 + 0.05**2, 0.2**2 + 0.1**2])
        np.testing.assert_allclose(inertia, np.diag(diag), rtol=1e-12)

    def test_cylinder_mass_and_axis(self):
        prim = RigidPrimitive(kind="cylinder", dims=(0.05, 0.4),
                              offset=(0, 0, 0), axis=(0.0, 0.0, 1.0))
        m, _, inertia = primitive_mass_properties(prim)
        assert m == pytest.approx(DENSITY * np.pi * 0.05**2 * 0.4, rel=1e-12)
        # axial moment is the smallest one and sits on the cylinder axis
        assert inertia[2, 2] == pytest.approx(0.5 * m * 0.05**2, rel=1e-12)
        assert inertia[0, 0] == pytest.approx(
            m * (3 * 0.05**2 + 0.4**2) / 12.0, rel=1e-12)

    def test_cylinder_axis_rotation_preserves_trace(self):
        a = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        p0 = RigidPrimitive(kind="cylinder", dims=(0.05, 0.4), offset=(0, 0, 0),
                            axis=(0.0, 0.0, 1.0))
        p1 = RigidPrimitive(kind="cylinder", dims=(0.05, 0.4), offset=(0, 0, 0),
                            axis=tuple(a))
        _, _, i0 = primitive_mass_properties(p0)
        _, _, i1 = primitive_mass_properties(p1)
        assert np.trace(i1) == pytest.approx(np.trace(i0), rel=1e-12)
        np.testing.assert_allclose(i1, i1.T, atol=1e-15)

    def test_invalid_primitives_rejected(self):
        with pytest.raises(InvalidPrimitiveError):
            RigidPrimitive(kind="cone", dims=(0.1,), offset=(0, 0, 0))
        with pytest.raises(InvalidPrimitiveError):
            RigidPrimitive(kind="sphere", dims=(-0.1,), offset=(0, 0, 0))
        with pytest.raises(InvalidPrimitiveError):
            RigidPrimitive(kind="box", dims=(0.1, 0.1, 0.1), offset=(0, 0, 0),
                           scale_mode="area")


class TestDefaultHumanoid:
    def test_topology(self, skel):
        assert skel.n_joints == 16
        assert skel.parents[0] == -1
        assert all(0 <= p < j for j, p in enumerate(skel.parents) if j > 0)
        assert skel.n_sites == 8
        # four contact corners under each ankle
        for ankle in ("l_ankle", "r_ankle"):
            j = skel.index(ankle)
            assert sum(1 for b in skel.site_body if b == j) == 4

    def test_soles_on_ground_at_rest(self, skel):
        body = apply_shape(skel, ShapeParams.identity(skel).factors)
        _, _, sites = forward_kinematics(body, rest_coord(skel))
        np.testing.assert_allclose(sites[0, :, 2].numpy(), 0.0, atol=1e-9)

    def test_sites_coplanar_per_foot(self, skel):
        for ankle in ("l_ankle", "r_ankle"):
            j = skel.index(ankle)
            ks = [k for k, b in enumerate(skel.site_body) if b == j]
            z = skel.site_offsets[ks, 2]
            assert np.ptp(z) < 1e-12

    def test_total_mass_plausible(self, skel):
        body = apply_shape(skel, ShapeParams.identity(skel).factors)
        assert 40.0 < float(body.total_mass) < 110.0
        assert float(body.body_weight) == pytest.approx(
            float(body.total_mass) * 9.81, rel=1e-12)

    def test_metric_and_foot_joint_sets(self, skel):
        mi = skel.metric_joints
        assert len(mi) == skel.n_joints - 1
        assert skel.index("spine") not in mi
        assert set(skel.foot_joints) == {skel.index("l_ankle"),
                                         skel.index("r_ankle")}

    def test_json_round_trip(self, skel):
        doc = skel.to_json()
        back = Skeleton.from_json(doc)
        assert back.joint_names == skel.joint_names
        assert back.parents == skel.parents
        np.testing.assert_array_equal(back.rest_offsets, skel.rest_offsets)
        np.testing.assert_array_equal(back.site_offsets, skel.site_offsets)
        assert json.loads(back.to_json()) == json.loads(doc)

    def test_bad_topology_rejected(self, skel):
        with pytest.raises(ValueError):
            Skeleton(joint_names=("a", "b"), parents=(0, -1),
                     rest_offsets=np.zeros((2, 3)), primitives=(),
                     site_body=(), site_offsets=np.zeros((0, 3)))
        with pytest.raises(ValueError):
            Skeleton(joint_names=("a", "b", "c"), parents=(-1, 2, 1),
                     rest_offsets=np.zeros((3, 3)), primitives=(),
                     site_body=(), site_offsets=np.zeros((0, 3)))


class TestApplyShape:
    def test_identity_matches_primitive_sums(self, skel):
        body = apply_shape(skel, ShapeParams.identity(skel).factors)
        for j in range(skel.n_joints):
            parts = [primitive_mass_properties(p)
                     for owner, p in skel.primitives if owner == j]
            if not parts:
                continue
            assert float(body.masses[j]) == pytest.approx(
                sum(m for m, _, _ in parts), rel=1e-12)

    def test_uniform_primitive_mass_cubes(self):
        # a single uniform box scaled by k multiplies mass by k^3
        skel = _two_joint_skeleton(scale_mode="uniform", kind="box")
        b1 = apply_shape(skel, np.array([1.0]))
        b2 = apply_shape(skel, np.array([2.0]))
        assert float(b2.masses[1]) == pytest.approx(
            8.0 * float(b1.masses[1]), rel=1e-12)

    def test_length_primitive_mass_linear(self):
        # a length-scaled cylinder keeps its radius: mass scales by k
        skel = _two_joint_skeleton(scale_mode="length", kind="cylinder")
        b1 = apply_shape(skel, np.array([1.0]))
        b2 = apply_shape(skel, np.array([2.0]))
        assert float(b2.masses[1]) == pytest.approx(
            2.0 * float(b1.masses[1]), rel=1e-12)

    def test_rest_offsets_scale_with_bone(self, skel):
        factors = np.ones(skel.n_joints - 1)
        factors[skel.index("l_knee") - 1] = 1.5
        body = apply_shape(skel, factors)
        np.testing.assert_allclose(
            body.rest_offsets[skel.index("l_knee")].numpy(),
            1.5 * skel.rest_offsets[skel.index("l_knee")], rtol=1e-12)

    def test_mass_monotone_in_any_factor(self, skel):
        base = apply_shape(skel, np.ones(skel.n_joints - 1))
        for b in range(skel.n_joints - 1):
            f = np.ones(skel.n_joints - 1)
            f[b] = 1.3
            grown = apply_shape(skel, f)
            assert float(grown.total_mass) >= float(base.total_mass) - 1e-12

    def test_total_mass_gradient_matches_finite_difference(self, skel):
        f0 = np.full(skel.n_joints - 1, 1.05)

        def total_mass(f):
            return apply_shape(skel, f).total_mass

        f = torch.tensor(f0, requires_grad=True)
        total_mass(f).backward()
        grad = f.grad.numpy()
        eps = 1e-6
        for b in range(0, skel.n_joints - 1, 4):
            fp, fm = f0.copy(), f0.copy()
            fp[b] += eps
            fm[b] -= eps
            fd = (float(total_mass(torch.tensor(fp)))
                  - float(total_mass(torch.tensor(fm)))) / (2 * eps)
            assert grad[b] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_inertia_symmetric_positive(self, skel):
        body = apply_shape(skel, np.full(skel.n_joints - 1, 1.1))
        for j in range(skel.n_joints):
            it = body.inertias[j].numpy()
            np.testing.assert_allclose(it, it.T, atol=1e-14)
            assert np.all(np.linalg.eigvalsh(it) > 0)

    def test_bad_factor_count_rejected(self, skel):
        with pytest.raises(ValueError):
            apply_shape(skel, np.ones(3))

    def test_shape_params_validation(self, skel):
        with pytest.raises(ValueError):
            ShapeParams(factors=np.zeros(skel.n_joints - 1))


def _two_joint_skeleton(scale_mode, kind):
    if kind == "box":
        prim = RigidPrimitive(kind="box", dims=(0.1, 0.1, 0.1),
                              offset=(0, 0, -0.05), scale_mode=scale_mode,
                              bone=1)
    else:
        prim = RigidPrimitive(kind="cylinder", dims=(0.04, 0.3),
                              offset=(0, 0, -0.15), scale_mode=scale_mode,
                              bone=1)
    root_prim = RigidPrimitive(kind="sphere", dims=(0.1,), offset=(0, 0, 0))
    return Skeleton(
        joint_names=("root", "limb"),
        parents=(-1, 0),
        rest_offsets=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -0.3]]),
        primitives=((0, root_prim), (1, prim)),
        site_body=(),
        site_offsets=np.zeros((0, 3)),
    )
