"""Analytic gradients against finite differences."""

import numpy as np
import pytest
import torch

from physmo.gradient import (
    NonFiniteLossError,
    finite_difference_gradient,
    gradient_agreement,
    value_and_gradient,
    variable_class_agreement,
)
from physmo.objective import LossBreakdown, RefinementProblem


class _Quadratic:
    def loss_torch(self, x):
        return 0.5 * (x * x).sum()


class _Sinusoid:
    def loss_torch(self, x):
        return torch.sin(x).sum() + 0.1 * (x * x).sum()


class _NonFinite:
    def loss_torch(self, x):
        z = torch.zeros((), dtype=x.dtype)
        nan = z / z
        return LossBreakdown(
            dynamics=z, contact=z, penetration=nan, friction=z,
            force_cap=z, pose2d=z, pose3d=z, prior=z, smooth=z)


class TestStubProblems:
    def test_quadratic_gradient_is_x(self, rng):
        x = rng.normal(size=20)
        f, g = value_and_gradient(_Quadratic(), x)
        assert f == pytest.approx(0.5 * float(x @ x), rel=1e-14)
        np.testing.assert_allclose(g, x, atol=1e-14)

    def test_finite_difference_matches_analytic(self, rng):
        x = rng.normal(size=10)
        _, g = value_and_gradient(_Sinusoid(), x)
        g_fd = finite_difference_gradient(_Sinusoid(), x)
        assert gradient_agreement(g, g_fd) < 1e-8

    def test_fd_step_size_tradeoff(self, rng):
        # truncation error dominates at large eps: the recommended step
        # beats one 10x larger
        x = rng.normal(size=6)
        exact = np.cos(x) + 0.2 * x
        err = {}
        for eps in (1e-3, 1e-5):
            g = finite_difference_gradient(_Sinusoid(), x, eps=eps)
            err[eps] = np.abs(g - exact).max()
        assert err[1e-5] < err[1e-3]

    def test_fd_eps_validation(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(_Quadratic(), np.zeros(3), eps=0.0)

    def test_determinism(self, rng):
        x = rng.normal(size=15)
        f1, g1 = value_and_gradient(_Sinusoid(), x)
        f2, g2 = value_and_gradient(_Sinusoid(), x)
        assert f1 == f2
        np.testing.assert_array_equal(g1, g2)

    def test_non_finite_loss_names_term(self):
        with pytest.raises(NonFiniteLossError, match="penetration"):
            value_and_gradient(_NonFinite(), np.zeros(4))


@pytest.fixture(scope="module")
def problem_and_x(standing_scene):
    sc = standing_scene
    prob = RefinementProblem(sc.skeleton, sc.obs_noisy)
    rng = np.random.default_rng(3)
    x = np.zeros(prob.n_variables)
    x[-1] = 1.0  # scale
    x[2 * prob.template.values.size:-1] = 1.0  # shape factors
    x[:prob.template.values.size] += 0.01 * rng.normal(
        size=prob.template.values.size)
    return prob, x


class TestRefinementProblemGradient:

    def test_spot_check_against_finite_differences(self, problem_and_x):
        prob, x = problem_and_x
        _, g = value_and_gradient(prob, x)
        eps = 1e-6
        rng = np.random.default_rng(0)
        idx = np.concatenate([
            rng.choice(prob.template.values.size, 12, replace=False),
            prob.template.values.size
            + rng.choice(prob.template.values.size, 8, replace=False),
            np.arange(x.size - 16, x.size),  # shape factors and scale
        ])
        scale = np.abs(g).max()
        with torch.no_grad():
            for i in idx:
                xp = x.copy()
                xp[i] += eps
                fp = float(prob.loss_torch(torch.as_tensor(xp)).total)
                xp[i] = x[i] - eps
                fm = float(prob.loss_torch(torch.as_tensor(xp)).total)
                fd = (fp - fm) / (2 * eps)
                denom = max(abs(fd), abs(g[i]), 1e-3 * scale)
                assert abs(g[i] - fd) / denom < 1e-4

    def test_variable_classes_partition_vector(self, problem_and_x):
        prob, x = problem_and_x
        _, g = value_and_gradient(prob, x)
        report = variable_class_agreement(prob, g, g)
        assert set(report) == {"knot_values", "knot_tangents", "forces",
                               "shape", "scale"}
        assert all(v == 0.0 for v in report.values())

    def test_force_gradients_zero_without_physics(self, standing_scene):
        sc = standing_scene
        prob = RefinementProblem(sc.skeleton, sc.obs_noisy,
                                 enable_physics=False)
        x = np.zeros(prob.n_variables)
        x[-1] = 1.0
        nv = prob.template.values.size
        x[2 * nv:-1] = 1.0
        _, g = value_and_gradient(prob, x)
        layout = prob.layout
        K, C = prob.template.values.shape
        cols = np.arange(C)
        fmask = (cols >= layout.forces.start) & (cols < layout.forces.stop)
        fidx = (np.arange(K)[:, None] * C + cols[fmask]).ravel()
        fidx = np.concatenate([fidx, K * C + fidx])
        np.testing.assert_array_equal(g[fidx], 0.0)
