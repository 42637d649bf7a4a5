"""Leg kinematics against independent oracles.

The Jacobian is checked by central finite differences of the forward
kinematics, and force estimation by constructing torques from a known
force and recovering it.
"""

import numpy as np
import pytest

from payloco import kinematics, simcore


@pytest.fixture
def model():
    return simcore.RobotModel()


def random_leg_angles(rng, model, n):
    low = model.joint_low[:2]
    high = model.joint_high[:2]
    return rng.uniform(low, high, size=(n, 2))


def test_foot_position_straight_down(model):
    p = kinematics.foot_position(model, np.array([0.0, 0.0]))
    assert np.allclose(p, [0.0, -0.4], atol=1e-15)


def test_foot_position_bent_knee(model):
    p = kinematics.foot_position(model, np.array([0.0, np.pi / 2]))
    assert np.allclose(p, [0.2, -0.2], atol=1e-12)


def test_foot_position_horizontal_thigh(model):
    # thigh forward, shank back down: x = l1, z = -l2
    p = kinematics.foot_position(model, np.array([np.pi / 2, -np.pi / 2]))
    assert np.allclose(p, [0.2, -0.2], atol=1e-12)


def test_jacobian_fixture(model):
    jac = kinematics.foot_jacobian(model, np.array([0.0, np.pi / 2]))
    assert np.allclose(jac.matrix, [[0.2, 0.0], [0.2, 0.2]], atol=1e-12)
    assert not jac.singular


def test_jacobian_matches_finite_differences(model):
    rng = np.random.default_rng(0)
    angles = random_leg_angles(rng, model, 1000)
    h = 1e-6
    analytic = kinematics.jacobian_matrix(model, angles)
    for j in range(2):
        dq = np.zeros(2)
        dq[j] = h
        fd = (kinematics.foot_position(model, angles + dq)
              - kinematics.foot_position(model, angles - dq)) / (2 * h)
        scale = np.maximum(np.abs(analytic[:, :, j]), 1e-3)
        rel = np.abs(fd - analytic[:, :, j]) / scale
        assert rel.max() < 1e-6


def test_force_estimate_fixture(model):
    jac = kinematics.LegJacobian(
        matrix=np.array([[0.2, 0.0], [0.2, 0.2]]), singular=False)
    est = kinematics.estimate_foot_force(jac, np.array([10.0, 10.0]))
    assert np.allclose(est.force, [0.0, 50.0], atol=1e-12)
    assert not est.singular


def test_force_roundtrip(model):
    # tau = J^T f0, then the estimator must recover f0
    rng = np.random.default_rng(1)
    angles = random_leg_angles(rng, model, 500)
    forces = rng.uniform(-100.0, 100.0, size=(500, 2))
    jac = kinematics.jacobian_matrix(model, angles)
    tau = np.einsum("nji,nj->ni", jac, forces)
    recovered, singular = kinematics.solve_forces(jac, tau)
    assert not singular.any()
    assert np.abs(recovered - forces).max() < 1e-9


def test_singular_configuration_flagged(model):
    # straight leg: det J = l1 l2 sin(q2) = 0
    jac = kinematics.foot_jacobian(model, np.array([0.3, 0.0]))
    assert jac.singular
    est = kinematics.estimate_foot_force(jac, np.array([4.0, 2.0]))
    assert est.singular
    # fallback must agree with the explicit pseudo-inverse
    expect = np.linalg.pinv(jac.matrix.T) @ np.array([4.0, 2.0])
    assert np.allclose(est.force, expect, atol=1e-9)


def test_batched_solve_matches_single(model):
    rng = np.random.default_rng(2)
    angles = random_leg_angles(rng, model, 64)
    tau = rng.uniform(-20.0, 20.0, size=(64, 2))
    jac = kinematics.jacobian_matrix(model, angles)
    batch, _ = kinematics.solve_forces(jac, tau)
    for i in range(64):
        single = kinematics.estimate_foot_force(
            kinematics.foot_jacobian(model, angles[i]), tau[i])
        assert np.allclose(batch[i], single.force, atol=1e-12)


def test_pd_torque_arithmetic():
    tau = kinematics.pd_torque(np.array([0.1]), np.array([0.0]), np.array([0.0]))
    assert np.allclose(tau, [2.0], atol=1e-12)  # kp = 20 on a 0.1 rad error
    tau = kinematics.pd_torque(np.array([0.0]), np.array([0.0]), np.array([1.0]))
    assert np.allclose(tau, [-0.5], atol=1e-12)  # kd = 0.5


def test_pd_torque_saturates():
    tau = kinematics.pd_torque(
        np.array([10.0]), np.array([0.0]), np.array([0.0]), torque_limit=23.7)
    assert np.allclose(tau, [23.7])
    tau = kinematics.pd_torque(
        np.array([-10.0]), np.array([0.0]), np.array([0.0]), torque_limit=23.7)
    assert np.allclose(tau, [-23.7])


def test_action_to_target_clamps(model):
    target = kinematics.action_to_target(
        np.array([5.0, -5.0, 0.0, 0.0]), model.theta_stand,
        model.joint_low, model.joint_high)
    assert target[0] == model.joint_high[0]
    assert target[1] == model.joint_low[1]
    assert np.allclose(target[2:], model.theta_stand[2:])


def test_stand_pose_height(model):
    # the default crouch puts the feet 0.28 m below the hips
    p = kinematics.foot_position(model, model.theta_stand.reshape(2, 2))
    assert np.allclose(p[:, 1], -0.28, atol=1e-12)
    assert np.allclose(p[:, 0], 0.0, atol=1e-12)
