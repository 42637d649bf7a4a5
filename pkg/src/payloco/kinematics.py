"""Planar leg kinematics: forward kinematics, Jacobians, foot-force
estimation from joint torques, and PD torque tracking.

Each leg is a two-link chain (thigh, shank) hanging from a hip. Joint
angles are measured from straight-down, positive rotating the link
forward (+x). All functions broadcast over leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Hardware-style tracking gains used as defaults everywhere a PD loop runs.
DEFAULT_KP = 20.0
DEFAULT_KD = 0.5

# Below this |det J| the closed-form inverse is abandoned for a
# least-squares pseudo-inverse and the estimate is flagged.
SINGULARITY_EPS = 1e-6


@dataclass
class LegJacobian:
    """2x2 foot Jacobian d(foot xz)/d(theta) for one leg, in m/rad."""

    matrix: np.ndarray
    singular: bool


@dataclass
class FootForceEstimate:
    """Estimated end-effector force (fx, fz) for one foot, in N."""

    force: np.ndarray
    singular: bool


def foot_position(model, theta_leg: np.ndarray) -> np.ndarray:
    """Foot (x, z) in the hip frame for joint angles (hip, knee).

    x = l1 sin(q1) + l2 sin(q1+q2), z = -l1 cos(q1) - l2 cos(q1+q2).
    Broadcasts over leading dims of ``theta_leg`` (..., 2) -> (..., 2).
    """
    theta_leg = np.asarray(theta_leg, dtype=float)
    q1 = theta_leg[..., 0]
    q12 = q1 + theta_leg[..., 1]
    x = model.l1 * np.sin(q1) + model.l2 * np.sin(q12)
    z = -model.l1 * np.cos(q1) - model.l2 * np.cos(q12)
    return np.stack([x, z], axis=-1)


def jacobian_matrix(model, theta_leg: np.ndarray) -> np.ndarray:
    """Analytic foot Jacobian, shape (..., 2, 2); rows (x, z), cols (hip, knee)."""
    theta_leg = np.asarray(theta_leg, dtype=float)
    q1 = theta_leg[..., 0]
    q12 = q1 + theta_leg[..., 1]
    c1, s1 = np.cos(q1), np.sin(q1)
    c12, s12 = np.cos(q12), np.sin(q12)
    j = np.empty(theta_leg.shape[:-1] + (2, 2), dtype=float)
    j[..., 0, 0] = model.l1 * c1 + model.l2 * c12
    j[..., 0, 1] = model.l2 * c12
    j[..., 1, 0] = model.l1 * s1 + model.l2 * s12
    j[..., 1, 1] = model.l2 * s12
    return j


def foot_jacobian(model, theta_leg: np.ndarray) -> LegJacobian:
    """Jacobian for one leg with a singularity flag (|det| < 1e-6)."""
    m = jacobian_matrix(model, theta_leg)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return LegJacobian(matrix=m, singular=bool(np.abs(det) < SINGULARITY_EPS))


def estimate_foot_force(jac: LegJacobian, tau_leg: np.ndarray) -> FootForceEstimate:
    """Solve J^T f = tau for the end-effector force of one leg.

    Non-singular legs use the exact 2x2 inverse; near-singular ones fall
    back to the minimum-norm least-squares solution and set the flag.
    """
    force, singular = solve_forces(jac.matrix[None], np.asarray(tau_leg, dtype=float)[None])
    return FootForceEstimate(force=force[0], singular=bool(singular[0]))


def solve_forces(jacobians: np.ndarray, torques: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched J^T f = tau solve: (..., 2, 2), (..., 2) -> forces, singular flags."""
    jt = np.swapaxes(jacobians, -1, -2)
    det = jt[..., 0, 0] * jt[..., 1, 1] - jt[..., 0, 1] * jt[..., 1, 0]
    singular = np.abs(det) < SINGULARITY_EPS
    safe_det = np.where(singular, 1.0, det)
    fx = (jt[..., 1, 1] * torques[..., 0] - jt[..., 0, 1] * torques[..., 1]) / safe_det
    fz = (-jt[..., 1, 0] * torques[..., 0] + jt[..., 0, 0] * torques[..., 1]) / safe_det
    forces = np.stack([fx, fz], axis=-1)
    if np.any(singular):
        flat = singular.reshape(-1)
        jt_flat = jt.reshape(-1, 2, 2)
        tau_flat = torques.reshape(-1, 2)
        f_flat = forces.reshape(-1, 2)
        for i in np.nonzero(flat)[0]:
            f_flat[i] = np.linalg.pinv(jt_flat[i]) @ tau_flat[i]
    return forces, singular


def pd_torque(
    theta_des: np.ndarray,
    theta: np.ndarray,
    theta_dot: np.ndarray,
    kp: float = DEFAULT_KP,
    kd: float = DEFAULT_KD,
    torque_limit: float = np.inf,
) -> np.ndarray:
    """Saturated PD tracking torque: clamp(kp (des - q) - kd qdot, +-limit)."""
    tau = kp * (np.asarray(theta_des, dtype=float) - theta) - kd * np.asarray(theta_dot, dtype=float)
    return np.clip(tau, -torque_limit, torque_limit)


def action_to_target(action: np.ndarray, theta_stand: np.ndarray,
                     joint_low: np.ndarray, joint_high: np.ndarray) -> np.ndarray:
    """Desired joint angles: standing pose plus action, clamped to limits."""
    return np.clip(np.asarray(theta_stand, dtype=float) + action, joint_low, joint_high)
