"""Reward terms for the nominal and adaptive policies.

Both policies share the same term set with different weight columns.
Every term is an isolated function over batched arrays; the totals are
exact sums of the weighted terms. Penalty terms report raw magnitudes
(>= 0) and carry negative weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np


@dataclass
class RewardWeights:
    """One weight column: nominal defaults; adaptive() for the other."""

    lin_vel: float = 1.0
    ang_vel: float = 0.5
    lin_vel_z: float = -2.0
    ang_vel_xy: float = -0.05
    orientation: float = -0.2
    joint_acc: float = -2.5e-7
    joint_power: float = -2e-5
    body_height: float = -2.0
    foot_clearance: float = -0.01
    action_rate: float = -0.001
    smoothness: float = -0.01
    grf: float = 0.0

    @classmethod
    def adaptive(cls) -> "RewardWeights":
        return cls(lin_vel=0.0, ang_vel=0.0, lin_vel_z=-2.0, ang_vel_xy=-0.05,
                   orientation=-0.2, joint_acc=-2.5e-7, joint_power=0.0,
                   body_height=-2.0, foot_clearance=-0.01, action_rate=-0.01,
                   smoothness=-0.01, grf=2.0)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RewardConfig:
    nominal: RewardWeights = field(default_factory=RewardWeights)
    adaptive: RewardWeights = field(default_factory=RewardWeights.adaptive)
    # the planar model has no yaw, so the angular tracking term is a
    # constant when enabled; kept off by default
    ang_vel_enabled: bool = False
    grf_vertical_only: bool = False
    clearance_target: float = 0.09
    swing_vel_min: float = 0.1
    lin_vel_sigma_sq: float = 0.25


@dataclass
class Transition:
    """Batched per-control-step record consumed by the reward functions."""

    vx: np.ndarray
    vz: np.ndarray
    pitch: np.ndarray
    pitch_rate: np.ndarray
    theta_dot: np.ndarray        # (N, 4) after the step
    theta_dot_prev: np.ndarray   # (N, 4) before the step
    torques: np.ndarray          # (N, 4) commanded, post-clamp
    height: np.ndarray           # base height above local terrain
    h_cmd: np.ndarray
    vx_cmd: np.ndarray
    foot_height: np.ndarray      # (N, 2) above local terrain
    foot_vx: np.ndarray          # (N, 2)
    foot_contact: np.ndarray     # (N, 2) bool
    action: np.ndarray           # (N, 4) nominal a_t
    action_prev: np.ndarray
    action_prev2: np.ndarray
    delta: np.ndarray            # (N, 4) adaptive delta a_t (zeros in phase 1)
    delta_prev: np.ndarray
    delta_prev2: np.ndarray
    est_forces: np.ndarray       # (N, 2, 2) estimated foot forces
    payload_mass: np.ndarray     # (N,) true scheduler payload, reward-only
    dt: float = 0.02


@dataclass
class RewardBreakdown:
    raw: dict[str, np.ndarray]
    weighted: dict[str, np.ndarray]
    total: np.ndarray


# --- term functions ----------------------------------------------------------

def lin_vel_tracking(vx, vx_cmd, sigma_sq: float = 0.25):
    return np.exp(-((vx - vx_cmd) ** 2) / sigma_sq)


def lin_vel_z_penalty(vz):
    return np.square(vz)


def ang_vel_xy_penalty(pitch_rate):
    return np.square(pitch_rate)


def orientation_penalty(pitch):
    return np.square(np.sin(pitch))


def joint_acc_penalty(theta_dot, theta_dot_prev, dt: float):
    acc = (theta_dot - theta_dot_prev) / dt
    return np.sum(acc * acc, axis=-1)


def joint_power_penalty(torques, theta_dot):
    return np.sum(np.abs(torques * theta_dot), axis=-1)


def body_height_penalty(height, h_cmd):
    return np.square(height - h_cmd)


def foot_clearance_penalty(foot_height, foot_vx, foot_contact,
                           target: float = 0.09, vel_min: float = 0.1):
    swing = (~foot_contact) & (np.abs(foot_vx) > vel_min)
    return np.sum(swing * np.square(foot_height - target), axis=-1)


def action_rate_penalty(action, action_prev):
    d = action - action_prev
    return np.sum(d * d, axis=-1)


def smoothness_penalty(action, action_prev, action_prev2):
    d = action - 2.0 * action_prev + action_prev2
    return np.sum(d * d, axis=-1)


def grf_tracking_reward(height, h_cmd, est_forces, m_r: float, payload_mass,
                        g: float, vertical_only: bool = False):
    """0.75 above the commanded height; 0.5 below it while pushing harder
    than the total weight; 0 otherwise (including exactly at h_cmd)."""
    if vertical_only:
        mags = np.abs(est_forces[..., 1])
    else:
        mags = np.sqrt(np.sum(np.square(est_forces), axis=-1))
    total_force = np.sum(mags, axis=-1)
    threshold = (m_r + payload_mass) * g
    above = height > h_cmd
    pushing = (height < h_cmd) & (total_force > threshold)
    return np.where(above, 0.75, np.where(pushing, 0.5, 0.0))


# --- combined rewards ----------------------------------------------------------

def _terms(t: Transition, cfg: RewardConfig, m_r: float, g: float,
           on_delta: bool) -> dict[str, np.ndarray]:
    a, ap, ap2 = ((t.delta, t.delta_prev, t.delta_prev2) if on_delta
                  else (t.action, t.action_prev, t.action_prev2))
    ones = np.ones_like(t.vx)
    return {
        "lin_vel": lin_vel_tracking(t.vx, t.vx_cmd, cfg.lin_vel_sigma_sq),
        "ang_vel": ones if cfg.ang_vel_enabled else np.zeros_like(ones),
        "lin_vel_z": lin_vel_z_penalty(t.vz),
        "ang_vel_xy": ang_vel_xy_penalty(t.pitch_rate),
        "orientation": orientation_penalty(t.pitch),
        "joint_acc": joint_acc_penalty(t.theta_dot, t.theta_dot_prev, t.dt),
        "joint_power": joint_power_penalty(t.torques, t.theta_dot),
        "body_height": body_height_penalty(t.height, t.h_cmd),
        "foot_clearance": foot_clearance_penalty(
            t.foot_height, t.foot_vx, t.foot_contact,
            cfg.clearance_target, cfg.swing_vel_min),
        "action_rate": action_rate_penalty(a, ap),
        "smoothness": smoothness_penalty(a, ap, ap2),
        "grf": grf_tracking_reward(t.height, t.h_cmd, t.est_forces, m_r,
                                   t.payload_mass, g, cfg.grf_vertical_only),
    }


def _combine(raw: dict[str, np.ndarray], weights: RewardWeights) -> RewardBreakdown:
    wcol = weights.as_dict()
    weighted = {k: wcol[k] * v for k, v in raw.items()}
    total = np.zeros_like(raw["lin_vel"])
    for v in weighted.values():
        total = total + v
    return RewardBreakdown(raw=raw, weighted=weighted, total=total)


def nominal_reward(t: Transition, cfg: RewardConfig, m_r: float,
                   g: float) -> RewardBreakdown:
    """Weighted sum under the nominal column; action terms use a_t."""
    return _combine(_terms(t, cfg, m_r, g, on_delta=False), cfg.nominal)


def adaptive_reward(t: Transition, cfg: RewardConfig, m_r: float,
                    g: float) -> RewardBreakdown:
    """Weighted sum under the adaptive column; action terms use delta a_t."""
    return _combine(_terms(t, cfg, m_r, g, on_delta=True), cfg.adaptive)
