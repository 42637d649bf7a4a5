"""Sagittal-plane quadruped simulator.

The robot is a floating base (x, z, pitch) with two planar legs, each a
two-link chain; generalized coordinates are q = (x, z, phi, th_fh,
th_fk, th_rh, th_rk). Leg link masses are lumped at the knee and foot
points, so the exact equations of motion assemble from point-mass
Jacobians plus the base rotational inertia:

    M(q) qdd = Q_tau + Q_gravity + Q_contact - sum_i m_i J_i^T (Jdot_i qd)

Integration is semi-implicit Euler. Ground contact is a spring-damper
normal force plus regularized Coulomb friction at the feet. A payload
(tray + four balls in fixed slots) composes into the base body's mass,
CoM, and inertia, and is resampled on a fixed 4-second schedule.

All stepping internals are batched over environments; the single-env
API wraps a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import kinematics

GRAVITY = 9.81

# Payload scheduler constants.
TRAY_MASS = 0.25
BALL_INIT_RANGE = (0.0, 1.0)
BALL_RESAMPLE_RANGE = (0.0, 2.5)
RESAMPLE_PERIOD = 4.0

# Tangential velocity scale of the regularized Coulomb model.
FRICTION_VEL_EPS = 0.02

_KIND_CODES = {"flat": 0, "slope": 1, "stairs": 2}


class NonFiniteState(RuntimeError):
    """Integration produced NaN/Inf; caller must reduce dt or reset."""


class ProfileExhausted(RuntimeError):
    """A scripted payload profile was queried past its duration."""


class Termination(Enum):
    RUNNING = "running"
    FALLEN = "fallen"
    TIMEOUT = "timeout"


@dataclass
class RobotModel:
    """Masses, geometry, and limits of the planar robot.

    Joint order everywhere is (front hip, front knee, rear hip, rear knee);
    angles are measured from straight-down.
    """

    base_mass: float = 12.0
    base_inertia: float = 0.15
    hip_offsets: tuple[float, float] = (0.18, -0.18)
    l1: float = 0.2
    l2: float = 0.2
    link_masses: tuple[float, float] = (0.3, 0.3)
    joint_low: np.ndarray = field(
        default_factory=lambda: np.array([-0.6, -2.6, -0.6, -2.6]))
    joint_high: np.ndarray = field(
        default_factory=lambda: np.array([2.0, -0.15, 2.0, -0.15]))
    torque_limit: float = 23.7
    theta_stand: np.ndarray = field(
        default_factory=lambda: _default_stand_pose())
    ball_slots: tuple[float, float, float, float] = (-0.1, -0.033, 0.033, 0.1)
    tray_height: float = 0.06

    def __post_init__(self):
        self.joint_low = np.asarray(self.joint_low, dtype=float)
        self.joint_high = np.asarray(self.joint_high, dtype=float)
        self.theta_stand = np.asarray(self.theta_stand, dtype=float)
        if self.base_mass <= 0 or min(self.link_masses) <= 0:
            raise ValueError("masses must be positive")
        if self.l1 <= 0 or self.l2 <= 0:
            raise ValueError("link lengths must be positive")
        if self.torque_limit <= 0:
            raise ValueError("torque_limit must be positive")
        if np.any(self.theta_stand < self.joint_low) or np.any(self.theta_stand > self.joint_high):
            raise ValueError("theta_stand outside joint limits")

    @property
    def total_mass(self) -> float:
        """Robot mass excluding payload (base plus both legs)."""
        return self.base_mass + 2.0 * sum(self.link_masses)


def _default_stand_pose() -> np.ndarray:
    # Symmetric crouch with the foot directly under the hip at height
    # l1 + l2 times 0.7 (0.28 m for the default geometry).
    beta = math.acos(0.7)
    return np.array([beta, -2.0 * beta, beta, -2.0 * beta])


@dataclass
class RobotState:
    base_pos: np.ndarray          # (x, z) m
    base_pitch: float             # rad
    base_vel: np.ndarray          # (vx, vz) m/s
    pitch_rate: float             # rad/s
    theta: np.ndarray             # rad, 4 joints
    theta_dot: np.ndarray         # rad/s
    time: float = 0.0


@dataclass
class TerrainProfile:
    kind: str = "flat"
    slope_angle: float = 0.0
    step_rise: float = 0.0
    step_run: float = 0.0
    origin_x: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "stairs" and (self.step_rise <= 0 or self.step_run <= 0):
            raise ValueError("stairs require positive rise and run")

    def describe(self) -> dict:
        d = {"kind": self.kind, "origin_x": self.origin_x}
        if self.kind == "slope":
            d["slope_angle"] = self.slope_angle
        if self.kind == "stairs":
            d["step_rise"] = self.step_rise
            d["step_run"] = self.step_run
        return d


@dataclass
class TerrainSet:
    """Per-environment terrain parameters in array form."""

    kind: np.ndarray        # int codes: 0 flat, 1 slope, 2 stairs
    slope_angle: np.ndarray
    step_rise: np.ndarray
    step_run: np.ndarray
    origin_x: np.ndarray

    @classmethod
    def from_profiles(cls, profiles: list[TerrainProfile]) -> "TerrainSet":
        return cls(
            kind=np.array([_KIND_CODES[p.kind] for p in profiles]),
            slope_angle=np.array([p.slope_angle for p in profiles], dtype=float),
            step_rise=np.array([max(p.step_rise, 1.0) if p.kind != "stairs" else p.step_rise
                                for p in profiles], dtype=float),
            step_run=np.array([max(p.step_run, 1.0) if p.kind != "stairs" else p.step_run
                               for p in profiles], dtype=float),
            origin_x=np.array([p.origin_x for p in profiles], dtype=float),
        )

    def set_row(self, i: int, profile: TerrainProfile) -> None:
        self.kind[i] = _KIND_CODES[profile.kind]
        self.slope_angle[i] = profile.slope_angle
        self.step_rise[i] = profile.step_rise if profile.kind == "stairs" else 1.0
        self.step_run[i] = profile.step_run if profile.kind == "stairs" else 1.0
        self.origin_x[i] = profile.origin_x


def terrain_height(terrain: TerrainProfile, x) -> np.ndarray | float:
    """Ground height under x. Total over all x for every terrain kind."""
    ts = TerrainSet.from_profiles([terrain])
    h = _height_arrays(ts, np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(h[0, 0]) if np.isscalar(x) or np.ndim(x) == 0 else h[0]


def _height_arrays(ts: TerrainSet, x: np.ndarray) -> np.ndarray:
    """Heights for per-env terrain; x has shape (N, ...) matching ts rows."""
    rel = x - ts.origin_x[(...,) + (None,) * (x.ndim - 1)]
    kind = ts.kind[(...,) + (None,) * (x.ndim - 1)]
    slope = np.where(rel > 0.0, rel, 0.0) * np.tan(
        ts.slope_angle[(...,) + (None,) * (x.ndim - 1)])
    stairs = ts.step_rise[(...,) + (None,) * (x.ndim - 1)] * np.floor(
        np.maximum(0.0, rel) / ts.step_run[(...,) + (None,) * (x.ndim - 1)])
    return np.where(kind == 1, slope, np.where(kind == 2, stairs, 0.0))


def _normal_arrays(ts: TerrainSet, x: np.ndarray) -> np.ndarray:
    """Surface normals at x, shape (..., 2). Stair treads count as flat."""
    rel = x - ts.origin_x[(...,) + (None,) * (x.ndim - 1)]
    kind = ts.kind[(...,) + (None,) * (x.ndim - 1)]
    ang = ts.slope_angle[(...,) + (None,) * (x.ndim - 1)]
    on_slope = (kind == 1) & (rel > 0.0)
    nx = np.where(on_slope, -np.sin(ang), 0.0)
    nz = np.where(on_slope, np.cos(ang), 1.0)
    return np.stack([nx, nz], axis=-1)


def terrain_normal(terrain: TerrainProfile, x: float) -> np.ndarray:
    ts = TerrainSet.from_profiles([terrain])
    return _normal_arrays(ts, np.array([[x]]))[0, 0]


@dataclass
class PayloadState:
    tray_mass: float = 0.0
    ball_masses: np.ndarray = field(default_factory=lambda: np.zeros(4))
    com_offset_x: float = 0.0
    next_resample_time: float = RESAMPLE_PERIOD

    def __post_init__(self):
        self.ball_masses = np.asarray(self.ball_masses, dtype=float)
        if self.tray_mass < 0 or np.any(self.ball_masses < 0):
            raise ValueError("payload masses must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.tray_mass + self.ball_masses.sum())


def _payload_com_x(model: RobotModel, tray: float, balls: np.ndarray) -> float:
    total = tray + float(np.sum(balls))
    if total <= 0.0:
        return 0.0
    return float(np.dot(balls, model.ball_slots)) / total


@dataclass
class PayloadProfile:
    """Step profile for scripted payload schedules: piecewise-constant
    (tray, balls) held from each keyframe time until the next."""

    times: list[float]
    trays: list[float]
    balls: list[np.ndarray]
    duration: float

    def at(self, t: float) -> tuple[float, np.ndarray]:
        if t > self.duration:
            raise ProfileExhausted(f"payload profile ends at {self.duration} s, queried at {t} s")
        idx = 0
        for k, tk in enumerate(self.times):
            if tk <= t:
                idx = k
        return self.trays[idx], np.asarray(self.balls[idx], dtype=float)


def payload_tick(payload: PayloadState | None, t: float, rng: np.random.Generator | None,
                 mode: str, model: RobotModel, profile: PayloadProfile | None = None) -> PayloadState:
    """Advance the payload scheduler.

    init: fresh tray (0.25 kg) with balls ~ U[0,1] kg, first resample at 4 s.
    resample_loop: on each 4 s boundary, balls ~ U[0,2.5] kg.
    scripted: follow ``profile``; raises ProfileExhausted past its end.
    """
    if mode == "init":
        balls = rng.uniform(*BALL_INIT_RANGE, size=4)
        return PayloadState(
            tray_mass=TRAY_MASS,
            ball_masses=balls,
            com_offset_x=_payload_com_x(model, TRAY_MASS, balls),
            next_resample_time=RESAMPLE_PERIOD,
        )
    if mode == "resample_loop":
        if t < payload.next_resample_time:
            return payload
        balls = payload.ball_masses
        nxt = payload.next_resample_time
        while t >= nxt:
            balls = rng.uniform(*BALL_RESAMPLE_RANGE, size=4)
            nxt += RESAMPLE_PERIOD
        return PayloadState(
            tray_mass=payload.tray_mass,
            ball_masses=balls,
            com_offset_x=_payload_com_x(model, payload.tray_mass, balls),
            next_resample_time=nxt,
        )
    if mode == "scripted":
        tray, balls = profile.at(t)
        return PayloadState(
            tray_mass=tray,
            ball_masses=balls,
            com_offset_x=_payload_com_x(model, tray, balls),
            next_resample_time=payload.next_resample_time if payload else RESAMPLE_PERIOD,
        )
    raise ValueError(f"unknown payload mode {mode!r}")


def no_payload() -> PayloadState:
    return PayloadState(tray_mass=0.0, ball_masses=np.zeros(4))


@dataclass
class ContactReport:
    in_contact: np.ndarray   # (2,) bool, feet ordered (front, rear)
    grf: np.ndarray          # (2, 2) N, world (fx, fz) per foot
    penetration: np.ndarray  # (2,) m


@dataclass
class SimConfig:
    dt_physics: float = 1e-3
    control_decimation: int = 20
    contact_stiffness: float = 4.0e4
    contact_damping: float = 500.0
    friction_mu: float = 0.8
    gravity: float = GRAVITY
    max_joint_vel: float = 50.0
    max_base_vel: float = 30.0

    def __post_init__(self):
        if self.dt_physics <= 0:
            raise ValueError("dt_physics must be positive")
        if self.control_decimation < 1:
            raise ValueError("control_decimation must be >= 1")
        if self.contact_stiffness < 0 or self.contact_damping < 0 or self.friction_mu < 0:
            raise ValueError("contact parameters must be nonnegative")

    @property
    def dt_control(self) -> float:
        return self.dt_physics * self.control_decimation


# --- composite body -------------------------------------------------------

def effective_inertia(model: RobotModel, payload: PayloadState) -> tuple[float, float, float]:
    """Base body composed with payload point masses: (mass, com_x, inertia).

    The tray and balls sit at fixed slots above the base CoM; inertia is
    taken about the combined CoM (parallel axis).
    """
    mass, com, inertia = _composite_arrays(
        model, np.array([payload.tray_mass]), payload.ball_masses[None, :])
    return float(mass[0]), float(com[0, 0]), float(inertia[0])


def _composite_arrays(model: RobotModel, tray: np.ndarray, balls: np.ndarray,
                      base_extra: np.ndarray | float = 0.0
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched composite of base + tray + balls. Returns (m, com (N,2), I).

    base_extra is additional mass lumped at the base CoM (domain
    randomization); it shifts nothing by itself.
    """
    slots = np.asarray(model.ball_slots, dtype=float)
    zt = model.tray_height
    base_mass = model.base_mass + base_extra
    m = base_mass + tray + balls.sum(axis=1)
    mom_x = balls @ slots                      # tray and base sit at x = 0
    mom_z = (tray + balls.sum(axis=1)) * zt
    com = np.stack([mom_x / m, mom_z / m], axis=-1)
    # parallel-axis about the combined CoM
    inertia = model.base_inertia + base_mass * (com[:, 0] ** 2 + com[:, 1] ** 2)
    inertia = inertia + tray * (com[:, 0] ** 2 + (zt - com[:, 1]) ** 2)
    d2_balls = (slots[None, :] - com[:, 0:1]) ** 2 + (zt - com[:, 1:2]) ** 2
    inertia = inertia + (d2_balls * balls).sum(axis=1)
    return m, com, inertia


# --- batched dynamics -----------------------------------------------------

def _body_kinematics(model: RobotModel, q: np.ndarray, qd: np.ndarray,
                     com: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions, Jacobians, and bias accelerations of the five mass points.

    Body order: base composite, front knee, front foot, rear knee, rear foot.
    Returns (pos (N,5,2), jac (N,5,2,7), bias (N,5,2)).
    """
    n = q.shape[0]
    x, z, phi = q[:, 0], q[:, 1], q[:, 2]
    phid = qd[:, 2]
    c, s = np.cos(phi), np.sin(phi)

    pos = np.zeros((n, 5, 2))
    jac = np.zeros((n, 5, 2, 7))
    bias = np.zeros((n, 5, 2))
    jac[:, :, 0, 0] = 1.0
    jac[:, :, 1, 1] = 1.0

    # base composite point: origin + R(phi) com
    rcx = c * com[:, 0] - s * com[:, 1]
    rcz = s * com[:, 0] + c * com[:, 1]
    pos[:, 0, 0] = x + rcx
    pos[:, 0, 1] = z + rcz
    jac[:, 0, 0, 2] = -rcz
    jac[:, 0, 1, 2] = rcx
    bias[:, 0, 0] = -phid ** 2 * rcx
    bias[:, 0, 1] = -phid ** 2 * rcz

    for leg in range(2):
        d = model.hip_offsets[leg]
        hcol = 3 + 2 * leg
        a1 = phi + q[:, hcol]
        a2 = a1 + q[:, hcol + 1]
        a1d = phid + qd[:, hcol]
        a2d = a1d + qd[:, hcol + 1]
        e1 = np.stack([np.sin(a1), -np.cos(a1)], axis=-1)
        e2 = np.stack([np.sin(a2), -np.cos(a2)], axis=-1)
        e1p = np.stack([np.cos(a1), np.sin(a1)], axis=-1)
        e2p = np.stack([np.cos(a2), np.sin(a2)], axis=-1)
        hip = np.stack([x + c * d, z + s * d], axis=-1)
        rpd = np.stack([-s * d, c * d], axis=-1)         # dR/dphi (d, 0)

        bk = 1 + 2 * leg                                  # knee body index
        pos[:, bk] = hip + model.l1 * e1
        jac[:, bk, :, 2] = rpd + model.l1 * e1p
        jac[:, bk, :, hcol] = model.l1 * e1p
        bias[:, bk] = -phid[:, None] ** 2 * np.stack([c * d, s * d], axis=-1) \
            - a1d[:, None] ** 2 * model.l1 * e1

        bf = bk + 1                                       # foot body index
        pos[:, bf] = pos[:, bk] + model.l2 * e2
        jac[:, bf, :, 2] = jac[:, bk, :, 2] + model.l2 * e2p
        jac[:, bf, :, hcol] = jac[:, bk, :, hcol] + model.l2 * e2p
        jac[:, bf, :, hcol + 1] = model.l2 * e2p
        bias[:, bf] = bias[:, bk] - a2d[:, None] ** 2 * model.l2 * e2

    return pos, jac, bias


def _contact_forces(ts: TerrainSet, feet_pos: np.ndarray, feet_vel: np.ndarray,
                    cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spring-damper normal + regularized Coulomb friction per foot.

    Returns (forces (N,2,2) world, normal magnitude (N,2), penetration (N,2)).
    """
    fx = feet_pos[:, :, 0]
    h = _height_arrays(ts, fx)
    nrm = _normal_arrays(ts, fx)
    pen = (h - feet_pos[:, :, 1]) * nrm[:, :, 1]
    below = pen > 0.0
    v_n = np.sum(feet_vel * nrm, axis=-1)
    f_n = np.where(below, np.maximum(
        0.0, cfg.contact_stiffness * pen - cfg.contact_damping * v_n), 0.0)
    tang = np.stack([nrm[:, :, 1], -nrm[:, :, 0]], axis=-1)
    v_t = np.sum(feet_vel * tang, axis=-1)
    f_t = -cfg.friction_mu * f_n * np.tanh(v_t / FRICTION_VEL_EPS)
    forces = f_n[:, :, None] * nrm + f_t[:, :, None] * tang
    return forces, f_n, np.maximum(pen, 0.0)


def step_batch(model: RobotModel, q: np.ndarray, qd: np.ndarray, t: np.ndarray,
               torques: np.ndarray, terrain: TerrainSet,
               comp_mass: np.ndarray, comp_com: np.ndarray, comp_inertia: np.ndarray,
               cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                        np.ndarray, np.ndarray, np.ndarray]:
    """One physics substep over a batch of environments.

    Torques must already be clamped. Returns (q', qd', t', grf (N,2,2),
    normal force (N,2), penetration (N,2)).
    """
    pos, jac, bias = _body_kinematics(model, q, qd, comp_com)
    m1, m2 = model.link_masses
    masses = np.empty((q.shape[0], 5))
    masses[:, 0] = comp_mass
    masses[:, 1] = masses[:, 3] = m1
    masses[:, 2] = masses[:, 4] = m2

    mass_mat = np.einsum("nb,nbij,nbik->njk", masses, jac, jac)
    mass_mat[:, 2, 2] += comp_inertia

    rhs = -np.einsum("nb,nbij,nbi->nj", masses, jac, bias)
    rhs -= cfg.gravity * np.einsum("nb,nbj->nj", masses, jac[:, :, 1, :])
    rhs[:, 3:7] += torques

    feet_jac = jac[:, (2, 4)]
    feet_vel = np.einsum("nbij,nj->nbi", feet_jac, qd)
    grf, f_n, pen = _contact_forces(terrain, pos[:, (2, 4)], feet_vel, cfg)
    rhs += np.einsum("nbij,nbi->nj", feet_jac, grf)

    qdd = np.linalg.solve(mass_mat, rhs[..., None])[..., 0]
    qd_new = qd + cfg.dt_physics * qdd
    np.clip(qd_new[:, 0:2], -cfg.max_base_vel, cfg.max_base_vel, out=qd_new[:, 0:2])
    np.clip(qd_new[:, 2:7], -cfg.max_joint_vel, cfg.max_joint_vel, out=qd_new[:, 2:7])
    q_new = q + cfg.dt_physics * qd_new

    # hard joint limits: clamp angle, kill outward velocity
    th = q_new[:, 3:7]
    low_hit = th < model.joint_low
    high_hit = th > model.joint_high
    if np.any(low_hit) or np.any(high_hit):
        np.clip(th, model.joint_low, model.joint_high, out=th)
        thd = qd_new[:, 3:7]
        thd[low_hit & (thd < 0)] = 0.0
        thd[high_hit & (thd > 0)] = 0.0

    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        bad = np.nonzero(~np.all(np.isfinite(q_new), axis=1) |
                         ~np.all(np.isfinite(qd_new), axis=1))[0]
        raise NonFiniteState(f"non-finite state in environments {bad.tolist()}")
    return q_new, qd_new, t + cfg.dt_physics, grf, f_n, pen


def pack_state(state: RobotState) -> tuple[np.ndarray, np.ndarray, float]:
    q = np.concatenate([state.base_pos, [state.base_pitch], state.theta])
    qd = np.concatenate([state.base_vel, [state.pitch_rate], state.theta_dot])
    return q.astype(float), qd.astype(float), state.time


def unpack_state(q: np.ndarray, qd: np.ndarray, t: float) -> RobotState:
    return RobotState(
        base_pos=q[0:2].copy(), base_pitch=float(q[2]),
        base_vel=qd[0:2].copy(), pitch_rate=float(qd[2]),
        theta=q[3:7].copy(), theta_dot=qd[3:7].copy(), time=float(t),
    )


def step(model: RobotModel, state: RobotState, torques: np.ndarray,
         terrain: TerrainProfile, payload: PayloadState,
         cfg: SimConfig) -> tuple[RobotState, ContactReport]:
    """One physics substep of a single environment."""
    q, qd, t = pack_state(state)
    ts = TerrainSet.from_profiles([terrain])
    cm, cc, ci = _composite_arrays(
        model, np.array([payload.tray_mass]), payload.ball_masses[None, :])
    q2, qd2, t2, grf, f_n, pen = step_batch(
        model, q[None], qd[None], np.array([t]), np.asarray(torques, dtype=float)[None],
        ts, cm, cc, ci, cfg)
    report = ContactReport(in_contact=f_n[0] > 0.0, grf=grf[0], penetration=pen[0])
    return unpack_state(q2[0], qd2[0], float(t2[0])), report


# --- episode plumbing -----------------------------------------------------

def stand_height(model: RobotModel) -> float:
    """Base height above flat ground with feet planted at the standing pose."""
    feet = kinematics.foot_position(model, model.theta_stand.reshape(2, 2))
    return float(-feet[:, 1].max())


def reset(model: RobotModel, terrain: TerrainProfile, cfg: SimConfig,
          rng: np.random.Generator | None, start_x: float = 0.0,
          joint_noise: float = 0.05) -> RobotState:
    """Initial state: standing pose (plus joint noise) at terrain height."""
    theta = model.theta_stand.copy()
    if rng is not None and joint_noise > 0.0:
        theta = theta + rng.uniform(-joint_noise, joint_noise, size=4)
        theta = np.clip(theta, model.joint_low, model.joint_high)
    # base height such that no foot starts below its local ground
    feet = kinematics.foot_position(model, theta.reshape(2, 2))
    foot_x = start_x + np.asarray(model.hip_offsets) + feet[:, 0]
    ground = np.array([terrain_height(terrain, float(fx)) for fx in foot_x])
    base_z = float(np.max(ground - feet[:, 1]))
    return RobotState(
        base_pos=np.array([start_x, base_z]), base_pitch=0.0,
        base_vel=np.zeros(2), pitch_rate=0.0,
        theta=theta, theta_dot=np.zeros(4), time=0.0,
    )


def check_termination(state: RobotState, terrain: TerrainProfile,
                      fall_pitch: float = 1.0, min_height: float = 0.08,
                      episode_s: float = 20.0) -> Termination:
    height = state.base_pos[1] - terrain_height(terrain, float(state.base_pos[0]))
    if abs(state.base_pitch) > fall_pitch or height < min_height:
        return Termination.FALLEN
    if state.time >= episode_s:
        return Termination.TIMEOUT
    return Termination.RUNNING


def mechanical_energy(model: RobotModel, state: RobotState,
                      payload: PayloadState, g: float = GRAVITY) -> float:
    """Total kinetic + gravitational potential energy of the full system."""
    q, qd, _ = pack_state(state)
    cm, cc, ci = _composite_arrays(
        model, np.array([payload.tray_mass]), payload.ball_masses[None, :])
    pos, jac, _ = _body_kinematics(model, q[None], qd[None], cc)
    m1, m2 = model.link_masses
    masses = np.array([cm[0], m1, m2, m1, m2])
    vel = np.einsum("bij,j->bi", jac[0], qd)
    kinetic = 0.5 * float(np.sum(masses[:, None] * vel ** 2)) \
        + 0.5 * float(ci[0]) * qd[2] ** 2
    potential = g * float(np.sum(masses * pos[0, :, 1]))
    return kinetic + potential
