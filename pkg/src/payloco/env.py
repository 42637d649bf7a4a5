"""Batched control-rate environment.

Ties the physics, PD tracking, observation pipeline, and both reward
streams into a single 50 Hz step over N independent environments. Each
control step applies theta_stand + a (+ delta_a) as the PD target for
``control_decimation`` physics substeps, then senses the world at the
new decision instant: commanded torques, estimated and true foot
forces, and the observation/history/critic vectors.

Episode bookkeeping runs on the exact control-step grid: payload
resampling every 4 s, command resampling every 5 s, termination checks,
and (optionally) auto-reset. Scripted payload and command schedules
follow the global clock instead of the per-episode one, so an eval
scenario keeps its timeline across a mid-run fall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics, obs as obs_mod, rewards, simcore
from .simcore import PayloadProfile, PayloadState, RobotModel, SimConfig, TerrainProfile, TerrainSet

FALL_PITCH = 1.0
MIN_HEIGHT = 0.08
EPISODE_SECONDS = 20.0
RESET_JOINT_NOISE = 0.05

# privileged critic input: clean obs ++ true body velocity ++ true payload
# mass ++ true foot contact forces (scaled like the observation forces)
CRITIC_DIM = obs_mod.OBS_DIM + 2 + 1 + 4

_PAYLOAD_MODES = ("off", "resample", "scripted", "manual")


def sample_training_terrain(rng: np.random.Generator) -> TerrainProfile:
    """Uniform draw over the training terrains: flat, +-10 degree slope,
    and 0.08 x 0.3 m stairs, each starting 0.5 m ahead of the robot."""
    kind = int(rng.integers(3))
    if kind == 0:
        return TerrainProfile()
    if kind == 1:
        angle = float(rng.choice((-1.0, 1.0))) * np.deg2rad(10.0)
        return TerrainProfile(kind="slope", slope_angle=angle, origin_x=0.5)
    return TerrainProfile(kind="stairs", step_rise=0.08, step_run=0.3, origin_x=0.5)


@dataclass
class Sense:
    """World quantities at a decision instant."""

    torques: np.ndarray      # (N, 4) commanded, post-clamp
    est_forces: np.ndarray   # (N, 2, 2) estimated foot forces, N
    grf: np.ndarray          # (N, 2, 2) true contact forces, N
    contact: np.ndarray      # (N, 2) bool
    height: np.ndarray       # (N,) base height above local terrain
    foot_height: np.ndarray  # (N, 2) above local terrain
    foot_vx: np.ndarray      # (N, 2)


@dataclass
class EnvObservations:
    """Everything the policies, estimator, and critics consume, float32."""

    obs: np.ndarray          # (N, 17) noisy base observation
    obs_clean: np.ndarray    # (N, 17) noiseless twin
    augmented: np.ndarray    # (N, 21) obs ++ scaled estimated forces
    history: np.ndarray      # (N, 85) flattened obs history, oldest first
    critic: np.ndarray       # (N, 24) privileged critic input
    body_vel: np.ndarray     # (N, 2) true (vx, vz)
    payload_mass: np.ndarray  # (N,) true scheduler payload, kg
    grf: np.ndarray          # (N, 2, 2) true contact forces, raw N
    est_forces: np.ndarray   # (N, 2, 2) estimated foot forces, raw N


@dataclass
class StepResult:
    obs: EnvObservations     # post-reset: inputs for the next decision
    reward_nominal: np.ndarray
    reward_adaptive: np.ndarray
    fallen: np.ndarray
    timeout: np.ndarray
    done: np.ndarray
    final_clean: np.ndarray   # (N, 17) pre-reset next obs (recon target)
    final_critic: np.ndarray  # (N, 24) pre-reset critic input (bootstrap)
    nominal: rewards.RewardBreakdown
    adaptive: rewards.RewardBreakdown
    transition: rewards.Transition


class VecEnv:
    """N independent environments stepped in lockstep at the control rate."""

    def __init__(self, n_envs: int = 1, model: RobotModel | None = None,
                 sim_cfg: SimConfig | None = None,
                 reward_cfg: rewards.RewardConfig | None = None,
                 seed: int = 0, payload_mode: str = "off", noise: bool = False,
                 terrains: list[TerrainProfile] | None = None,
                 terrain_sampler=None,
                 payload_script: PayloadProfile | None = None,
                 command_script=None,
                 episode_s: float | None = EPISODE_SECONDS,
                 auto_reset: bool = True,
                 base_mass_range: tuple[float, float] | None = None,
                 mass_scale: float = 1.0,
                 vx_range: tuple[float, float] = obs_mod.DEFAULT_VX_RANGE,
                 h_range: tuple[float, float] = obs_mod.DEFAULT_H_RANGE,
                 kp: float = kinematics.DEFAULT_KP, kd: float = kinematics.DEFAULT_KD,
                 start_x: float = 0.0,
                 reset_joint_noise: float = RESET_JOINT_NOISE):
        if payload_mode not in _PAYLOAD_MODES:
            raise ValueError(f"unknown payload mode {payload_mode!r}")
        if payload_mode == "scripted" and payload_script is None:
            raise ValueError("scripted payload mode needs a payload profile")
        self.n = n_envs
        self.model = model if model is not None else RobotModel()
        self.cfg = sim_cfg if sim_cfg is not None else SimConfig()
        self.reward_cfg = reward_cfg if reward_cfg is not None else rewards.RewardConfig()
        self.payload_mode = payload_mode
        self.payload_script = payload_script
        self.command_script = command_script
        self.command_source = "scripted" if command_script is not None else "sampled"
        self.terrain_sampler = terrain_sampler
        self.auto_reset = auto_reset
        self.base_mass_range = base_mass_range
        self.mass_scale = mass_scale
        self.vx_range = vx_range
        self.h_range = h_range
        self.kp = kp
        self.kd = kd
        self.start_x = start_x
        self.reset_joint_noise = reset_joint_noise

        dt = self.cfg.dt_control
        self.max_steps = int(round(episode_s / dt)) if episode_s is not None else None
        # event periods rounded to the control grid so boundaries are exact
        self._resample_steps = max(1, int(round(simcore.RESAMPLE_PERIOD / dt)))
        self._command_steps = max(1, int(round(obs_mod.COMMAND_RESAMPLE_PERIOD / dt)))
        self.force_scale = obs_mod.force_scale(self.model, self.cfg.gravity)

        children = np.random.SeedSequence(seed).spawn(n_envs + 1)
        self.env_rngs = [np.random.default_rng(c) for c in children[:n_envs]]
        self.noise_rng = np.random.default_rng(children[n_envs]) if noise else None

        if terrains is None:
            terrains = [TerrainProfile()]
        if len(terrains) == 1:
            terrains = [terrains[0]] * n_envs
        if len(terrains) != n_envs:
            raise ValueError("need one terrain per environment")
        self.profiles = list(terrains)
        self.ts = TerrainSet.from_profiles(self.profiles)

        n = n_envs
        self.q = np.zeros((n, 7))
        self.qd = np.zeros((n, 7))
        self.step_count = np.zeros(n, dtype=np.int64)
        self.global_step = 0
        self.prev_target = np.tile(self.model.theta_stand, (n, 1))
        self.a1 = np.zeros((n, 4))   # a_{t-1}: previous-action obs entry
        self.a2 = np.zeros((n, 4))
        self.d1 = np.zeros((n, 4))
        self.d2 = np.zeros((n, 4))
        self.tray = np.zeros(n)
        self.balls = np.zeros((n, 4))
        self.base_extra = np.zeros(n)
        self.sampled_offsets: list[float] = []
        self.vx_cmd = np.zeros(n)
        self.h_cmd = np.full(n, simcore.stand_height(self.model))
        self.hist = obs_mod.HistoryBatch(n)
        self._tnull = np.zeros(n)
        self.reset()

    @property
    def time(self) -> float:
        """Global clock: control steps since construction."""
        return self.global_step * self.cfg.dt_control

    @property
    def last_obs(self) -> EnvObservations:
        """Observations from the most recent reset or step."""
        return self._last_obs

    # --- episode bookkeeping ------------------------------------------------

    def _reset_env(self, i: int) -> None:
        rng = self.env_rngs[i]
        if self.terrain_sampler is not None:
            profile = self.terrain_sampler(rng)
            self.profiles[i] = profile
            self.ts.set_row(i, profile)
        st = simcore.reset(self.model, self.profiles[i], self.cfg, rng,
                           start_x=self.start_x, joint_noise=self.reset_joint_noise)
        q, qd, _ = simcore.pack_state(st)
        self.q[i] = q
        self.qd[i] = qd
        self.step_count[i] = 0
        self.prev_target[i] = self.model.theta_stand
        self.a1[i] = self.a2[i] = 0.0
        self.d1[i] = self.d2[i] = 0.0
        if self.payload_mode == "off":
            self.tray[i] = 0.0
            self.balls[i] = 0.0
        elif self.payload_mode == "resample":
            ps = simcore.payload_tick(None, 0.0, rng, "init", self.model)
            self.tray[i] = ps.tray_mass
            self.balls[i] = ps.ball_masses
        elif self.payload_mode == "scripted":
            tray, balls = self.payload_script.at(self.time)
            self.tray[i] = tray
            self.balls[i] = balls
        if self.base_mass_range is not None:
            offset = float(rng.uniform(*self.base_mass_range))
            self.sampled_offsets.append(offset)
            self.base_extra[i] = offset * self.mass_scale
        if self.command_script is not None:
            vx, h = self.command_script(self.time)
            self.vx_cmd[i] = vx
            self.h_cmd[i] = h
        elif self.command_source == "sampled":
            cmd = obs_mod.sample_command(rng, self.vx_range, self.h_range)
            self.vx_cmd[i] = cmd.vx_cmd
            self.h_cmd[i] = cmd.h_cmd
        self.hist.reset_rows(i)

    def _refresh_composite(self) -> None:
        self.comp_mass, self.comp_com, self.comp_inertia = simcore._composite_arrays(
            self.model, self.tray, self.balls, base_extra=self.base_extra)

    def _tick_payload(self) -> None:
        if self.payload_mode == "resample":
            hit = (self.step_count > 0) & (self.step_count % self._resample_steps == 0)
            if not np.any(hit):
                return
            for i in np.nonzero(hit)[0]:
                t = self.step_count[i] * self.cfg.dt_control
                ps = PayloadState(self.tray[i], self.balls[i].copy(),
                                  next_resample_time=t)
                ps = simcore.payload_tick(ps, t, self.env_rngs[i],
                                          "resample_loop", self.model)
                self.tray[i] = ps.tray_mass
                self.balls[i] = ps.ball_masses
            self._refresh_composite()
        elif self.payload_mode == "scripted":
            tray, balls = self.payload_script.at(self.time)
            if tray != self.tray[0] or np.any(balls != self.balls[0]):
                self.tray[:] = tray
                self.balls[:] = balls
                self._refresh_composite()

    def _tick_commands(self) -> None:
        if self.command_script is not None:
            vx, h = self.command_script(self.time)
            self.vx_cmd[:] = vx
            self.h_cmd[:] = h
        elif self.command_source == "sampled":
            hit = (self.step_count > 0) & (self.step_count % self._command_steps == 0)
            for i in np.nonzero(hit)[0]:
                cmd = obs_mod.sample_command(self.env_rngs[i], self.vx_range, self.h_range)
                self.vx_cmd[i] = cmd.vx_cmd
                self.h_cmd[i] = cmd.h_cmd

    def set_commands(self, vx_cmd, h_cmd, source: str = "operator") -> None:
        """Pin commands from outside; disables the 5 s resampler."""
        if source not in ("scripted", "operator"):
            raise ValueError(f"external commands cannot use source {source!r}")
        self.vx_cmd[:] = vx_cmd
        self.h_cmd[:] = h_cmd
        self.command_source = source

    def set_payload(self, tray_mass: float, ball_masses) -> None:
        """Pin the payload from outside; disables the 4 s resampler."""
        ps = PayloadState(tray_mass, np.asarray(ball_masses, dtype=float))
        self.tray[:] = ps.tray_mass
        self.balls[:] = ps.ball_masses
        self.payload_mode = "manual"
        self._refresh_composite()

    # --- sensing and observation -------------------------------------------

    def _sense(self) -> Sense:
        q, qd = self.q, self.qd
        pos, jac, _ = simcore._body_kinematics(self.model, q, qd, self.comp_com)
        feet_pos = pos[:, (2, 4)]
        feet_vel = np.einsum("nbij,nj->nbi", jac[:, (2, 4)], qd)
        grf, f_n, _ = simcore._contact_forces(self.ts, feet_pos, feet_vel, self.cfg)
        torques = kinematics.pd_torque(self.prev_target, q[:, 3:7], qd[:, 3:7],
                                       self.kp, self.kd, self.model.torque_limit)
        legs = kinematics.jacobian_matrix(self.model, q[:, 3:7].reshape(self.n, 2, 2))
        # the torque solve yields the force the foot applies to the ground;
        # report the equal-and-opposite contact force so a loaded stance
        # reads positive-up, directly comparable to the true contact forces
        est, _ = kinematics.solve_forces(legs, torques.reshape(self.n, 2, 2))
        est = -est
        height = q[:, 1] - simcore._height_arrays(self.ts, q[:, 0:1])[:, 0]
        foot_height = feet_pos[:, :, 1] - simcore._height_arrays(self.ts, feet_pos[:, :, 0])
        return Sense(torques=torques, est_forces=est, grf=grf, contact=f_n > 0.0,
                     height=height, foot_height=foot_height, foot_vx=feet_vel[:, :, 0])

    def _observe(self, sense: Sense) -> EnvObservations:
        cmds = np.stack([self.vx_cmd, self.h_cmd], axis=1)
        o = obs_mod.build_observation_batch(self.q, self.qd, cmds, self.a1, self.noise_rng)
        clean = obs_mod.build_observation_batch(self.q, self.qd, cmds, self.a1, None)
        self.hist.push(o)
        payload = self.tray + self.balls.sum(axis=1)
        critic = np.concatenate(
            [clean, self.qd[:, 0:2], payload[:, None],
             sense.grf.reshape(self.n, 4) * self.force_scale], axis=1)
        return EnvObservations(
            obs=o.astype(np.float32),
            obs_clean=clean.astype(np.float32),
            augmented=obs_mod.build_augmented_batch(
                o, sense.est_forces, self.force_scale).astype(np.float32),
            history=self.hist.flatten().astype(np.float32),
            critic=critic.astype(np.float32),
            body_vel=self.qd[:, 0:2].astype(np.float32),
            payload_mass=payload,
            grf=sense.grf,
            est_forces=sense.est_forces,
        )

    def _observe_rows(self, out: EnvObservations, sense: Sense, idx: np.ndarray) -> None:
        """Rebuild freshly reset rows of an already-built observation."""
        cmds = np.stack([self.vx_cmd[idx], self.h_cmd[idx]], axis=1)
        o = obs_mod.build_observation_batch(self.q[idx], self.qd[idx], cmds,
                                            self.a1[idx], self.noise_rng)
        clean = obs_mod.build_observation_batch(self.q[idx], self.qd[idx], cmds,
                                                self.a1[idx], None)
        self.hist.reset_rows(idx)
        self.hist.frames[idx, -1] = o
        payload = self.tray[idx] + self.balls[idx].sum(axis=1)
        out.obs[idx] = o
        out.obs_clean[idx] = clean
        out.augmented[idx] = obs_mod.build_augmented_batch(
            o, sense.est_forces[idx], self.force_scale)
        out.history[idx] = self.hist.frames[idx].reshape(len(idx), -1)
        out.critic[idx] = np.concatenate(
            [clean, self.qd[idx, 0:2], payload[:, None],
             sense.grf[idx].reshape(len(idx), 4) * self.force_scale], axis=1)
        out.body_vel[idx] = self.qd[idx, 0:2]
        out.payload_mass[idx] = payload
        out.grf[idx] = sense.grf[idx]
        out.est_forces[idx] = sense.est_forces[idx]

    def reset(self) -> EnvObservations:
        """Reset every environment and return the first observations."""
        for i in range(self.n):
            self._reset_env(i)
        self._refresh_composite()
        self._last_obs = self._observe(self._sense())
        return self._last_obs

    # --- stepping -----------------------------------------------------------

    def step(self, action: np.ndarray, delta: np.ndarray | None = None) -> StepResult:
        """Advance one control step under nominal action a and optional
        adaptive correction delta_a; the PD target is theta_stand + a + delta_a."""
        a = np.asarray(action, dtype=float).reshape(self.n, 4)
        d = (np.zeros((self.n, 4)) if delta is None
             else np.asarray(delta, dtype=float).reshape(self.n, 4))
        target = kinematics.action_to_target(
            a + d, self.model.theta_stand, self.model.joint_low, self.model.joint_high)
        self.prev_target = target
        theta_dot_prev = self.qd[:, 3:7].copy()
        payload_during = self.tray + self.balls.sum(axis=1)

        q, qd = self.q, self.qd
        for _ in range(self.cfg.control_decimation):
            tau = kinematics.pd_torque(target, q[:, 3:7], qd[:, 3:7],
                                       self.kp, self.kd, self.model.torque_limit)
            q, qd, _, _, _, _ = simcore.step_batch(
                self.model, q, qd, self._tnull, tau, self.ts,
                self.comp_mass, self.comp_com, self.comp_inertia, self.cfg)
        self.q, self.qd = q, qd
        self.step_count += 1
        self.global_step += 1

        # the transition owns its arrays: resets mutate the rolling buffers
        a_prev, a_prev2 = self.a1.copy(), self.a2.copy()
        d_prev, d_prev2 = self.d1.copy(), self.d2.copy()
        self.a2, self.a1 = self.a1, a.copy()
        self.d2, self.d1 = self.d1, d.copy()

        sense = self._sense()
        transition = rewards.Transition(
            vx=qd[:, 0].copy(), vz=qd[:, 1].copy(),
            pitch=q[:, 2].copy(), pitch_rate=qd[:, 2].copy(),
            theta_dot=qd[:, 3:7].copy(), theta_dot_prev=theta_dot_prev,
            torques=sense.torques, height=sense.height,
            h_cmd=self.h_cmd.copy(), vx_cmd=self.vx_cmd.copy(),
            foot_height=sense.foot_height, foot_vx=sense.foot_vx,
            foot_contact=sense.contact,
            action=a.copy(), action_prev=a_prev, action_prev2=a_prev2,
            delta=d.copy(), delta_prev=d_prev, delta_prev2=d_prev2,
            est_forces=sense.est_forces, payload_mass=payload_during,
            dt=self.cfg.dt_control)
        nominal = rewards.nominal_reward(transition, self.reward_cfg,
                                         self.model.total_mass, self.cfg.gravity)
        adaptive = rewards.adaptive_reward(transition, self.reward_cfg,
                                           self.model.total_mass, self.cfg.gravity)

        fallen = (np.abs(q[:, 2]) > FALL_PITCH) | (sense.height < MIN_HEIGHT)
        if self.max_steps is not None:
            timeout = ~fallen & (self.step_count >= self.max_steps)
        else:
            timeout = np.zeros(self.n, dtype=bool)
        done = fallen | timeout

        self._tick_payload()
        self._tick_commands()
        out = self._observe(sense)
        final_clean = out.obs_clean.copy()
        final_critic = out.critic.copy()

        if self.auto_reset and np.any(done):
            idx = np.nonzero(done)[0]
            for i in idx:
                self._reset_env(i)
            self._refresh_composite()
            self._observe_rows(out, self._sense(), idx)

        self._last_obs = out
        return StepResult(
            obs=out, reward_nominal=nominal.total, reward_adaptive=adaptive.total,
            fallen=fallen, timeout=timeout, done=done,
            final_clean=final_clean, final_critic=final_critic,
            nominal=nominal, adaptive=adaptive, transition=transition)
