"""Control-loop environment tests: PD target composition, observation
wiring, the torque-based foot-force estimator end to end, event
scheduling on the control grid, termination, and determinism."""

import numpy as np
import pytest
from scipy import stats

from payloco import kinematics, simcore
from payloco.env import CRITIC_DIM, VecEnv, sample_training_terrain
from payloco.obs import gravity_body
from payloco.rewards import nominal_reward, adaptive_reward
from payloco.simcore import (GRAVITY, NonFiniteState, PayloadProfile, ProfileExhausted,
                             RobotModel, SimConfig, TerrainProfile, TerrainSet)

ZERO = np.zeros((1, 4))

# gains used where a test needs the bare PD loop to hold the standing
# pose statically; the tracking defaults sag without policy feedforward
HOLD_KP, HOLD_KD = 100.0, 5.0


def test_standing_smoke():
    env = VecEnv(n_envs=1, seed=3, kp=60.0, kd=3.0)
    for _ in range(100):
        r = env.step(ZERO)
        assert not r.done[0]
    assert r.transition.height[0] > 0.2
    assert r.transition.foot_contact[0].all()


def test_estimator_matches_contact_forces_at_steady_state():
    # quasi-static oracle, averaged over every physics substep so the
    # contact chatter cannot bias the sampling
    model = RobotModel()
    cfg = SimConfig()
    ts = TerrainSet.from_profiles([TerrainProfile()])

    def settle(tray, balls):
        rng = np.random.default_rng(3)
        st = simcore.reset(model, TerrainProfile(), cfg, rng)
        q, qd, _ = simcore.pack_state(st)
        q, qd = q[None], qd[None]
        cm, cc, ci = simcore._composite_arrays(
            model, np.array([tray]), np.asarray(balls, dtype=float)[None])
        est_sum, grf_sum, est_feet = [], [], []
        for k in range(4000):
            tau = kinematics.pd_torque(model.theta_stand, q[:, 3:7], qd[:, 3:7],
                                       HOLD_KP, HOLD_KD, model.torque_limit)
            legs = kinematics.jacobian_matrix(model, q[:, 3:7].reshape(1, 2, 2))
            est, _ = kinematics.solve_forces(legs, tau.reshape(1, 2, 2))
            q, qd, _, grf, _, _ = simcore.step_batch(
                model, q, qd, np.zeros(1), tau, ts, cm, cc, ci, cfg)
            est_sum.append(-est[0, :, 1].sum())
            est_feet.append(-est[0, :, 1])
            grf_sum.append(grf[0, :, 1].sum())
        return (np.mean(est_sum[-2000:]), np.mean(grf_sum[-2000:]),
                np.mean(est_feet[-2000:], axis=0))

    est0, grf0, feet0 = settle(0.0, np.zeros(4))
    assert abs(est0 - grf0) / grf0 < 0.10
    assert np.all(feet0 > 10.0)            # both legs loaded

    m_p = 2.25
    est1, grf1, _ = settle(0.25, np.full(4, 0.5))
    assert abs(est1 - grf1) / grf1 < 0.10
    # the payload increment passes through the estimate almost exactly
    assert abs((est1 - est0) - m_p * GRAVITY) < 0.10 * m_p * GRAVITY


def test_estimator_sees_payload_through_env():
    # softer contact keeps the stance free of the chatter limit cycle, so
    # the 50 Hz decision-time samples are representative of the true load
    cfg = SimConfig(contact_stiffness=2e4, contact_damping=400.0)
    env = VecEnv(n_envs=1, seed=3, kp=HOLD_KP, kd=HOLD_KD, sim_cfg=cfg)

    def run(n):
        est, grf = [], []
        for _ in range(n):
            r = env.step(ZERO)
            est.append(r.obs.est_forces[0, :, 1].sum())
            grf.append(r.obs.grf[0, :, 1].sum())
        return np.mean(est[-100:]), np.mean(grf[-100:]), r

    est0, grf0, _ = run(200)
    assert abs(est0 - grf0) / grf0 < 0.10

    env.set_payload(0.25, [0.5, 0.5, 0.5, 0.5])
    m_p = 2.25
    est1, grf1, r = run(200)
    assert abs(est1 - grf1) / grf1 < 0.10
    assert abs((est1 - est0) - m_p * GRAVITY) < 0.25 * m_p * GRAVITY
    assert r.transition.foot_contact[0].all()
    # augmented observation carries exactly the scaled estimates
    suffix = (r.obs.est_forces.reshape(1, 4) * env.force_scale).astype(np.float32)
    assert np.array_equal(r.obs.augmented[:, 17:21], suffix)


def test_pd_target_composition():
    env = VecEnv(n_envs=2, seed=0)
    a = np.array([[0.1, -0.2, 0.05, 0.0], [0.0, 0.0, 0.0, 0.0]])
    d = np.array([[0.02, 0.03, -0.01, 0.3], [0.0, 0.0, 0.0, 0.0]])
    env.step(a, d)
    want = np.clip(env.model.theta_stand + (a + d),
                   env.model.joint_low, env.model.joint_high)
    assert np.array_equal(env.prev_target, want)
    env.step(a)
    want = np.clip(env.model.theta_stand + a,
                   env.model.joint_low, env.model.joint_high)
    assert np.array_equal(env.prev_target, want)


def test_observation_wiring():
    env = VecEnv(n_envs=1, seed=2, kp=60.0, kd=3.0)
    first = env.reset()
    assert np.array_equal(first.obs, first.obs_clean)     # noise off
    assert np.allclose(first.obs[0, 5:9], env.q[0, 3:7], atol=1e-6)
    assert np.all(first.obs[0, 13:17] == 0.0)
    assert np.allclose(first.obs[0, 3:5], [env.vx_cmd[0], env.h_cmd[0]], atol=1e-6)
    # history right after reset: four zero frames then the current obs
    assert np.all(first.history[0, :68] == 0.0)
    assert np.array_equal(first.history[0, 68:], first.obs[0])

    a = np.array([[0.05, -0.1, 0.02, 0.08]])
    r = env.step(a)
    assert np.array_equal(r.obs.obs[0, 13:17], a[0].astype(np.float32))
    assert np.array_equal(r.obs.history[0, 51:68], first.obs[0])
    assert np.array_equal(r.obs.history[0, 68:], r.obs.obs[0])
    # privileged critic input layout
    assert r.obs.critic.shape == (1, CRITIC_DIM)
    want = np.concatenate([
        r.obs.obs_clean[0],
        env.qd[0, 0:2].astype(np.float32),
        np.float32([r.obs.payload_mass[0]]),
        (r.obs.grf[0].reshape(4) * env.force_scale).astype(np.float32)])
    assert np.array_equal(r.obs.critic[0], want)


def test_observation_noise_enabled():
    env = VecEnv(n_envs=4, seed=2, noise=True)
    r = env.step(np.zeros((4, 4)))
    diff = r.obs.obs - r.obs.obs_clean
    assert np.any(diff != 0.0)
    quiet = np.concatenate([diff[:, 0:1], diff[:, 3:5], diff[:, 13:17]], axis=1)
    assert np.all(quiet == 0.0)


def test_determinism_under_fixed_seed():
    def rollout(seed):
        env = VecEnv(n_envs=3, seed=seed, noise=True, payload_mode="resample",
                     terrain_sampler=sample_training_terrain)
        acts = np.random.default_rng(7).normal(0.0, 0.1, size=(25, 3, 4))
        frames = []
        for a in acts:
            r = env.step(a)
            frames.append((r.obs.obs.copy(), r.reward_nominal.copy(),
                           r.reward_adaptive.copy(), r.done.copy()))
        return frames

    run1, run2 = rollout(11), rollout(11)
    for f1, f2 in zip(run1, run2):
        for a1, a2 in zip(f1, f2):
            assert np.array_equal(a1, a2)
    run3 = rollout(12)
    assert any(not np.array_equal(f1[0], f3[0]) for f1, f3 in zip(run1, run3))


def test_payload_resample_boundary():
    env = VecEnv(n_envs=1, seed=4, payload_mode="resample", kp=HOLD_KP, kd=HOLD_KD)
    p0 = env.last_obs.payload_mass[0]
    assert 0.25 <= p0 <= 0.25 + 4.0          # tray + four balls in [0, 1]
    masses, trans_masses = [], []
    for _ in range(205):
        r = env.step(ZERO)
        assert not r.done[0]                  # a fall would re-draw the payload
        masses.append(r.obs.payload_mass[0])
        trans_masses.append(r.transition.payload_mass[0])
    changes = [k for k in range(len(masses)) if masses[k] != p0]
    assert changes[0] == 199                  # 200th step ends at t = 4 s
    assert np.all(trans_masses[:200] == p0)   # reward stream sees the swap one step later
    assert trans_masses[200] == masses[199]
    assert 0.25 <= masses[199] <= 0.25 + 10.0


def test_command_resample_boundary_and_operator_pin():
    env = VecEnv(n_envs=1, seed=4, kp=60.0, kd=3.0)
    c0 = env.vx_cmd[0]
    cmds = []
    for _ in range(255):
        r = env.step(ZERO)
        cmds.append(r.obs.obs[0, 3])
    changes = [k for k in range(len(cmds)) if cmds[k] != np.float32(c0)]
    assert changes[0] == 249                  # 250th step ends at t = 5 s

    env.set_commands(0.3, 0.27)
    for _ in range(260):
        r = env.step(ZERO)
    assert r.obs.obs[0, 3] == np.float32(0.3)
    assert r.obs.obs[0, 4] == np.float32(0.27)


def test_timeout_and_auto_reset():
    env = VecEnv(n_envs=1, seed=6, episode_s=0.1, kp=60.0, kd=3.0)
    for k in range(4):
        r = env.step(ZERO)
        assert not r.done[0]
    r = env.step(ZERO)
    assert r.timeout[0] and not r.fallen[0] and r.done[0]
    assert env.step_count[0] == 0             # auto-reset happened
    assert np.all(r.obs.history[0, :68] == 0.0)


def test_fall_detection_keeps_final_observation():
    env = VecEnv(n_envs=1, seed=6)
    env.q[0, 2] = 1.4                         # pitch beyond the fall limit
    r = env.step(ZERO)
    assert r.fallen[0] and r.done[0] and not r.timeout[0]
    # pre-reset observation still shows the tipped pose...
    g_final = r.final_clean[0, 1:3]
    assert g_final[1] > -0.5
    # ...while the returned observation is the fresh episode
    assert r.obs.obs_clean[0, 2] < -0.95
    assert abs(env.q[0, 2]) < 0.1


def test_non_finite_state_propagates():
    env = VecEnv(n_envs=2, seed=0)
    env.q[1, 0] = np.nan
    with pytest.raises(NonFiniteState):
        env.step(np.zeros((2, 4)))


def test_baseline_mass_offsets_are_uniform():
    env = VecEnv(n_envs=40, seed=9, episode_s=0.04, base_mass_range=(0.0, 10.0))
    assert np.allclose(env.comp_mass, env.model.base_mass + env.base_extra)
    for _ in range(120):
        env.step(np.zeros((40, 4)))
    offsets = np.array(env.sampled_offsets)
    assert len(offsets) > 2000
    p = stats.kstest(offsets, stats.uniform(scale=10.0).cdf).pvalue
    assert p > 0.01


def test_terrain_sampler_covers_catalog():
    rng = np.random.default_rng(0)
    kinds, slopes = set(), set()
    for _ in range(300):
        p = sample_training_terrain(rng)
        kinds.add(p.kind)
        if p.kind == "slope":
            slopes.add(round(p.slope_angle, 6))
            assert p.origin_x == 0.5
        if p.kind == "stairs":
            assert (p.step_rise, p.step_run, p.origin_x) == (0.08, 0.3, 0.5)
    assert kinds == {"flat", "slope", "stairs"}
    assert slopes == {round(np.deg2rad(10.0), 6), round(-np.deg2rad(10.0), 6)}

    env = VecEnv(n_envs=12, seed=5, terrain_sampler=sample_training_terrain)
    assert len({p.kind for p in env.profiles}) > 1
    assert np.all(env._sense().foot_height > -1e-9)


def test_scripted_payload_follows_global_clock():
    profile = PayloadProfile(times=[0.0, 1.0], trays=[0.25, 0.25],
                             balls=[np.zeros(4), np.full(4, 0.2)], duration=2.99)
    env = VecEnv(n_envs=1, seed=1, payload_mode="scripted", payload_script=profile,
                 episode_s=None, kp=HOLD_KP, kd=HOLD_KD)
    masses = []
    for _ in range(60):
        r = env.step(ZERO)
        masses.append(r.obs.payload_mass[0])
    assert np.all(np.array(masses[:49]) == 0.25)
    assert np.all(np.array(masses[49:]) == 0.25 + 0.8)
    with pytest.raises(ProfileExhausted):
        for _ in range(200):
            env.step(ZERO)


def test_command_script_overrides_sampler():
    env = VecEnv(n_envs=1, seed=1, command_script=lambda t: (0.4, 0.26),
                 episode_s=0.1, kp=60.0, kd=3.0)
    for _ in range(12):                       # crosses two auto-resets
        r = env.step(ZERO)
        assert r.obs.obs[0, 3] == np.float32(0.4)
        assert r.obs.obs[0, 4] == np.float32(0.26)


def test_reward_streams_match_breakdowns():
    env = VecEnv(n_envs=2, seed=8)
    d = np.full((2, 4), 0.1)
    for a in ([[0.05] * 4, [-0.05] * 4], [[-0.05] * 4, [0.05] * 4]):
        r = env.step(np.array(a, dtype=float), d)
    assert np.array_equal(r.reward_nominal, r.nominal.total)
    assert np.array_equal(r.reward_adaptive, r.adaptive.total)
    again = nominal_reward(r.transition, env.reward_cfg,
                           env.model.total_mass, env.cfg.gravity)
    assert np.array_equal(again.total, r.reward_nominal)
    # nominal action terms see the alternating a, adaptive sees constant delta
    assert np.all(r.nominal.raw["action_rate"] > 0.0)
    assert np.all(r.adaptive.raw["action_rate"] == 0.0)
    again_a = adaptive_reward(r.transition, env.reward_cfg,
                              env.model.total_mass, env.cfg.gravity)
    assert np.array_equal(again_a.total, r.reward_adaptive)
