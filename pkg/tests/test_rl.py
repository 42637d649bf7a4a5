"""Training-loop tests: advantage estimation against a brute-force
oracle, the clipped-surrogate arithmetic, exact first-epoch ratios,
phase gating, divergence handling, and tiny end-to-end runs of all
three training procedures."""

import csv

import numpy as np
import pytest

from payloco import nets, rl
from payloco.autograd import Tensor
from payloco.env import VecEnv
from payloco.rl import (DivergedUpdate, PolicyBatch, TrainConfig, clipped_surrogate,
                        collect_rollout, compute_gae, make_bundle, ppo_update,
                        train_baseline, train_phase1, train_phase2)
from payloco.simcore import NonFiniteState


def gae_brute_force(rewards, values, next_values, fallen, dones, gamma, lam):
    """O(T^2) restatement: A_t sums (gamma*lam)^k-discounted TD errors
    forward until the first episode boundary at or after t."""
    T, N = rewards.shape
    delta = rewards + gamma * next_values * (1.0 - fallen) - values
    adv = np.zeros((T, N))
    for n in range(N):
        for t in range(T):
            w = 1.0
            for k in range(t, T):
                adv[t, n] += w * delta[k, n]
                if dones[k, n]:
                    break
                w *= gamma * lam
    return adv


def test_gae_matches_brute_force():
    rng = np.random.default_rng(0)
    T, N = 100, 3
    rewards = rng.normal(size=(T, N))
    values = rng.normal(size=(T, N))
    next_values = rng.normal(size=(T, N))
    fallen = rng.random((T, N)) < 0.05
    timeout = rng.random((T, N)) < 0.03
    dones = fallen | timeout
    adv, ret = compute_gae(rewards, values, next_values, fallen, dones,
                           gamma=0.99, lam=0.95)
    expect = gae_brute_force(rewards, values, next_values,
                             fallen.astype(float), dones, 0.99, 0.95)
    assert np.max(np.abs(adv - expect)) < 1e-10
    assert np.max(np.abs(ret - (expect + values))) < 1e-10


def test_gae_single_terminal_step():
    one = np.ones((1, 1))
    zero = np.zeros((1, 1))
    adv, ret = compute_gae(one, zero, zero, np.ones((1, 1), dtype=bool),
                           np.ones((1, 1), dtype=bool), gamma=0.99, lam=0.95)
    assert adv[0, 0] == 1.0
    assert ret[0, 0] == 1.0


def test_gae_telescopes_at_gamma_lambda_one():
    rng = np.random.default_rng(1)
    T = 40
    rewards = rng.normal(size=(T, 1))
    values = rng.normal(size=(T, 1))
    next_values = np.concatenate([values[1:], np.zeros((1, 1))])
    no = np.zeros((T, 1), dtype=bool)
    adv, _ = compute_gae(rewards, values, next_values, no, no, gamma=1.0, lam=1.0)
    tail = np.cumsum(rewards[::-1], axis=0)[::-1]
    assert np.max(np.abs(adv - (tail - values))) < 1e-10


def test_gae_rejects_misaligned_inputs():
    with pytest.raises(ValueError):
        compute_gae(np.zeros((4, 2)), np.zeros((4, 2)), np.zeros((3, 2)),
                    np.zeros((4, 2)), np.zeros((4, 2)), 0.99, 0.95)


def test_clipped_surrogate_arithmetic():
    # ratio 1.5, advantage +1: clip wins, term = 1.2
    lp_new = Tensor(np.array([np.log(1.5)]))
    term = clipped_surrogate(lp_new, np.zeros(1), np.ones(1), clip_eps=0.2)
    assert abs(term.item() - 1.2) < 1e-9
    # ratio 0.5, advantage -1: the min picks the clipped branch, -0.8
    lp_new = Tensor(np.array([np.log(0.5)]))
    term = clipped_surrogate(lp_new, np.zeros(1), -np.ones(1), clip_eps=0.2)
    assert abs(term.item() - (-0.8)) < 1e-9


def test_identity_policy_surrogate_is_mean_advantage():
    rng = np.random.default_rng(2)
    lp = rng.normal(size=64)
    adv = rng.normal(size=64)
    term = clipped_surrogate(Tensor(lp.copy()), lp, adv, clip_eps=0.2)
    assert term.item() == pytest.approx(np.mean(adv), abs=1e-12)


def tiny_cfg(**overrides):
    base = dict(num_envs=4, horizon=8, iterations_phase1=3, iterations_phase2=2,
                epochs=2, minibatches=2, terrain="flat", seed=123)
    base.update(overrides)
    return TrainConfig(**base)


def test_collect_rollout_shapes_and_phase_gate():
    cfg = tiny_cfg()
    bundle = make_bundle(cfg, "phase1", np.random.default_rng(0))
    env = VecEnv(n_envs=cfg.num_envs, seed=cfg.seed, noise=True)
    buf, obs = collect_rollout(env, bundle, cfg)
    T, N = cfg.horizon, cfg.num_envs
    assert buf.nominal_in.shape == (T, N, rl.NOMINAL_IN)
    assert buf.critic_in.shape == (T, N, 24)
    assert buf.hist.shape == (T, N, 85)
    assert buf.actions.shape == (T, N, 4)
    assert buf.reward_nominal.shape == (T, N)
    assert buf.adaptive_in is None
    assert np.all(buf.delta == 0.0)          # phase gate: no corrective action
    assert np.all(buf.delta_logp == 0.0)
    assert obs.obs.shape == (N, 17)


def test_collect_rollout_deterministic():
    def run():
        cfg = tiny_cfg()
        bundle = make_bundle(cfg, "phase1", np.random.default_rng(7))
        env = VecEnv(n_envs=cfg.num_envs, seed=cfg.seed, noise=True,
                     payload_mode="resample")
        rng = np.random.default_rng(42)
        buf, _ = collect_rollout(env, bundle, cfg, act_rng=rng)
        return buf

    b1, b2 = run(), run()
    for name in ("nominal_in", "actions", "logp", "reward_nominal",
                 "reward_adaptive", "critic_in", "done"):
        assert np.array_equal(getattr(b1, name), getattr(b2, name))


def test_first_epoch_ratio_is_exactly_one():
    cfg = tiny_cfg()
    p1_bundle = make_bundle(cfg, "phase1", np.random.default_rng(3))
    bundle = make_bundle(cfg, "phase2", np.random.default_rng(4))
    nets.load_state(bundle.nets(), p1_bundle.state())
    env = VecEnv(n_envs=cfg.num_envs, seed=cfg.seed, noise=True,
                 payload_mode="resample")
    buf, _ = collect_rollout(env, bundle, cfg, act_rng=np.random.default_rng(5))
    for policy, x, acts, lp in (
            (bundle.policy, buf.nominal_in, buf.actions, buf.logp),
            (bundle.adaptive_policy, buf.adaptive_in, buf.delta, buf.delta_logp)):
        lp_new = policy.logp_graph(Tensor(x.reshape(-1, x.shape[-1])),
                                   acts.reshape(-1, 4))
        ratio = np.exp(lp_new.data - lp.reshape(-1))
        assert np.max(np.abs(ratio - 1.0)) == 0.0


def synthetic_batch(rng, m=128, in_dim=9):
    x = rng.normal(size=(m, in_dim)).astype(np.float32)
    policy = nets.GaussianPolicy(in_dim, 4, (16,), rng)
    critic = nets.Mlp(nets.MlpSpec(24, (16,), 1), rng)
    a, lp = policy.sample_np(x, rng)
    return policy, critic, PolicyBatch(
        x=x, actions=a, logp_old=lp,
        advantages=rng.normal(size=m), returns=rng.normal(size=m),
        critic_in=rng.normal(size=(m, 24)).astype(np.float32))


def test_ppo_update_statistics():
    rng = np.random.default_rng(8)
    policy, critic, batch = synthetic_batch(rng)
    cfg = tiny_cfg()
    stats = ppo_update(policy, critic, batch, cfg,
                       nets.Adam(rl._group_params(policy, critic), lr=1e-4),
                       np.random.default_rng(9))
    assert stats["epochs_run"] == cfg.epochs
    assert np.isfinite(stats["kl"]) and np.isfinite(stats["policy_loss"])
    assert 0.0 <= stats["clip_fraction"] <= 1.0


def test_ppo_update_diverges_at_huge_learning_rate():
    rng = np.random.default_rng(10)
    policy, critic, batch = synthetic_batch(rng)
    cfg = tiny_cfg(epochs=4)
    with pytest.raises(DivergedUpdate) as exc:
        ppo_update(policy, critic, batch, cfg,
                   nets.Adam(rl._group_params(policy, critic), lr=0.5),
                   np.random.default_rng(11))
    assert exc.value.kl > cfg.kl_limit
    assert exc.value.stats["epochs_run"] < cfg.epochs


def test_train_config_validation():
    with pytest.raises(ValueError, match="clip_eps"):
        TrainConfig(clip_eps=1.5)
    with pytest.raises(ValueError, match="gamma"):
        TrainConfig(gamma=0.0)
    with pytest.raises(ValueError, match="num_envs"):
        TrainConfig(num_envs=0)
    with pytest.raises(ValueError, match="terrain"):
        TrainConfig(terrain="lunar")
    big = TrainConfig.full_scale(seed=5)
    assert big.num_envs == 4096
    assert big.iterations_phase1 == 1000
    assert big.iterations_phase2 == 500
    assert big.seed == 5


@pytest.fixture(scope="module")
def tiny_phase1():
    return train_phase1(tiny_cfg())


def test_train_phase1_freezes_adaptive(tiny_phase1):
    bundle, metrics = tiny_phase1
    assert bundle.phase == "phase1"
    assert len(metrics) == 3
    # adaptive networks still carry their initialization, bit for bit
    fresh = make_bundle(tiny_cfg(), "phase1",
                        np.random.default_rng(np.random.SeedSequence([123, 0])))
    for k, p in bundle.adaptive_policy.parameters().items():
        assert np.array_equal(p.data, fresh.adaptive_policy.parameters()[k].data)
    for k, p in bundle.adaptive_critic.parameters().items():
        assert np.array_equal(p.data, fresh.adaptive_critic.parameters()[k].data)
    # while the trained networks moved
    assert not np.array_equal(bundle.policy.mean_net.weights[0].data,
                              fresh.policy.mean_net.weights[0].data)
    row = metrics[0]
    for key in ("reward_nominal", "kl", "value_loss", "cenet_recon",
                "nom_lin_vel", "episodes_done", "diverged"):
        assert key in row


def test_train_phase2_moves_both_policies(tiny_phase1):
    p1_bundle, _ = tiny_phase1
    cfg = tiny_cfg()
    bundle, metrics = train_phase2(cfg, p1_bundle)
    assert bundle.phase == "phase2"
    assert len(metrics) == cfg.iterations_phase2
    assert not np.array_equal(bundle.policy.mean_net.weights[0].data,
                              p1_bundle.policy.mean_net.weights[0].data)
    assert not np.array_equal(
        bundle.adaptive_policy.mean_net.weights[0].data,
        p1_bundle.adaptive_policy.mean_net.weights[0].data)
    assert "adaptive_kl" in metrics[0]


def test_train_phase2_rejects_wrong_phase(tiny_phase1):
    bundle, _ = tiny_phase1
    cfg = tiny_cfg()
    wrong, _ = train_baseline(tiny_cfg(iterations_phase1=1))
    with pytest.raises(ValueError, match="phase1"):
        train_phase2(cfg, wrong)


def test_zeroed_correction_reproduces_nominal_behavior(tiny_phase1):
    # additive composition: delta forced to zero is the nominal controller
    p1_bundle, _ = tiny_phase1
    bundle, _ = train_phase2(tiny_cfg(iterations_phase2=1), p1_bundle)

    def run(pass_zeros):
        env = VecEnv(n_envs=2, seed=77, payload_mode="resample")
        obs = env.last_obs
        frames = []
        for _ in range(10):
            v_hat, z = bundle.cenet.eval_np(obs.history)
            a = bundle.policy.mean_np(
                np.concatenate([obs.obs, z, v_hat], axis=1)).astype(float)
            res = env.step(a, np.zeros((2, 4)) if pass_zeros else None)
            frames.append(res.obs.obs.copy())
            obs = res.obs
        return frames

    for fa, fb in zip(run(True), run(False)):
        assert np.array_equal(fa, fb)


def test_train_baseline_has_no_adaptive_parameters():
    bundle, metrics = train_baseline(tiny_cfg(iterations_phase1=2))
    assert bundle.phase == "baseline"
    assert bundle.adaptive_policy is None and bundle.adaptive_critic is None
    assert not any(k.startswith("adaptive") for k in bundle.state())
    assert len(metrics) == 2


def test_rollout_abort_names_the_step():
    cfg = tiny_cfg()
    bundle = make_bundle(cfg, "phase1", np.random.default_rng(1))
    env = VecEnv(n_envs=cfg.num_envs, seed=cfg.seed)
    obs = env.last_obs
    env.q[2, 1] = np.nan
    with pytest.raises(NonFiniteState, match="rollout aborted at step 0"):
        collect_rollout(env, bundle, cfg, obs=obs)


def test_metrics_csv_roundtrip(tmp_path):
    rows = [{"iteration": 0, "kl": 0.01, "reward_nominal": -0.5},
            {"iteration": 1, "kl": 0.02, "reward_nominal": -0.4, "extra": 7}]
    path = tmp_path / "metrics.csv"
    rl.write_metrics_csv(rows, path)
    with open(path) as fh:
        back = list(csv.DictReader(fh))
    assert back[0]["iteration"] == "0"
    assert float(back[1]["kl"]) == 0.02
    assert back[0]["extra"] == ""
