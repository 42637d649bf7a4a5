"""Two-phase proximal-policy training for the payload-adaptive controller.

Phase 1 trains the nominal policy, its critic, and the context estimator
with the payload scheduler off. Phase 2 restores those weights, switches
the scheduler on, and trains the adaptive corrector alongside while the
nominal policy keeps refining; each policy's importance ratio uses only
its own sampled action component. A separate baseline mode trains a
single policy under randomized base mass instead of an explicit payload.

The rollout buffer stores the exact float32 input vectors each policy
saw, so recomputing log-densities at update time reproduces the stored
ones bit for bit: the first update epoch's importance ratios are exactly
one, which the tests pin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kinematics, nets, obs as obs_mod
from .autograd import Tensor
from .env import CRITIC_DIM, VecEnv, sample_training_terrain
from .nets import Adam, CENet, GaussianPolicy, Mlp, MlpSpec
from .simcore import NonFiniteState

NOMINAL_IN = obs_mod.OBS_DIM + nets.LATENT_DIM + nets.VEL_DIM
ADAPTIVE_IN = obs_mod.AUGMENTED_DIM + nets.LATENT_DIM + nets.VEL_DIM

# joint-target offsets, rad; the corrector gets half the nominal range
NOMINAL_ACTION_BOUND = 1.0
ADAPT_ACTION_BOUND = 0.5

ACT_DIM = 4
KL_LIMIT = 0.15

_PHASES = ("phase1", "phase2", "baseline")


class DivergedUpdate(RuntimeError):
    """Policy update stepped too far from the sampling distribution."""

    def __init__(self, message: str, kl: float = float("nan"),
                 stats: dict | None = None):
        super().__init__(message)
        self.kl = kl
        self.stats = stats or {}


@dataclass
class TrainConfig:
    num_envs: int = 64
    horizon: int = 64
    iterations_phase1: int = 300
    iterations_phase2: int = 150
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    gamma: float = 0.99
    lam: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    cenet_lr_scale_phase2: float = 0.1
    beta_vae: float = 0.2
    kl_limit: float = KL_LIMIT
    max_consecutive_diverged: int = 10
    adapt_action_bound: float = ADAPT_ACTION_BOUND
    actor_hidden: tuple = (128, 64)
    critic_hidden: tuple = (128, 64)
    encoder_hidden: tuple = (64, 32)
    decoder_hidden: tuple = (32, 64)
    terrain: str = "curriculum"
    noise: bool = True
    episode_s: float = 20.0
    baseline_mass_range: tuple = (0.0, 10.0)
    baseline_mass_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        for name in ("num_envs", "horizon", "iterations_phase1",
                     "iterations_phase2", "epochs", "minibatches"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.kl_limit <= 0:
            raise ValueError("learning_rate and kl_limit must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.adapt_action_bound <= 0:
            raise ValueError("adapt_action_bound must be positive")
        if self.terrain not in ("curriculum", "flat"):
            raise ValueError(f"unknown terrain mode {self.terrain!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Agent count and iteration budget of the original experiments;
        everything else stays at the desk-scale defaults."""
        base = {"num_envs": 4096, "iterations_phase1": 1000,
                "iterations_phase2": 500}
        base.update(overrides)
        return cls(**base)


@dataclass
class PolicyBundle:
    policy: GaussianPolicy
    critic: Mlp
    cenet: CENet
    adaptive_policy: GaussianPolicy | None
    adaptive_critic: Mlp | None
    phase: str

    def nets(self) -> dict:
        out = {"policy": self.policy, "critic": self.critic, "cenet": self.cenet}
        if self.adaptive_policy is not None:
            out["adaptive_policy"] = self.adaptive_policy
            out["adaptive_critic"] = self.adaptive_critic
        return out

    def state(self) -> dict[str, np.ndarray]:
        return nets.state_dict(self.nets())


def make_bundle(cfg: TrainConfig, phase: str, rng: np.random.Generator) -> PolicyBundle:
    """Fresh networks for a phase; construction order is fixed so one rng
    stream reproduces the same initialization."""
    if phase not in _PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    policy = GaussianPolicy(NOMINAL_IN, ACT_DIM, cfg.actor_hidden, rng,
                            mean_bound=NOMINAL_ACTION_BOUND)
    critic = Mlp(MlpSpec(CRITIC_DIM, cfg.critic_hidden, 1), rng)
    cenet = CENet(obs_mod.HISTORY_DIM, obs_mod.OBS_DIM,
                  cfg.encoder_hidden, cfg.decoder_hidden, rng)
    adaptive_policy = adaptive_critic = None
    if phase != "baseline":
        adaptive_policy = GaussianPolicy(ADAPTIVE_IN, ACT_DIM, cfg.actor_hidden,
                                         rng, mean_bound=cfg.adapt_action_bound)
        adaptive_critic = Mlp(MlpSpec(CRITIC_DIM, cfg.critic_hidden, 1), rng)
    return PolicyBundle(policy, critic, cenet, adaptive_policy, adaptive_critic, phase)


@dataclass
class RolloutBuffer:
    """Fixed-horizon on-policy batch, time-major (T, N, ...)."""

    nominal_in: np.ndarray     # (T, N, 27) exact policy inputs, float32
    adaptive_in: np.ndarray | None
    hist: np.ndarray           # (T, N, 85)
    critic_in: np.ndarray      # (T, N, 24)
    next_clean: np.ndarray     # (T, N, 17) pre-reset next obs (recon target)
    body_vel: np.ndarray       # (T, N, 2) true velocity (estimation target)
    actions: np.ndarray        # (T, N, 4)
    logp: np.ndarray           # (T, N)
    delta: np.ndarray          # (T, N, 4), zero outside phase 2
    delta_logp: np.ndarray
    reward_nominal: np.ndarray
    reward_adaptive: np.ndarray
    fallen: np.ndarray         # (T, N) bool
    done: np.ndarray
    value_nominal: np.ndarray
    value_next_nominal: np.ndarray   # V(s_{t+1}) from the pre-reset state
    value_adaptive: np.ndarray | None
    value_next_adaptive: np.ndarray | None
    term_means_nominal: dict
    term_means_adaptive: dict

    @property
    def horizon(self):
        return self.nominal_in.shape[0]


class EpisodeTracker:
    """Running per-env return/length accumulator across iterations."""

    def __init__(self, n: int):
        self.ret = np.zeros(n)
        self.length = np.zeros(n, dtype=np.int64)
        self._finished: list[tuple[float, int]] = []

    def update(self, rewards: np.ndarray, done: np.ndarray) -> None:
        self.ret += rewards
        self.length += 1
        for i in np.nonzero(done)[0]:
            self._finished.append((float(self.ret[i]), int(self.length[i])))
            self.ret[i] = 0.0
            self.length[i] = 0

    def drain(self) -> dict:
        if self._finished:
            rets, lens = zip(*self._finished)
            out = {"episode_return": float(np.mean(rets)),
                   "episode_length": float(np.mean(lens)),
                   "episodes_done": len(self._finished)}
        else:
            out = {"episode_return": float("nan"),
                   "episode_length": float("nan"), "episodes_done": 0}
        self._finished.clear()
        return out


def collect_rollout(env: VecEnv, bundle: PolicyBundle, cfg: TrainConfig,
                    obs=None, act_rng: np.random.Generator | None = None,
                    tracker: EpisodeTracker | None = None):
    """Roll the bundle's policies for cfg.horizon control steps.

    Returns (buffer, last_obs); pass last_obs back in so episodes continue
    across iterations. The estimator runs in evaluation mode (z = mu).
    """
    if obs is None:
        obs = env.reset()
    if act_rng is None:
        act_rng = np.random.default_rng(cfg.seed)
    phase2 = bundle.phase == "phase2"
    T, N = cfg.horizon, env.n
    buf = RolloutBuffer(
        nominal_in=np.zeros((T, N, NOMINAL_IN), dtype=np.float32),
        adaptive_in=np.zeros((T, N, ADAPTIVE_IN), dtype=np.float32) if phase2 else None,
        hist=np.zeros((T, N, obs_mod.HISTORY_DIM), dtype=np.float32),
        critic_in=np.zeros((T, N, CRITIC_DIM), dtype=np.float32),
        next_clean=np.zeros((T, N, obs_mod.OBS_DIM), dtype=np.float32),
        body_vel=np.zeros((T, N, nets.VEL_DIM), dtype=np.float32),
        actions=np.zeros((T, N, ACT_DIM), dtype=np.float32),
        logp=np.zeros((T, N), dtype=np.float32),
        delta=np.zeros((T, N, ACT_DIM), dtype=np.float32),
        delta_logp=np.zeros((T, N), dtype=np.float32),
        reward_nominal=np.zeros((T, N)),
        reward_adaptive=np.zeros((T, N)),
        fallen=np.zeros((T, N), dtype=bool),
        done=np.zeros((T, N), dtype=bool),
        value_nominal=np.zeros((T, N)),
        value_next_nominal=np.zeros((T, N)),
        value_adaptive=np.zeros((T, N)) if phase2 else None,
        value_next_adaptive=np.zeros((T, N)) if phase2 else None,
        term_means_nominal={}, term_means_adaptive={})

    for t in range(T):
        v_hat, z = bundle.cenet.eval_np(obs.history)
        x = np.concatenate([obs.obs, z, v_hat], axis=1)
        a, logp = bundle.policy.sample_np(x, act_rng)
        if phase2:
            xa = np.concatenate([obs.augmented, z, v_hat], axis=1)
            d, dlogp = bundle.adaptive_policy.sample_np(xa, act_rng)
            buf.adaptive_in[t] = xa
            buf.delta[t] = d
            buf.delta_logp[t] = dlogp
        else:
            d = None
        buf.nominal_in[t] = x
        buf.hist[t] = obs.history
        buf.critic_in[t] = obs.critic
        buf.body_vel[t] = obs.body_vel
        buf.actions[t] = a
        buf.logp[t] = logp
        buf.value_nominal[t] = bundle.critic.eval_np(obs.critic)[:, 0]
        if phase2:
            buf.value_adaptive[t] = bundle.adaptive_critic.eval_np(obs.critic)[:, 0]

        try:
            res = env.step(a.astype(float), None if d is None else d.astype(float))
        except NonFiniteState as e:
            raise NonFiniteState(f"rollout aborted at step {t}: {e}") from e
        if __debug__:
            # composition invariant; rows that auto-reset go back to the
            # stand target, so only surviving rows are comparable
            applied = a.astype(float)
            if d is not None:
                applied = applied + d.astype(float)
            want = kinematics.action_to_target(
                applied, env.model.theta_stand,
                env.model.joint_low, env.model.joint_high)
            live = ~res.done
            assert np.array_equal(env.prev_target[live], want[live])

        buf.next_clean[t] = res.final_clean
        buf.reward_nominal[t] = res.reward_nominal
        buf.reward_adaptive[t] = res.reward_adaptive
        buf.fallen[t] = res.fallen
        buf.done[t] = res.done
        buf.value_next_nominal[t] = bundle.critic.eval_np(res.final_critic)[:, 0]
        if phase2:
            buf.value_next_adaptive[t] = bundle.adaptive_critic.eval_np(res.final_critic)[:, 0]
        for name, v in res.nominal.weighted.items():
            buf.term_means_nominal[name] = (
                buf.term_means_nominal.get(name, 0.0) + float(np.mean(v)) / T)
        for name, v in res.adaptive.weighted.items():
            buf.term_means_adaptive[name] = (
                buf.term_means_adaptive.get(name, 0.0) + float(np.mean(v)) / T)
        if tracker is not None:
            tracker.update(res.reward_nominal, res.done)
        obs = res.obs
    return buf, obs


def compute_gae(rewards, values, next_values, fallen, dones,
                gamma: float, lam: float):
    """Generalized advantage estimation over a (T, N) batch.

    next_values come from the pre-reset state of each step, so truncated
    episodes (timeouts) bootstrap while falls terminate with zero value.
    Returns raw (advantages, returns); normalization happens at the loss.
    """
    rewards = np.asarray(rewards, dtype=float)
    T = rewards.shape[0]
    for arr in (values, next_values, fallen, dones):
        if np.shape(arr) != rewards.shape:
            raise ValueError("misaligned advantage inputs")
    not_fallen = 1.0 - np.asarray(fallen, dtype=float)
    open_chain = 1.0 - np.asarray(dones, dtype=float)
    delta = rewards + gamma * next_values * not_fallen - values
    adv = np.zeros_like(rewards)
    acc = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        acc = delta[t] + gamma * lam * open_chain[t] * acc
        adv[t] = acc
    return adv, adv + values


@dataclass
class PolicyBatch:
    """Flattened per-policy view of a rollout buffer."""

    x: np.ndarray         # (M, in_dim) float32 inputs as sampled
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    critic_in: np.ndarray


def clipped_surrogate(logp_new: Tensor, logp_old: np.ndarray,
                      advantages: np.ndarray, clip_eps: float) -> Tensor:
    """Mean clipped importance-weighted advantage, as a graph node."""
    ratio = ag.exp(logp_new - Tensor(logp_old))
    unclipped = ag.mul(ratio, advantages)
    clipped = ag.mul(ag.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), advantages)
    return ag.tmean(ag.minimum(unclipped, clipped))


def ppo_update(policy, critic, batch: PolicyBatch, cfg: TrainConfig,
               opt: Adam, rng: np.random.Generator) -> dict:
    """Clipped-surrogate update of one policy/critic pair over the batch.

    Raises DivergedUpdate (with partial stats attached) when an epoch's
    mean KL passes cfg.kl_limit, so the iteration's remaining epochs are
    skipped; the caller decides whether training continues.
    """
    m = batch.x.shape[0]
    adv = batch.advantages
    adv = ((adv - adv.mean()) / (adv.std() + 1e-8)).astype(np.float32)
    ret = batch.returns.astype(np.float32)

    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
           "kl": 0.0, "clip_fraction": 0.0, "epochs_run": 0, "updates": 0}

    def finish():
        n = max(agg["updates"], 1)
        out = {k: v / n for k, v in agg.items() if k not in ("epochs_run", "updates")}
        out["epochs_run"] = agg["epochs_run"]
        return out

    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        epoch_kl = []
        for mb in np.array_split(perm, cfg.minibatches):
            x, acts = batch.x[mb], batch.actions[mb]
            lp_old, a_mb, r_mb = batch.logp_old[mb], adv[mb], ret[mb]
            lp_new = policy.logp_graph(Tensor(x), acts)
            surrogate = clipped_surrogate(lp_new, lp_old, a_mb, cfg.clip_eps)
            v_pred = critic.forward(Tensor(batch.critic_in[mb]))[:, 0]
            v_loss = ag.tmean(ag.square(v_pred - Tensor(r_mb)))
            entropy = policy.entropy()
            loss = (-surrogate) + v_loss * cfg.value_coef + entropy * (-cfg.entropy_coef)
            opt.zero_grad()
            loss.backward()
            opt.step()

            ratio = np.exp(lp_new.data.astype(float) - lp_old.astype(float))
            kl = float(np.mean(lp_old.astype(float) - lp_new.data.astype(float)))
            epoch_kl.append(kl)
            agg["policy_loss"] += -surrogate.item()
            agg["value_loss"] += v_loss.item()
            agg["entropy"] += entropy.item()
            agg["kl"] += kl
            agg["clip_fraction"] += float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))
            agg["updates"] += 1
        agg["epochs_run"] = epoch + 1
        mean_kl = float(np.mean(epoch_kl))
        if mean_kl > cfg.kl_limit:
            raise DivergedUpdate(
                f"mean KL {mean_kl:.4f} passed {cfg.kl_limit} after epoch {epoch}",
                kl=mean_kl, stats=finish())
    return finish()


def cenet_update(cenet: CENet, buf: RolloutBuffer, cfg: TrainConfig,
                 opt: Adam, eps_rng: np.random.Generator) -> dict:
    """Estimator/reconstruction update with fresh latent noise per batch."""
    hist = buf.hist.reshape(-1, obs_mod.HISTORY_DIM)
    o_next = buf.next_clean.reshape(-1, obs_mod.OBS_DIM)
    v_true = buf.body_vel.reshape(-1, nets.VEL_DIM)
    m = hist.shape[0]
    agg = {"est": 0.0, "recon": 0.0, "kl": 0.0}
    updates = 0
    for _ in range(cfg.epochs):
        perm = eps_rng.permutation(m)
        for mb in np.array_split(perm, cfg.minibatches):
            eps = eps_rng.standard_normal(
                (len(mb), cenet.latent_dim)).astype(np.float32)
            loss, parts = nets.cenet_loss(cenet, hist[mb], o_next[mb],
                                          v_true[mb], eps, beta=cfg.beta_vae)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k in agg:
                agg[k] += parts[k]
            updates += 1
    return {f"cenet_{k}": v / updates for k, v in agg.items()}


def _policy_batch(buf: RolloutBuffer, adaptive: bool, gamma: float, lam: float
                  ) -> PolicyBatch:
    if adaptive:
        adv, ret = compute_gae(buf.reward_adaptive, buf.value_adaptive,
                               buf.value_next_adaptive, buf.fallen, buf.done,
                               gamma, lam)
        x, acts, lp = buf.adaptive_in, buf.delta, buf.delta_logp
    else:
        adv, ret = compute_gae(buf.reward_nominal, buf.value_nominal,
                               buf.value_next_nominal, buf.fallen, buf.done,
                               gamma, lam)
        x, acts, lp = buf.nominal_in, buf.actions, buf.logp
    flat = lambda arr: arr.reshape(-1, arr.shape[-1])
    return PolicyBatch(x=flat(x), actions=flat(acts), logp_old=lp.reshape(-1),
                       advantages=adv.reshape(-1), returns=ret.reshape(-1),
                       critic_in=flat(buf.critic_in))


def _group_params(policy, critic) -> dict:
    out = {f"pi.{k}": v for k, v in policy.parameters().items()}
    out.update({f"vf.{k}": v for k, v in critic.parameters().items()})
    return out


def _make_env(cfg: TrainConfig, payload_mode: str,
              base_mass_range=None) -> VecEnv:
    sampler = sample_training_terrain if cfg.terrain == "curriculum" else None
    return VecEnv(n_envs=cfg.num_envs, seed=cfg.seed, payload_mode=payload_mode,
                  noise=cfg.noise, terrain_sampler=sampler,
                  episode_s=cfg.episode_s, base_mass_range=base_mass_range,
                  mass_scale=cfg.baseline_mass_scale)


def _train(cfg: TrainConfig, bundle: PolicyBundle, env: VecEnv,
           iterations: int, on_iteration=None):
    phase2 = bundle.phase == "phase2"
    # rng domain [seed, 1] is disjoint from the env's own [seed] streams
    streams = np.random.SeedSequence([cfg.seed, 1]).spawn(3)
    act_rng, shuffle_rng, eps_rng = (np.random.default_rng(s) for s in streams)

    opt_nominal = Adam(_group_params(bundle.policy, bundle.critic),
                       lr=cfg.learning_rate)
    opt_adaptive = (Adam(_group_params(bundle.adaptive_policy, bundle.adaptive_critic),
                         lr=cfg.learning_rate) if phase2 else None)
    cenet_lr = cfg.learning_rate * (cfg.cenet_lr_scale_phase2 if phase2 else 1.0)
    opt_cenet = Adam(bundle.cenet.parameters(), lr=cenet_lr)

    frozen = None
    if bundle.phase == "phase1":
        frozen = {k: v.data.copy()
                  for k, v in _group_params(bundle.adaptive_policy,
                                            bundle.adaptive_critic).items()}

    tracker = EpisodeTracker(env.n)
    obs = env.last_obs
    metrics: list[dict] = []
    consecutive = 0
    for it in range(iterations):
        buf, obs = collect_rollout(env, bundle, cfg, obs, act_rng, tracker)
        diverged = False
        row = {"iteration": it}
        try:
            stats = ppo_update(bundle.policy, bundle.critic,
                               _policy_batch(buf, False, cfg.gamma, cfg.lam),
                               cfg, opt_nominal, shuffle_rng)
        except DivergedUpdate as e:
            stats, diverged = e.stats, True
        row.update(stats)
        if phase2:
            try:
                astats = ppo_update(bundle.adaptive_policy, bundle.adaptive_critic,
                                    _policy_batch(buf, True, cfg.gamma, cfg.lam),
                                    cfg, opt_adaptive, shuffle_rng)
            except DivergedUpdate as e:
                astats, diverged = e.stats, True
            row.update({f"adaptive_{k}": v for k, v in astats.items()})
        row.update(cenet_update(bundle.cenet, buf, cfg, opt_cenet, eps_rng))

        if frozen is not None:
            # the freeze is structural: no graph touches these parameters
            for k, p in _group_params(bundle.adaptive_policy,
                                      bundle.adaptive_critic).items():
                assert p.grad is None
                assert np.array_equal(p.data, frozen[k])

        row["reward_nominal"] = float(np.mean(buf.reward_nominal))
        row["reward_adaptive"] = float(np.mean(buf.reward_adaptive))
        row.update({f"nom_{k}": v for k, v in buf.term_means_nominal.items()})
        row.update({f"adp_{k}": v for k, v in buf.term_means_adaptive.items()})
        row.update(tracker.drain())
        row["diverged"] = int(diverged)
        metrics.append(row)
        if on_iteration is not None:
            on_iteration(it, row, bundle)

        consecutive = consecutive + 1 if diverged else 0
        if consecutive >= cfg.max_consecutive_diverged:
            raise DivergedUpdate(
                f"update diverged for {consecutive} consecutive iterations "
                f"(last mean KL above {cfg.kl_limit})", stats=row)
    return bundle, metrics


def train_phase1(cfg: TrainConfig, on_iteration=None):
    """Nominal policy, critic, and estimator under the payload-free
    curriculum; adaptive networks exist but stay untouched."""
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    bundle = make_bundle(cfg, "phase1", init_rng)
    env = _make_env(cfg, payload_mode="off")
    return _train(cfg, bundle, env, cfg.iterations_phase1, on_iteration)


def train_phase2(cfg: TrainConfig, phase1_bundle: PolicyBundle, on_iteration=None):
    """Joint nominal + adaptive training with the payload scheduler on,
    starting from the phase-1 weights."""
    if phase1_bundle.phase != "phase1":
        raise ValueError(f"expected a phase1 bundle, got {phase1_bundle.phase!r}")
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    bundle = make_bundle(cfg, "phase2", init_rng)
    nets.load_state(bundle.nets(), phase1_bundle.state())
    env = _make_env(cfg, payload_mode="resample")
    return _train(cfg, bundle, env, cfg.iterations_phase2, on_iteration)


def train_baseline(cfg: TrainConfig, on_iteration=None):
    """Single nominal policy under per-episode base-mass randomization;
    no adaptive networks at all."""
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    bundle = make_bundle(cfg, "baseline", init_rng)
    env = _make_env(cfg, payload_mode="off",
                    base_mass_range=cfg.baseline_mass_range)
    return _train(cfg, bundle, env, cfg.iterations_phase1, on_iteration)


def write_metrics_csv(rows: list[dict], path, meta: dict | None = None) -> None:
    """One row per iteration; columns are the union of row keys.

    meta entries become leading '# key=value' comment lines.
    """
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        if meta:
            for k in sorted(meta):
                fh.write(f"# {k}={meta[k]}\n")
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
