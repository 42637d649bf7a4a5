"""Network stack: MLPs, the diagonal-Gaussian policy head, the context
estimator (a small beta-VAE over observation histories), and Adam.

Every net has two forward paths that must produce bit-identical float32
results: a graph path through autograd (used in updates) and a plain
numpy path (used in rollouts, where no gradients are needed). Keeping
the two paths byte-equal is what makes the first PPO epoch's importance
ratios exactly one, so any edit here has to preserve the op order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
LOG_STD_INIT = -1.0

LATENT_DIM = 8
VEL_DIM = 2


@dataclass
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if len(self.hidden) < 1:
            raise ValueError("MlpSpec needs at least one hidden layer")
        if self.in_dim < 1 or self.out_dim < 1 or min(self.hidden) < 1:
            raise ValueError("layer widths must be positive")


def _np_elu(x: np.ndarray) -> np.ndarray:
    # mirror of autograd.elu, same expm1 formulation
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


class Mlp:
    """Affine + ELU chain with a linear output layer."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator,
                 out_scale: float = 1.0, dtype=np.float32):
        self.spec = spec
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        widths = [spec.in_dim, *spec.hidden, spec.out_dim]
        for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
            scale = np.sqrt(2.0 / n_in)
            if i == len(widths) - 2:
                scale *= out_scale
            self.weights.append(Parameter(
                rng.normal(0.0, scale, size=(n_in, n_out)), dtype=dtype))
            self.biases.append(Parameter(np.zeros(n_out), dtype=dtype))

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def forward(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.data.shape[-1] != self.spec.in_dim:
            raise ag.ShapeMismatch(
                f"input width {h.data.shape[-1]}, expected {self.spec.in_dim}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.affine(h, w, b)
            if i < last:
                h = ag.elu(h)
        return h

    def eval_np(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.spec.in_dim:
            raise ag.ShapeMismatch(
                f"input width {x.shape[-1]}, expected {self.spec.in_dim}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = _np_elu(h)
        return h


class GaussianPolicy:
    """MLP mean with a state-independent log-std vector.

    mean_bound, if set, squashes the mean to (-bound, bound) through tanh;
    the sampling distribution stays an unbounded Gaussian around it.
    """

    def __init__(self, in_dim: int, act_dim: int, hidden: tuple[int, ...],
                 rng: np.random.Generator, log_std_init: float = LOG_STD_INIT,
                 mean_bound: float | None = None, dtype=np.float32):
        self.act_dim = act_dim
        self.mean_bound = float(mean_bound) if mean_bound is not None else None
        self.mean_net = Mlp(MlpSpec(in_dim, hidden, act_dim), rng,
                            out_scale=0.01, dtype=dtype)
        self.log_std = Parameter(np.full(act_dim, log_std_init), dtype=dtype)

    def parameters(self) -> dict[str, Parameter]:
        out = {f"mean.{k}": v for k, v in self.mean_net.parameters().items()}
        out["log_std"] = self.log_std
        return out

    def _log_std_np(self) -> np.ndarray:
        return np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX)

    def mean_np(self, x: np.ndarray) -> np.ndarray:
        mean = self.mean_net.eval_np(x)
        if self.mean_bound is not None:
            mean = np.tanh(mean) * np.asarray(self.mean_bound, dtype=mean.dtype)
        return mean

    def sample_np(self, x: np.ndarray, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray]:
        """Rollout path: actions and their log-densities, no graph."""
        mean = self.mean_np(x)
        log_std = self._log_std_np()
        eps = rng.standard_normal(mean.shape, dtype=mean.dtype)
        a = mean + np.exp(log_std) * eps
        return a, self.logp_np(x, a, mean=mean)

    def logp_np(self, x: np.ndarray, a: np.ndarray,
                mean: np.ndarray | None = None) -> np.ndarray:
        if mean is None:
            mean = self.mean_np(x)
        log_std = self._log_std_np()
        z = (a - mean) * np.exp(-log_std)
        out = np.sum(z * z, axis=-1) * np.asarray(-0.5, dtype=z.dtype)
        out = out - np.broadcast_to(log_std, a.shape).sum(axis=-1)
        return out - np.asarray(0.5 * self.act_dim * ag.LOG_2PI, dtype=z.dtype)

    def logp_graph(self, x, a: np.ndarray) -> Tensor:
        """Update path: differentiable log-density of stored actions."""
        mean = self.mean_net.forward(x)
        if self.mean_bound is not None:
            mean = ag.mul(ag.tanh(mean), self.mean_bound)
        log_std = ag.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return ag.gaussian_logp(Tensor(a), mean, log_std)

    def entropy(self) -> Tensor:
        """Mean per-sample entropy (state independent for this head)."""
        log_std = ag.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        const = 0.5 * self.act_dim * (1.0 + ag.LOG_2PI)
        return ag.tsum(log_std) + const


class CENet:
    """Context estimator: encodes an observation history into a latent
    context and a body-velocity estimate, and reconstructs the next
    observation from them."""

    def __init__(self, hist_dim: int, obs_dim: int,
                 encoder_hidden: tuple[int, ...], decoder_hidden: tuple[int, ...],
                 rng: np.random.Generator, latent_dim: int = LATENT_DIM,
                 dtype=np.float32):
        self.hist_dim = hist_dim
        self.obs_dim = obs_dim
        self.latent_dim = latent_dim
        enc_out = VEL_DIM + 2 * latent_dim
        self.encoder = Mlp(MlpSpec(hist_dim, encoder_hidden, enc_out), rng, dtype=dtype)
        self.decoder = Mlp(MlpSpec(latent_dim + VEL_DIM, decoder_hidden, obs_dim),
                           rng, dtype=dtype)

    def parameters(self) -> dict[str, Parameter]:
        out = {f"enc.{k}": v for k, v in self.encoder.parameters().items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.parameters().items()})
        return out

    def _split(self, enc):
        v_hat = enc[:, 0:VEL_DIM]
        mu = enc[:, VEL_DIM:VEL_DIM + self.latent_dim]
        log_sigma = enc[:, VEL_DIM + self.latent_dim:]
        return v_hat, mu, log_sigma

    def forward(self, hist, eps: np.ndarray | None = None):
        """Graph path. eps of shape (N, latent) turns on reparameterized
        sampling (training); eps=None means z = mu (evaluation)."""
        enc = self.encoder.forward(hist)
        v_hat, mu, log_sigma = self._split(enc)
        if eps is None:
            z = mu
        else:
            z = mu + ag.mul(ag.exp(log_sigma), eps)
        recon = self.decoder.forward(ag.concat([z, v_hat], axis=1))
        return v_hat, mu, log_sigma, z, recon

    def eval_np(self, hist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rollout path: (v_hat, z=mu), bit-identical to the eval graph."""
        enc = self.encoder.eval_np(hist)
        return enc[:, 0:VEL_DIM], enc[:, VEL_DIM:VEL_DIM + self.latent_dim]


def cenet_loss(cenet: CENet, hist: np.ndarray, o_next: np.ndarray,
               v_true: np.ndarray, eps: np.ndarray | None,
               beta: float = 0.2) -> tuple[Tensor, dict]:
    """Hybrid estimation + VAE loss over one batch.

    Returns the scalar loss tensor and a float breakdown for logging.
    """
    v_hat, mu, log_sigma, _, recon = cenet.forward(Tensor(hist), eps=eps)
    l_est = ag.tmean(ag.square(v_hat - Tensor(v_true)))
    l_recon = ag.tmean(ag.square(recon - Tensor(o_next)))
    kl = ag.tmean(ag.kl_standard_normal(mu, log_sigma))
    loss = l_est + l_recon + ag.mul(kl, beta)
    parts = {"est": l_est.item(), "recon": l_recon.item(), "kl": kl.item()}
    return loss, parts


class Adam:
    """Adaptive-moment optimizer with global gradient-norm clipping."""

    def __init__(self, params: dict[str, Parameter], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 max_grad_norm: float | None = 1.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clip_grads(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = float(np.sqrt(total))
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self) -> float:
        norm = self.clip_grads()
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                       ).astype(p.data.dtype)
        return norm


def state_dict(nets: dict[str, object]) -> dict[str, np.ndarray]:
    """Flat name -> array view over several nets' parameters."""
    out = {}
    for prefix, net in nets.items():
        for name, p in net.parameters().items():
            out[f"{prefix}.{name}"] = p.data
    return out


def load_state(nets: dict[str, object], arrays: dict[str, np.ndarray]) -> None:
    expected = state_dict(nets)
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise KeyError(f"parameter set mismatch: missing {sorted(missing)}, "
                       f"unexpected {sorted(extra)}")
    for name, current in expected.items():
        incoming = arrays[name]
        if incoming.shape != current.shape:
            raise ValueError(f"{name}: shape {incoming.shape} != {current.shape}")
        current[...] = incoming
