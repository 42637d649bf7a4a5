"""Policy observation construction.

The base observation is a fixed 17-entry layout:

    [0]      pitch rate (rad/s)
    [1:3]    gravity direction in the body frame
    [3:5]    commands (vx_cmd m/s, h_cmd m)
    [5:9]    joint angles (rad)
    [9:13]   joint velocities (rad/s)
    [13:17]  previous action

The adaptive controller sees an augmented vector with the estimated
foot forces appended (front fx, fz, rear fx, fz), scaled to order-1 by
the robot's weight. The context estimator consumes a flattened history
of the last H = 5 base observations, oldest first, zero-padded until
warm-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS_DIM = 17
AUGMENTED_DIM = 21
HISTORY_LEN = 5
HISTORY_DIM = OBS_DIM * HISTORY_LEN

INDEX_MAP = {
    "pitch_rate": (0, 1),
    "gravity": (1, 3),
    "command": (3, 5),
    "theta": (5, 9),
    "theta_dot": (9, 13),
    "prev_action": (13, 17),
    "foot_forces": (17, 21),   # augmented vector only
}

# training-time additive uniform noise half-widths
NOISE_THETA = 0.01
NOISE_THETA_DOT = 0.2
NOISE_GRAVITY = 0.05

COMMAND_RESAMPLE_PERIOD = 5.0
DEFAULT_VX_RANGE = (-1.0, 1.0)
DEFAULT_H_RANGE = (0.24, 0.32)

_COMMAND_SOURCES = ("sampled", "scripted", "operator")


@dataclass
class CommandState:
    vx_cmd: float
    h_cmd: float
    source: str = "sampled"

    def __post_init__(self):
        if self.source not in _COMMAND_SOURCES:
            raise ValueError(f"unknown command source {self.source!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx_cmd, self.h_cmd])


def sample_command(rng: np.random.Generator,
                   vx_range: tuple[float, float] = DEFAULT_VX_RANGE,
                   h_range: tuple[float, float] = DEFAULT_H_RANGE) -> CommandState:
    return CommandState(vx_cmd=float(rng.uniform(*vx_range)),
                        h_cmd=float(rng.uniform(*h_range)), source="sampled")


def resample_command(cmd: CommandState, rng: np.random.Generator,
                     vx_range: tuple[float, float] = DEFAULT_VX_RANGE,
                     h_range: tuple[float, float] = DEFAULT_H_RANGE) -> CommandState:
    """New sampled command, unless a scripted/operator source owns it."""
    if cmd.source != "sampled":
        return cmd
    return sample_command(rng, vx_range, h_range)


def gravity_body(pitch) -> np.ndarray:
    """World down-direction rotated into the body frame; unit norm."""
    pitch = np.asarray(pitch, dtype=float)
    return np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1)


def build_observation_batch(q: np.ndarray, qd: np.ndarray, cmds: np.ndarray,
                            prev_actions: np.ndarray,
                            noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """Observations for a batch of environments given packed state arrays.

    q, qd are the (N, 7) generalized coordinates; cmds is (N, 2);
    prev_actions is (N, 4). Passing a generator adds the training noise.
    """
    n = q.shape[0]
    out = np.empty((n, OBS_DIM))
    out[:, 0] = qd[:, 2]
    out[:, 1:3] = gravity_body(q[:, 2])
    out[:, 3:5] = cmds
    out[:, 5:9] = q[:, 3:7]
    out[:, 9:13] = qd[:, 3:7]
    out[:, 13:17] = prev_actions
    if noise_rng is not None:
        out[:, 1:3] += noise_rng.uniform(-NOISE_GRAVITY, NOISE_GRAVITY, size=(n, 2))
        out[:, 5:9] += noise_rng.uniform(-NOISE_THETA, NOISE_THETA, size=(n, 4))
        out[:, 9:13] += noise_rng.uniform(-NOISE_THETA_DOT, NOISE_THETA_DOT, size=(n, 4))
    return out


def build_observation(state, cmd: CommandState, prev_action: np.ndarray,
                      noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """Single-environment observation from a simulator state."""
    from .simcore import pack_state
    q, qd, _ = pack_state(state)
    return build_observation_batch(
        q[None], qd[None], cmd.as_array()[None],
        np.asarray(prev_action, dtype=float)[None], noise_rng)[0]


def force_scale(model, g: float) -> float:
    """Normalizer for force entries: one robot-weight maps to 1.0."""
    return 1.0 / (model.total_mass * g)


def build_augmented_batch(obs: np.ndarray, forces: np.ndarray,
                          scale: float) -> np.ndarray:
    """Append scaled foot-force estimates: (N, 17) ++ (N, 2, 2) -> (N, 21)."""
    return np.concatenate([obs, forces.reshape(obs.shape[0], 4) * scale], axis=1)


def build_augmented(o: np.ndarray, forces: np.ndarray, scale: float) -> np.ndarray:
    """Single augmented observation; forces are ((front fx, fz), (rear fx, fz))."""
    return build_augmented_batch(o[None], np.asarray(forces, dtype=float)[None], scale)[0]


class HistoryWindow:
    """Ring buffer of the last H observations, flattened oldest-first."""

    def __init__(self, horizon: int = HISTORY_LEN, dim: int = OBS_DIM):
        self.frames = np.zeros((horizon, dim))

    def push(self, o: np.ndarray) -> "HistoryWindow":
        self.frames[:-1] = self.frames[1:]
        self.frames[-1] = o
        return self

    def flatten(self) -> np.ndarray:
        return self.frames.reshape(-1).copy()

    def reset(self) -> None:
        self.frames[:] = 0.0


def push_history(window: HistoryWindow, o: np.ndarray) -> HistoryWindow:
    return window.push(o)


class HistoryBatch:
    """Batched history: (N, H, obs) with per-environment reset."""

    def __init__(self, n: int, horizon: int = HISTORY_LEN, dim: int = OBS_DIM):
        self.frames = np.zeros((n, horizon, dim))

    def push(self, obs: np.ndarray) -> None:
        self.frames[:, :-1] = self.frames[:, 1:]
        self.frames[:, -1] = obs

    def flatten(self) -> np.ndarray:
        return self.frames.reshape(self.frames.shape[0], -1).copy()

    def reset_rows(self, idx) -> None:
        self.frames[idx] = 0.0
