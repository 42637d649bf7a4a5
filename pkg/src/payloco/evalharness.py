"""Scripted evaluation: named scenarios, deterministic rollouts, and
metric export.

A scenario is pure data (terrain, piecewise-constant command and payload
schedules, duration); running one produces a raw trajectory, and the
metrics timeseries is a pure function of that trajectory, so saved
trajectories can be re-scored bit for bit. Falls are first-class events:
the run halts early and the event lands in the record instead of being
masked.

Payload magnitudes are specified as the masses used on the reference
quadruped and scaled by total_mass / 12 kg by default so force ratios
carry over to this model; raw_masses=True keeps them unscaled.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import VecEnv
from .rl import PolicyBundle
from .simcore import (TRAY_MASS, PayloadProfile, RobotModel, TerrainProfile)

REFERENCE_MASS = 12.0          # payload figures are quoted for this robot mass
CSV_FLOAT_FMT = ".10g"
METRICS_FORMAT = 1             # stamped into every CSV and JSON export

_CONTROLLERS = ("baseline", "adaptive")


class ScenarioConfigError(ValueError):
    """Scenario data is malformed."""


class MismatchedScenarios(ValueError):
    """Comparison inputs come from different scenarios or seeds."""


@dataclass
class Schedule:
    """Piecewise-constant time series: value i holds on [times[i], times[i+1])."""

    times: list
    values: list

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ScenarioConfigError("schedule needs equal-length times/values")
        if self.times[0] != 0.0:
            raise ScenarioConfigError("schedule must start at t=0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ScenarioConfigError("schedule times must strictly increase")

    def at(self, t: float):
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(idx, 0)]


@dataclass
class Scenario:
    name: str
    terrain: TerrainProfile
    duration: float
    commands: Schedule            # values are (vx_cmd, h_cmd) pairs
    payload: Schedule | None      # values are total payload masses, kg
    controller: str = "adaptive"  # which controller the scenario targets

    def __post_init__(self):
        if self.duration < 0:
            raise ScenarioConfigError("duration must be non-negative")
        if self.controller not in _CONTROLLERS:
            raise ScenarioConfigError(f"unknown controller {self.controller!r}")
        for sched in (self.commands, self.payload):
            if sched is not None and self.duration > 0 \
                    and sched.times[-1] >= self.duration:
                raise ScenarioConfigError(
                    "schedule keys must fall inside [0, duration)")
        try:
            pairs = all(len(v) == 2 for v in self.commands.values)
        except TypeError:
            pairs = False
        if not pairs:
            raise ScenarioConfigError("command values must be (vx, h) pairs")
        if self.payload is not None and any(m < 0 for m in self.payload.values):
            raise ScenarioConfigError("payload masses must be non-negative")

    def to_dict(self) -> dict:
        d = {"name": self.name, "terrain": asdict(self.terrain),
             "duration": self.duration, "controller": self.controller,
             "commands": {"times": list(self.commands.times),
                          "vx": [v[0] for v in self.commands.values],
                          "h": [v[1] for v in self.commands.values]}}
        if self.payload is not None:
            d["payload"] = {"times": list(self.payload.times),
                            "masses": list(self.payload.values)}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            cmd = data["commands"]
            commands = Schedule(list(cmd["times"]),
                                list(zip(cmd["vx"], cmd["h"])))
            payload = None
            if data.get("payload") is not None:
                payload = Schedule(list(data["payload"]["times"]),
                                   list(data["payload"]["masses"]))
            terrain = TerrainProfile(**data["terrain"])
            return cls(name=data["name"], terrain=terrain,
                       duration=float(data["duration"]), commands=commands,
                       payload=payload,
                       controller=data.get("controller", "adaptive"))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ScenarioConfigError):
                raise
            raise ScenarioConfigError(f"malformed scenario: {e}") from e


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ScenarioConfigError(f"cannot read scenario: {e}") from e
    except json.JSONDecodeError as e:
        raise ScenarioConfigError(f"scenario is not valid JSON: {e}") from e
    return Scenario.from_dict(data)


def mass_scale(model: RobotModel | None = None) -> float:
    m = model if model is not None else RobotModel()
    return m.total_mass / REFERENCE_MASS


def _payload_state(total: float):
    """Split a total payload mass into tray + four equal disks."""
    tray = min(total, TRAY_MASS)
    return tray, np.full(4, (total - tray) / 4.0)


def _payload_profile(sched: Schedule, duration: float, scale: float,
                     margin: float) -> PayloadProfile:
    masses = [m * scale for m in sched.values]
    return PayloadProfile(
        times=list(sched.times),
        trays=[_payload_state(m)[0] for m in masses],
        balls=[_payload_state(m)[1] for m in masses],
        duration=duration + margin)


def builtin_scenarios() -> dict[str, Scenario]:
    """The four standard scenarios.

    Payload schedules are stored in reference-robot kg and scaled to this
    model at run time (see run_scenario's raw_masses flag). Profiles use
    round numbers: the source experiments report their mass schedules
    only qualitatively.
    """
    def steps(masses, dwell=4.0):
        return Schedule([i * dwell for i in range(len(masses))], list(masses))

    def cmd(vx, h=0.28):
        return Schedule([0.0], [(vx, h)])

    flat = TerrainProfile()
    stairs = TerrainProfile(kind="stairs", step_rise=0.08, step_run=0.3,
                            origin_x=0.5)
    return {
        "flat_steps": Scenario(
            name="flat_steps", terrain=flat, duration=24.0,
            commands=cmd(0.5), payload=steps([0.0, 2.0, 4.0, 2.0, 6.0, 0.0])),
        "stairs_steps": Scenario(
            name="stairs_steps", terrain=stairs, duration=24.0,
            commands=cmd(0.3), payload=steps([0.0, 1.0, 3.0, 5.0, 3.0, 0.0])),
        "progressive_load": Scenario(
            name="progressive_load", terrain=flat, duration=33.0,
            commands=cmd(0.4),
            payload=steps(list(np.arange(11.0)), dwell=3.0)),
        "static_disks": Scenario(
            name="static_disks", terrain=flat, duration=20.0,
            commands=cmd(0.0), payload=steps([0.0, 3.0, 0.0, 5.0, 0.0])),
    }


@dataclass
class Trajectory:
    """Raw per-control-step record of one scenario rollout."""

    time: np.ndarray
    h: np.ndarray
    h_cmd: np.ndarray
    vx: np.ndarray
    vx_cmd: np.ndarray
    torques: np.ndarray    # (S, 4) commanded
    delta: np.ndarray      # (S, 4) corrective action
    grf: np.ndarray        # (S, 2, 2) true contact forces
    payload: np.ndarray
    fallen: np.ndarray     # (S,) bool
    meta: dict = field(default_factory=dict)


_TRAJ_ARRAYS = ("time", "h", "h_cmd", "vx", "vx_cmd", "torques", "delta",
                "grf", "payload", "fallen")


def save_trajectory(path, traj: Trajectory) -> None:
    np.savez(path, meta=json.dumps(traj.meta, sort_keys=True),
             **{k: getattr(traj, k) for k in _TRAJ_ARRAYS})


def load_trajectory(path) -> Trajectory:
    with np.load(path) as data:
        fields = {k: data[k] for k in _TRAJ_ARRAYS}
        meta = json.loads(str(data["meta"]))
    return Trajectory(meta=meta, **fields)


@dataclass
class MetricsTimeseries:
    time: np.ndarray
    h: np.ndarray
    h_cmd: np.ndarray
    height_err: np.ndarray
    vx: np.ndarray
    vx_cmd: np.ndarray
    vel_err: np.ndarray
    torque_effort: np.ndarray   # mean |tau| over joints
    adapt_norm: np.ndarray      # ||delta_a||
    grf_norm: np.ndarray        # ||sum of contact forces||
    payload: np.ndarray
    fall: np.ndarray
    falls: list                 # [{"step", "time"}]
    phases: list                # per payload phase summary dicts
    meta: dict

    def __len__(self):
        return len(self.time)


def run_scenario(bundle: PolicyBundle, scenario: Scenario, seed: int = 0,
                 raw_masses: bool = False) -> MetricsTimeseries:
    """Deterministic rollout of one scenario, scored."""
    return compute_metrics(rollout_scenario(bundle, scenario, seed, raw_masses),
                           scenario)


def rollout_scenario(bundle: PolicyBundle, scenario: Scenario, seed: int = 0,
                     raw_masses: bool = False) -> Trajectory:
    """Roll the scenario out under the bundle's controller.

    Observation noise is off and both policies act through their means.
    The run halts at the first fall; the truncated record keeps the event.
    """
    if bundle.phase == "phase1":
        warnings.warn("phase1 checkpoint: running without the corrective "
                      "policy it was never trained with")
    env = scenario_env(scenario, seed, raw_masses)
    adaptive = bundle.phase == "phase2" and bundle.adaptive_policy is not None

    steps = int(round(scenario.duration / env.cfg.dt_control))
    rows = {k: [] for k in ("time", "h", "h_cmd", "vx", "vx_cmd", "payload")}
    torques, deltas, grfs, fallen = [], [], [], []
    obs = env.last_obs
    for k in range(steps):
        v_hat, z = bundle.cenet.eval_np(obs.history)
        a = bundle.policy.mean_np(
            np.concatenate([obs.obs, z, v_hat], axis=1)).astype(float)
        d = None
        if adaptive:
            d = bundle.adaptive_policy.mean_np(
                np.concatenate([obs.augmented, z, v_hat], axis=1)).astype(float)
        res = env.step(a, d)
        t = res.transition
        rows["time"].append((k + 1) * env.cfg.dt_control)
        rows["h"].append(t.height[0])
        rows["h_cmd"].append(t.h_cmd[0])
        rows["vx"].append(t.vx[0])
        rows["vx_cmd"].append(t.vx_cmd[0])
        rows["payload"].append(t.payload_mass[0])
        torques.append(t.torques[0])
        deltas.append(np.zeros(4) if d is None else d[0])
        grfs.append(res.obs.grf[0])
        fallen.append(bool(res.fallen[0]))
        obs = res.obs
        if res.fallen[0]:
            break

    return Trajectory(
        time=np.array(rows["time"]), h=np.array(rows["h"]),
        h_cmd=np.array(rows["h_cmd"]), vx=np.array(rows["vx"]),
        vx_cmd=np.array(rows["vx_cmd"]),
        torques=np.array(torques).reshape(-1, 4),
        delta=np.array(deltas).reshape(-1, 4),
        grf=np.array(grfs).reshape(-1, 2, 2),
        payload=np.array(rows["payload"]),
        fallen=np.array(fallen, dtype=bool),
        meta={"scenario": scenario.name, "seed": seed,
              "controller": bundle.phase, "duration": scenario.duration,
              "raw_masses": raw_masses})


def scenario_env(scenario: Scenario, seed: int, raw_masses: bool) -> VecEnv:
    scale = 1.0 if raw_masses else mass_scale()
    kwargs = dict(n_envs=1, seed=seed, noise=False, auto_reset=False,
                  episode_s=None, terrains=[scenario.terrain],
                  command_script=lambda t: scenario.commands.at(t))
    if scenario.payload is not None:
        profile = _payload_profile(scenario.payload, scenario.duration, scale,
                                   margin=1.0)
        kwargs.update(payload_mode="scripted", payload_script=profile)
    return VecEnv(**kwargs)


def compute_metrics(traj: Trajectory, scenario: Scenario) -> MetricsTimeseries:
    """Pure trajectory -> metrics mapping; re-scoring a saved trajectory
    reproduces the timeseries exactly."""
    height_err = np.abs(traj.h - traj.h_cmd)
    vel_err = np.abs(traj.vx - traj.vx_cmd)
    torque_effort = np.mean(np.abs(traj.torques), axis=1) if len(traj.time) \
        else np.zeros(0)
    adapt_norm = np.linalg.norm(traj.delta, axis=1) if len(traj.time) \
        else np.zeros(0)
    net = traj.grf.sum(axis=1) if len(traj.time) else np.zeros((0, 2))
    grf_norm = np.linalg.norm(net, axis=1)
    falls = [{"step": int(i), "time": float(traj.time[i])}
             for i in np.nonzero(traj.fallen)[0]]

    scale = 1.0 if traj.meta.get("raw_masses") else mass_scale()
    phases = []
    if scenario.payload is not None and len(traj.time):
        bounds = list(scenario.payload.times) + [scenario.duration]
        for i, mass in enumerate(scenario.payload.values):
            lo, hi = bounds[i], bounds[i + 1]
            mask = (traj.time > lo) & (traj.time <= hi)
            phase = {"phase": i, "start": lo, "end": hi,
                     "payload": mass * scale,
                     "steps": int(mask.sum()),
                     "falls": int(traj.fallen[mask].sum())}
            for name, series in (("height_err", height_err),
                                 ("vel_err", vel_err),
                                 ("torque_effort", torque_effort),
                                 ("adapt_norm", adapt_norm),
                                 ("grf_norm", grf_norm)):
                vals = series[mask]
                phase[f"mean_{name}"] = float(np.mean(vals)) if len(vals) else None
                phase[f"median_{name}"] = float(np.median(vals)) if len(vals) else None
            phases.append(phase)

    return MetricsTimeseries(
        time=traj.time, h=traj.h, h_cmd=traj.h_cmd, height_err=height_err,
        vx=traj.vx, vx_cmd=traj.vx_cmd, vel_err=vel_err,
        torque_effort=torque_effort, adapt_norm=adapt_norm, grf_norm=grf_norm,
        payload=traj.payload, fall=traj.fallen, falls=falls, phases=phases,
        meta=dict(traj.meta))


_CSV_COLUMNS = ("time", "h", "h_cmd", "height_err", "vx", "vx_cmd", "vel_err",
                "torque_effort", "adapt_norm", "grf_norm", "payload", "fall")


def timeseries_csv(ts: MetricsTimeseries, extra_meta: dict | None = None) -> str:
    """Deterministic CSV text: '# key=value' meta lines, header, rows."""
    meta = dict(ts.meta)
    if extra_meta:
        meta.update(extra_meta)
    meta.setdefault("format", METRICS_FORMAT)
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
    lines.append(",".join(_CSV_COLUMNS))
    for i in range(len(ts)):
        cells = []
        for col in _CSV_COLUMNS:
            v = getattr(ts, col)[i]
            cells.append(str(int(v)) if col == "fall" else format(v, CSV_FLOAT_FMT))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def summary_json(ts: MetricsTimeseries, extra_meta: dict | None = None) -> str:
    meta = dict(ts.meta)
    if extra_meta:
        meta.update(extra_meta)
    return json.dumps({"format": METRICS_FORMAT, "meta": meta,
                       "falls": ts.falls, "phases": ts.phases},
                      indent=2) + "\n"


def plot_data(ts: MetricsTimeseries) -> dict:
    """JSON-ready series for redrawing the tracking/force figures."""
    out = {col: [float(v) for v in getattr(ts, col)] for col in _CSV_COLUMNS
           if col != "fall"}
    out["falls"] = ts.falls
    return out


def compare(ts_a: MetricsTimeseries, ts_b: MetricsTimeseries) -> dict:
    """Per-phase metric deltas (b minus a) plus both fall records."""
    for key in ("scenario", "seed"):
        if ts_a.meta.get(key) != ts_b.meta.get(key):
            raise MismatchedScenarios(
                f"{key} differs: {ts_a.meta.get(key)!r} vs {ts_b.meta.get(key)!r}")
    if len(ts_a.phases) != len(ts_b.phases):
        raise MismatchedScenarios("phase structure differs")
    phases = []
    for pa, pb in zip(ts_a.phases, ts_b.phases):
        row = {"phase": pa["phase"], "payload": pa["payload"],
               "start": pa["start"], "end": pa["end"]}
        for name in ("height_err", "vel_err", "torque_effort",
                     "adapt_norm", "grf_norm"):
            a, b = pa[f"mean_{name}"], pb[f"mean_{name}"]
            row[f"delta_mean_{name}"] = None if a is None or b is None else b - a
        phases.append(row)
    return {"scenario": ts_a.meta.get("scenario"), "seed": ts_a.meta.get("seed"),
            "controller_a": ts_a.meta.get("controller"),
            "controller_b": ts_b.meta.get("controller"),
            "phases": phases, "falls_a": ts_a.falls, "falls_b": ts_b.falls}


def compare_csv(report: dict) -> str:
    cols = None
    lines = []
    for row in report["phases"]:
        if cols is None:
            cols = list(row)
            lines.append(",".join(cols))
        lines.append(",".join(
            "" if row[c] is None
            else (format(row[c], CSV_FLOAT_FMT) if isinstance(row[c], float)
                  else str(row[c])) for c in cols))
    if cols is None:
        lines.append("phase,payload,start,end")
    return "\n".join(lines) + "\n"
