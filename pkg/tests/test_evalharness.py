import json

import numpy as np
import pytest

from payloco import config, nets, rl
from payloco import evalharness as ev
from payloco.simcore import RobotModel, TerrainProfile


def hold_bundle(phase="phase2", seed=7):
    """Bundle whose policies emit exactly zero, i.e. pure stand PD."""
    b = rl.make_bundle(config.RunConfig().rl, phase,
                       np.random.default_rng(np.random.SeedSequence(seed)))
    st = b.state()
    for name in list(st):
        if name.endswith("mean.w2") or name.endswith("mean.b2"):
            st[name] = np.zeros_like(st[name])
    nets.load_state(b.nets(), st)
    return b


def mini_scenario(**overrides):
    kw = dict(name="mini", terrain=TerrainProfile(), duration=2.0,
              commands=ev.Schedule([0.0], [(0.0, 0.28)]),
              payload=ev.Schedule([0.0, 0.3], [0.0, 0.4]))
    kw.update(overrides)
    return ev.Scenario(**kw)


# --- scenario data ------------------------------------------------------


def test_builtin_scenarios_catalog():
    scs = ev.builtin_scenarios()
    assert sorted(scs) == ["flat_steps", "progressive_load", "stairs_steps",
                           "static_disks"]
    assert len(scs["stairs_steps"].payload.values) == 6
    assert scs["stairs_steps"].terrain.kind == "stairs"
    assert scs["progressive_load"].payload.values[-1] == 10.0
    disks = scs["static_disks"].payload.values
    assert 3.0 in disks and 5.0 in disks and disks[0] == 0.0 and disks[-1] == 0.0
    for sc in scs.values():
        assert sc.payload.times[-1] < sc.duration


def test_payload_masses_scale_with_model_mass():
    # scheduled totals are reference-robot figures; applied mass keeps the
    # payload-to-body ratio by scaling with total_mass / 12
    assert ev.mass_scale() == RobotModel().total_mass / 12.0
    sched = ev.Schedule([0.0, 1.0], [0.0, 10.0])
    profile = ev._payload_profile(sched, 2.0, ev.mass_scale(), margin=1.0)
    tray, balls = profile.at(1.5)
    assert abs((tray + balls.sum()) - 10.0 * ev.mass_scale()) < 1e-12
    tray0, balls0 = profile.at(0.5)
    assert tray0 == 0.0 and np.all(balls0 == 0.0)


def test_scenario_json_round_trip(tmp_path):
    sc = ev.builtin_scenarios()["flat_steps"]
    d = sc.to_dict()
    sc2 = ev.Scenario.from_dict(d)
    assert sc2.to_dict() == d
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(d))
    assert ev.load_scenario(path).to_dict() == d


def test_scenario_validation():
    with pytest.raises(ev.ScenarioConfigError, match="start at t=0"):
        ev.Schedule([1.0], [0.0])
    with pytest.raises(ev.ScenarioConfigError, match="strictly increase"):
        ev.Schedule([0.0, 2.0, 2.0], [0.0, 1.0, 2.0])
    with pytest.raises(ev.ScenarioConfigError, match="equal-length"):
        ev.Schedule([0.0, 1.0], [0.0])
    with pytest.raises(ev.ScenarioConfigError, match="controller"):
        mini_scenario(controller="hybrid")
    with pytest.raises(ev.ScenarioConfigError, match="duration"):
        mini_scenario(duration=-1.0)
    with pytest.raises(ev.ScenarioConfigError, match="inside"):
        mini_scenario(payload=ev.Schedule([0.0, 2.0], [0.0, 1.0]))
    with pytest.raises(ev.ScenarioConfigError, match="pairs"):
        mini_scenario(commands=ev.Schedule([0.0], [0.3]))
    with pytest.raises(ev.ScenarioConfigError, match="non-negative"):
        mini_scenario(payload=ev.Schedule([0.0], [-1.0]))
    with pytest.raises(ev.ScenarioConfigError, match="malformed"):
        ev.Scenario.from_dict({"name": "x"})


def test_load_scenario_rejects_bad_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ev.ScenarioConfigError, match="JSON"):
        ev.load_scenario(path)
    with pytest.raises(ev.ScenarioConfigError, match="cannot read"):
        ev.load_scenario(tmp_path / "absent.json")


# --- rollouts -----------------------------------------------------------


def test_run_scenario_deterministic_and_seeded():
    b = hold_bundle()
    sc = mini_scenario()
    ts1 = ev.run_scenario(b, sc, seed=3)
    ts2 = ev.run_scenario(b, sc, seed=3)
    assert ev.timeseries_csv(ts1) == ev.timeseries_csv(ts2)
    ts3 = ev.run_scenario(b, sc, seed=4)
    assert ev.timeseries_csv(ts1) != ev.timeseries_csv(ts3)


def test_fall_halts_run_and_is_recorded():
    # the pure stand PD sags under gravity at the training gains, so this
    # rollout is guaranteed to end in a fall before the scenario ends
    ts = ev.run_scenario(hold_bundle(), mini_scenario(), seed=3)
    assert len(ts) < round(2.0 / 0.02)
    assert ts.falls == [{"step": len(ts) - 1, "time": ts.time[-1]}]
    assert ts.fall[-1] and not ts.fall[:-1].any()
    assert sum(p["falls"] for p in ts.phases) == 1


def test_scripted_payload_applies_at_exact_boundary():
    traj = ev.rollout_scenario(hold_bundle(), mini_scenario(), seed=3)
    # key at 0.3 s: the mass acts from the first step that ends after it
    flip = int(np.nonzero(np.diff(traj.payload))[0][0]) + 1
    assert flip == int(np.searchsorted(traj.time, 0.3, side="right"))
    assert np.all(traj.payload[:flip] == 0.0)
    assert abs(traj.payload[flip] - 0.4 * ev.mass_scale()) < 1e-12


def test_zero_duration_gives_empty_timeseries():
    ts = ev.run_scenario(hold_bundle(), mini_scenario(
        duration=0.0, payload=ev.Schedule([0.0], [0.0])), seed=0)
    assert len(ts) == 0 and ts.falls == [] and ts.phases == []
    csv = ev.timeseries_csv(ts)
    assert csv.splitlines()[-1].startswith("time,")


def test_phase1_bundle_warns():
    b = hold_bundle(phase="phase1")
    with pytest.warns(UserWarning, match="phase1"):
        ev.run_scenario(b, mini_scenario(duration=0.1,
                                         payload=ev.Schedule([0.0], [0.0])))


def test_baseline_and_zero_delta_adaptive_agree():
    sc = mini_scenario()
    ts_base = ev.run_scenario(hold_bundle(phase="baseline"), sc, seed=5)
    ts_adpt = ev.run_scenario(hold_bundle(phase="phase2"), sc, seed=5)
    assert np.array_equal(ts_base.h, ts_adpt.h)
    assert np.array_equal(ts_base.torque_effort, ts_adpt.torque_effort)
    assert np.all(ts_adpt.adapt_norm == 0.0)


# --- metrics as pure functions ------------------------------------------


def synthetic_trajectory(steps=100, seed=0, scenario=None):
    rng = np.random.default_rng(seed)
    sc = scenario if scenario is not None else mini_scenario()
    time = (np.arange(steps) + 1) * 0.02
    return ev.Trajectory(
        time=time,
        h=0.28 + 0.02 * rng.standard_normal(steps),
        h_cmd=np.full(steps, 0.28),
        vx=rng.standard_normal(steps) * 0.1,
        vx_cmd=np.zeros(steps),
        torques=rng.standard_normal((steps, 4)),
        delta=rng.standard_normal((steps, 4)) * 0.1,
        grf=rng.standard_normal((steps, 2, 2)) * 20,
        payload=np.repeat([0.0, 0.44], [15, steps - 15]),
        fallen=np.zeros(steps, dtype=bool),
        meta={"scenario": sc.name, "seed": 9, "controller": "phase2",
              "duration": sc.duration, "raw_masses": False}), sc


def test_phase_means_match_brute_force():
    traj, sc = synthetic_trajectory()
    ts = ev.compute_metrics(traj, sc)
    bounds = list(sc.payload.times) + [sc.duration]
    for i, phase in enumerate(ts.phases):
        mask = (traj.time > bounds[i]) & (traj.time <= bounds[i + 1])
        assert phase["steps"] == mask.sum()
        assert abs(phase["mean_height_err"]
                   - np.abs(traj.h - traj.h_cmd)[mask].mean()) <= 1e-12
        assert abs(phase["median_height_err"]
                   - np.median(np.abs(traj.h - traj.h_cmd)[mask])) <= 1e-12
        assert abs(phase["mean_torque_effort"]
                   - np.mean(np.abs(traj.torques), axis=1)[mask].mean()) <= 1e-12
        assert abs(phase["mean_grf_norm"]
                   - np.linalg.norm(traj.grf.sum(axis=1), axis=1)[mask].mean()) <= 1e-12
    assert sum(p["steps"] for p in ts.phases) == len(traj.time)


def test_metrics_recompute_from_saved_trajectory(tmp_path):
    traj, sc = synthetic_trajectory(seed=3)
    ts1 = ev.compute_metrics(traj, sc)
    path = tmp_path / "traj.npz"
    ev.save_trajectory(path, traj)
    ts2 = ev.compute_metrics(ev.load_trajectory(path), sc)
    for col in ("time", "h", "height_err", "vel_err", "torque_effort",
                "adapt_norm", "grf_norm", "payload"):
        assert np.array_equal(getattr(ts1, col), getattr(ts2, col))
    assert ts1.phases == ts2.phases and ts1.meta == ts2.meta
    assert ev.timeseries_csv(ts1) == ev.timeseries_csv(ts2)


def test_compare_reports_phase_deltas():
    traj_a, sc = synthetic_trajectory(seed=1)
    traj_b, _ = synthetic_trajectory(seed=2)
    traj_a.meta["controller"] = "baseline"
    ts_a, ts_b = ev.compute_metrics(traj_a, sc), ev.compute_metrics(traj_b, sc)
    report = ev.compare(ts_a, ts_b)
    assert report["controller_a"] == "baseline"
    assert len(report["phases"]) == len(ts_a.phases)
    for row, pa, pb in zip(report["phases"], ts_a.phases, ts_b.phases):
        for name in ("height_err", "vel_err", "torque_effort"):
            want = pb[f"mean_{name}"] - pa[f"mean_{name}"]
            assert abs(row[f"delta_mean_{name}"] - want) <= 1e-15
    assert report["falls_a"] == [] and report["falls_b"] == []
    csv = ev.compare_csv(report)
    assert csv.splitlines()[0].startswith("phase,")
    json.dumps(report)  # must be JSON-ready


def test_compare_rejects_mismatched_runs():
    traj_a, sc = synthetic_trajectory(seed=1)
    traj_b, _ = synthetic_trajectory(seed=2)
    traj_b.meta["seed"] = 11
    with pytest.raises(ev.MismatchedScenarios, match="seed"):
        ev.compare(ev.compute_metrics(traj_a, sc),
                   ev.compute_metrics(traj_b, sc))
    traj_b.meta["seed"] = 9
    traj_b.meta["scenario"] = "other"
    with pytest.raises(ev.MismatchedScenarios, match="scenario"):
        ev.compare(ev.compute_metrics(traj_a, sc),
                   ev.compute_metrics(traj_b, sc))


def test_plot_data_series():
    traj, sc = synthetic_trajectory()
    data = ev.plot_data(ev.compute_metrics(traj, sc))
    for key in ("time", "h", "h_cmd", "height_err", "adapt_norm",
                "grf_norm", "payload", "falls"):
        assert key in data
    assert len(data["h"]) == len(traj.time)
    json.dumps(data)


def test_summary_json_contents():
    traj, sc = synthetic_trajectory()
    doc = json.loads(ev.summary_json(ev.compute_metrics(traj, sc),
                                     extra_meta={"config_hash": "abc"}))
    assert doc["meta"]["config_hash"] == "abc"
    assert doc["meta"]["scenario"] == "mini"
    assert len(doc["phases"]) == 2
