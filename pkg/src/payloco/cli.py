"""Command line entry point: train, evaluate, serve, and inspect runs.

Every artifact written here embeds the config hash and the seed, so runs
are diffable and byte-reproducible. Failures map to a fixed exit-code
table for scripting:

    2  config error
    3  checkpoint mismatch or missing
    4  training diverged
    5  scenario error
    6  bridge bind failure
    7  corrupt checkpoint
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint, config, evalharness, rl

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4
EXIT_SCENARIO = 5
EXIT_BIND = 6
EXIT_CORRUPT = 7


class CommandError(Exception):
    """Carries the exit code for a user-facing failure."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="payloco",
                                description="payload-adaptive planar "
                                            "quadruped: train / eval / serve")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training phase")
    t.add_argument("--phase", required=True, choices=["1", "2", "baseline"])
    t.add_argument("--config", help="JSON config; defaults used when omitted")
    t.add_argument("--resume", help="phase-1 checkpoint to grow phase 2 from")
    t.add_argument("--seed", type=int, help="overrides rl.seed")
    t.add_argument("--out", default="runs/train", help="artifact directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a scenario")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scenario", help="builtin name or JSON file")
    e.add_argument("--controller-label", default="")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--compare", help="second checkpoint for an A/B report")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="host a live simulation for the console")
    s.add_argument("--ckpt", required=True, nargs="+",
                   help="checkpoints to serve; first one starts active")
    s.add_argument("--port", type=int)
    s.add_argument("--host")
    s.add_argument("--realtime-factor", type=float,
                   help="pace relative to real time; 0 = fast as possible")
    s.add_argument("--scenario", help="optional scripted scenario to follow")
    s.add_argument("--seed", type=int)
    s.add_argument("--static", help="directory of console assets to host")
    s.set_defaults(func=cmd_serve)

    i = sub.add_parser("inspect", help="print a checkpoint manifest")
    i.add_argument("--ckpt", required=True)
    i.set_defaults(func=cmd_inspect)

    x = sub.add_parser("export", help="write manifest + config JSON")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--out", default="runs/export")
    x.set_defaults(func=cmd_export)
    return p


def _load_run_config(path: str | None) -> config.RunConfig:
    if path is None:
        return config.RunConfig()
    try:
        return config.load_config(path)
    except config.ConfigError as e:
        raise CommandError(EXIT_CONFIG, str(e)) from e


def _load_ckpt(path: str):
    try:
        return checkpoint.load_bundle(path)
    except checkpoint.CorruptCheckpoint as e:
        raise CommandError(EXIT_CORRUPT, f"{path}: {e}") from e
    except checkpoint.CheckpointError as e:
        raise CommandError(EXIT_CHECKPOINT, f"{path}: {e}") from e
    except OSError as e:
        raise CommandError(EXIT_CHECKPOINT, str(e)) from e


# --- train ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    resume_bundle = None
    if args.phase == "2":
        if not args.resume:
            raise CommandError(EXIT_CHECKPOINT,
                               "phase 2 requires --resume with a phase-1 "
                               "checkpoint")
        resume_bundle, manifest = _load_ckpt(args.resume)
        if resume_bundle.phase != "phase1":
            raise CommandError(EXIT_CHECKPOINT,
                               f"--resume holds a {resume_bundle.phase} "
                               "checkpoint; phase 2 grows from phase1")
        if args.config is None:
            cfg = config.RunConfig.from_dict(manifest["config"])
    elif args.resume:
        raise CommandError(EXIT_CHECKPOINT,
                           "--resume only seeds phase 2")
    if args.seed is not None:
        cfg.rl.seed = args.seed

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = {"1": "phase1", "2": "phase2", "baseline": "baseline"}[args.phase]
    try:
        if tag == "phase1":
            bundle, metrics = rl.train_phase1(cfg.rl)
        elif tag == "phase2":
            bundle, metrics = rl.train_phase2(cfg.rl, resume_bundle)
        else:
            bundle, metrics = rl.train_baseline(cfg.rl)
    except rl.DivergedUpdate as e:
        raise CommandError(EXIT_DIVERGED, f"training diverged: {e}") from e

    meta = {"config_hash": config.config_hash(cfg), "seed": cfg.rl.seed,
            "phase": tag}
    ckpt_path = out / f"{tag}.ckpt"
    checkpoint.save_bundle(ckpt_path, bundle, cfg)
    rl.write_metrics_csv(metrics, out / f"{tag}_metrics.csv", meta=meta)
    config.save_config(cfg, out / "config.json")
    last = metrics[-1] if metrics else {}
    print(f"{tag}: {len(metrics)} iterations, "
          f"reward_nominal={last.get('reward_nominal', float('nan')):.4f}")
    print(f"wrote {ckpt_path}")
    return 0


# --- eval ----------------------------------------------------------------


def _resolve_scenario(name: str | None, default: str) -> evalharness.Scenario:
    key = name if name else default
    builtins = evalharness.builtin_scenarios()
    if key in builtins:
        return builtins[key]
    if Path(key).exists():
        try:
            return evalharness.load_scenario(key)
        except evalharness.ScenarioConfigError as e:
            raise CommandError(EXIT_SCENARIO, str(e)) from e
    raise CommandError(EXIT_SCENARIO,
                       f"unknown scenario {key!r}; builtins: "
                       + ", ".join(sorted(builtins)))


def cmd_eval(args) -> int:
    bundle, manifest = _load_ckpt(args.ckpt)
    cfg = config.RunConfig.from_dict(manifest["config"])
    scenario = _resolve_scenario(args.scenario, cfg.eval.scenario)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    label = args.controller_label or cfg.eval.controller_label or bundle.phase
    out = Path(args.out if args.out else cfg.eval.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ts = evalharness.run_scenario(bundle, scenario, seed,
                                  raw_masses=cfg.eval.raw_masses)
    meta = {"config_hash": manifest["config_hash"], "label": label}
    stem = f"{scenario.name}_{label}"
    (out / f"{stem}.csv").write_text(evalharness.timeseries_csv(ts, meta))
    (out / f"{stem}.json").write_text(evalharness.summary_json(ts, meta))
    print(f"wrote {out / (stem + '.csv')} ({len(ts)} steps, "
          f"{len(ts.falls)} falls)")

    if args.compare:
        other, other_manifest = _load_ckpt(args.compare)
        other_label = other.phase if other.phase != bundle.phase else "b"
        ts_b = evalharness.run_scenario(other, scenario, seed,
                                        raw_masses=cfg.eval.raw_masses)
        try:
            report = evalharness.compare(ts, ts_b)
        except evalharness.MismatchedScenarios as e:
            raise CommandError(EXIT_SCENARIO, str(e)) from e
        report["config_hash_a"] = manifest["config_hash"]
        report["config_hash_b"] = other_manifest["config_hash"]
        report["label_a"], report["label_b"] = label, other_label
        cmp_stem = f"{scenario.name}_compare"
        (out / f"{cmp_stem}.json").write_text(json.dumps(report, indent=2) + "\n")
        (out / f"{cmp_stem}.csv").write_text(evalharness.compare_csv(report))
        print(f"wrote {out / (cmp_stem + '.json')}")
    return 0


# --- serve ---------------------------------------------------------------


def cmd_serve(args) -> int:
    from . import bridge  # websockets import stays optional until used

    bundles = []
    cfg = None
    for path in args.ckpt:
        bundle, manifest = _load_ckpt(path)
        bundles.append((Path(path).stem, bundle))
        if cfg is None:
            cfg = config.RunConfig.from_dict(manifest["config"])
    scenario = None
    if args.scenario:
        scenario = _resolve_scenario(args.scenario, "")
    bcfg = cfg.bridge
    host = args.host if args.host else bcfg.host
    port = args.port if args.port is not None else bcfg.port
    factor = (args.realtime_factor if args.realtime_factor is not None
              else bcfg.realtime_factor)
    try:
        bridge.serve(bundles, cfg, host=host, port=port,
                     realtime_factor=factor, scenario=scenario,
                     seed=args.seed if args.seed is not None else 0,
                     static_dir=args.static)
    except OSError as e:
        raise CommandError(EXIT_BIND, f"cannot bind {host}:{port}: {e}") from e
    return 0


# --- inspect / export ----------------------------------------------------


def _read_manifest(path: str) -> dict:
    try:
        return checkpoint.read_manifest(path, verify=True)
    except checkpoint.CorruptCheckpoint as e:
        raise CommandError(EXIT_CORRUPT, f"{path}: {e}") from e
    except OSError as e:
        raise CommandError(EXIT_CHECKPOINT, str(e)) from e


def cmd_inspect(args) -> int:
    manifest = _read_manifest(args.ckpt)
    print(f"phase:       {manifest['phase']}")
    print(f"config hash: {manifest['config_hash']}")
    print(f"rng state:   {json.dumps(manifest['rng_state'], sort_keys=True)}")
    print(f"checksum:    ok ({manifest['blob_sha256'][:12]}...)")
    print("parameters:")
    for p in manifest["params"]:
        shape = "x".join(str(s) for s in p["shape"])
        print(f"  {p['name']:32s} {shape:>10s}")
    return 0


def cmd_export(args) -> int:
    manifest = _read_manifest(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(
        json.dumps(manifest["config"], indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'manifest.json'}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
