"""Live telemetry/command link between a running simulation and clients.

Transport is a WebSocket at /ws carrying newline-delimited JSON: the
server streams one TelemetryFrame object per control step and clients
send CommandMessage objects. Commands are queued and applied only at
control-tick boundaries, so no frame ever shows a half-applied command.
The stepper and the network side communicate exclusively through queues;
a slow client gets frames dropped from its own queue, never a stalled
simulation.

Operator payload edits pin the payload and disable the 4 s resampler,
mirroring trials where a human chooses when the mass changes.
"""

from __future__ import annotations

import asyncio
import json
import time as time_mod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evalharness, simcore
from .env import VecEnv
from .simcore import NonFiniteState, ProfileExhausted, TerrainProfile

DEFAULT_HEIGHT_CMD = 0.28
CLIENT_QUEUE_FRAMES = 64

COMMAND_KINDS = ("set_velocity", "set_height", "add_ball", "remove_ball",
                 "clear_payload", "switch_controller", "pause", "resume",
                 "reset")


class MalformedMessage(ValueError):
    """Raw client bytes that do not parse; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


def encode_frame(frame: dict) -> bytes:
    return (json.dumps(frame) + "\n").encode()


def decode_command(raw) -> dict:
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise MalformedMessage(f"bad JSON: {e.msg}", e.pos) from e
    if not isinstance(msg, dict) or "kind" not in msg:
        raise MalformedMessage("command must be an object with a 'kind'", 0)
    return msg


def _clamp(value, lo, hi):
    return float(min(max(float(value), lo), hi))


@dataclass(eq=False)
class _Client:
    queue: asyncio.Queue

    def push(self, data: bytes) -> None:
        # drop the oldest frame on backpressure; the sim never waits
        while True:
            try:
                self.queue.put_nowait(data)
                return
            except asyncio.QueueFull:
                try:
                    self.queue.get_nowait()
                except asyncio.QueueEmpty:
                    pass


class Session:
    """One live simulation plus its command/frame plumbing."""

    def __init__(self, bundles, run_cfg, scenario=None, seed: int = 0,
                 realtime_factor: float = 1.0, start_paused: bool = False):
        if not bundles:
            raise ValueError("need at least one policy bundle")
        self.bundles = list(bundles)
        self.active = 0
        self.cfg = run_cfg
        self.scenario = scenario
        self.realtime_factor = realtime_factor
        if scenario is not None:
            self.env = evalharness.scenario_env(scenario, seed,
                                                raw_masses=False)
        else:
            self.env = VecEnv(n_envs=1, seed=seed, noise=False,
                              episode_s=None, auto_reset=False)
            self.env.set_commands(0.0, DEFAULT_HEIGHT_CMD)
        self.obs = self.env.last_obs
        self.seq = 0
        self.paused = start_paused
        self.stopping = False
        self.commands: asyncio.Queue = asyncio.Queue()
        self.clients: set[_Client] = set()
        self.last_frame: dict | None = None
        self.steps = 0

    # --- command handling (tick boundary only) ---------------------------

    def _apply(self, msg: dict) -> dict:
        kind = msg.get("kind")
        rid = msg.get("request_id")
        env = self.env
        try:
            if kind == "set_velocity":
                vx = _clamp(msg["vx"], *self.cfg.obs.vx_range)
                env.set_commands(vx, float(env.h_cmd[0]))
                return {"ack": kind, "request_id": rid, "applied": {"vx": vx}}
            if kind == "set_height":
                h = _clamp(msg["h"], *self.cfg.obs.h_range)
                env.set_commands(float(env.vx_cmd[0]), h)
                return {"ack": kind, "request_id": rid, "applied": {"h": h}}
            if kind == "add_ball":
                slot = int(msg["slot"])
                if not 0 <= slot < len(env.model.ball_slots):
                    return {"error": "bad_slot", "request_id": rid}
                mass = max(float(msg["mass"]), 0.0)
                balls = env.balls[0].copy()
                balls[slot] = mass
                env.set_payload(float(env.tray[0]), balls)
                return {"ack": kind, "request_id": rid,
                        "applied": {"slot": slot, "mass": mass}}
            if kind == "remove_ball":
                slot = int(msg["slot"])
                if not 0 <= slot < len(env.model.ball_slots):
                    return {"error": "bad_slot", "request_id": rid}
                balls = env.balls[0].copy()
                balls[slot] = 0.0
                env.set_payload(float(env.tray[0]), balls)
                return {"ack": kind, "request_id": rid,
                        "applied": {"slot": slot}}
            if kind == "clear_payload":
                env.set_payload(0.0, np.zeros(len(env.model.ball_slots)))
                return {"ack": kind, "request_id": rid, "applied": {}}
            if kind == "switch_controller":
                label = msg["label"]
                for i, (name, _) in enumerate(self.bundles):
                    if name == label:
                        self.active = i
                        return {"ack": kind, "request_id": rid,
                                "applied": {"label": label}}
                return {"error": "unknown_controller", "request_id": rid,
                        "known": [name for name, _ in self.bundles]}
            if kind == "pause":
                self.paused = True
                return {"ack": kind, "request_id": rid, "applied": {}}
            if kind == "resume":
                self.paused = False
                return {"ack": kind, "request_id": rid, "applied": {}}
            if kind == "reset":
                if msg.get("terrain") is not None:
                    try:
                        profile = TerrainProfile(**msg["terrain"])
                    except (TypeError, ValueError) as e:
                        return {"error": "bad_terrain", "request_id": rid,
                                "detail": str(e)}
                    env.profiles[0] = profile
                    env.ts.set_row(0, profile)
                self.obs = env.reset()
                return {"ack": kind, "request_id": rid, "applied": {}}
        except (KeyError, TypeError, ValueError) as e:
            return {"error": "bad_arguments", "request_id": rid,
                    "detail": str(e)}
        return {"error": "unknown_kind", "request_id": rid}

    # --- stepping ---------------------------------------------------------

    def step_once(self) -> dict:
        """One control tick under the active bundle; returns the frame."""
        _, bundle = self.bundles[self.active]
        obs = self.obs
        v_hat, z = bundle.cenet.eval_np(obs.history)
        a = bundle.policy.mean_np(
            np.concatenate([obs.obs, z, v_hat], axis=1)).astype(float)
        d = None
        if bundle.phase == "phase2" and bundle.adaptive_policy is not None:
            d = bundle.adaptive_policy.mean_np(
                np.concatenate([obs.augmented, z, v_hat], axis=1)).astype(float)
        event = None
        try:
            res = self.env.step(a, d)
        except NonFiniteState:
            self.obs = self.env.reset()
            return self._frame(event="nonfinite_reset")
        except ProfileExhausted:
            self.paused = True
            return self._frame(event="scenario_end")
        self.obs = res.obs
        self.steps += 1
        if res.fallen[0]:
            event = "fall_reset"
            self.obs = self.env.reset()
        return self._frame(res=res, delta=d, event=event)

    def _frame(self, res=None, delta=None, event=None) -> dict:
        env = self.env
        q = env.q[0]
        pos, _, _ = simcore._body_kinematics(env.model, env.q, env.qd,
                                             env.comp_com)
        feet = pos[0, (2, 4)]
        terrain = env.profiles[0]
        frame = {
            "type": "frame",
            "seq": self.seq,
            "t": env.time,
            "paused": self.paused,
            "base": {"x": q[0], "z": q[1], "pitch": q[2]},
            "theta": list(q[3:7]),
            "feet": [list(feet[0]), list(feet[1])],
            "vx_cmd": float(env.vx_cmd[0]),
            "h_cmd": float(env.h_cmd[0]),
            "payload": {"tray": float(env.tray[0]),
                        "balls": list(env.balls[0]),
                        "total": float(env.tray[0] + env.balls[0].sum())},
            "controller": self.bundles[self.active][0],
            "terrain": {"kind": terrain.kind,
                        "slope_angle": terrain.slope_angle,
                        "step_rise": terrain.step_rise,
                        "step_run": terrain.step_run,
                        "origin_x": terrain.origin_x},
        }
        if res is not None:
            t = res.transition
            frame.update({
                "vx": t.vx[0],
                "h": t.height[0],
                "contact": [bool(c) for c in t.foot_contact[0]],
                "grf": [list(f) for f in res.obs.grf[0]],
                "est_forces": [list(f) for f in res.obs.est_forces[0]],
                "torques": list(t.torques[0]),
                "adapt_norm": 0.0 if delta is None
                else float(np.linalg.norm(delta[0])),
                "rewards": {k: float(v[0]) for k, v in res.nominal.weighted.items()},
                "reward_nominal": float(res.reward_nominal[0]),
                "reward_adaptive": float(res.reward_adaptive[0]),
            })
        if event is not None:
            frame["event"] = event
        self.seq += 1
        return frame

    def _broadcast(self, frame: dict) -> None:
        self.last_frame = frame
        data = encode_frame(frame)
        for client in self.clients:
            client.push(data)

    def _reply(self, client: _Client, payload: dict) -> None:
        client.push((json.dumps(payload) + "\n").encode())

    async def run(self) -> None:
        """Paced stepper: drain commands, step, broadcast, sleep."""
        heartbeat_s = self.cfg.bridge.heartbeat_s
        dt = self.env.cfg.dt_control
        last_emit = time_mod.monotonic()
        next_tick = time_mod.monotonic()
        while not self.stopping:
            # commands land between control steps, never inside one
            while True:
                try:
                    client, msg = self.commands.get_nowait()
                except asyncio.QueueEmpty:
                    break
                self._reply(client, self._apply(msg))
            if self.paused:
                now = time_mod.monotonic()
                if now - last_emit >= heartbeat_s:
                    self._broadcast(self._frame())
                    last_emit = now
                next_tick = now
                await asyncio.sleep(min(heartbeat_s / 4, 0.05))
                continue
            self._broadcast(self.step_once())
            last_emit = time_mod.monotonic()
            if self.realtime_factor > 0:
                next_tick += dt / self.realtime_factor
                delay = next_tick - time_mod.monotonic()
                await asyncio.sleep(delay if delay > 0 else 0)
                if delay <= 0:
                    next_tick = time_mod.monotonic()
            else:
                await asyncio.sleep(0)

    def stop(self) -> None:
        self.stopping = True


async def _client_sender(ws, client: _Client) -> None:
    from websockets.exceptions import ConnectionClosed

    try:
        while True:
            data = await client.queue.get()
            await ws.send(data)
    except ConnectionClosed:
        pass


def _make_handler(session: Session):
    async def handler(ws):
        if ws.request.path not in ("/ws", "/"):
            await ws.close(code=1008, reason="unknown path")
            return
        client = _Client(asyncio.Queue(maxsize=CLIENT_QUEUE_FRAMES))
        session.clients.add(client)
        if session.last_frame is not None:
            client.push(encode_frame(session.last_frame))
        sender = asyncio.create_task(_client_sender(ws, client))
        try:
            async for raw in ws:
                try:
                    msg = decode_command(raw)
                except MalformedMessage as e:
                    session._reply(client, {"error": "malformed",
                                            "offset": e.offset,
                                            "detail": str(e)})
                    continue
                await session.commands.put((client, msg))
        finally:
            session.clients.discard(client)
            sender.cancel()
    return handler


def _static_responder(static_dir: Path):
    """Plain HTTP for the console assets on non-WebSocket requests."""
    types = {".html": "text/html", ".js": "text/javascript",
             ".css": "text/css", ".map": "application/json",
             ".svg": "image/svg+xml"}

    def respond(connection, request):
        if "upgrade" in request.headers.get("Connection", "").lower():
            return None
        name = request.path.lstrip("/") or "index.html"
        target = (static_dir / name).resolve()
        if static_dir.resolve() not in target.parents and target != static_dir.resolve():
            return connection.respond(404, "not found\n")
        if not target.is_file():
            return connection.respond(404, "not found\n")
        response = connection.respond(200, "")
        response.body = target.read_bytes()
        ctype = types.get(target.suffix, "application/octet-stream")
        # Headers is a multidict: drop the entries respond() added for the
        # empty placeholder body or clients see two Content-Lengths.
        for key in ("Content-Type", "Content-Length"):
            if key in response.headers:
                del response.headers[key]
        response.headers["Content-Type"] = ctype
        response.headers["Content-Length"] = str(len(response.body))
        return response

    return respond


async def serve_async(bundles, run_cfg, host: str, port: int,
                      realtime_factor: float, scenario=None, seed: int = 0,
                      static_dir=None, start_paused: bool = False):
    """Bind the server and return (server, session, stepper_task)."""
    from websockets.asyncio.server import serve as ws_serve

    session = Session(bundles, run_cfg, scenario=scenario, seed=seed,
                      realtime_factor=realtime_factor,
                      start_paused=start_paused)
    responder = None
    if static_dir is not None and Path(static_dir).is_dir():
        responder = _static_responder(Path(static_dir))
    server = await ws_serve(_make_handler(session), host, port,
                            process_request=responder)
    stepper = asyncio.create_task(session.run())
    return server, session, stepper


def serve(bundles, run_cfg, host: str, port: int, realtime_factor: float,
          scenario=None, seed: int = 0, static_dir=None) -> None:
    """Blocking entry point used by the command line; runs until Ctrl-C."""

    async def main():
        server, session, stepper = await serve_async(
            bundles, run_cfg, host, port, realtime_factor,
            scenario=scenario, seed=seed, static_dir=static_dir)
        print(f"serving ws://{host}:{port}/ws "
              f"(controller {bundles[0][0]}, x{realtime_factor} real time)")
        try:
            await stepper
        finally:
            server.close()
            await server.wait_closed()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
