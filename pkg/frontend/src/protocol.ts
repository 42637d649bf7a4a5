/**
 * Wire types for the bridge WebSocket (newline-delimited JSON) and
 * hand-rolled validators for them.
 *
 * The console renders nothing it has not validated: a frame that fails
 * `validateFrame` is counted in the debug pane and dropped, never plotted.
 */

export interface TerrainInfo {
  kind: "flat" | "slope" | "stairs";
  slope_angle: number;
  step_rise: number;
  step_run: number;
  origin_x: number;
}

export interface TelemetryFrame {
  type: "frame";
  seq: number;
  t: number;
  paused: boolean;
  base: { x: number; z: number; pitch: number };
  theta: number[]; // [hip_front, knee_front, hip_rear, knee_rear], rad
  feet: [number, number][]; // world (x, z) per foot, front then rear
  vx_cmd: number;
  h_cmd: number;
  payload: { tray: number; balls: number[]; total: number };
  controller: string;
  terrain: TerrainInfo;
  // Present only on frames produced by a simulation step (absent on
  // heartbeats sent while paused):
  vx?: number;
  h?: number;
  contact?: boolean[];
  grf?: [number, number][];
  est_forces?: [number, number][];
  torques?: number[];
  adapt_norm?: number;
  rewards?: Record<string, number>;
  reward_nominal?: number;
  reward_adaptive?: number;
  event?: "fall_reset" | "scenario_end" | "nonfinite_reset";
}

export type Command =
  | { kind: "set_velocity"; vx: number }
  | { kind: "set_height"; h: number }
  | { kind: "add_ball"; slot: number; mass: number }
  | { kind: "remove_ball"; slot: number }
  | { kind: "clear_payload" }
  | { kind: "switch_controller"; label: string }
  | { kind: "pause" }
  | { kind: "resume" }
  | { kind: "reset"; terrain?: Partial<TerrainInfo> };

export interface AckReply {
  ack: string;
  request_id?: string | number | null;
  applied: Record<string, unknown>;
}

export interface ErrorReply {
  error: string;
  request_id?: string | number | null;
  detail?: string;
  known?: string[];
  offset?: number;
}

export type ServerMessage =
  | { type: "frame"; frame: TelemetryFrame }
  | { type: "ack"; reply: AckReply }
  | { type: "error"; reply: ErrorReply }
  | { type: "invalid"; errors: string[] };

const TERRAIN_KINDS = new Set(["flat", "slope", "stairs"]);
const EVENTS = new Set(["fall_reset", "scenario_end", "nonfinite_reset"]);

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isNumArray(v: unknown, n?: number): v is number[] {
  return (
    Array.isArray(v) &&
    (n === undefined || v.length === n) &&
    v.every(isNum)
  );
}

function isPairArray(v: unknown, n: number): v is [number, number][] {
  return (
    Array.isArray(v) &&
    v.length === n &&
    v.every((p) => isNumArray(p, 2))
  );
}

function isBoolArray(v: unknown, n: number): v is boolean[] {
  return (
    Array.isArray(v) && v.length === n && v.every((b) => typeof b === "boolean")
  );
}

function checkTerrain(v: unknown, errors: string[]): void {
  if (typeof v !== "object" || v === null) {
    errors.push("terrain: not an object");
    return;
  }
  const t = v as Record<string, unknown>;
  if (typeof t.kind !== "string" || !TERRAIN_KINDS.has(t.kind)) {
    errors.push(`terrain.kind: ${String(t.kind)}`);
  }
  for (const key of ["slope_angle", "step_rise", "step_run", "origin_x"]) {
    if (!isNum(t[key])) errors.push(`terrain.${key}: not a number`);
  }
}

/**
 * Validate one decoded JSON value as a TelemetryFrame. Returns the typed
 * frame, or the list of violations when anything required is missing or
 * has the wrong shape.
 */
export function validateFrame(
  value: unknown,
): { ok: true; frame: TelemetryFrame } | { ok: false; errors: string[] } {
  const errors: string[] = [];
  if (typeof value !== "object" || value === null) {
    return { ok: false, errors: ["frame: not an object"] };
  }
  const f = value as Record<string, unknown>;
  if (f.type !== "frame") errors.push("type: not 'frame'");
  if (!isNum(f.seq)) errors.push("seq: not a number");
  if (!isNum(f.t)) errors.push("t: not a number");
  if (typeof f.paused !== "boolean") errors.push("paused: not a boolean");

  const base = f.base as Record<string, unknown> | undefined;
  if (
    typeof base !== "object" ||
    base === null ||
    !isNum(base.x) ||
    !isNum(base.z) ||
    !isNum(base.pitch)
  ) {
    errors.push("base: expected {x, z, pitch} numbers");
  }
  if (!isNumArray(f.theta, 4)) errors.push("theta: expected 4 numbers");
  if (!isPairArray(f.feet, 2)) errors.push("feet: expected 2 (x, z) pairs");
  if (!isNum(f.vx_cmd)) errors.push("vx_cmd: not a number");
  if (!isNum(f.h_cmd)) errors.push("h_cmd: not a number");

  const pay = f.payload as Record<string, unknown> | undefined;
  if (
    typeof pay !== "object" ||
    pay === null ||
    !isNum(pay.tray) ||
    !isNumArray(pay.balls) ||
    !isNum(pay.total)
  ) {
    errors.push("payload: expected {tray, balls[], total}");
  }
  if (typeof f.controller !== "string") errors.push("controller: not a string");
  checkTerrain(f.terrain, errors);

  const stepped = f.vx !== undefined;
  if (stepped) {
    if (!isNum(f.vx)) errors.push("vx: not a number");
    if (!isNum(f.h)) errors.push("h: not a number");
    if (!isBoolArray(f.contact, 2)) errors.push("contact: expected 2 booleans");
    if (!isPairArray(f.grf, 2)) errors.push("grf: expected 2 (x, z) pairs");
    if (!isPairArray(f.est_forces, 2)) {
      errors.push("est_forces: expected 2 (x, z) pairs");
    }
    if (!isNumArray(f.torques, 4)) errors.push("torques: expected 4 numbers");
    if (!isNum(f.adapt_norm)) errors.push("adapt_norm: not a number");
    if (!isNum(f.reward_nominal)) errors.push("reward_nominal: not a number");
    if (!isNum(f.reward_adaptive)) errors.push("reward_adaptive: not a number");
    const rw = f.rewards;
    if (
      typeof rw !== "object" ||
      rw === null ||
      !Object.values(rw).every(isNum)
    ) {
      errors.push("rewards: expected string->number map");
    }
  }
  if (f.event !== undefined && !EVENTS.has(f.event as string)) {
    errors.push(`event: ${String(f.event)}`);
  }
  if (errors.length > 0) return { ok: false, errors };
  return { ok: true, frame: value as unknown as TelemetryFrame };
}

/**
 * Classify one NDJSON line from the server. Frames are validated before
 * they are surfaced; acks and error replies pass through with a shape
 * check only.
 */
export function parseServerLine(line: string): ServerMessage {
  let value: unknown;
  try {
    value = JSON.parse(line);
  } catch {
    return { type: "invalid", errors: ["bad JSON"] };
  }
  if (typeof value !== "object" || value === null) {
    return { type: "invalid", errors: ["not an object"] };
  }
  const msg = value as Record<string, unknown>;
  if (msg.type === "frame") {
    const checked = validateFrame(msg);
    if (checked.ok) return { type: "frame", frame: checked.frame };
    return { type: "invalid", errors: checked.errors };
  }
  if (typeof msg.ack === "string") {
    const applied = msg.applied;
    if (typeof applied !== "object" || applied === null) {
      return { type: "invalid", errors: ["ack without applied object"] };
    }
    return { type: "ack", reply: msg as unknown as AckReply };
  }
  if (typeof msg.error === "string") {
    return { type: "error", reply: msg as unknown as ErrorReply };
  }
  return { type: "invalid", errors: ["unrecognized message"] };
}

/** Net ground reaction force magnitude — the quantity plotted per frame. */
export function netGrfNorm(grf: [number, number][]): number {
  let fx = 0;
  let fz = 0;
  for (const [x, z] of grf) {
    fx += x;
    fz += z;
  }
  return Math.hypot(fx, fz);
}
