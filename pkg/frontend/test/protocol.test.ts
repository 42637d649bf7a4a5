import { describe, expect, it } from "vitest";
import {
  netGrfNorm,
  parseServerLine,
  validateFrame,
} from "../src/protocol.js";

function goodFrame(): Record<string, unknown> {
  return {
    type: "frame",
    seq: 42,
    t: 1.25,
    paused: false,
    base: { x: 0.6, z: 0.27, pitch: 0.01 },
    theta: [0.4, -0.9, 0.35, -0.8],
    feet: [
      [0.75, 0.0],
      [0.42, 0.01],
    ],
    vx_cmd: 0.5,
    h_cmd: 0.28,
    payload: { tray: 0.0, balls: [1.0, 0.0, 0.0, 2.0], total: 3.0 },
    controller: "adaptive",
    terrain: {
      kind: "flat",
      slope_angle: 0.0,
      step_rise: 0.0,
      step_run: 0.0,
      origin_x: 0.0,
    },
    vx: 0.48,
    h: 0.265,
    contact: [true, false],
    grf: [
      [1.2, 140.0],
      [0.0, 0.0],
    ],
    est_forces: [
      [1.1, 138.0],
      [0.0, 0.0],
    ],
    torques: [3.0, -5.0, 2.5, -4.0],
    adapt_norm: 0.31,
    rewards: { lin_vel: 0.8, height: 0.6 },
    reward_nominal: 1.9,
    reward_adaptive: 2.4,
  };
}

describe("validateFrame", () => {
  it("accepts a complete stepped frame", () => {
    const out = validateFrame(goodFrame());
    expect(out.ok).toBe(true);
    if (out.ok) {
      expect(out.frame.seq).toBe(42);
      expect(out.frame.controller).toBe("adaptive");
    }
  });

  it("accepts a paused heartbeat without stepped fields", () => {
    const f = goodFrame();
    for (const key of [
      "vx",
      "h",
      "contact",
      "grf",
      "est_forces",
      "torques",
      "adapt_norm",
      "rewards",
      "reward_nominal",
      "reward_adaptive",
    ]) {
      delete f[key];
    }
    f.paused = true;
    expect(validateFrame(f).ok).toBe(true);
  });

  it("accepts a frame carrying a fall event", () => {
    const f = goodFrame();
    f.event = "fall_reset";
    expect(validateFrame(f).ok).toBe(true);
  });

  it("rejects an unknown event", () => {
    const f = goodFrame();
    f.event = "explosion";
    const out = validateFrame(f);
    expect(out.ok).toBe(false);
    if (!out.ok) expect(out.errors.join(" ")).toContain("event");
  });

  it("rejects missing base fields", () => {
    const f = goodFrame();
    f.base = { x: 0.6, z: 0.27 };
    expect(validateFrame(f).ok).toBe(false);
  });

  it("rejects wrong theta arity", () => {
    const f = goodFrame();
    f.theta = [0.4, -0.9];
    expect(validateFrame(f).ok).toBe(false);
  });

  it("rejects non-numeric command fields", () => {
    const f = goodFrame();
    f.vx_cmd = "0.5";
    expect(validateFrame(f).ok).toBe(false);
  });

  it("rejects a stepped frame missing its force arrays", () => {
    const f = goodFrame();
    delete f.grf;
    expect(validateFrame(f).ok).toBe(false);
  });

  it("rejects an unknown terrain kind", () => {
    const f = goodFrame();
    (f.terrain as Record<string, unknown>).kind = "lava";
    expect(validateFrame(f).ok).toBe(false);
  });
});

describe("parseServerLine", () => {
  it("classifies frames", () => {
    const msg = parseServerLine(JSON.stringify(goodFrame()));
    expect(msg.type).toBe("frame");
  });

  it("classifies acks with applied values", () => {
    const msg = parseServerLine(
      JSON.stringify({
        ack: "set_velocity",
        request_id: "req-1",
        applied: { vx: 0.5 },
      }),
    );
    expect(msg.type).toBe("ack");
    if (msg.type === "ack") expect(msg.reply.applied.vx).toBe(0.5);
  });

  it("classifies error replies and keeps the known list", () => {
    const msg = parseServerLine(
      JSON.stringify({
        error: "unknown_controller",
        request_id: "req-2",
        known: ["baseline", "adaptive"],
      }),
    );
    expect(msg.type).toBe("error");
    if (msg.type === "error") {
      expect(msg.reply.known).toEqual(["baseline", "adaptive"]);
    }
  });

  it("flags broken JSON as invalid", () => {
    expect(parseServerLine("{nope").type).toBe("invalid");
  });

  it("flags a frame with a bad payload as invalid", () => {
    const f = goodFrame();
    f.payload = { tray: "heavy" };
    expect(parseServerLine(JSON.stringify(f)).type).toBe("invalid");
  });

  it("flags an ack without applied as invalid", () => {
    expect(
      parseServerLine(JSON.stringify({ ack: "pause", request_id: "r" })).type,
    ).toBe("invalid");
  });
});

describe("netGrfNorm", () => {
  it("sums per-foot forces before taking the norm", () => {
    expect(
      netGrfNorm([
        [3.0, 0.0],
        [0.0, 4.0],
      ]),
    ).toBeCloseTo(5.0, 12);
  });

  it("is zero in flight", () => {
    expect(
      netGrfNorm([
        [0, 0],
        [0, 0],
      ]),
    ).toBe(0);
  });
});
