import { describe, expect, it } from "vitest";
import { RollingWindow } from "../src/ring.js";

describe("RollingWindow", () => {
  it("keeps only samples within the span of the newest time", () => {
    const w = new RollingWindow(30);
    for (let t = 0; t <= 100; t += 1) w.push(t, t * 2);
    expect(w.ts[0]).toBe(70);
    expect(w.ts[w.ts.length - 1]).toBe(100);
    expect(w.vs[0]).toBe(140);
    expect(w.length).toBe(31);
  });

  it("keeps everything while the span is not exceeded", () => {
    const w = new RollingWindow(30);
    for (let t = 0; t <= 10; t += 0.5) w.push(t, 1);
    expect(w.length).toBe(21);
  });

  it("clears on a time rewind instead of plotting backwards", () => {
    const w = new RollingWindow(30);
    w.push(10, 1);
    w.push(11, 2);
    w.push(0.5, 3); // simulation reset
    expect(w.ts).toEqual([0.5]);
    expect(w.vs).toEqual([3]);
  });

  it("replaces the sample on a repeated timestamp instead of growing", () => {
    const w = new RollingWindow(30);
    w.push(1, 5);
    for (let i = 0; i < 100; i += 1) w.push(2, i);
    expect(w.length).toBe(2);
    expect(w.latest()).toBe(99);
  });

  it("reports the latest value", () => {
    const w = new RollingWindow(30);
    expect(w.latest()).toBeNull();
    w.push(1, 7);
    w.push(2, 9);
    expect(w.latest()).toBe(9);
  });
});
