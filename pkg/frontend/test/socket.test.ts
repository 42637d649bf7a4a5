import { describe, expect, it } from "vitest";
import { backoffDelayMs, LineSocket, WebSocketLike } from "../src/socket.js";

class FakeSocket implements WebSocketLike {
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  readyState = 0;
  sent: string[] = [];

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.readyState = 3;
    this.onclose?.();
  }

  open(): void {
    this.readyState = 1;
    this.onopen?.();
  }

  receive(data: string): void {
    this.onmessage?.({ data });
  }
}

interface Harness {
  socket: LineSocket;
  fakes: FakeSocket[];
  lines: string[];
  statuses: string[];
  timers: { fn: () => void; ms: number }[];
  fireTimers(): void;
}

function makeHarness(): Harness {
  const fakes: FakeSocket[] = [];
  const lines: string[] = [];
  const statuses: string[] = [];
  const timers: { fn: () => void; ms: number }[] = [];
  const socket = new LineSocket(
    "ws://test/ws",
    {
      onLine: (line) => lines.push(line),
      onStatus: (status) => statuses.push(status),
    },
    {
      makeSocket: () => {
        const fake = new FakeSocket();
        fakes.push(fake);
        return fake;
      },
      setTimer: (fn, ms) => {
        timers.push({ fn, ms });
        return timers.length - 1;
      },
      clearTimer: () => undefined,
    },
  );
  return {
    socket,
    fakes,
    lines,
    statuses,
    timers,
    fireTimers() {
      const pending = timers.splice(0, timers.length);
      for (const timer of pending) timer.fn();
    },
  };
}

describe("backoffDelayMs", () => {
  it("doubles from the base and saturates at the cap", () => {
    const delays = [0, 1, 2, 3, 4, 5, 9].map((a) => backoffDelayMs(a));
    expect(delays).toEqual([500, 1000, 2000, 4000, 8000, 8000, 8000]);
  });
});

describe("LineSocket", () => {
  it("splits received data into NDJSON lines", () => {
    const h = makeHarness();
    h.socket.connect();
    h.fakes[0].open();
    h.fakes[0].receive('{"a":1}\n{"b":2}\n');
    expect(h.lines).toEqual(['{"a":1}', '{"b":2}']);
  });

  it("sends objects as newline-terminated JSON only while open", () => {
    const h = makeHarness();
    h.socket.connect();
    expect(h.socket.send({ kind: "pause" })).toBe(false);
    h.fakes[0].open();
    expect(h.socket.send({ kind: "pause", request_id: "r1" })).toBe(true);
    expect(h.fakes[0].sent).toEqual(['{"kind":"pause","request_id":"r1"}\n']);
  });

  it("reconnects with doubling delays and resets after a successful open", () => {
    const h = makeHarness();
    h.socket.connect();
    h.fakes[0].open();
    h.fakes[0].close();
    expect(h.timers[0].ms).toBe(500);
    h.fireTimers(); // attempt 2 connects...
    h.fakes[1].close(); // ...and fails before opening
    expect(h.timers[0].ms).toBe(1000);
    h.fireTimers();
    h.fakes[2].close();
    expect(h.timers[0].ms).toBe(2000);
    h.fireTimers();
    h.fakes[3].open(); // success resets the ladder
    h.fakes[3].close();
    expect(h.timers[0].ms).toBe(500);
    expect(h.statuses).toEqual([
      "connecting",
      "open",
      "closed",
      "connecting",
      "closed",
      "connecting",
      "closed",
      "connecting",
      "open",
      "closed",
    ]);
  });

  it("stops reconnecting once closed by the caller", () => {
    const h = makeHarness();
    h.socket.connect();
    h.fakes[0].open();
    h.socket.close();
    h.fireTimers();
    expect(h.fakes.length).toBe(1);
  });
});
