/**
 * Reconnecting WebSocket carrying newline-delimited JSON.
 *
 * Reconnects with exponential backoff (0.5 s doubling to 8 s); the delay
 * resets once a connection opens. The WebSocket constructor and timer
 * functions are injectable so the policy is testable without a browser.
 */

export interface WebSocketLike {
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
  readyState: number;
}

export interface LineSocketHooks {
  onLine(line: string): void;
  onStatus(status: "connecting" | "open" | "closed"): void;
}

export interface LineSocketOptions {
  baseDelayMs?: number;
  maxDelayMs?: number;
  makeSocket?: (url: string) => WebSocketLike;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

const OPEN = 1;

export function backoffDelayMs(
  attempt: number,
  baseMs = 500,
  maxMs = 8000,
): number {
  return Math.min(maxMs, baseMs * 2 ** attempt);
}

export class LineSocket {
  private readonly url: string;
  private readonly hooks: LineSocketHooks;
  private readonly baseDelayMs: number;
  private readonly maxDelayMs: number;
  private readonly makeSocket: (url: string) => WebSocketLike;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  private ws: WebSocketLike | null = null;
  private attempt = 0;
  private timer: unknown = null;
  private stopped = false;

  constructor(url: string, hooks: LineSocketHooks, opts: LineSocketOptions = {}) {
    this.url = url;
    this.hooks = hooks;
    this.baseDelayMs = opts.baseDelayMs ?? 500;
    this.maxDelayMs = opts.maxDelayMs ?? 8000;
    this.makeSocket =
      opts.makeSocket ?? ((u) => new WebSocket(u) as unknown as WebSocketLike);
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  connect(): void {
    if (this.stopped) return;
    this.hooks.onStatus("connecting");
    const ws = this.makeSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.attempt = 0;
      this.hooks.onStatus("open");
    };
    ws.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      for (const line of ev.data.split("\n")) {
        if (line.length > 0) this.hooks.onLine(line);
      }
    };
    ws.onerror = () => {
      // close always follows; reconnect is scheduled there
    };
    ws.onclose = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.hooks.onStatus("closed");
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    if (this.stopped || this.timer !== null) return;
    const delay = backoffDelayMs(this.attempt, this.baseDelayMs, this.maxDelayMs);
    this.attempt += 1;
    this.timer = this.setTimer(() => {
      this.timer = null;
      this.connect();
    }, delay);
  }

  /** Send one JSON object as a line; false when not connected. */
  send(value: unknown): boolean {
    if (this.ws === null || this.ws.readyState !== OPEN) return false;
    this.ws.send(JSON.stringify(value) + "\n");
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
    if (this.ws !== null) this.ws.close();
  }
}
