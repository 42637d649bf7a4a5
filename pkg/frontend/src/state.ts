/**
 * Console state: the single mutable record behind the UI.
 *
 * Everything plotted or displayed flows through `ingest`, which accepts
 * only schema-validated server messages; malformed input increments a
 * counter surfaced in the debug pane and touches nothing else. Pending
 * commands are tracked by request id and expire with a visible error
 * after two seconds without a reply.
 */
import {
  AckReply,
  ErrorReply,
  ServerMessage,
  TelemetryFrame,
  netGrfNorm,
} from "./protocol.js";
import { RollingWindow } from "./ring.js";

export const PENDING_TIMEOUT_MS = 2000;
export const EVENT_LOG_LIMIT = 8;

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface PendingCommand {
  kind: string;
  sentAtMs: number;
}

export interface LogEntry {
  t: number; // wall-clock ms when logged
  text: string;
  tone: "info" | "ok" | "error";
}

export class ConsoleState {
  status: ConnectionStatus = "connecting";
  latest: TelemetryFrame | null = null;
  framesSeen = 0;
  invalidSeen = 0;
  controllers: string[] = [];

  readonly windows = {
    h: new RollingWindow(),
    hCmd: new RollingWindow(),
    vx: new RollingWindow(),
    vxCmd: new RollingWindow(),
    adaptNorm: new RollingWindow(),
    grfNorm: new RollingWindow(),
    payload: new RollingWindow(),
  };

  readonly pending = new Map<string, PendingCommand>();
  readonly log: LogEntry[] = [];

  setStatus(status: ConnectionStatus, nowMs: number): void {
    if (status !== this.status) {
      this.status = status;
      this.addLog(nowMs, `connection ${status}`, status === "open" ? "ok" : "error");
    }
  }

  ingest(msg: ServerMessage, nowMs: number): void {
    switch (msg.type) {
      case "frame":
        this.ingestFrame(msg.frame, nowMs);
        return;
      case "ack":
        this.resolveAck(msg.reply, nowMs);
        return;
      case "error":
        this.resolveError(msg.reply, nowMs);
        return;
      case "invalid":
        this.invalidSeen += 1;
        return;
    }
  }

  private ingestFrame(frame: TelemetryFrame, nowMs: number): void {
    this.latest = frame;
    this.framesSeen += 1;
    if (!this.controllers.includes(frame.controller)) {
      this.controllers.push(frame.controller);
    }
    const w = this.windows;
    w.hCmd.push(frame.t, frame.h_cmd);
    w.vxCmd.push(frame.t, frame.vx_cmd);
    w.payload.push(frame.t, frame.payload.total);
    if (frame.vx !== undefined) {
      w.vx.push(frame.t, frame.vx);
      w.h.push(frame.t, frame.h!);
      w.adaptNorm.push(frame.t, frame.adapt_norm!);
      w.grfNorm.push(frame.t, netGrfNorm(frame.grf!));
    }
    if (frame.event !== undefined) {
      this.addLog(nowMs, `event: ${frame.event} (t=${frame.t.toFixed(2)} s)`, "error");
    }
  }

  /** Record a command awaiting its reply. */
  trackCommand(requestId: string, kind: string, nowMs: number): void {
    this.pending.set(requestId, { kind, sentAtMs: nowMs });
  }

  private takePending(requestId: unknown): PendingCommand | undefined {
    if (typeof requestId !== "string") return undefined;
    const entry = this.pending.get(requestId);
    if (entry !== undefined) this.pending.delete(requestId);
    return entry;
  }

  /** Known controller labels, merged from every source that names them. */
  mergeControllers(labels: string[]): void {
    for (const label of labels) {
      if (!this.controllers.includes(label)) this.controllers.push(label);
    }
  }

  private resolveAck(reply: AckReply, nowMs: number): void {
    this.takePending(reply.request_id);
    const applied = Object.entries(reply.applied)
      .map(([k, v]) => `${k}=${typeof v === "number" ? formatNum(v) : String(v)}`)
      .join(", ");
    this.addLog(nowMs, `${reply.ack}: applied ${applied || "(no change)"}`, "ok");
  }

  private resolveError(reply: ErrorReply, nowMs: number): void {
    const entry = this.takePending(reply.request_id);
    if (Array.isArray(reply.known)) {
      this.mergeControllers(reply.known.filter((l) => typeof l === "string"));
      // A probe with an unknown label exists only to learn this list.
      if (entry !== undefined && entry.kind === "probe_controllers") return;
    }
    const what = entry !== undefined ? entry.kind : "command";
    const detail = reply.detail !== undefined ? ` (${reply.detail})` : "";
    this.addLog(nowMs, `${what} rejected: ${reply.error}${detail}`, "error");
  }

  /** Expire pending commands older than the reply deadline. */
  expirePending(nowMs: number): void {
    for (const [id, entry] of this.pending) {
      if (nowMs - entry.sentAtMs >= PENDING_TIMEOUT_MS) {
        this.pending.delete(id);
        this.addLog(nowMs, `${entry.kind}: no reply within 2 s`, "error");
      }
    }
  }

  addLog(t: number, text: string, tone: LogEntry["tone"]): void {
    this.log.push({ t, text, tone });
    if (this.log.length > EVENT_LOG_LIMIT) {
      this.log.splice(0, this.log.length - EVENT_LOG_LIMIT);
    }
  }
}

function formatNum(v: number): string {
  return Math.abs(v) >= 100 ? v.toFixed(0) : v.toPrecision(3);
}
