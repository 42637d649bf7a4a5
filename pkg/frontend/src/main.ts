/**
 * Console entry point: wires the socket, state, renderers, and controls.
 *
 * One event loop: socket callbacks mutate state; a requestAnimationFrame
 * loop draws the latest state (never a backlog — frames that arrive
 * faster than the display are simply superseded).
 */
import { buildControls } from "./controls.js";
import { renderChart, Trace } from "./plots.js";
import { Command, parseServerLine } from "./protocol.js";
import { renderRobot } from "./robot.js";
import { LineSocket } from "./socket.js";
import { ConsoleState } from "./state.js";

const state = new ConsoleState();
let requestCounter = 0;

const proto = location.protocol === "https:" ? "wss" : "ws";
const socket = new LineSocket(`${proto}://${location.host}/ws`, {
  onLine: (line) => state.ingest(parseServerLine(line), Date.now()),
  onStatus: (status) => {
    state.setStatus(status, Date.now());
    if (status === "open") probeControllers();
  },
});

function send(cmd: Command): void {
  const requestId = `req-${(requestCounter += 1)}`;
  if (socket.send({ ...cmd, request_id: requestId })) {
    state.trackCommand(requestId, cmd.kind, Date.now());
  } else {
    state.addLog(Date.now(), `${cmd.kind}: not connected`, "error");
  }
}

/**
 * Learn the available controller labels: a switch to an empty label is
 * always rejected, and the rejection carries the full list.
 */
function probeControllers(): void {
  const requestId = `req-${(requestCounter += 1)}`;
  if (socket.send({ kind: "switch_controller", label: "", request_id: requestId })) {
    state.trackCommand(requestId, "probe_controllers", Date.now());
  }
}

// --- DOM ---------------------------------------------------------------
const robotCanvas = document.getElementById("robot") as HTMLCanvasElement;
const controls = buildControls(
  document.getElementById("controls") as HTMLElement,
  send,
);

interface Chart {
  canvas: HTMLCanvasElement;
  title: string;
  traces: Trace[];
  floorAtZero: boolean;
}

const charts: Chart[] = [
  {
    canvas: document.getElementById("chart-h") as HTMLCanvasElement,
    title: "height (m)",
    floorAtZero: false,
    traces: [
      { label: "h", color: "#58a6ff", window: state.windows.h },
      { label: "cmd", color: "#d29922", window: state.windows.hCmd, dashed: true },
    ],
  },
  {
    canvas: document.getElementById("chart-vx") as HTMLCanvasElement,
    title: "velocity (m/s)",
    floorAtZero: false,
    traces: [
      { label: "vx", color: "#58a6ff", window: state.windows.vx },
      { label: "cmd", color: "#d29922", window: state.windows.vxCmd, dashed: true },
    ],
  },
  {
    canvas: document.getElementById("chart-adapt") as HTMLCanvasElement,
    title: "corrective action ‖Δa‖ (rad)",
    floorAtZero: true,
    traces: [{ label: "", color: "#bc8cff", window: state.windows.adaptNorm }],
  },
  {
    canvas: document.getElementById("chart-grf") as HTMLCanvasElement,
    title: "net GRF (N)",
    floorAtZero: true,
    traces: [{ label: "", color: "#3fb950", window: state.windows.grfNorm }],
  },
  {
    canvas: document.getElementById("chart-payload") as HTMLCanvasElement,
    title: "payload (kg)",
    floorAtZero: true,
    traces: [{ label: "", color: "#d29922", window: state.windows.payload }],
  },
];

function fitCanvas(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth;
  const h = canvas.clientHeight;
  if (canvas.width !== w * dpr || canvas.height !== h * dpr) {
    canvas.width = w * dpr;
    canvas.height = h * dpr;
  }
  const ctx = canvas.getContext("2d")!;
  ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
  return ctx;
}

function draw(): void {
  if (state.latest !== null) {
    const ctx = fitCanvas(robotCanvas);
    renderRobot(ctx, state.latest, robotCanvas.clientWidth, robotCanvas.clientHeight);
  }
  for (const chart of charts) {
    const ctx = fitCanvas(chart.canvas);
    renderChart(
      ctx,
      chart.canvas.clientWidth,
      chart.canvas.clientHeight,
      chart.title,
      chart.traces,
      { floorAtZero: chart.floorAtZero },
    );
  }
  controls.update(state);
  requestAnimationFrame(draw);
}

setInterval(() => state.expirePending(Date.now()), 250);
socket.connect();
requestAnimationFrame(draw);
