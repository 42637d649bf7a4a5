/**
 * Side-view 2-D rendering of the live frame: terrain, trunk, leg linkage,
 * feet with contact highlights, and tray balls sized by mass.
 *
 * Geometry here is drawing-only. Link lengths, hip offsets, and tray
 * dimensions mirror the simulator's default model so the picture lines
 * up with the streamed positions, but every plotted coordinate (base,
 * feet) comes straight from the frame — the client runs no physics.
 */
import { TelemetryFrame, TerrainInfo } from "./protocol.js";

const L1 = 0.2; // thigh length, m (matches the default model)
const L2 = 0.2; // shank length, m
const HIP_OFFSETS = [0.18, -0.18]; // front, rear (m from base origin)
const BALL_SLOTS = [-0.1, -0.033, 0.033, 0.1]; // m along the tray
const TRAY_RISE = 0.06; // tray resting height above the base origin, m
const TRUNK_HALF_LEN = 0.24;
const TRUNK_HALF_HT = 0.045;

const PX_PER_M = 320;

/** Terrain surface height at x, straight from the frame's descriptor. */
export function groundHeight(terrain: TerrainInfo, x: number): number {
  const rel = x - terrain.origin_x;
  if (rel <= 0) return 0;
  if (terrain.kind === "slope") return rel * Math.tan(terrain.slope_angle);
  if (terrain.kind === "stairs") {
    return terrain.step_rise * Math.floor(rel / terrain.step_run);
  }
  return 0;
}

interface Camera {
  cx: number; // world x at canvas centre
  cz: number; // world z at canvas centre
  w: number;
  h: number;
}

function toPx(cam: Camera, x: number, z: number): [number, number] {
  return [
    cam.w / 2 + (x - cam.cx) * PX_PER_M,
    cam.h / 2 - (z - cam.cz) * PX_PER_M,
  ];
}

function drawTerrain(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  terrain: TerrainInfo,
): void {
  const xLeft = cam.cx - cam.w / (2 * PX_PER_M);
  const xRight = cam.cx + cam.w / (2 * PX_PER_M);
  ctx.beginPath();
  const n = 220;
  for (let i = 0; i <= n; i += 1) {
    const x = xLeft + ((xRight - xLeft) * i) / n;
    const [px, pz] = toPx(cam, x, groundHeight(terrain, x));
    if (i === 0) ctx.moveTo(px, pz);
    else ctx.lineTo(px, pz);
  }
  ctx.strokeStyle = "#8b949e";
  ctx.lineWidth = 2;
  ctx.stroke();
  // fill below the surface so steps read as solid
  ctx.lineTo(cam.w, cam.h + 2);
  ctx.lineTo(0, cam.h + 2);
  ctx.closePath();
  ctx.fillStyle = "rgba(139, 148, 158, 0.12)";
  ctx.fill();
}

function drawLeg(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  frame: TelemetryFrame,
  leg: 0 | 1,
): void {
  const { x, z, pitch } = frame.base;
  const d = HIP_OFFSETS[leg];
  const hip: [number, number] = [
    x + Math.cos(pitch) * d,
    z + Math.sin(pitch) * d,
  ];
  const q1 = pitch + frame.theta[2 * leg];
  const knee: [number, number] = [
    hip[0] + L1 * Math.sin(q1),
    hip[1] - L1 * Math.cos(q1),
  ];
  const foot = frame.feet[leg];

  const contact = frame.contact !== undefined && frame.contact[leg];
  ctx.strokeStyle = leg === 0 ? "#58a6ff" : "#79c0ff";
  ctx.lineWidth = 5;
  ctx.lineCap = "round";
  ctx.beginPath();
  ctx.moveTo(...toPx(cam, hip[0], hip[1]));
  ctx.lineTo(...toPx(cam, knee[0], knee[1]));
  ctx.lineTo(...toPx(cam, foot[0], foot[1]));
  ctx.stroke();

  const [fx, fz] = toPx(cam, foot[0], foot[1]);
  ctx.beginPath();
  ctx.arc(fx, fz, contact ? 7 : 5, 0, 2 * Math.PI);
  ctx.fillStyle = contact ? "#3fb950" : "#30363d";
  ctx.fill();
  ctx.strokeStyle = "#8b949e";
  ctx.lineWidth = 1;
  ctx.stroke();
}

function drawTrunkAndTray(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  frame: TelemetryFrame,
): void {
  const { x, z, pitch } = frame.base;
  const [px, pz] = toPx(cam, x, z);
  ctx.save();
  ctx.translate(px, pz);
  ctx.rotate(-pitch); // canvas y points down

  // trunk
  ctx.fillStyle = "#21262d";
  ctx.strokeStyle = "#58a6ff";
  ctx.lineWidth = 2;
  const hw = TRUNK_HALF_LEN * PX_PER_M;
  const hh = TRUNK_HALF_HT * PX_PER_M;
  ctx.beginPath();
  ctx.roundRect(-hw, -hh, 2 * hw, 2 * hh, 6);
  ctx.fill();
  ctx.stroke();

  // tray plate
  const trayY = -(TRAY_RISE * PX_PER_M);
  const trayHalf = 0.14 * PX_PER_M;
  ctx.strokeStyle = "#8b949e";
  ctx.beginPath();
  ctx.moveTo(-trayHalf, trayY);
  ctx.lineTo(trayHalf, trayY);
  ctx.stroke();

  // balls sized by mass (area ~ mass); zero-mass slots drawn as sockets
  frame.payload.balls.forEach((mass, i) => {
    const sx = (BALL_SLOTS[i] ?? 0) * PX_PER_M;
    if (mass <= 0) {
      ctx.beginPath();
      ctx.arc(sx, trayY, 2, 0, 2 * Math.PI);
      ctx.fillStyle = "#30363d";
      ctx.fill();
      return;
    }
    const r = 4 + 9 * Math.sqrt(mass / 2.5);
    ctx.beginPath();
    ctx.arc(sx, trayY - r, r, 0, 2 * Math.PI);
    ctx.fillStyle = "#d29922";
    ctx.fill();
    ctx.strokeStyle = "#e3b341";
    ctx.lineWidth = 1;
    ctx.stroke();
  });
  ctx.restore();
}

/** Draw one validated frame onto the canvas. */
export function renderRobot(
  ctx: CanvasRenderingContext2D,
  frame: TelemetryFrame,
  width: number,
  height: number,
): void {
  const cam: Camera = {
    cx: frame.base.x,
    cz: groundHeight(frame.terrain, frame.base.x) + 0.22,
    w: width,
    h: height,
  };
  ctx.clearRect(0, 0, width, height);
  drawTerrain(ctx, cam, frame.terrain);
  drawLeg(ctx, cam, frame, 1); // rear behind
  drawTrunkAndTray(ctx, cam, frame);
  drawLeg(ctx, cam, frame, 0);

  // height command marker at the base x
  const [mx, mz] = toPx(
    cam,
    frame.base.x,
    groundHeight(frame.terrain, frame.base.x) + frame.h_cmd,
  );
  ctx.strokeStyle = "#d29922";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(mx - 40, mz);
  ctx.lineTo(mx + 40, mz);
  ctx.stroke();
  ctx.setLineDash([]);
}
