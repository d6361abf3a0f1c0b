// Browser entry: wires the gateway stream into the waterfall canvas and the
// control panel into the command dispatcher.

import { GatewayClient } from "./client.js";
import { CommandDispatcher } from "./commands.js";
import { FrameQueue, Waterfall } from "./display.js";
import { Message, MscanMsg, N_SAMPLES } from "./protocol.js";
import { ConsoleState } from "./state.js";

const COLUMNS_PER_SECOND = 48 / 0.12288;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup(): void {
  const state = new ConsoleState();
  const waterfall = new Waterfall(Math.ceil((9 * COLUMNS_PER_SECOND) / 48));
  const queue = new FrameQueue<MscanMsg>(16);
  let dzAir = 3700 / 1024;

  const url = (window as { DALKSIM_WS_URL?: string }).DALKSIM_WS_URL
    ?? `ws://${location.hostname || "127.0.0.1"}:8715`;
  const client = new GatewayClient(url, state, (msg: Message) => {
    if (msg.type === "mscan") {
      dzAir = msg.dzAir;
      queue.push(msg);
    }
    if (msg.type === "status") refreshPanel();
  });
  const dispatch = new CommandDispatcher(state, (frame) => client.send(frame));
  client.connect();

  const canvas = el<HTMLCanvasElement>("waterfall");
  const ctx = canvas.getContext("2d")!;
  const message = el<HTMLSpanElement>("message");

  function blocked(result: { blocked: string } | void): void {
    message.textContent = result ? result.blocked : "";
  }

  el<HTMLButtonElement>("btn-up").onclick = () => dispatch.stepUp();
  el<HTMLButtonElement>("btn-down").onclick = () => dispatch.stepDown();
  el<HTMLButtonElement>("btn-rot-on").onclick = () => dispatch.rotate(true);
  el<HTMLButtonElement>("btn-rot-off").onclick = () => dispatch.rotate(false);
  el<HTMLButtonElement>("btn-retract").onclick = () => dispatch.retract();
  el<HTMLButtonElement>("btn-pause").onclick = () => {
    if (waterfall.paused) {
      waterfall.resume();
    } else {
      waterfall.pause();
    }
    dispatch.pause();
  };
  el<HTMLButtonElement>("btn-start").onclick = () => {
    const target = parseFloat(el<HTMLInputElement>("target-um").value);
    blocked(dispatch.startAutonomous(target));
  };
  el<HTMLInputElement>("step-um").onchange = (ev) => {
    blocked(dispatch.setStep(parseFloat((ev.target as HTMLInputElement).value)));
  };
  el<HTMLInputElement>("time-range").onchange = (ev) => {
    blocked(dispatch.setTimeRange(parseFloat((ev.target as HTMLInputElement).value)));
  };
  el<HTMLInputElement>("dist-range").onchange = (ev) => {
    const v = parseFloat((ev.target as HTMLInputElement).value);
    const res = dispatch.setDistRange(v);
    if (!res) waterfall.distRangeUm = v;
    blocked(res);
  };
  el<HTMLInputElement>("auto-range").onchange = (ev) => {
    waterfall.autoRange = (ev.target as HTMLInputElement).checked;
    dispatch.autoRange();
  };
  el<HTMLInputElement>("target-pct").oninput = (ev) => {
    state.setTargetPct(parseFloat((ev.target as HTMLInputElement).value) / 100);
  };
  for (const name of ["epi", "dm", "target"] as const) {
    el<HTMLInputElement>(`trace-${name}`).onchange = (ev) => {
      const checked = (ev.target as HTMLInputElement).checked;
      if (name === "epi") state.showEpi = checked;
      if (name === "dm") state.showDm = checked;
      if (name === "target") state.showTarget = checked;
    };
  }

  function refreshPanel(): void {
    el<HTMLSpanElement>("phase").textContent = state.phase;
    el<HTMLSpanElement>("travel").textContent = `${state.travelUm.toFixed(1)} um`;
    el<HTMLSpanElement>("error").textContent = state.errorText || "-";
    const light = el<HTMLSpanElement>("light");
    light.className = `light ${state.statusLight()}`;
  }

  function render(): void {
    for (const msg of queue.drain()) {
      const t = state.lastTrace;
      waterfall.append(msg.pixels, {
        epiUm: t?.epiUm ?? 0,
        dmUm: t?.dmUm ?? 0,
        validEpi: t?.validEpi ?? false,
        validDm: t?.validDm ?? false,
      });
    }
    const w = canvas.width;
    const h = canvas.height;
    const frames = waterfall.visible(Math.ceil((state.timeRangeS * COLUMNS_PER_SECOND) / 48));
    const img = ctx.createImageData(w, h);
    const rowsInView = Math.min(N_SAMPLES, Math.round(waterfall.distRangeUm / dzAir));
    const cols: { col: Uint8Array; traces: { epiUm: number; dmUm: number } }[] = [];
    for (const f of frames) {
      for (const col of f.columns) cols.push({ col, traces: f.traces });
    }
    const visible = cols.slice(-w);
    for (let x = 0; x < visible.length; x++) {
      const { col, traces } = visible[visible.length - 1 - x];
      const cx = w - 1 - x;
      for (let y = 0; y < h; y++) {
        const row = Math.floor((y / h) * rowsInView);
        const v = col[row];
        const o = (y * w + cx) * 4;
        img.data[o] = v;
        img.data[o + 1] = v;
        img.data[o + 2] = v;
        img.data[o + 3] = 255;
      }
      const mark = (depthUm: number, r: number, g: number, b: number) => {
        const y = Math.round((depthUm / waterfall.distRangeUm) * h);
        if (y >= 0 && y < h) {
          const o = (y * w + cx) * 4;
          img.data[o] = r;
          img.data[o + 1] = g;
          img.data[o + 2] = b;
        }
      };
      if (state.showEpi) mark(traces.epiUm, 80, 220, 80);
      if (state.showDm) mark(traces.dmUm, 240, 80, 80);
      if (state.showTarget) {
        mark(state.targetTraceUm(traces.epiUm, traces.dmUm), 250, 210, 60);
      }
    }
    ctx.putImageData(img, 0, 0);
    requestAnimationFrame(render);
  }
  requestAnimationFrame(render);
  refreshPanel();
}

window.addEventListener("DOMContentLoaded", setup);
