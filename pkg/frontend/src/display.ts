// M-mode waterfall model: equalized depth columns scrolling in time, layer
// traces overdrawn, and the auto-range rule that keeps the membrane line in
// view. Everything here is plain typed arrays so it runs (and is tested)
// without a DOM; the canvas blit lives in main.ts.

import { N_COLUMNS, N_SAMPLES } from "./protocol.js";

// cumulative-histogram equalization to 256 levels; constant frames unchanged
export function histEqualize(pixels: Float32Array): Uint8Array {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of pixels) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const out = new Uint8Array(pixels.length);
  if (hi === lo) {
    const flat = Math.max(0, Math.min(255, Math.round(lo)));
    out.fill(flat);
    return out;
  }
  const levels = new Uint8Array(pixels.length);
  const counts = new Uint32Array(256);
  const scale = 256 / (hi - lo);
  for (let i = 0; i < pixels.length; i++) {
    const level = Math.min(255, Math.floor((pixels[i] - lo) * scale));
    levels[i] = level;
    counts[level]++;
  }
  const lut = new Uint8Array(256);
  let acc = 0;
  for (let l = 0; l < 256; l++) {
    acc += counts[l];
    lut[l] = Math.floor((acc / pixels.length) * 255);
  }
  for (let i = 0; i < pixels.length; i++) out[i] = lut[levels[i]];
  return out;
}

export interface FrameTraces {
  epiUm: number;
  dmUm: number;
  validEpi: boolean;
  validDm: boolean;
}

interface Stored {
  columns: Uint8Array[]; // each N_SAMPLES deep
  traces: FrameTraces;
}

// bounded queue between the network and the renderer: drop-oldest
export class FrameQueue<T> {
  private items: T[] = [];

  constructor(readonly capacity: number) {}

  push(item: T): void {
    this.items.push(item);
    if (this.items.length > this.capacity) this.items.shift();
  }

  drain(): T[] {
    const out = this.items;
    this.items = [];
    return out;
  }

  get length(): number {
    return this.items.length;
  }
}

export class Waterfall {
  private frames: Stored[] = [];
  private pausedAt: number | null = null;
  distRangeUm: number;
  autoRange: boolean;

  constructor(
    public capacityFrames: number,
    distRangeUm = 1500,
    autoRange = true,
  ) {
    this.distRangeUm = distRangeUm;
    this.autoRange = autoRange;
  }

  append(pixels: Float32Array, traces: FrameTraces): void {
    const equalized = histEqualize(pixels);
    const columns: Uint8Array[] = [];
    for (let c = 0; c < N_COLUMNS; c++) {
      const col = new Uint8Array(N_SAMPLES);
      for (let r = 0; r < N_SAMPLES; r++) col[r] = equalized[r * N_COLUMNS + c];
      columns.push(col);
    }
    this.frames.push({ columns, traces });
    if (this.frames.length > this.capacityFrames) this.frames.shift();
    if (this.autoRange && traces.validDm) {
      this.distRangeUm = autoRangeUpdate(this.distRangeUm, traces.dmUm);
    }
  }

  pause(): void {
    this.pausedAt = this.frames.length;
  }

  resume(): void {
    this.pausedAt = null;
  }

  get paused(): boolean {
    return this.pausedAt !== null;
  }

  // frames the renderer should show (frozen slice while paused)
  visible(count: number): Stored[] {
    const end = this.pausedAt === null ? this.frames.length : Math.min(this.pausedAt, this.frames.length);
    return this.frames.slice(Math.max(0, end - count), end);
  }

  // a depth in um maps into the view iff it is inside [0, distRangeUm]
  rowInView(depthUm: number): boolean {
    return depthUm >= 0 && depthUm <= this.distRangeUm;
  }
}

// keep the membrane comfortably inside the window; never exceed the bounds
export function autoRangeUpdate(currentUm: number, dmUm: number): number {
  const [lo, hi] = [256, 3000];
  let next = currentUm;
  if (dmUm > 0.95 * currentUm) {
    next = Math.min(hi, Math.max(dmUm * 1.15, currentUm));
  } else if (dmUm < 0.35 * currentUm) {
    next = Math.max(lo, dmUm * 1.6);
  }
  return Math.min(hi, Math.max(lo, next));
}
