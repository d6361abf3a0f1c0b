// Console state: operating mode, clamped display ranges, trace toggles and
// status lights. Range bounds follow the instrument limits; out-of-range
// entries are blocked with an inline message instead of being clamped
// silently, so the operator sees why nothing happened.

import type { Phase, StatusMsg, TraceMsg } from "./protocol.js";

export const STEP_RANGE: [number, number] = [1, 150];
export const TIME_RANGE_S: [number, number] = [1, 9];
export const DIST_RANGE_UM: [number, number] = [256, 3000];

export type Light = "green" | "amber" | "red";

export interface Blocked {
  blocked: string;
}

export class ConsoleState {
  mode: "teleop" | "autonomous" = "teleop";
  phase: Phase = "IDLE";
  stepSizeUm = 20;
  timeRangeS = 4;
  distRangeUm = 1500;
  autoRange = true;
  showEpi = true;
  showDm = true;
  showTarget = false;
  targetPct = 0.5;
  travelUm = 0;
  errorText = "";
  connected = false;
  lastTrace: TraceMsg | null = null;

  setStepSize(v: number): number | Blocked {
    if (!(v >= STEP_RANGE[0] && v <= STEP_RANGE[1])) {
      return { blocked: `step size must be within ${STEP_RANGE[0]}-${STEP_RANGE[1]} um` };
    }
    this.stepSizeUm = v;
    return v;
  }

  setTimeRange(v: number): number | Blocked {
    if (!(v >= TIME_RANGE_S[0] && v <= TIME_RANGE_S[1])) {
      return { blocked: `time range must be within ${TIME_RANGE_S[0]}-${TIME_RANGE_S[1]} s` };
    }
    this.timeRangeS = v;
    return v;
  }

  setDistRange(v: number): number | Blocked {
    if (!(v >= DIST_RANGE_UM[0] && v <= DIST_RANGE_UM[1])) {
      return { blocked: `distance range must be within ${DIST_RANGE_UM[0]}-${DIST_RANGE_UM[1]} um` };
    }
    this.distRangeUm = v;
    return v;
  }

  setTargetPct(v: number): number {
    this.targetPct = Math.min(1, Math.max(0, v));
    return this.targetPct;
  }

  // target-depth trace between the two layer traces
  targetTraceUm(epiUm: number, dmUm: number): number {
    return epiUm + this.targetPct * (dmUm - epiUm);
  }

  applyStatus(msg: StatusMsg): void {
    this.phase = msg.phase;
    this.travelUm = msg.travelUm;
    this.errorText = msg.errorText;
    this.mode = msg.phase === "RUNNING" ? "autonomous" : this.mode;
  }

  applyTrace(msg: TraceMsg): void {
    this.lastTrace = msg;
  }

  statusLight(): Light {
    if (!this.connected || this.phase === "ERROR") return "red";
    if (!this.lastTrace || !this.lastTrace.validDm || !this.lastTrace.validEpi) return "amber";
    return "green";
  }
}
