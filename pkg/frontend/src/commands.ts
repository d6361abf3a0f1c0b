// User actions -> protocol commands. Each primitive action emits exactly one
// COMMAND frame; the composite "start autonomous" button emits its
// documented two-message sequence (set_target, then start_auto). Range
// violations are blocked client-side and emit nothing.

import { encodeCommand } from "./protocol.js";
import { Blocked, ConsoleState, DIST_RANGE_UM, STEP_RANGE, TIME_RANGE_S } from "./state.js";

export type Sender = (frame: Uint8Array) => void;

export class CommandDispatcher {
  private seq = 0;

  constructor(
    private readonly state: ConsoleState,
    private readonly send: Sender,
  ) {}

  private emit(opcode: string, operand = 0): void {
    this.send(encodeCommand(opcode, operand, this.seq++));
  }

  stepDown(): void {
    this.emit("step_down", this.state.stepSizeUm);
  }

  stepUp(): void {
    this.emit("step_up", this.state.stepSizeUm);
  }

  rotate(on: boolean): void {
    this.emit(on ? "rotate_on" : "rotate_off");
  }

  setStep(v: number): Blocked | void {
    const applied = this.state.setStepSize(v);
    if (typeof applied !== "number") return applied;
    this.emit("set_step", applied);
  }

  setTimeRange(v: number): Blocked | void {
    const applied = this.state.setTimeRange(v);
    if (typeof applied !== "number") return applied;
    this.emit("set_time_range", applied);
  }

  setDistRange(v: number): Blocked | void {
    const applied = this.state.setDistRange(v);
    if (typeof applied !== "number") return applied;
    this.emit("set_dist_range", applied);
  }

  autoRange(): void {
    this.emit("auto_range");
  }

  pause(): void {
    this.emit("pause");
  }

  retract(): void {
    this.emit("retract");
  }

  // two-message sequence: target depth first, then the mode switch
  startAutonomous(targetUm: number): Blocked | void {
    if (!(targetUm >= 0)) return { blocked: "target depth must be non-negative" };
    this.emit("set_target", targetUm);
    this.emit("start_auto");
    this.state.mode = "autonomous";
  }
}

export const RANGES = { STEP_RANGE, TIME_RANGE_S, DIST_RANGE_UM };
