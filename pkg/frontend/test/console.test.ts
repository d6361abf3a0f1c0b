import { describe, expect, it } from "vitest";
import { CommandDispatcher } from "../src/commands.js";
import { autoRangeUpdate, FrameQueue, histEqualize, Waterfall } from "../src/display.js";
import { StreamDecoder, type CommandMsg } from "../src/protocol.js";
import { ConsoleState } from "../src/state.js";

// mock gateway capturing every emitted frame, decoded back through the codec
function mockGateway() {
  const decoder = new StreamDecoder();
  const received: CommandMsg[] = [];
  const send = (frame: Uint8Array) => {
    for (const m of decoder.feed(frame)) {
      if (m.type === "command") received.push(m);
    }
  };
  return { received, send };
}

describe("target-depth trace", () => {
  it("sits at epi + pct * (dm - epi)", () => {
    const state = new ConsoleState();
    state.setTargetPct(0.565);
    expect(state.targetTraceUm(100, 400)).toBeCloseTo(269.5, 6);
  });

  it("overlays the epithelium at 0%", () => {
    const state = new ConsoleState();
    state.setTargetPct(0);
    expect(state.targetTraceUm(123, 800)).toBe(123);
  });
});

describe("range clamps", () => {
  it("blocks step entries outside 1-150 um", () => {
    const state = new ConsoleState();
    expect(state.setStepSize(151)).toHaveProperty("blocked");
    expect(state.setStepSize(0.5)).toHaveProperty("blocked");
    expect(state.setStepSize(150)).toBe(150);
    expect(state.setStepSize(1)).toBe(1);
  });

  it("blocks time and distance ranges outside the instrument bounds", () => {
    const state = new ConsoleState();
    expect(state.setTimeRange(0.5)).toHaveProperty("blocked");
    expect(state.setTimeRange(9.5)).toHaveProperty("blocked");
    expect(state.setTimeRange(9)).toBe(9);
    expect(state.setDistRange(100)).toHaveProperty("blocked");
    expect(state.setDistRange(3001)).toHaveProperty("blocked");
    expect(state.setDistRange(256)).toBe(256);
  });
});

describe("command dispatch against a mock gateway", () => {
  it("maps each primitive action to exactly one protocol command", () => {
    const { received, send } = mockGateway();
    const state = new ConsoleState();
    const d = new CommandDispatcher(state, send);

    d.stepDown();
    expect(received).toHaveLength(1);
    expect(received[0]).toMatchObject({ opcode: "step_down", operand: 20 });

    d.stepUp();
    expect(received).toHaveLength(2);
    expect(received[1].opcode).toBe("step_up");

    d.rotate(true);
    d.rotate(false);
    d.pause();
    d.retract();
    d.autoRange();
    expect(received.map((m) => m.opcode)).toEqual([
      "step_down", "step_up", "rotate_on", "rotate_off", "pause", "retract", "auto_range",
    ]);
  });

  it("emits nothing for blocked entries", () => {
    const { received, send } = mockGateway();
    const d = new CommandDispatcher(new ConsoleState(), send);
    const res = d.setStep(151);
    expect(res).toHaveProperty("blocked");
    expect(received).toHaveLength(0);
  });

  it("start autonomous sends the set_target then start_auto pair", () => {
    const { received, send } = mockGateway();
    const d = new CommandDispatcher(new ConsoleState(), send);
    d.startAutonomous(100);
    expect(received.map((m) => m.opcode)).toEqual(["set_target", "start_auto"]);
    expect(received[0].operand).toBe(100);
  });

  it("an idle console sends nothing", () => {
    const { received } = mockGateway();
    expect(received).toHaveLength(0);
  });
});

describe("histogram equalization", () => {
  it("maps four equal-count levels to 63/127/191/255", () => {
    const pixels = new Float32Array(1024 * 48);
    for (let i = 0; i < pixels.length; i++) pixels[i] = i % 4;
    const out = histEqualize(pixels);
    expect([...new Set(out)].sort((a, b) => a - b)).toEqual([63, 127, 191, 255]);
  });

  it("leaves constant frames unchanged", () => {
    const pixels = new Float32Array(64).fill(42);
    const out = histEqualize(pixels);
    expect([...new Set(out)]).toEqual([42]);
  });
});

describe("waterfall auto-range", () => {
  it("keeps a drifting membrane in view from 300 to 2900 um", () => {
    const wf = new Waterfall(64, 1500, true);
    const pixels = new Float32Array(1024 * 48);
    for (let k = 0; k <= 26; k++) {
      const dm = 300 + 100 * k; // 300 -> 2900 um
      wf.append(pixels, { epiUm: dm - 250, dmUm: dm, validEpi: true, validDm: true });
      expect(wf.rowInView(dm)).toBe(true);
    }
    expect(wf.distRangeUm).toBeLessThanOrEqual(3000);
  });

  it("never leaves the 256-3000 um bounds", () => {
    expect(autoRangeUpdate(1500, 5000)).toBe(3000);
    expect(autoRangeUpdate(300, 10)).toBe(256);
  });
});

describe("frame queue and pause", () => {
  it("drops oldest beyond capacity", () => {
    const q = new FrameQueue<number>(3);
    for (let i = 0; i < 6; i++) q.push(i);
    expect(q.drain()).toEqual([3, 4, 5]);
  });

  it("pause freezes the visible slice while buffering continues", () => {
    const wf = new Waterfall(16, 1500, false);
    const pixels = new Float32Array(1024 * 48);
    const trace = { epiUm: 100, dmUm: 400, validEpi: true, validDm: true };
    wf.append(pixels, trace);
    wf.append(pixels, trace);
    wf.pause();
    const frozen = wf.visible(10).length;
    wf.append(pixels, trace);
    wf.append(pixels, trace);
    expect(wf.visible(10).length).toBe(frozen);
    wf.resume();
    expect(wf.visible(10).length).toBe(4);
  });
});

describe("status round-trip", () => {
  it("reconnect restores mode and travel from STATUS", () => {
    const state = new ConsoleState();
    state.connected = false;
    expect(state.statusLight()).toBe("red");
    state.connected = true;
    state.applyStatus({ type: "status", phase: "RUNNING", travelUm: 321.5,
                        errorCode: 0, errorText: "", seq: 1 });
    expect(state.mode).toBe("autonomous");
    expect(state.travelUm).toBe(321.5);
    expect(state.phase).toBe("RUNNING");
  });

  it("status light turns amber when the estimate is held", () => {
    const state = new ConsoleState();
    state.connected = true;
    state.applyTrace({ type: "trace", epiUm: 1, dmUm: 2, needleUm: 3,
                       validEpi: true, validDm: false, frameSeq: 0, seq: 0 });
    expect(state.statusLight()).toBe("amber");
    state.applyTrace({ type: "trace", epiUm: 1, dmUm: 2, needleUm: 3,
                       validEpi: true, validDm: true, frameSeq: 1, seq: 1 });
    expect(state.statusLight()).toBe("green");
  });
});
