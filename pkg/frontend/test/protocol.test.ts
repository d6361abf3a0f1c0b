// Cross-language codec checks: fixture frames were produced by the
// simulator side, so these tests pin byte-level compatibility.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { crc32, encodeCommand, StreamDecoder } from "../src/protocol.js";

const fixtures = JSON.parse(
  readFileSync(new URL("./fixtures/wire_fixtures.json", import.meta.url), "utf-8"),
);

function frameOf(name: string): Uint8Array {
  return Uint8Array.from(Buffer.from(fixtures[name].frame_b64, "base64"));
}

describe("crc32", () => {
  it("matches the zlib check value", () => {
    expect(crc32(new TextEncoder().encode("123456789"))).toBe(0xcbf43926);
  });
});

describe("decoding simulator-produced frames", () => {
  it("decodes a trace frame", () => {
    const msgs = new StreamDecoder().feed(frameOf("trace"));
    expect(msgs).toHaveLength(1);
    const m = msgs[0];
    if (m.type !== "trace") throw new Error("wrong type");
    const exp = fixtures.trace.expect;
    expect(m.epiUm).toBeCloseTo(exp.epi_um, 3);
    expect(m.dmUm).toBeCloseTo(exp.dm_um, 3);
    expect(m.needleUm).toBeCloseTo(exp.needle_um, 3);
    expect(m.validEpi).toBe(exp.valid_epi);
    expect(m.validDm).toBe(exp.valid_dm);
    expect(m.frameSeq).toBe(exp.frame_seq);
    expect(m.seq).toBe(exp.seq);
  });

  it("decodes a status frame", () => {
    const m = new StreamDecoder().feed(frameOf("status"))[0];
    if (m.type !== "status") throw new Error("wrong type");
    const exp = fixtures.status.expect;
    expect(m.phase).toBe(exp.phase);
    expect(m.travelUm).toBeCloseTo(exp.travel_um, 3);
    expect(m.errorCode).toBe(exp.error_code);
    expect(m.errorText).toBe(exp.error_text);
  });

  it("decodes an M-scan frame", () => {
    const m = new StreamDecoder().feed(frameOf("mscan"))[0];
    if (m.type !== "mscan") throw new Error("wrong type");
    const exp = fixtures.mscan.expect;
    expect(m.firstSeq).toBe(exp.first_seq);
    expect(m.correctionActive).toBe(exp.correction_active);
    expect(m.nS).toBeCloseTo(exp.n_s, 6);
    expect(m.dzAir).toBeCloseTo(exp.dz_air, 6);
    expect(m.pixels[0]).toBeCloseTo(exp.pixel_0_0, 6);
    expect(m.pixels[100 * 48 + 13]).toBeCloseTo(exp.pixel_100_13, 6);
    expect(m.pixels[1023 * 48 + 47]).toBeCloseTo(exp.pixel_1023_47, 6);
  });

  it("resynchronizes after garbage", () => {
    const dec = new StreamDecoder();
    const msgs = dec.feed(frameOf("garbage_then_trace"));
    expect(msgs).toHaveLength(1);
    expect(msgs[0].seq).toBe(fixtures.garbage_then_trace.expect.seq);
    expect(dec.dropped).toBeGreaterThan(0);
  });

  it("drops frames with bad CRC", () => {
    expect(new StreamDecoder().feed(frameOf("bad_crc"))).toHaveLength(0);
  });

  it("tolerates byte-at-a-time delivery", () => {
    const dec = new StreamDecoder();
    const raw = frameOf("trace");
    const out = [];
    for (const b of raw) out.push(...dec.feed(Uint8Array.of(b)));
    expect(out).toHaveLength(1);
  });
});

describe("encoding commands", () => {
  it("produces byte-identical frames to the simulator encoder", () => {
    const cases: [string, string, number, number][] = [
      ["command_step_down_50", "step_down", 50.0, 3],
      ["command_set_target_100", "set_target", 100.0, 4],
      ["command_start_auto", "start_auto", 0.0, 5],
    ];
    for (const [name, opcode, operand, seq] of cases) {
      const mine = encodeCommand(opcode, operand, seq);
      expect(Buffer.from(mine).toString("base64")).toBe(fixtures[name].frame_b64);
    }
  });

  it("round-trips through its own decoder", () => {
    const raw = encodeCommand("set_dist_range", 2048, 17);
    const m = new StreamDecoder().feed(raw)[0];
    if (m.type !== "command") throw new Error("wrong type");
    expect(m.opcode).toBe("set_dist_range");
    expect(m.operand).toBe(2048);
    expect(m.seq).toBe(17);
  });
});
