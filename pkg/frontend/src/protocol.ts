// Binary wire protocol: little-endian frames with an "ADLK" magic, CRC32
// over header+payload, and four payload types (MSCAN, TRACE, COMMAND,
// STATUS). Byte layout mirrors the simulator side exactly; the fixture
// tests pin it against frames produced there.

export const MAGIC = 0x4b4c4441; // "ADLK" read little-endian
export const VERSION = 1;
export const HEADER_LEN = 24;
export const CRC_LEN = 4;

export const N_SAMPLES = 1024;
export const N_COLUMNS = 48;

export const PHASES = [
  "IDLE", "ATTACHED", "CONTACT", "RUNNING", "TARGET_REACHED", "RETRACTING", "ERROR",
] as const;
export type Phase = (typeof PHASES)[number];

export const OPCODES: Record<string, number> = {
  step_down: 1, step_up: 2, rotate_on: 3, rotate_off: 4,
  set_target: 5, set_step: 6, start_auto: 7, pause: 8,
  retract: 9, set_time_range: 10, set_dist_range: 11, auto_range: 12,
};
const OPCODE_NAMES: Record<number, string> = {};
for (const [name, code] of Object.entries(OPCODES)) OPCODE_NAMES[code] = name;

export interface TraceMsg {
  type: "trace";
  epiUm: number;
  dmUm: number;
  needleUm: number;
  validEpi: boolean;
  validDm: boolean;
  frameSeq: number;
  seq: number;
}

export interface StatusMsg {
  type: "status";
  phase: Phase;
  travelUm: number;
  errorCode: number;
  errorText: string;
  seq: number;
}

export interface CommandMsg {
  type: "command";
  opcode: string;
  operand: number;
  seq: number;
}

export interface MscanMsg {
  type: "mscan";
  dzAir: number;
  nS: number;
  correctionActive: boolean;
  firstSeq: number;
  durationMs: number;
  pixels: Float32Array; // row-major 1024x48
  seq: number;
}

export type Message = TraceMsg | StatusMsg | CommandMsg | MscanMsg;

// -- CRC32 (IEEE, zlib-compatible) ------------------------------------------------

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

// -- encoding ----------------------------------------------------------------------

export function encodeCommand(opcode: string, operand = 0, seq = 0, timestampUs = 0): Uint8Array {
  const code = OPCODES[opcode];
  if (code === undefined) throw new Error(`unknown opcode ${opcode}`);
  const payload = new Uint8Array(8);
  const pv = new DataView(payload.buffer);
  pv.setUint8(0, code);
  pv.setFloat32(4, operand, true);
  return frame(3, payload, seq, timestampUs);
}

function frame(msgType: number, payload: Uint8Array, seq: number, timestampUs: number): Uint8Array {
  const out = new Uint8Array(HEADER_LEN + payload.length + CRC_LEN);
  const dv = new DataView(out.buffer);
  dv.setUint32(0, MAGIC, true);
  dv.setUint8(4, VERSION);
  dv.setUint8(5, msgType);
  dv.setUint8(6, 0);
  dv.setUint8(7, 0);
  dv.setUint32(8, seq >>> 0, true);
  dv.setBigUint64(12, BigInt(timestampUs), true);
  dv.setUint32(20, payload.length, true);
  out.set(payload, HEADER_LEN);
  const crc = crc32(out.subarray(0, HEADER_LEN + payload.length));
  dv.setUint32(HEADER_LEN + payload.length, crc, true);
  return out;
}

// -- decoding ----------------------------------------------------------------------

function parsePayload(msgType: number, payload: Uint8Array, seq: number): Message | null {
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  if (msgType === 2 && payload.length === 20) {
    const validity = dv.getUint8(12);
    return {
      type: "trace",
      epiUm: dv.getFloat32(0, true),
      dmUm: dv.getFloat32(4, true),
      needleUm: dv.getFloat32(8, true),
      validEpi: (validity & 1) !== 0,
      validDm: (validity & 2) !== 0,
      frameSeq: dv.getUint32(16, true),
      seq,
    };
  }
  if (msgType === 4 && payload.length >= 12) {
    const phaseCode = dv.getUint8(0);
    const textLen = dv.getUint16(10, true);
    if (phaseCode >= PHASES.length || payload.length !== 12 + textLen) return null;
    return {
      type: "status",
      phase: PHASES[phaseCode],
      travelUm: dv.getFloat32(4, true),
      errorCode: dv.getUint16(8, true),
      errorText: new TextDecoder().decode(payload.subarray(12)),
      seq,
    };
  }
  if (msgType === 3 && payload.length === 8) {
    const opcode = OPCODE_NAMES[dv.getUint8(0)];
    if (!opcode) return null;
    return { type: "command", opcode, operand: dv.getFloat32(4, true), seq };
  }
  if (msgType === 1 && payload.length === 20 + N_SAMPLES * N_COLUMNS * 4) {
    const pixels = new Float32Array(N_SAMPLES * N_COLUMNS);
    const body = new DataView(payload.buffer, payload.byteOffset + 20);
    for (let i = 0; i < pixels.length; i++) pixels[i] = body.getFloat32(i * 4, true);
    return {
      type: "mscan",
      dzAir: dv.getFloat32(0, true),
      nS: dv.getFloat32(4, true),
      correctionActive: dv.getUint8(8) !== 0,
      firstSeq: dv.getUint32(12, true),
      durationMs: dv.getFloat32(16, true),
      pixels,
      seq,
    };
  }
  return null;
}

// Incremental decoder: tolerates partial reads, resynchronizes on the magic,
// and silently skips frames whose CRC or structure is wrong.
export class StreamDecoder {
  private buf = new Uint8Array(0);
  dropped = 0;

  feed(data: Uint8Array): Message[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf);
    joined.set(data, this.buf.length);
    this.buf = joined;
    const out: Message[] = [];
    for (;;) {
      const idx = this.findMagic();
      if (idx < 0) {
        this.buf = this.buf.subarray(Math.max(0, this.buf.length - 3));
        break;
      }
      if (idx > 0) {
        this.dropped += idx;
        this.buf = this.buf.subarray(idx);
      }
      if (this.buf.length < HEADER_LEN) break;
      const dv = new DataView(this.buf.buffer, this.buf.byteOffset, this.buf.byteLength);
      const version = dv.getUint8(4);
      const msgType = dv.getUint8(5);
      const seq = dv.getUint32(8, true);
      const payloadLen = dv.getUint32(20, true);
      if (version !== VERSION || payloadLen > 1 << 22) {
        this.dropped += 4;
        this.buf = this.buf.subarray(4);
        continue;
      }
      const total = HEADER_LEN + payloadLen + CRC_LEN;
      if (this.buf.length < total) break;
      const crc = dv.getUint32(HEADER_LEN + payloadLen, true);
      if (crc !== crc32(this.buf.subarray(0, HEADER_LEN + payloadLen))) {
        this.dropped += 4;
        this.buf = this.buf.subarray(4);
        continue;
      }
      const msg = parsePayload(msgType, this.buf.subarray(HEADER_LEN, HEADER_LEN + payloadLen), seq);
      this.buf = this.buf.subarray(total);
      if (msg) out.push(msg);
    }
    return out;
  }

  private findMagic(): number {
    const b = this.buf;
    for (let i = 0; i + 3 < b.length; i++) {
      if (b[i] === 0x41 && b[i + 1] === 0x44 && b[i + 2] === 0x4c && b[i + 3] === 0x4b) {
        return i;
      }
    }
    return -1;
  }
}
