"""Bit-exact binary message layer for the sensing/control/console data path.

Frame layout (little-endian throughout):

    magic "ADLK" | version u8 | msg_type u8 | flags u8 | reserved u8 |
    seq u32 | timestamp_us u64 | payload_len u32 | payload | crc32 u32

The CRC covers header plus payload. The streaming decoder tolerates partial
reads, resynchronizes on the magic after corruption, and never raises on
arbitrary input: malformed regions become error events, not crashes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .controller import PHASES

MAGIC = b"ADLK"
VERSION = 1
HEADER = struct.Struct("<4sBBBBIQI")
HEADER_LEN = HEADER.size  # 24
CRC_LEN = 4
MAX_PAYLOAD = 1 << 22

MSG_MSCAN = 1
MSG_TRACE = 2
MSG_COMMAND = 3
MSG_STATUS = 4

OPCODES = {
    "step_down": 1, "step_up": 2, "rotate_on": 3, "rotate_off": 4,
    "set_target": 5, "set_step": 6, "start_auto": 7, "pause": 8,
    "retract": 9, "set_time_range": 10, "set_dist_range": 11, "auto_range": 12,
}
OPCODE_NAMES = {v: k for k, v in OPCODES.items()}

STEP_RANGE = (1.0, 150.0)
TIME_RANGE = (1.0, 9.0)
DIST_RANGE = (256.0, 3000.0)

_PHASE_CODE = {name: i for i, name in enumerate(PHASES)}
_PHASE_NAME = {i: name for name, i in _PHASE_CODE.items()}

_MSCAN_HEAD = struct.Struct("<ffB3xIf")
_TRACE = struct.Struct("<fffB3xI")
_COMMAND = struct.Struct("<B3xf")
_STATUS_HEAD = struct.Struct("<B3xfHH")


class WireError(ValueError):
    pass


class BadMagicError(WireError):
    pass


class BadCrcError(WireError):
    pass


class UnknownVersionError(WireError):
    pass


class NeedMoreData(Exception):
    """Not an error: the buffer simply does not hold a complete frame yet."""


def _check_range(value, bounds, what):
    lo, hi = bounds
    if not lo <= value <= hi:
        raise WireError(f"{what} {value} outside [{lo}, {hi}]")


@dataclass
class MscanMsg:
    pixels: np.ndarray
    dz_air: float = dsp.DZ_AIR_UM
    n_s: float = dsp.DEFAULT_N_S
    correction_active: bool = False
    first_seq: int = 0
    duration_ms: float = dsp.N_COLUMNS * dsp.LINE_PERIOD_MS

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != (dsp.N_SAMPLES, dsp.N_COLUMNS):
            raise WireError("M-scan payload must be 1024x48")


@dataclass
class TraceMsg:
    epi_um: float
    dm_um: float
    needle_um: float
    valid_epi: bool = True
    valid_dm: bool = True
    frame_seq: int = 0


@dataclass
class CommandMsg:
    opcode: str
    operand: float = 0.0

    def __post_init__(self):
        if self.opcode not in OPCODES:
            raise WireError(f"unknown opcode {self.opcode!r}")
        if self.opcode in ("step_down", "step_up", "set_step"):
            _check_range(self.operand, STEP_RANGE, "step size")
        elif self.opcode == "set_time_range":
            _check_range(self.operand, TIME_RANGE, "time range")
        elif self.opcode == "set_dist_range":
            _check_range(self.operand, DIST_RANGE, "distance range")
        elif self.opcode == "set_target" and self.operand < 0:
            raise WireError("target depth must be non-negative")


@dataclass
class StatusMsg:
    phase: str
    travel_um: float = 0.0
    error_code: int = 0
    error_text: str = ""

    def __post_init__(self):
        if self.phase not in _PHASE_CODE:
            raise WireError(f"unknown phase {self.phase!r}")


def _payload_of(msg) -> tuple[int, bytes]:
    if isinstance(msg, MscanMsg):
        head = _MSCAN_HEAD.pack(msg.dz_air, msg.n_s, int(msg.correction_active),
                                msg.first_seq, msg.duration_ms)
        return MSG_MSCAN, head + msg.pixels.astype("<f4").tobytes(order="C")
    if isinstance(msg, TraceMsg):
        validity = (1 if msg.valid_epi else 0) | (2 if msg.valid_dm else 0)
        return MSG_TRACE, _TRACE.pack(msg.epi_um, msg.dm_um, msg.needle_um,
                                      validity, msg.frame_seq)
    if isinstance(msg, CommandMsg):
        return MSG_COMMAND, _COMMAND.pack(OPCODES[msg.opcode], msg.operand)
    if isinstance(msg, StatusMsg):
        text = msg.error_text.encode("utf-8")
        return MSG_STATUS, _STATUS_HEAD.pack(_PHASE_CODE[msg.phase], msg.travel_um,
                                             msg.error_code, len(text)) + text
    raise WireError(f"cannot encode {type(msg).__name__}")


def _parse_payload(msg_type: int, payload: bytes):
    if msg_type == MSG_MSCAN:
        if len(payload) != _MSCAN_HEAD.size + dsp.N_SAMPLES * dsp.N_COLUMNS * 4:
            raise WireError("bad M-scan payload length")
        dz, n_s, corr, first_seq, duration = _MSCAN_HEAD.unpack_from(payload)
        pixels = np.frombuffer(payload[_MSCAN_HEAD.size:], dtype="<f4")
        return MscanMsg(pixels=pixels.reshape(dsp.N_SAMPLES, dsp.N_COLUMNS).copy(),
                        dz_air=dz, n_s=n_s, correction_active=bool(corr),
                        first_seq=first_seq, duration_ms=duration)
    if msg_type == MSG_TRACE:
        if len(payload) != _TRACE.size:
            raise WireError("bad trace payload length")
        epi, dm, needle, validity, frame_seq = _TRACE.unpack(payload)
        return TraceMsg(epi_um=epi, dm_um=dm, needle_um=needle,
                        valid_epi=bool(validity & 1), valid_dm=bool(validity & 2),
                        frame_seq=frame_seq)
    if msg_type == MSG_COMMAND:
        if len(payload) != _COMMAND.size:
            raise WireError("bad command payload length")
        code, operand = _COMMAND.unpack(payload)
        if code not in OPCODE_NAMES:
            raise WireError(f"unknown opcode value {code}")
        return CommandMsg(opcode=OPCODE_NAMES[code], operand=operand)
    if msg_type == MSG_STATUS:
        if len(payload) < _STATUS_HEAD.size:
            raise WireError("bad status payload length")
        phase_code, travel, error_code, text_len = _STATUS_HEAD.unpack_from(payload)
        text = payload[_STATUS_HEAD.size:]
        if len(text) != text_len or phase_code not in _PHASE_NAME:
            raise WireError("malformed status payload")
        return StatusMsg(phase=_PHASE_NAME[phase_code], travel_um=travel,
                         error_code=error_code, error_text=text.decode("utf-8", "replace"))
    raise WireError(f"unknown message type {msg_type}")


def encode(msg, seq: int = 0, timestamp_us: int = 0, flags: int = 0) -> bytes:
    msg_type, payload = _payload_of(msg)
    header = HEADER.pack(MAGIC, VERSION, msg_type, flags, 0, seq, timestamp_us, len(payload))
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(data: bytes):
    """Strict single-frame decode; returns (message, seq, consumed_bytes)."""
    if len(data) < HEADER_LEN:
        raise NeedMoreData
    magic, version, msg_type, flags, _, seq, ts, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError("bad magic")
    if version != VERSION:
        raise UnknownVersionError(f"unknown version {version}")
    if payload_len > MAX_PAYLOAD:
        raise WireError("payload length out of bounds")
    total = HEADER_LEN + payload_len + CRC_LEN
    if len(data) < total:
        raise NeedMoreData
    (crc,) = struct.unpack_from("<I", data, HEADER_LEN + payload_len)
    if crc != zlib.crc32(data[:HEADER_LEN + payload_len]) & 0xFFFFFFFF:
        raise BadCrcError("crc mismatch")
    return _parse_payload(msg_type, data[HEADER_LEN:HEADER_LEN + payload_len]), seq, total


@dataclass
class StreamDecoder:
    """Incremental decoder: feed bytes, receive messages; malformed input
    becomes error events and the stream resynchronizes on the next magic."""

    buffer: bytes = b""
    events: list = field(default_factory=list)
    last_seq: int | None = None

    def feed(self, data: bytes) -> list:
        self.buffer += data
        out = []
        while True:
            idx = self.buffer.find(MAGIC)
            if idx < 0:
                self.buffer = self.buffer[-(len(MAGIC) - 1):] if self.buffer else b""
                break
            if idx > 0:
                self.events.append({"kind": "garbage_skipped", "bytes": idx})
                self.buffer = self.buffer[idx:]
            try:
                msg, seq, consumed = decode(self.buffer)
            except NeedMoreData:
                break
            except WireError as exc:
                self.events.append({"kind": type(exc).__name__, "detail": str(exc)})
                self.buffer = self.buffer[len(MAGIC):]  # resync past this magic
                continue
            if self.last_seq is not None and seq != self.last_seq + 1:
                self.events.append({"kind": "seq_gap", "expected": self.last_seq + 1,
                                    "got": seq})
            self.last_seq = seq
            self.buffer = self.buffer[consumed:]
            out.append(msg)
        return out
