"""Regenerate the cross-language wire-format fixtures used by the console tests.

Each fixture is a JSON object with the base64-encoded frame bytes plus the
fields the decoder must recover. Run from the repository root:

    python scripts/gen_wire_fixtures.py
"""

import base64
import json
import os

import numpy as np

from dalksim import wire

OUT = os.path.join(os.path.dirname(__file__), "..", "frontend", "test", "fixtures")


def b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode()


def main():
    os.makedirs(OUT, exist_ok=True)
    fixtures = {}

    trace = wire.TraceMsg(epi_um=250.0, dm_um=610.0, needle_um=560.0,
                          valid_epi=True, valid_dm=True, frame_seq=99)
    fixtures["trace"] = {
        "frame_b64": b64(wire.encode(trace, seq=7, timestamp_us=123456)),
        "expect": {"epi_um": 250.0, "dm_um": 610.0, "needle_um": 560.0,
                   "valid_epi": True, "valid_dm": True, "frame_seq": 99, "seq": 7},
    }

    status = wire.StatusMsg(phase="RUNNING", travel_um=412.5, error_code=3,
                            error_text="fiber signal degraded")
    fixtures["status"] = {
        "frame_b64": b64(wire.encode(status, seq=8)),
        "expect": {"phase": "RUNNING", "travel_um": 412.5, "error_code": 3,
                   "error_text": "fiber signal degraded", "seq": 8},
    }

    cmd = wire.CommandMsg(opcode="step_down", operand=50.0)
    fixtures["command_step_down_50"] = {
        "frame_b64": b64(wire.encode(cmd, seq=3)),
        "expect": {"opcode": "step_down", "operand": 50.0, "seq": 3},
    }
    fixtures["command_set_target_100"] = {
        "frame_b64": b64(wire.encode(wire.CommandMsg("set_target", 100.0), seq=4)),
        "expect": {"opcode": "set_target", "operand": 100.0, "seq": 4},
    }
    fixtures["command_start_auto"] = {
        "frame_b64": b64(wire.encode(wire.CommandMsg("start_auto"), seq=5)),
        "expect": {"opcode": "start_auto", "operand": 0.0, "seq": 5},
    }

    rng = np.random.default_rng(12)
    pixels = rng.random((1024, 48)).astype(np.float32)
    mscan = wire.MscanMsg(pixels=pixels, correction_active=True, first_seq=21)
    fixtures["mscan"] = {
        "frame_b64": b64(wire.encode(mscan, seq=9)),
        "expect": {"first_seq": 21, "correction_active": True,
                   "n_s": float(np.float32(mscan.n_s)),
                   "dz_air": float(np.float32(mscan.dz_air)),
                   "pixel_0_0": float(pixels[0, 0]),
                   "pixel_100_13": float(pixels[100, 13]),
                   "pixel_1023_47": float(pixels[1023, 47]), "seq": 9},
    }

    garbage = b"\x13\x37junk" + wire.encode(trace, seq=11)
    fixtures["garbage_then_trace"] = {
        "frame_b64": b64(garbage),
        "expect": {"epi_um": 250.0, "seq": 11},
    }

    corrupted = bytearray(wire.encode(trace, seq=12))
    corrupted[wire.HEADER_LEN + 1] ^= 0xFF
    fixtures["bad_crc"] = {"frame_b64": b64(bytes(corrupted)), "expect": None}

    path = os.path.join(OUT, "wire_fixtures.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fixtures, fh, indent=1, sort_keys=True)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
