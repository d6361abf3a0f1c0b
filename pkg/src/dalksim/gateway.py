"""Socket gateway: binary protocol over TCP plus a WebSocket bridge.

The TCP side speaks raw wire frames. The WebSocket side carries the same
frame bytes inside binary WebSocket messages so a browser console can
subscribe without any payload translation. One serve session broadcasts
MSCAN/TRACE/STATUS each cycle and feeds inbound COMMAND messages from any
client into the controller's operator queue.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import socket
import struct
import threading
import time

import numpy as np

from . import controller as ctl
from . import dsp, wire
from .config import build
from .harness import TrialConfig, _sense, _streams
from .phantom import (
    InteractionConfig,
    NeedleState,
    Reflectivity,
    TissuePhantom,
    advance_needle,
    retract_needle,
)
from .robot import RobotAxis, RobotKinematics, compensate, rotation_command
from .segnet import SegNet
from .tracking import TrackerBank

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


# -- WebSocket plumbing ----------------------------------------------------------


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_handshake(conn: socket.socket) -> bool:
    """Minimal RFC 6455 server handshake; returns False on a bad request."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            return False
        data += chunk
        if len(data) > 65536:
            return False
    headers = {}
    for line in data.split(b"\r\n")[1:]:
        if b":" in line:
            k, v = line.split(b":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get(b"sec-websocket-key")
    if key is None:
        return False
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {ws_accept_key(key.decode())}\r\n\r\n"
    )
    conn.sendall(response.encode())
    return True


def ws_encode_binary(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        header = struct.pack("!BB", 0x82, n)
    elif n < 65536:
        header = struct.pack("!BBH", 0x82, 126, n)
    else:
        header = struct.pack("!BBQ", 0x82, 127, n)
    return header + payload


class WsFrameReader:
    """Incremental client-to-server frame parser (masked frames)."""

    def __init__(self):
        self.buf = b""

    def feed(self, data: bytes):
        self.buf += data
        out = []
        while True:
            if len(self.buf) < 2:
                break
            b0, b1 = self.buf[0], self.buf[1]
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            offset = 2
            if length == 126:
                if len(self.buf) < 4:
                    break
                (length,) = struct.unpack_from("!H", self.buf, 2)
                offset = 4
            elif length == 127:
                if len(self.buf) < 10:
                    break
                (length,) = struct.unpack_from("!Q", self.buf, 2)
                offset = 10
            mask = b""
            if masked:
                if len(self.buf) < offset + 4:
                    break
                mask = self.buf[offset:offset + 4]
                offset += 4
            if len(self.buf) < offset + length:
                break
            payload = self.buf[offset:offset + length]
            self.buf = self.buf[offset + length:]
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            out.append((opcode, payload))
        return out


# -- broadcast server --------------------------------------------------------------


class GatewayServer:
    """Accepts raw-TCP and WebSocket subscribers; fans frames out to both."""

    def __init__(self, host: str, tcp_port: int, ws_port: int, command_sink):
        self.command_sink = command_sink
        self._lock = threading.Lock()
        self._tcp_clients: list[socket.socket] = []
        self._ws_clients: list[socket.socket] = []
        self._tcp_srv = self._listen(host, tcp_port)
        self._ws_srv = self._listen(host, ws_port)
        self.tcp_port = self._tcp_srv.getsockname()[1]
        self.ws_port = self._ws_srv.getsockname()[1]
        self._running = True
        self._threads = [
            threading.Thread(target=self._accept_loop, args=(self._tcp_srv, False), daemon=True),
            threading.Thread(target=self._accept_loop, args=(self._ws_srv, True), daemon=True),
        ]
        for t in self._threads:
            t.start()

    @staticmethod
    def _listen(host, port):
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(8)
        return srv

    def _accept_loop(self, srv, is_ws):
        while self._running:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            if is_ws:
                if not ws_handshake(conn):
                    conn.close()
                    continue
                with self._lock:
                    self._ws_clients.append(conn)
                threading.Thread(target=self._ws_read_loop, args=(conn,), daemon=True).start()
            else:
                with self._lock:
                    self._tcp_clients.append(conn)
                threading.Thread(target=self._tcp_read_loop, args=(conn,), daemon=True).start()

    def _handle_inbound(self, messages):
        for msg in messages:
            if isinstance(msg, wire.CommandMsg):
                self.command_sink(msg)

    def _tcp_read_loop(self, conn):
        decoder = wire.StreamDecoder()
        while self._running:
            try:
                data = conn.recv(65536)
            except OSError:
                break
            if not data:
                break
            self._handle_inbound(decoder.feed(data))
        self._drop(conn)

    def _ws_read_loop(self, conn):
        reader = WsFrameReader()
        decoder = wire.StreamDecoder()
        while self._running:
            try:
                data = conn.recv(65536)
            except OSError:
                break
            if not data:
                break
            for opcode, payload in reader.feed(data):
                if opcode == 0x2:  # binary
                    self._handle_inbound(decoder.feed(payload))
                elif opcode == 0x9:  # ping -> pong
                    try:
                        conn.sendall(struct.pack("!BB", 0x8A, 0))
                    except OSError:
                        pass
                elif opcode == 0x8:  # close
                    self._drop(conn)
                    return
        self._drop(conn)

    def _drop(self, conn):
        with self._lock:
            for pool in (self._tcp_clients, self._ws_clients):
                if conn in pool:
                    pool.remove(conn)
        try:
            conn.close()
        except OSError:
            pass

    def broadcast(self, frame: bytes):
        ws_frame = ws_encode_binary(frame)
        with self._lock:
            tcp = list(self._tcp_clients)
            ws = list(self._ws_clients)
        for conn in tcp:
            try:
                conn.sendall(frame)
            except OSError:
                self._drop(conn)
        for conn in ws:
            try:
                conn.sendall(ws_frame)
            except OSError:
                self._drop(conn)

    def close(self):
        self._running = False
        for srv in (self._tcp_srv, self._ws_srv):
            try:
                srv.close()
            except OSError:
                pass
        with self._lock:
            clients = self._tcp_clients + self._ws_clients
        for conn in clients:
            try:
                conn.close()
            except OSError:
                pass


# -- live session -------------------------------------------------------------------


class ServeSession:
    """Interactive closed-loop session broadcast over the gateway.

    Starts attached in teleoperation; the console drives it through COMMAND
    messages (step up/down, set_target, set_step, start_auto, retract...).
    """

    def __init__(self, cfg: TrialConfig, host="127.0.0.1", tcp_port=0, ws_port=0,
                 realtime=True):
        self.cfg = cfg
        self.realtime = realtime
        self.rngs = _streams(cfg.seed)
        phantom_kwargs = dict(cfg.phantom)
        if "reflectivity" in phantom_kwargs:
            phantom_kwargs["reflectivity"] = Reflectivity(**phantom_kwargs["reflectivity"])
        self.interaction = build(InteractionConfig, cfg.interaction)
        self.phantom = build(TissuePhantom, phantom_kwargs)
        self.ctrl_cfg = build(ctl.ControllerConfig, cfg.controller, mode="teleop")
        self.kin = build(RobotKinematics, cfg.robot, max_travel=self.ctrl_cfg.max_travel)
        self.needle = NeedleState.attached(self.phantom, self.ctrl_cfg.fiber_offset_um)
        self.axis = dsp.DepthAxis(n_s=self.ctrl_cfg.n_s)
        self.bank = TrackerBank(self.axis, fiber_offset=self.ctrl_cfg.fiber_offset_um,
                                mode=cfg.tissue_mode, noise_sigma_um=cfg.tracking_noise_um,
                                rng=self.rngs["tracking"])
        self.robot_axis = RobotAxis(kin=self.kin)
        self.net = SegNet.load(cfg.weights_path) if cfg.tracker_mode == "neural" else None
        self.state = ctl.ControllerState()
        ctl.attach(self.state)
        self.paused = False
        self._pending = []
        self._pending_lock = threading.Lock()
        self._seq = 0
        self._wire_seq = 0
        self._stop = threading.Event()
        self.server = GatewayServer(host, tcp_port, ws_port, self._on_command)

    # command translation -----------------------------------------------------

    def _on_command(self, msg: wire.CommandMsg):
        with self._pending_lock:
            self._pending.append(msg)

    def _drain_commands(self):
        with self._pending_lock:
            pending, self._pending = self._pending, []
        ops = []
        for msg in pending:
            op, v = msg.opcode, msg.operand
            if op in ("step_down", "step_up", "rotate_on", "rotate_off", "retract"):
                ops.append((op, v) if op.startswith("step") else (op,))
            elif op == "set_target":
                self.ctrl_cfg = dataclasses.replace(self.ctrl_cfg, target_gap=float(v))
            elif op == "set_step":
                self.ctrl_cfg = dataclasses.replace(self.ctrl_cfg, step_size=float(v))
            elif op == "start_auto":
                self.ctrl_cfg = dataclasses.replace(self.ctrl_cfg, mode="autonomous")
                self.paused = False
            elif op == "pause":
                self.paused = True
            # set_time_range / set_dist_range / auto_range are display-local
        return ops

    # one cycle -----------------------------------------------------------------

    def _send(self, msg):
        self.server.broadcast(wire.encode(msg, seq=self._wire_seq,
                                          timestamp_us=int(self._seq * ctl.CYCLE_PERIOD_S * 1e6)))
        self._wire_seq += 1

    def step(self):
        cfg = self.cfg
        raw, scan = _sense(cfg, self.phantom, self.needle, self.axis, self.net,
                           self.rngs["sense"], self.rngs["frames"])
        est = self.bank.update(raw, needle_pos_um=self.needle.tip_depth, frame_seq=self._seq)
        ops = self._drain_commands()
        if self.paused and self.ctrl_cfg.mode == "autonomous":
            commands, events = [], []
        else:
            commands, events = ctl.tick(self.state, est, self.ctrl_cfg,
                                        self._seq * ctl.CYCLE_PERIOD_S, self.axis, ops)
        for ev in events:
            if ev["kind"] == "contact":
                self.axis.correction_active = True
        error_text = next((str(e.get("reason", "")) for e in events if e["kind"] == "error"), "")
        for cmd in commands:
            if cmd.kind == ctl.ROTATE_ON:
                self.needle = dataclasses.replace(self.needle, rotating=True)
            elif cmd.kind == ctl.ROTATE:
                self.robot_axis.apply(rotation_command(self.kin))
            elif cmd.kind == ctl.ADVANCE:
                motor = compensate(self.kin, cmd.delta_um, position_um=self.robot_axis.position_um)
                dz, _ = self.robot_axis.apply(motor)
                if dz >= 0:
                    self.phantom, self.needle, _ = advance_needle(
                        self.phantom, self.needle, dz, self.interaction)
                else:
                    self.phantom, self.needle = retract_needle(self.phantom, self.needle, -dz)
            elif cmd.kind == ctl.RETRACT:
                motor = compensate(self.kin, -cmd.delta_um, position_um=self.robot_axis.position_um)
                dz, _ = self.robot_axis.apply(motor)
                self.phantom, self.needle = retract_needle(self.phantom, self.needle, -dz)
                ctl.finish_retraction(self.state)

        if scan is not None:
            self._send(wire.MscanMsg(pixels=scan.pixels, dz_air=self.axis.dz_air,
                                     n_s=self.axis.n_s,
                                     correction_active=self.axis.correction_active,
                                     first_seq=self._seq))
        self._send(wire.TraceMsg(
            epi_um=float(est.epi_um) if np.isfinite(est.epi_um) else 0.0,
            dm_um=float(est.dm_um) if np.isfinite(est.dm_um) else 0.0,
            needle_um=float(est.needle_tip_um),
            valid_epi=est.valid_epi, valid_dm=est.valid_dm, frame_seq=self._seq))
        self._send(wire.StatusMsg(phase=self.state.phase,
                                  travel_um=float(self.state.cumulative_travel),
                                  error_code=1 if self.state.phase == ctl.ERROR else 0,
                                  error_text=error_text))
        self._seq += 1

    def run(self, max_cycles=None):
        n = 0
        while not self._stop.is_set():
            start = time.perf_counter()
            self.step()
            n += 1
            if max_cycles is not None and n >= max_cycles:
                break
            if self.realtime:
                budget = ctl.CYCLE_PERIOD_S - (time.perf_counter() - start)
                if budget > 0:
                    time.sleep(budget)

    def close(self):
        self._stop.set()
        self.server.close()


def serve(cfg: TrialConfig, host: str, tcp_port: int, ws_port: int,
          max_cycles=None, realtime=True) -> None:
    session = ServeSession(cfg, host=host, tcp_port=tcp_port, ws_port=ws_port,
                           realtime=realtime)
    cfg_frames = "on" if cfg.emit_frames else "off"
    print(f"gateway: tcp={host}:{session.server.tcp_port} "
          f"ws={host}:{session.server.ws_port} frames={cfg_frames}")
    try:
        session.run(max_cycles=max_cycles)
    except KeyboardInterrupt:
        pass
    finally:
        session.close()
