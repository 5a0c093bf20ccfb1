"""Teleoperation endpoint: live simulation behind a WebSocket.

One persistent bidirectional channel per client carrying JSON text messages
(one message per WebSocket frame, schema-versioned with a "v" field).
Multiple viewers may connect; the first client to request the commander role
holds a lock until it disconnects. Telemetry snapshots stream at 30 Hz and a
heartbeat at 1 Hz. On commander loss the active command decays linearly to
zero over 0.5 s.

Wire schema (client -> server):
    {"v":1,"type":"hello","role":"commander"|"viewer"}
    {"v":1,"type":"command","vx":f,"vy":f,"yaw_rate":f,"pitch":f,
     "arm_qd":[4f],"arm_q":[4f] (optional)}
    {"v":1,"type":"push","force":[3f],"duration":f}
    {"v":1,"type":"payload","mass":f}
    {"v":1,"type":"pause"} | {"v":1,"type":"resume"}

Server -> client: hello_ack, snapshot (see SimSession.snapshot), heartbeat,
warning (clamped commands), error (SchemaError / CommanderLocked).
"""

import asyncio
import json
import os
import threading
import time

import numpy as np

from .config import load_controller
from .errors import SchemaError
from .nmpc import ReferenceCommand
from .scenario import NMPC_PATTERN, Scenario, SimSession

SCHEMA_VERSION = 1
SNAPSHOT_HZ = 30.0
HEARTBEAT_S = 1.0
DECAY_S = 0.5


def handle_command(msg, limits) -> tuple[dict, list]:
    """Validate and clamp a command message.

    Returns (clean command dict, warnings); raises SchemaError on malformed
    input. Limits clamp rather than reject, with a warning per field."""
    if not isinstance(msg, dict):
        raise SchemaError("command must be an object")
    if msg.get("v") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {msg.get('v')!r}")
    if msg.get("type") != "command":
        raise SchemaError("not a command message")
    out = {}
    warnings = []

    def scalar(name, limit):
        if name not in msg:
            raise SchemaError(f"missing field {name}")
        val = msg[name]
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SchemaError(f"field {name} must be a number")
        clamped = float(np.clip(val, -limit, limit))
        if clamped != float(val):
            warnings.append(f"{name} clamped to {clamped:+.3f}")
        out[name] = clamped

    scalar("vx", limits.max_speed)
    scalar("vy", limits.max_speed)
    scalar("yaw_rate", limits.max_yaw_rate)
    scalar("pitch", limits.max_pitch)
    for name, size in (("arm_qd", 4), ("arm_q", 4)):
        if name in msg and msg[name] is not None:
            val = msg[name]
            if (not isinstance(val, (list, tuple)) or len(val) != size
                    or not all(isinstance(v, (int, float))
                               and not isinstance(v, bool) for v in val)):
                raise SchemaError(f"field {name} must be a list of {size} numbers")
            out[name] = [float(v) for v in val]
        else:
            out[name] = None
    return out, warnings


class LiveSim:
    """Simulation session driven by worker threads for teleoperation.

    The plant+WBC worker paces to wall clock; the NMPC worker consumes state
    snapshots and publishes solutions (its solve period sets the effective
    replan rate). Command handoff is a single locked reference swap."""

    def __init__(self, scenario: Scenario | None = None):
        self.scenario = scenario or Scenario(name="live", terrain="flat",
                                             duration=1e9)
        self.session = SimSession(self.scenario)
        self.limits = self.session.ctrl.reference
        self._cmd = {"vx": 0.0, "vy": 0.0, "yaw_rate": 0.0, "pitch": 0.0,
                     "arm_qd": None, "arm_q": None}
        self._decay_start = None
        self._paused = False
        self._running = False
        self._cmd_lock = threading.Lock()
        self._threads = []

    # ---- command handling ---------------------------------------------------

    def apply_command(self, clean: dict):
        with self._cmd_lock:
            self._cmd = dict(clean)
            self._decay_start = None

    def commander_lost(self):
        with self._cmd_lock:
            self._decay_start = time.monotonic()

    def effective_command(self) -> ReferenceCommand:
        with self._cmd_lock:
            cmd = dict(self._cmd)
            decay = 1.0
            if self._decay_start is not None:
                decay = max(0.0, 1.0 - (time.monotonic() - self._decay_start)
                            / DECAY_S)
        arm_q = cmd.get("arm_q")
        arm_qd = cmd.get("arm_qd")
        return ReferenceCommand(
            vx=cmd["vx"] * decay,
            vy=cmd["vy"] * decay,
            yaw_rate=cmd["yaw_rate"] * decay,
            pitch=cmd["pitch"],
            arm_q=np.asarray(arm_q, float) if arm_q is not None
            else self.session.q_hold,
            arm_qd=np.asarray(arm_qd, float) * decay if arm_qd is not None
            else np.zeros(4),
        )

    def pause(self, flag=True):
        self._paused = bool(flag)

    # ---- workers -------------------------------------------------------------

    def start(self):
        self._running = True
        sim = threading.Thread(target=self._sim_loop, daemon=True)
        mpc = threading.Thread(target=self._nmpc_loop, daemon=True)
        self._threads = [sim, mpc]
        sim.start()
        mpc.start()

    def stop(self):
        self._running = False
        for th in self._threads:
            th.join(timeout=2.0)

    def _sim_loop(self):
        start = time.monotonic()
        while self._running:
            if self._paused or self.session.termination != "running":
                time.sleep(0.05)
                start = time.monotonic() - self.session.ms * 1e-3
                continue
            self.session.set_command(self.effective_command())
            self.session.step_ms(solve_inline=False, scripted=False)
            target = start + self.session.ms * 1e-3
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)

    def _nmpc_loop(self):
        period = NMPC_PATTERN[0] * 1e-3
        while self._running:
            if self._paused or self.session.termination != "running":
                time.sleep(0.05)
                continue
            t, x_srb, x_arm, feet, cmd = self.session.measured_state()
            try:
                sol = self.session.nc.solve_cycle(t, x_srb, x_arm, cmd, feet)
            except Exception:
                time.sleep(period)
                continue
            self.session.publish_solution(sol)
            spare = period - sol.solve_time
            if spare > 0:
                time.sleep(spare)


def create_app(live: LiveSim):
    """FastAPI application wrapping a LiveSim."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="locoman teleop")
    state = {"commander": None}

    @app.get("/api/info")
    def info():
        return JSONResponse({
            "v": SCHEMA_VERSION,
            "scenario": live.scenario.name,
            "snapshot_hz": SNAPSHOT_HZ,
            "commander_connected": state["commander"] is not None,
        })

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        role = "viewer"
        try:
            raw = await ws.receive_text()
            msg = json.loads(raw)
            if msg.get("type") != "hello" or msg.get("v") != SCHEMA_VERSION:
                await ws.send_text(json.dumps(
                    {"v": SCHEMA_VERSION, "type": "error",
                     "error": "SchemaError",
                     "detail": "expected hello with matching version"}))
                await ws.close()
                return
            want = msg.get("role", "viewer")
            if want == "commander":
                if state["commander"] is None:
                    state["commander"] = ws
                    role = "commander"
                else:
                    await ws.send_text(json.dumps(
                        {"v": SCHEMA_VERSION, "type": "error",
                         "error": "CommanderLocked",
                         "detail": "another commander is connected"}))
                    role = "viewer"
            await ws.send_text(json.dumps(
                {"v": SCHEMA_VERSION, "type": "hello_ack", "role": role}))

            async def sender():
                last_beat = 0.0
                while True:
                    await ws.send_text(json.dumps(live.session.snapshot()))
                    now = time.monotonic()
                    if now - last_beat >= HEARTBEAT_S:
                        await ws.send_text(json.dumps(
                            {"v": SCHEMA_VERSION, "type": "heartbeat",
                             "t": live.session.t}))
                        last_beat = now
                    await asyncio.sleep(1.0 / SNAPSHOT_HZ)

            async def receiver():
                while True:
                    raw = await ws.receive_text()
                    try:
                        msg = json.loads(raw)
                    except json.JSONDecodeError:
                        await ws.send_text(json.dumps(
                            {"v": SCHEMA_VERSION, "type": "error",
                             "error": "SchemaError", "detail": "invalid JSON"}))
                        continue
                    mtype = msg.get("type")
                    if mtype == "command":
                        if role != "commander":
                            await ws.send_text(json.dumps(
                                {"v": SCHEMA_VERSION, "type": "error",
                                 "error": "CommanderLocked",
                                 "detail": "viewer sessions cannot command"}))
                            continue
                        try:
                            clean, warnings = handle_command(msg, live.limits)
                        except SchemaError as exc:
                            await ws.send_text(json.dumps(
                                {"v": SCHEMA_VERSION, "type": "error",
                                 "error": "SchemaError", "detail": str(exc)}))
                            continue
                        live.apply_command(clean)
                        for w in warnings:
                            await ws.send_text(json.dumps(
                                {"v": SCHEMA_VERSION, "type": "warning",
                                 "warning": "LimitViolation", "detail": w}))
                    elif mtype == "push" and role == "commander":
                        live.session.inject_push(
                            msg.get("force", [0, 0, 0]),
                            msg.get("duration", 0.2))
                    elif mtype == "payload" and role == "commander":
                        live.session.add_payload(msg.get("mass", 0.0))
                    elif mtype == "pause" and role == "commander":
                        live.pause(True)
                    elif mtype == "resume" and role == "commander":
                        live.pause(False)
                    else:
                        await ws.send_text(json.dumps(
                            {"v": SCHEMA_VERSION, "type": "error",
                             "error": "SchemaError",
                             "detail": f"unknown type {mtype!r}"}))

            tasks = [asyncio.create_task(sender()),
                     asyncio.create_task(receiver())]
            done, pending = await asyncio.wait(
                tasks, return_when=asyncio.FIRST_EXCEPTION)
            for task in pending:
                task.cancel()
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            if state["commander"] is ws:
                state["commander"] = None
                live.commander_lost()

    dist = os.path.join(os.path.dirname(os.path.dirname(
        os.path.dirname(os.path.abspath(__file__)))), "frontend", "dist")
    if os.path.isdir(dist):
        app.mount("/", StaticFiles(directory=dist, html=True), name="ui")
    return app


def serve(host="127.0.0.1", port=8733, scenario_path=None):
    """Start the live simulation and the teleop endpoint (blocking)."""
    import uvicorn

    scenario = (Scenario.from_file(scenario_path) if scenario_path
                else None)
    live = LiveSim(scenario)
    live.start()
    app = create_app(live)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        live.stop()
