"""Teleop service: command validation, lock semantics, decay, round trips."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from locoman.errors import SchemaError
from locoman.scenario import Scenario
from locoman.teleop import DECAY_S, LiveSim, create_app, handle_command


@pytest.fixture(scope="module")
def live():
    # session without worker threads: protocol-level tests only
    sim = LiveSim(Scenario(name="test", terrain="flat", duration=1e9))
    return sim


@pytest.fixture(scope="module")
def client(live):
    return TestClient(create_app(live))


def _cmd(vx=0.0, vy=0.0, yaw_rate=0.0, pitch=0.0, **extra):
    base = {"v": 1, "type": "command", "vx": vx, "vy": vy,
            "yaw_rate": yaw_rate, "pitch": pitch}
    base.update(extra)
    return base


# --- handle_command --------------------------------------------------------------


def test_command_clamped_with_warning(live):
    clean, warnings = handle_command(_cmd(vx=10.0), live.limits)
    assert clean["vx"] == pytest.approx(live.limits.max_speed)
    assert any("vx" in w for w in warnings)


def test_command_identity(live):
    clean, warnings = handle_command(_cmd(vx=0.3, vy=-0.1), live.limits)
    assert clean["vx"] == 0.3 and clean["vy"] == -0.1
    assert not warnings


def test_command_missing_field_rejected(live):
    msg = _cmd()
    del msg["vx"]
    with pytest.raises(SchemaError):
        handle_command(msg, live.limits)


def test_command_bad_types_rejected(live):
    with pytest.raises(SchemaError):
        handle_command(_cmd(vx="fast"), live.limits)
    with pytest.raises(SchemaError):
        handle_command(_cmd(arm_qd=[1, 2, 3]), live.limits)
    with pytest.raises(SchemaError):
        handle_command({"v": 2, "type": "command"}, live.limits)


# --- decay on commander loss -------------------------------------------------------


def test_command_decay_law(live):
    live.apply_command({"vx": 0.4, "vy": 0.0, "yaw_rate": 0.0, "pitch": 0.0,
                        "arm_qd": None, "arm_q": None})
    assert live.effective_command().vx == pytest.approx(0.4)
    live.commander_lost()
    time.sleep(0.5 * DECAY_S)
    mid = live.effective_command().vx
    assert 0.0 < mid < 0.4
    time.sleep(0.6 * DECAY_S)
    assert live.effective_command().vx == 0.0
    live.apply_command({"vx": 0.0, "vy": 0.0, "yaw_rate": 0.0, "pitch": 0.0,
                        "arm_qd": None, "arm_q": None})


# --- websocket protocol --------------------------------------------------------------


def test_viewer_receives_snapshots(client):
    with client.websocket_connect("/ws") as ws:
        ws.send_text(json.dumps({"v": 1, "type": "hello", "role": "viewer"}))
        ack = json.loads(ws.receive_text())
        assert ack["type"] == "hello_ack" and ack["role"] == "viewer"
        snap = json.loads(ws.receive_text())
        assert snap["type"] == "snapshot"
        assert len(snap["srb"]) == 12 and len(snap["arm"]) == 20
        # lossless round trip: plain JSON types only
        again = json.loads(json.dumps(snap))
        assert again == snap


def test_commander_lock_first_come(client):
    with client.websocket_connect("/ws") as ws1:
        ws1.send_text(json.dumps({"v": 1, "type": "hello", "role": "commander"}))
        ack1 = json.loads(ws1.receive_text())
        assert ack1["role"] == "commander"
        with client.websocket_connect("/ws") as ws2:
            ws2.send_text(json.dumps({"v": 1, "type": "hello",
                                      "role": "commander"}))
            first = json.loads(ws2.receive_text())
            assert first["type"] == "error"
            assert first["error"] == "CommanderLocked"
            ack2 = json.loads(ws2.receive_text())
            assert ack2["role"] == "viewer"


def test_command_applied_and_malformed_rejected(client, live):
    with client.websocket_connect("/ws") as ws:
        ws.send_text(json.dumps({"v": 1, "type": "hello", "role": "commander"}))
        json.loads(ws.receive_text())
        ws.send_text(json.dumps(_cmd(vx=0.25)))
        deadline = time.time() + 2.0
        while time.time() < deadline:
            if abs(live.effective_command().vx - 0.25) < 1e-12:
                break
            time.sleep(0.02)
        assert live.effective_command().vx == pytest.approx(0.25)

        before = live.effective_command()
        bad = _cmd(vx=0.9)
        del bad["pitch"]
        ws.send_text(json.dumps(bad))
        seen_error = False
        deadline = time.time() + 2.0
        while time.time() < deadline and not seen_error:
            msg = json.loads(ws.receive_text())
            if msg["type"] == "error" and msg["error"] == "SchemaError":
                seen_error = True
        assert seen_error
        assert live.effective_command().vx == pytest.approx(before.vx)
        ws.send_text(json.dumps(_cmd()))  # reset to zero for other tests


def test_viewer_cannot_command(client, live):
    with client.websocket_connect("/ws") as ws:
        ws.send_text(json.dumps({"v": 1, "type": "hello", "role": "viewer"}))
        json.loads(ws.receive_text())
        ws.send_text(json.dumps(_cmd(vx=0.5)))
        deadline = time.time() + 2.0
        got = None
        while time.time() < deadline:
            msg = json.loads(ws.receive_text())
            if msg["type"] == "error":
                got = msg
                break
        assert got is not None and got["error"] == "CommanderLocked"


def test_info_endpoint(client):
    out = client.get("/api/info")
    assert out.status_code == 200
    body = out.json()
    assert body["v"] == 1 and "scenario" in body
