"""Terrain generation, scenario runner, and metrics."""

import numpy as np
import pytest

from locoman import metrics, terrain
from locoman.scenario import Scenario, run_scenario


# --- terrain ------------------------------------------------------------------


def test_terrain_deterministic_per_seed():
    a = terrain.generate_terrain(7)
    b = terrain.generate_terrain(7)
    assert a.blocks == b.blocks


def test_terrain_seeds_differ():
    a = terrain.generate_terrain(1)
    b = terrain.generate_terrain(2)
    assert a.blocks != b.blocks


def test_terrain_block_count_and_ranges():
    heights, widths, lengths = [], [], []
    for seed in range(50):
        t = terrain.generate_terrain(seed)
        assert len(t.blocks) == terrain.N_BLOCKS
        for b in t.blocks:
            heights.append(b.height)
            widths.append(b.x_max - b.x_min)
            lengths.append(b.y_max - b.y_min)
    assert min(heights) >= 0.01 and max(heights) <= 0.03
    assert min(widths) >= 0.10 and max(widths) <= 0.20
    assert min(lengths) >= 1.0 and max(lengths) <= 7.0


def test_terrain_blocks_non_overlapping():
    for seed in range(20):
        t = terrain.generate_terrain(seed)
        spans = sorted((b.x_min, b.x_max) for b in t.blocks)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a1 <= b0 + 1e-12


def test_terrain_height_queries():
    t = terrain.generate_terrain(3)
    b = t.blocks[0]
    cx = 0.5 * (b.x_min + b.x_max)
    cy = 0.5 * (b.y_min + b.y_max)
    assert t.height(cx, cy) == b.height
    assert t.height(-5.0, 0.0) == 0.0
    assert terrain.flat().height(1.0, 1.0) == 0.0


def test_terrain_presets():
    tall = terrain.preset("tall_blocks", seed=0)
    assert all(b.height == 0.05 for b in tall.blocks)
    with pytest.raises(ValueError):
        terrain.preset("lava")


# --- scenario runner -----------------------------------------------------------


def test_scenario_from_dict_roundtrip(tmp_path):
    raw = {"name": "demo", "terrain": "blocks", "seed": 4, "duration": 1.0,
           "commands": [{"t": 0.0, "vx": 0.2}], "min_distance": 0.1}
    sc = Scenario.from_dict(raw)
    assert sc.name == "demo" and sc.seed == 4
    path = tmp_path / "s.yaml"
    import yaml
    path.write_text(yaml.safe_dump(raw))
    sc2 = Scenario.from_file(path)
    assert sc2 == sc


def test_command_schedule_lookup():
    sc = Scenario(commands=[{"t": 0.0, "vx": 0.0}, {"t": 1.0, "vx": 0.3}])
    assert sc.command_at(0.5).get("vx", 0.0) == 0.0
    assert sc.command_at(1.5)["vx"] == 0.3


def test_short_inplace_run_clean():
    sc = Scenario(name="inplace", terrain="flat", duration=1.2)
    res = run_scenario(sc)
    assert res.termination == "completed"
    assert res.success
    assert res.qp_failures == 0
    assert all(v == 0 for v in res.violation_counters.values())
    assert res.nmpc_cycles == pytest.approx(1.2 * 60, abs=2)


def test_forced_failure_giant_push():
    sc = Scenario(name="doom", terrain="flat", duration=2.0,
                  pushes=[{"t": 0.2, "duration": 0.3, "force": [1e6, 0, 0]}])
    res = run_scenario(sc)
    assert not res.success
    assert res.termination in ("instability", "numerical_blowup")


def test_payload_event_applies():
    from locoman.scenario import SimSession

    sc = Scenario(name="pl", terrain="flat", duration=0.5,
                  payloads=[{"t": 0.1, "mass": 1.0}])
    session = SimSession(sc)
    while session.ms < 200 and session.step_ms():
        pass
    assert session.plant.payload_mass == pytest.approx(1.0)


def test_lockstep_determinism():
    sc = Scenario(name="det", terrain="blocks", seed=11, duration=0.8,
                  commands=[{"t": 0.0, "vx": 0.2}])
    r1 = run_scenario(sc)
    r2 = run_scenario(sc)
    assert r1.digest == r2.digest
    np.testing.assert_array_equal(r1.final_state, r2.final_state)


# --- metrics --------------------------------------------------------------------


def _fake_result(name, distance, success, times):
    from locoman.scenario import RunResult

    return RunResult(
        name=name, success=success, distance=distance, duration=1.0,
        termination="completed" if success else "instability",
        tracking_rms=0.01, nmpc_cycles=len(times),
        nmpc_iterations=[2] * len(times), nmpc_kkt=[1e-5] * len(times),
        solve_times=times, violation_counters={}, qp_failures=0,
        final_state=np.zeros(32), digest="x")


def test_histogram_partition():
    times = [0.005, 0.0125, 0.0135, 0.0145, 0.0155, 0.020, 0.011]
    counts = metrics.solve_time_histogram(times)
    assert sum(counts.values()) == len(times)
    assert counts["<12"] == 2
    assert counts["12-13"] == 1
    assert counts[">=16"] == 1


def test_success_curve_monotone():
    results = [_fake_result(f"r{i}", d, d >= 10, [0.01])
               for i, d in enumerate([2.0, 5.0, 11.0, 12.0, 0.5])]
    curve = metrics.success_distance_curve(results)
    fracs = [f for _, f in curve]
    assert all(a >= b - 1e-12 for a, b in zip(fracs, fracs[1:]))


def test_success_curve_all_success_flat():
    results = [_fake_result(f"r{i}", 12.0, True, [0.01]) for i in range(4)]
    curve = metrics.success_distance_curve(results, grid=[0.0, 5.0, 11.9])
    assert all(f == 1.0 for _, f in curve)


def test_run_log_roundtrip(tmp_path):
    res = _fake_result("demo", 11.0, True, [0.012, 0.013])
    res.violation_counters = {"dynamics": 0}
    npath, spath = metrics.write_run_log(res, tmp_path)
    summary = metrics.read_summary(spath)
    assert summary["success"] == "1"
    assert float(summary["distance_m"]) == pytest.approx(11.0)


def test_batch_table_summary_row():
    results = [_fake_result(f"b_{i}", 11.0, i % 2 == 0, [0.01])
               for i in range(4)]
    lines = metrics.batch_table(results)
    assert lines[-1].startswith("# success_rate,0.5")
