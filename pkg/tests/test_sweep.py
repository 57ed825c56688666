import dataclasses
import json

import numpy as np
import pytest

from fhe_alloc import sweep
from fhe_alloc.errors import ConfigError
from fhe_alloc.scenario_io import generate_scenario


def test_unit_conversion():
    assert sweep.to_si([1, 2], "MHz") == [1e6, 2e6]
    assert sweep.to_si([30], "dBm") == [pytest.approx(1.0)]
    with pytest.raises(ConfigError):
        sweep.to_si([1], "furlong")


def test_config_from_dict_and_file(tmp_path):
    data = {"parameter": "b_total", "values": [5, 10], "units": "MHz", "allocators": ["proposed"],
            "fixed": {"omega": 0, "p_max": {"value": 20, "units": "dBm"}}, "name": "bw"}
    cfg = sweep.SweepConfig.from_dict(data)
    assert cfg.values == (5e6, 10e6) and cfg.name == "bw"
    assert dict(cfg.fixed)["p_max"] == pytest.approx(0.1)
    path = tmp_path / "c.json"
    path.write_text(json.dumps([data, {**data, "name": "bw2"}]))
    assert [c.name for c in sweep.load_config(path)] == ["bw", "bw2"]


@pytest.mark.parametrize("bad", [
    {"parameter": "nope", "values": [1]},
    {"parameter": "omega", "values": []},
    {"parameter": "omega", "values": [1], "allocators": ["magic"]},
    {"parameter": "omega", "values": [1], "repetitions": 0},
    {"parameter": "omega", "values": [1], "extra": 1},
    {"values": [1]},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        sweep.SweepConfig.from_dict(bad)


def test_presets_cover_six_resources_and_omega():
    assert set(sweep.RESOURCE_PRESETS) == {"bandwidth", "power", "server_capacity", "device_frequency",
                                           "device_deadline", "server_deadline"}
    for name in sweep.RESOURCE_PRESETS:
        assert dict(sweep.PRESETS[name].fixed) == {"omega": 0.0}
    pw = sweep.PRESETS["privacy_weight"]
    assert pw.values == tuple(float(v) for v in range(1, 11))
    assert dict(pw.fixed) == {"t_max_device": 10000.0, "t_max_server": 10000.0}


def test_apply_parameter(small_scenario):
    assert sweep.apply_parameter(small_scenario, "b_total", 3e6).b_total == 3e6
    assert np.all(sweep.apply_parameter(small_scenario, "p_max", 0.5).p_max == 0.5)
    with pytest.raises(ConfigError):
        sweep.apply_parameter(small_scenario, "kappa", 1.0)


def test_redraw_channels_is_seeded(small_scenario):
    a = sweep.redraw_channels(small_scenario, 3, 1)
    b = sweep.redraw_channels(small_scenario, 3, 1)
    c = sweep.redraw_channels(small_scenario, 3, 2)
    assert np.array_equal(a.h, b.h) and not np.array_equal(a.h, c.h)
    assert np.array_equal(a.sigma, small_scenario.sigma)


def _strip_time(rows):
    return [dataclasses.replace(r, solve_seconds=0.0) for r in rows]


def test_run_sweep_rows_and_csv_round_trip(tmp_path):
    scn = generate_scenario(1, n_devices=2)
    cfg = sweep.SweepConfig("b_total", (4e6, 8e6), allocators=("proposed", "average"),
                            repetitions=2, fixed=(("omega", 0.0),), name="bw")
    rows = sweep.run_sweep(cfg, scn)
    assert [(r.value, r.allocator, r.repetition) for r in rows] == [
        (v, a, k) for v in (4e6, 8e6) for a in ("proposed", "average") for k in (0, 1)]
    assert all(r.status == "ok" for r in rows)
    for r in rows:
        if r.allocator == "proposed":
            assert r.iterations >= 1
            avg = next(x for x in rows if x.allocator == "average" and x.value == r.value
                       and x.repetition == r.repetition)
            assert r.energy_total < avg.energy_total
    path = tmp_path / "out.csv"
    sweep.write_csv(rows, path)
    assert path.read_bytes().split(b"\r\n")[0].decode() == ",".join(sweep.COLUMNS)
    assert sweep.read_csv(path) == rows


def test_parallel_matches_serial():
    scn = generate_scenario(1, n_devices=2)
    cfg = sweep.SweepConfig("omega", (0.0, 2.0), allocators=("proposed", "radio_only"))
    serial = sweep.run_sweep(cfg, scn, workers=1)
    parallel = sweep.run_sweep(cfg, scn, workers=2)
    assert _strip_time(serial) == _strip_time(parallel)


def test_infeasible_point_is_reported():
    scn = generate_scenario(1, n_devices=2)
    cfg = sweep.SweepConfig("f_total", (1e8,), allocators=("proposed", "average"))
    rows = sweep.run_sweep(cfg, scn)
    assert [r.status for r in rows] == ["infeasible", "infeasible"]
    assert rows[0].objective is None and "server" in rows[0].detail


def test_read_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        sweep.read_csv(path)
    header = ",".join(sweep.COLUMNS)
    path.write_text(header + "\nx,y\n")
    with pytest.raises(ConfigError):
        sweep.read_csv(path)
    row = ["s", "omega", "notafloat"] + [""] * (len(sweep.COLUMNS) - 3)
    path.write_text(header + "\n" + ",".join(row) + "\n")
    with pytest.raises(ConfigError):
        sweep.read_csv(path)
