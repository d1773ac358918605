import json
import math

import numpy as np
import pytest

from ecpsim import cli
from ecpsim.body import State
from ecpsim.scenarios import (
    ConfigError,
    ImpulseSchedule,
    ScheduleEntry,
    builtin,
    builtin_document,
    csv_columns,
    parse_config,
    record_row,
)
from ecpsim.stepper import AppliedImpulse

MINIMAL = {
    "duration": 0.05,
    "bodies": [
        {"name": "cube", "shape": {"kind": "cuboid", "size": [1, 1, 1]}, "mass": 1.0, "position": [0, 0, 0.5]},
        {"name": "ground", "shape": {"kind": "halfspace"}, "fixed": True},
    ],
    "contacts": [{"body_f": "cube", "body_g": "ground", "friction": {"mu": 0.2}}],
}


def doc(**changes):
    out = json.loads(json.dumps(MINIMAL))
    out.update(changes)
    return out


def test_minimal_document_defaults():
    config = parse_config(json.dumps(MINIMAL))
    assert (config.step, config.gravity, config.solver.tolerance) == (0.01, 9.8, 1e-8)
    assert config.steps == 5 and config.schedule == []
    fp = config.contacts[0].friction
    assert (fp.e_t, fp.e_o, fp.e_r) == (1.0, 1.0, 1.0)
    assert np.allclose(config.bodies[0].body_inertia, np.eye(3) / 6)
    assert np.allclose(config.initial[0].orientation, [1, 0, 0, 0])


def test_unknown_field_is_named():
    bad = doc()
    bad["bodies"][0]["colour"] = "red"
    with pytest.raises(ConfigError, match=r"bodies\[0\]\.colour: unknown field"):
        parse_config(json.dumps(bad))


def test_negative_friction_rejected():
    bad = doc()
    bad["contacts"][0]["friction"]["mu"] = -0.1
    with pytest.raises(ConfigError, match=r"contacts\[0\]\.friction\.mu"):
        parse_config(json.dumps(bad))


@pytest.mark.parametrize("text, where", [
    ("[1, 2]", "<root>"),
    ("{not json", "<root>"),
])
def test_malformed_documents(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_semantic_errors():
    moving_plane = doc()
    moving_plane["bodies"][1]["fixed"] = False
    with pytest.raises(ConfigError, match="half-space must be fixed"):
        parse_config(json.dumps(moving_plane))
    missing_body = doc(schedule=[{"body": "nobody", "t_start": 0, "t_end": 0, "impulse": [0] * 6}])
    with pytest.raises(ConfigError, match=r"schedule\[0\]\.body"):
        parse_config(json.dumps(missing_body))


def test_overlapping_timed_entries_need_additive():
    entries = [{"body": "cube", "t_start": 0.0, "t_end": 0.02, "impulse": [1, 0, 0, 0, 0, 0]},
               {"body": "cube", "t_start": 0.01, "t_end": 0.03, "impulse": [0, 1, 0, 0, 0, 0]}]
    with pytest.raises(ConfigError, match="overlaps"):
        parse_config(json.dumps(doc(schedule=entries)))
    for e in entries:
        e["additive"] = True
    assert len(parse_config(json.dumps(doc(schedule=entries))).schedule) == 2


def test_scenario2_trigger_entry():
    (entry,) = builtin("scenario2").schedule
    assert entry.triggered and entry.condition == "spin_z_crosses_zero"
    assert entry.impulse == AppliedImpulse(p_zt=3.0)


def test_builtin_values():
    assert builtin("scenario1").contacts[0].friction.mu == 0.12
    s3 = builtin("scenario3").schedule
    first = next(e for e in s3 if e.t_start == 1.0)
    r = math.sqrt(2) / 2
    assert first.impulse.vector() == pytest.approx([r, -r, 0, 0.5, 0.5, 0])
    assert builtin("scenario4").bodies[0].mass == 75
    with pytest.raises(KeyError):
        builtin_document("scenario9")


def spinning(w):
    return [State([0, 0, 0], [1, 0, 0, 0], [0, 0, 0], [0, 0, w])]


def test_trigger_fires_on_sign_change_with_refractory():
    entry = ScheduleEntry(0, AppliedImpulse(p_zt=3.0), condition="spin_z_crosses_zero", refractory=2)
    sched = ImpulseSchedule([entry], 0.01)
    spins = [0.2, 0.1, -0.1, -0.2, 0.3, -0.3, 0.5, -0.5]
    fired = [bool(sched.impulses(k, spinning(w))) for k, w in enumerate(spins)]
    # first sample never fires; after a firing the next two samples are ignored
    assert fired == [False, False, True, False, False, True, False, False]


def test_trigger_fires_at_rest():
    entry = ScheduleEntry(0, AppliedImpulse(p_zt=1.0), condition="spin_z_crosses_zero")
    sched = ImpulseSchedule([entry], 0.01)
    assert not sched.impulses(0, spinning(0.0))
    assert sched.impulses(1, spinning(0.0)) == {0: AppliedImpulse(p_zt=1.0)}


def test_timed_window_uses_step_start_time():
    entry = ScheduleEntry(0, AppliedImpulse(p_x=1.0), t_start=0.02, t_end=0.03)
    sched = ImpulseSchedule([entry], 0.01)
    assert [bool(sched.impulses(k, spinning(0))) for k in range(5)] == [False, False, True, True, False]


def test_additive_entries_sum():
    a = ScheduleEntry(0, AppliedImpulse(p_x=1.0), t_start=0.0, t_end=0.0, additive=True)
    b = ScheduleEntry(0, AppliedImpulse(p_y=2.0), t_start=0.0, t_end=0.0, additive=True)
    assert ImpulseSchedule([a, b], 0.01).impulses(0, spinning(0))[0] == AppliedImpulse(p_x=1.0, p_y=2.0)


def test_csv_columns_layout():
    config = builtin("scenario1")
    cols = csv_columns(config.bodies, 1)
    assert cols[:4] == ["t", "cube.x", "cube.y", "cube.z"]
    assert cols[-3:] == ["c0.gap", "c0.L", "c0.D"] and len(cols) == 1 + 13 + 12


# -- command line ----------------------------------------------------------------


def test_run_scenario1_writes_400_rows(tmp_path, capsys):
    out = tmp_path / "s1.csv"
    assert cli.main(["run", "scenario1", "--out", str(out)]) == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 401 and lines[0].startswith("t,cube.x")
    assert lines[-1].split(",")[0] == "4"


def test_scenario_row_counts_and_columns(runs):
    config, records = runs("scenario2")
    assert len(records) == 1000
    cols = csv_columns(config.bodies, len(config.contacts))
    D = np.array([record_row(config, r)[cols.index("c0.D")] for r in records])
    assert np.nanmax(np.abs(D)) <= 1e-6
    config, records = runs("scenario3")
    col = csv_columns(config.bodies, 1).index("c0.N")
    N = [int(record_row(config, r)[col]) for r in records]
    first = {n: N.index(n) for n in (3, 2, 1)}
    assert first[3] < first[2] < first[1]


def test_csv_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert cli.main(["run", "scenario3", "--steps", "40", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_output_field_selection(tmp_path):
    path = tmp_path / "cfg.json"
    out = tmp_path / "out.csv"
    path.write_text(json.dumps(doc(output={"path": str(out), "fields": ["cube.z", "c0.p_n"]})))
    assert cli.main(["run", str(path)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "t,cube.z,c0.p_n" and len(rows) == 6
    assert float(rows[1].split(",")[2]) == pytest.approx(0.098)


def test_stdout_output(capsys):
    assert cli.main(["run", "scenario1", "--steps", "2", "--out", "-"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_config_errors_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad_doc = doc()
    bad_doc["contacts"][0]["friction"]["mu"] = -1
    bad.write_text(json.dumps(bad_doc))
    assert cli.main(["run", str(bad)]) == cli.EXIT_IO
    assert "contacts[0].friction.mu" in capsys.readouterr().err
    assert cli.main(["verify", str(bad)]) == cli.EXIT_IO
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    assert cli.main(["run", "scenario1", "--out", str(tmp_path / "no" / "dir.csv")]) == cli.EXIT_IO
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == cli.EXIT_IO


def test_solver_failure_exits_2(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert cli.main(["run", "scenario1", "--tol", "1e-300", "--out", str(out)]) == cli.EXIT_SOLVER
    assert "did not converge" in capsys.readouterr().err
    assert len(out.read_text().splitlines()) == 1  # header only


def test_verify_reports_failure_exit_1(tmp_path, capsys):
    # a resting cube under the name of the vertex-edge-face scenario cannot show N = 3 → 2 → 1
    path = tmp_path / "s3.json"
    path.write_text(json.dumps(doc(name="scenario3")))
    assert cli.main(["verify", str(path)]) == cli.EXIT_VERIFY
    out = capsys.readouterr().out
    assert "N takes the ordered values 3 → 2 → 1" in out and "FAIL" in out


def test_verify_scenario1_passes(capsys):
    assert cli.main(["verify", "scenario1"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "max |MNCP − analytic|" in out and "FAIL" not in out


def test_dump_config_round_trips(capsys):
    assert cli.main(["dump-config", "scenario4"]) == 0
    text = capsys.readouterr().out
    assert parse_config(text).bodies[0].mass == 75
    assert cli.main(["dump-config", "nope"]) == cli.EXIT_IO
