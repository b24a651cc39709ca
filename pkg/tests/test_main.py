from __future__ import annotations

from pathlib import Path

import pytest

from harnackprop.main import build_parser, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch) -> None:
    for name in ("HARNACKPROP_CONFIG", "HARNACKPROP_OUT", "LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def invoke(tmp_path: Path, command: str, config: str, *overrides: str) -> int:
    argv = [command, "--config", str(CONFIGS / config), "--out", str(tmp_path)]
    for item in overrides:
        argv += ["--set", item]
    return run(argv)


def last_error(capsys) -> str:
    return capsys.readouterr().err.strip().splitlines()[-1]


def record(tmp_path: Path, name: str) -> dict[str, str]:
    lines = (tmp_path / f"{name}.txt").read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"# {name}"
    fields = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value
    return fields


def test_parser_knows_every_subcommand() -> None:
    parser = build_parser()
    for name in ("check", "fields", "brackets", "lift", "reach", "path", "solve", "measure", "harnack", "absorbent"):
        args = parser.parse_args([name, "--set", "grid.h=0.1"])
        assert args.command == name
        assert args.overrides == ["grid.h=0.1"]


def test_check_heat_passes(tmp_path: Path) -> None:
    assert invoke(tmp_path, "check", "heat.yml", "grid.h=0.1") == 0
    fields = record(tmp_path, "check")
    assert fields["h2"] == "PASS"
    assert fields["hoermander"] == "PASS"
    assert fields["barrier"] == "PASS"
    assert (tmp_path / "check.csv").read_text(encoding="utf-8").startswith("x1,x2,rank,smallest_pivot\n")


def test_check_reports_h2_violation(tmp_path: Path, capsys) -> None:
    assert invoke(tmp_path, "check", "grushin_lifted.yml", "operator.lift=false") == 3
    assert last_error(capsys).startswith("error: H2Violation:")
    fields = record(tmp_path, "check")
    assert fields["h2"] == "FAIL"
    assert fields["lifted h2"] == "PASS"


def test_check_lifted_operator(tmp_path: Path) -> None:
    assert invoke(tmp_path, "check", "grushin_lifted.yml") == 0
    fields = record(tmp_path, "check")
    assert fields["dimension"] == "3"
    assert fields["inf a33"] == "1"


def test_missing_config_is_a_config_error(tmp_path: Path, capsys) -> None:
    assert run(["reach", "--config", str(tmp_path / "nope.yml"), "--out", str(tmp_path)]) == 2
    assert last_error(capsys).startswith("error: ConfigError:")


def test_fields_and_brackets(tmp_path: Path) -> None:
    assert invoke(tmp_path, "fields", "mumford.yml") == 0
    assert "c3 = cos(x1)" in (tmp_path / "fields.txt").read_text(encoding="utf-8")
    assert invoke(tmp_path, "brackets", "mumford.yml", "analysis.rank_points=5") == 0
    fields = record(tmp_path, "brackets")
    assert fields["min rank"] == "3"


def test_lift_describes_extended_operator(tmp_path: Path) -> None:
    assert invoke(tmp_path, "lift", "grushin_lifted.yml") == 0
    fields = record(tmp_path, "lift")
    assert fields["dimension"] == "3"
    assert fields["h2"] == "PASS"


def test_reach_writes_cells(tmp_path: Path) -> None:
    assert invoke(tmp_path, "reach", "heat.yml", "grid.h=0.1") == 0
    fields = record(tmp_path, "reach")
    lines = (tmp_path / "reach.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "i1,i2,x1,x2,reachable,iteration,parent,direction,duration"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == int(fields["inside cells"])
    assert sum(row[4] == "1" for row in rows) == int(fields["reached cells"])
    assert all(row[4] in ("0", "1") for row in rows)


def test_reach_rejects_zero_substeps(tmp_path: Path, capsys) -> None:
    assert invoke(tmp_path, "reach", "heat.yml", "grid.h=0.1", "reach.substeps=0") == 2
    assert last_error(capsys).startswith("error: ConfigError:")


def test_boundary_overflow_is_numerical(tmp_path: Path, capsys) -> None:
    code = invoke(tmp_path, "solve", "heat.yml", "grid.h=0.1", "pde.boundary={kind: expression, expr: '(10)^400'}")
    assert code == 4
    assert last_error(capsys).startswith("error: EvaluationError:")


def test_runs_are_byte_identical(tmp_path: Path) -> None:
    for command in ("reach", "path", "harnack"):
        assert invoke(tmp_path / "first", command, "heat.yml", "grid.h=0.1") == 0
        assert invoke(tmp_path / "second", command, "heat.yml", "grid.h=0.1") == 0
        for suffix in (".csv", ".txt"):
            first = (tmp_path / "first" / f"{command}{suffix}").read_bytes()
            assert first == (tmp_path / "second" / f"{command}{suffix}").read_bytes()


@pytest.mark.parametrize(
    ("config", "overrides"),
    [("ou.yml", ()), ("ou_one_signed.yml", ()), ("mumford.yml", ()), ("heat.yml", ("grid.h=0.1",))],
)
def test_path_validates(tmp_path: Path, config: str, overrides: tuple[str, ...]) -> None:
    assert invoke(tmp_path, "path", config, *overrides) == 0
    assert record(tmp_path, "path")["validation"] == "PASS"
    header = (tmp_path / "path.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("time,x1,x2,")
    assert header.endswith(",segment," + ",".join(f"lambda{i}" for i in range(1, header.count(",x") + 1)) + ",mu")


def test_solve_and_measure(tmp_path: Path) -> None:
    assert invoke(tmp_path, "solve", "heat.yml", "grid.h=0.1") == 0
    fields = record(tmp_path, "solve")
    assert fields["method"] == "direct"
    assert fields["maximum principle"] == "PASS"
    assert invoke(tmp_path, "measure", "heat.yml", "grid.h=0.1") == 0
    assert float(record(tmp_path, "measure")["sum"]) == pytest.approx(1.0, abs=1e-8)


def test_support_data_keeps_peak_on_hull(tmp_path: Path) -> None:
    assert invoke(tmp_path, "solve", "heat.yml", "grid.h=0.1", "pde.boundary={kind: support}") == 0
    fields = record(tmp_path, "solve")
    assert float(fields["u(x0)"]) == pytest.approx(1.0, abs=1e-9)
    assert fields["constant on hull if peak at x0"] == "PASS"


def test_relaxation_failure_is_numerical(tmp_path: Path, capsys) -> None:
    code = invoke(tmp_path, "solve", "heat.yml", "grid.h=0.1", "pde.method=relaxation", "pde.maxiter=2")
    assert code == 4
    assert last_error(capsys).startswith("error: NonConvergence:")


def test_harnack_records(tmp_path: Path) -> None:
    assert invoke(tmp_path, "harnack", "heat.yml", "grid.h=0.1") == 0
    fields = record(tmp_path, "harnack")
    assert float(fields["ratio"]) >= 1.0
    assert fields["h"] == "0.1"

    assert invoke(tmp_path, "harnack", "heat.yml", "grid.h=0.1", "harnack.K=[[-0.5, 0.5], [0.25, 0.75]]") == 0
    assert record(tmp_path, "harnack")["ratio"] == "INF"

    assert invoke(tmp_path, "harnack", "ou.yml", "grid.h=0.1") == 0
    ratio = record(tmp_path, "harnack")["ratio"]
    assert ratio != "INF"
    assert float(ratio) >= 1.0


def test_absorbent_contains_reach(tmp_path: Path) -> None:
    assert invoke(tmp_path, "absorbent", "heat.yml", "grid.h=0.1") == 0
    assert record(tmp_path, "absorbent")["reach inside hull (one-cell band)"] == "PASS"
