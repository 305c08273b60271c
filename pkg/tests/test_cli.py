from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from fblab.cli import CRITERIA, exit_code, load_config, main, report, validate_config
from fblab.errors import ClaimFailure, ConvergenceError, NonFiniteError, NotApplicable, PreconditionError, ValidationError


def write(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc))
    return path


def config(task: str, params: dict, h: float = 1 / 64, seed: int = 0) -> dict:
    return {"schema": "fblab/1", "task": task, "seed": seed, "grid": {"h": h}, "params": params}


def artifacts(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix in (".csv", ".json")}


# -- validation -----------------------------------------------------------------------------------------


def test_negative_h_names_grid_h():
    with pytest.raises(ValidationError) as exc:
        validate_config(config("solve", {"data": {"name": "half_plane"}}, h=-0.1))
    assert exc.value.field == "grid.h"


def test_task_parameters_are_validated_with_paths():
    with pytest.raises(ValidationError) as exc:
        validate_config(config("audit", {"data": {"name": "half_plane"}, "kappa": -1}))
    assert exc.value.field == "params.kappa"
    with pytest.raises(ValidationError) as exc:
        validate_config(config("solve", {"data": {"name": "bogus"}}))
    assert exc.value.field == "params.data.name"


def test_schema_version_is_required():
    with pytest.raises(ValidationError) as exc:
        validate_config({"task": "solve"})
    assert exc.value.field == "<root>"


def test_overrides_and_task_mismatch(tmp_path):
    p = write(tmp_path / "c.json", config("fixture", {"data": {"name": "half_plane"}}))
    cfg = load_config(p, task="fixture", seed=7, h=1 / 32)
    assert cfg.seed == 7 and cfg.h == 1 / 32
    with pytest.raises(ValidationError) as exc:
        load_config(p, task="solve")
    assert exc.value.field == "task"


def test_grid_must_divide_box():
    with pytest.raises(ValidationError) as exc:
        validate_config(config("fixture", {"data": {"name": "half_plane"}}, h=0.3))
    assert exc.value.field == "grid.h"


def test_missing_or_bad_file(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "bad.json")


def test_exit_code_mapping():
    assert exit_code(ValidationError("x")) == 2
    assert exit_code(PreconditionError("a", "b")) == 2
    assert exit_code(NotApplicable("a", "b")) == 2
    assert exit_code(NonFiniteError("x")) == 3
    assert exit_code(ConvergenceError("x")) == 3
    assert exit_code(ClaimFailure("x")) == 4


# -- runs ---------------------------------------------------------------------------------------------------


def test_main_validation_exit_code(tmp_path, capsys):
    p = write(tmp_path / "bad.json", config("solve", {"data": {"name": "half_plane"}}, h=-0.1))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "out")]) == 2
    assert "grid.h" in capsys.readouterr().err


def test_fixture_run_writes_manifest(tmp_path):
    p = write(tmp_path / "c.json", config("fixture", {"data": {"name": "half_plane"}}, h=1 / 256))
    out = tmp_path / "out"
    assert main(["fixture", "--config", str(p), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    names = {f["path"] for f in man["files"]}
    assert {"config.json", "field.gfn", "field.gfn.json", "energy.json", "metrics.json"} <= names
    assert all(f["operation"] for f in man["files"])
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["AC-1"]["pass"]


def test_solve_then_audit(tmp_path):
    solve = write(tmp_path / "solve.json", config("solve", {"data": {"name": "half_plane"}}))
    assert main(["solve", "--config", str(solve), "--out", str(tmp_path / "run1")]) == 0
    assert (tmp_path / "run1" / "minimizer.gfn").exists()
    assert (tmp_path / "run1" / "energy_log.csv").read_text().startswith("iteration,dirichlet,positivity,total")
    audit = write(tmp_path / "audit.json", config("audit", {"input": "run1/minimizer.gfn", "kappa": 0.0}))
    assert main(["audit", "--config", str(audit), "--out", str(tmp_path / "run2")]) == 0
    rep = json.loads((tmp_path / "run2" / "audit.json").read_text())
    assert rep["verdict"] == "not falsified by suite"


def test_claim_failure_exit_code(tmp_path):
    p = write(tmp_path / "c.json", config("audit", {"data": {"name": "half_plane"}, "expect": "falsified", "include_minimizer": False}))
    out = tmp_path / "out"
    assert main(["audit", "--config", str(p), "--out", str(out)]) == 4
    assert json.loads((out / "manifest.json").read_text())["status"] == "fail"


def test_precondition_exit_code(tmp_path):
    p = write(tmp_path / "c.json", config("blowup", {"data": {"name": "half_plane"}, "x0": [0.0, 0.5], "radii": [0.5]}))
    assert main(["blowup", "--config", str(p), "--out", str(tmp_path / "out")]) == 2


def test_reproducible_artifacts(tmp_path):
    p = write(tmp_path / "c.json", config("touch", {"data": {"name": "half_plane"}, "mus": [0.1], "count": 4}, seed=3))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["touch", "--config", str(p), "--out", str(a)]) == 0
    assert main(["touch", "--config", str(p), "--out", str(b)]) == 0
    assert artifacts(a) == artifacts(b)


def test_report_rows_and_richardson(tmp_path):
    runs = []
    for h in (1 / 64, 1 / 128):
        p = write(tmp_path / f"c{int(1 / h)}.json", config("fixture", {"data": {"name": "half_plane"}}, h=h))
        out = tmp_path / f"r{int(1 / h)}"
        assert main(["fixture", "--config", str(p), "--out", str(out)]) == 0
        runs.append(out)
    rows = report(runs)
    assert [r["criterion"] for r in rows] == list(CRITERIA)
    ac1 = rows[0]
    assert ac1["status"] == "pass" and ac1["runs"] == 2 and ac1["richardson_ratio"] is not None
    assert all(r["status"] == "not run" for r in rows[1:])
    rp = write(tmp_path / "rep.json", config("report", {"runs": [str(r) for r in runs]}))
    assert main(["report", "--config", str(rp), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("criterion,status,runs")


def test_report_errors(tmp_path):
    with pytest.raises(ValidationError):
        report([])
    with pytest.raises(ValidationError):
        report([tmp_path])


def test_console_script_module_entry(tmp_path):
    p = write(tmp_path / "c.json", config("fixture", {"data": {"name": "wedge", "gamma": 0.5}}))
    proc = subprocess.run(
        [sys.executable, "-m", "fblab.cli", "fixture", "--config", str(p), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
