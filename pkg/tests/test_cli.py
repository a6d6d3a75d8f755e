import csv
import hashlib
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from socmob.cli import main

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"
PROV = re.compile(r"^# socmob \S+ config_sha256=[0-9a-f]{16} seed=\d+$")


def tree(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


def body(path):
    lines = Path(path).read_text().splitlines(keepends=True)
    assert PROV.match(lines[0].rstrip("\n"))
    return "".join(lines[1:])


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("run1")
    assert main(["pipeline", "--config", str(FIXTURES / "config.yaml"), "--out", str(out)]) == 0
    return out


def test_pipeline_writes_all_artifacts(pipeline_out):
    names = set(tree(pipeline_out))
    for expected in ("ingest/pairs.csv", "ingest/exclusions.json", "ingest/crosstab.csv",
                     "sei/sei_scores.csv", "sei/sei_coefficients.csv", "sei/sei_stability.csv",
                     "mobility/estimates.csv", "mobility/grid_occupation_p25.csv",
                     "mobility/plot_education_p75.csv", "transitions/stm_ALL.txt", "transitions/stm_Dalit.csv"):
        assert expected in names


def test_every_file_carries_provenance(pipeline_out):
    for p in Path(pipeline_out).rglob("*"):
        if p.suffix == ".json":
            assert PROV.match("# " + json.loads(p.read_text())["provenance"])
        elif p.is_file():
            assert PROV.match(p.read_text().splitlines()[0])


def test_rerun_is_byte_identical(pipeline_out, tmp_path):
    assert main(["pipeline", "--config", str(FIXTURES / "config.yaml"), "--out", str(tmp_path)]) == 0
    assert tree(tmp_path) == tree(pipeline_out)


def test_stages_equal_pipeline(pipeline_out, tmp_path):
    for cmd in ("ingest", "sei", "mobility", "transitions"):
        assert main([cmd, "--config", str(FIXTURES / "config.yaml"), "--out", str(tmp_path)]) == 0
    assert tree(tmp_path) == tree(pipeline_out)


def test_table_layout_goldens(pipeline_out):
    coef = body(pipeline_out / "sei/sei_coefficients.csv")
    assert coef == (GOLDEN / "sei_coefficients.csv").read_text()
    rows = list(csv.reader(coef.splitlines()))
    assert rows[0] == ["birth_cohort", "beta_43", "beta_32"]
    assert all(re.fullmatch(r"\d{4}-\d{2}", r[0]) and re.fullmatch(r"-?\d+\.\d{2}", r[1]) for r in rows[1:])
    for est in ("p25", "p75"):
        grid = body(pipeline_out / f"mobility/grid_occupation_{est}.csv")
        assert grid == (GOLDEN / f"grid_occupation_{est}.csv").read_text()
        rows = list(csv.reader(grid.splitlines()))
        assert rows[0][0] == "group" and len(rows) == 8
        assert all(re.fullmatch(r"\d+\.\d{2}, \(n=\d+\)", c) for r in rows[1:] for c in r[1:] if c)


def test_crosstab_layout(pipeline_out):
    rows = list(csv.reader(body(pipeline_out / "ingest/crosstab.csv").splitlines()))
    assert rows[0][0] == "SC/FC" and rows[0][-1] == "Row Total" and rows[-1][0] == "Column Total"
    pairs = body(pipeline_out / "ingest/pairs.csv").splitlines()
    assert int(rows[-1][-1]) == len(pairs) - 1


def test_dimension_flag_restricts(tmp_path):
    assert main(["mobility", "--config", str(FIXTURES / "config.yaml"), "--out", str(tmp_path),
                 "--dimension", "education"]) == 0
    grids = sorted(p.name for p in (tmp_path / "mobility").glob("grid_*"))
    assert grids and all(g.startswith("grid_education_") for g in grids)


def copy_fixture(tmp_path):
    dst = tmp_path / "fx"
    shutil.copytree(FIXTURES, dst, ignore=shutil.ignore_patterns("out"))
    return dst


def test_missing_input_names_path(tmp_path, capsys):
    fx = copy_fixture(tmp_path)
    (fx / "data" / "nss43.csv").unlink()
    code = main(["pipeline", "--config", str(fx / "config.yaml"), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2
    assert "nss43.csv" in err and "config.yaml:6" in err


def test_bad_yaml_key_line(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 1\ninputs:\n  IHDS2: x.csv\nbogus: 3\n")
    assert main(["ingest", "--config", str(cfg)]) == 2
    assert f"{cfg}:4" in capsys.readouterr().err


def test_duplicate_person_is_data_error(tmp_path, capsys):
    fx = copy_fixture(tmp_path)
    path = fx / "data" / "ihds2.csv"
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines + [lines[2]]))
    assert main(["ingest", "--config", str(fx / "config.yaml"), "--out", str(tmp_path / "o")]) == 3
    assert f"{path}:{len(lines) + 1}" in capsys.readouterr().err


def flatten_column(path, names, value):
    rows = path.read_text().splitlines()
    header = rows[1].split(",")
    cols = [header.index(n) for n in names]
    out = rows[:2]
    for r in rows[2:]:
        cells = r.split(",")
        for c in cols:
            if cells[c]:
                cells[c] = value
        out.append(",".join(cells))
    path.write_text("\n".join(out) + "\n")


def test_degenerate_cells_are_reported(tmp_path):
    fx = copy_fixture(tmp_path)
    flatten_column(fx / "data" / "ihds2.csv", ["education_code", "father_education_code"], "8")
    code = main(["mobility", "--config", str(fx / "config.yaml"), "--out", str(tmp_path / "o"),
                 "--dimension", "education"])
    assert code == 0
    # every father has the same schooling, so no education cell can be fitted
    text = (tmp_path / "o" / "mobility" / "failures.csv").read_text()
    assert "degenerate-variable" in text
    assert not list(csv.reader(body(tmp_path / "o" / "mobility" / "estimates.csv").splitlines()))[1:]


def test_numerical_failure_exit_code(tmp_path, capsys):
    fx = copy_fixture(tmp_path)
    flatten_column(fx / "data" / "nss43.csv", ["education_code"], "3")
    assert main(["sei", "--config", str(fx / "config.yaml"), "--out", str(tmp_path / "o")]) == 4
    assert "degenerate-variable" in capsys.readouterr().err


def test_synth_command(tmp_path):
    assert main(["synth", "--spec", str(FIXTURES / "synth_spec.yaml"), "--out", str(tmp_path)]) == 0
    for name in ("ihds2.csv", "nss43.csv"):
        assert (tmp_path / name).read_bytes() == (FIXTURES / "data" / name).read_bytes()


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "socmob.cli", "sei", "--config", str(FIXTURES / "config.yaml"),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "sei" / "sei_coefficients.csv").exists()
