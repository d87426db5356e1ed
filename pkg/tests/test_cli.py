import csv
import io
import json
import subprocess
import sys

import pytest

from fracbump.cli import main
from fracbump.harness import CSV_COLUMNS

CONST = {"kind": "constant", "params": {}}


def write_config(tmp_path, **kw):
    cfg = {"depths": [4], "alphas": [0.5], "exponents": [[2.0, 2.0]], "deltas": [1.0],
           "weights": [{"name": "lebesgue", "sigma": CONST, "w": CONST}], "operators": ["maximal"]}
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def test_bumps_lebesgue_constant_one(tmp_path, capsys):
    assert main(["bumps", "--config", write_config(tmp_path)]) == 0
    items = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    weak = next(i for i in items if i["name"] == "weak")
    assert weak["constant"] == pytest.approx(1.0)
    assert {i["name"] for i in items} == {"weak", "onebump_max", "onebump_int", "separated", "separated_dual"}


def test_sweep_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, operators=["maximal", "integral_dyadic"], alphas=[0.25, 0.5])
    assert main(["sweep", "--config", cfg, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["schema_version"] + CSV_COLUMNS
    assert len(rows) == 1 + 4


def test_sweep_to_file_prints_summary(tmp_path, capsys):
    out = tmp_path / "rows.jsonl"
    assert main(["sweep", "--config", write_config(tmp_path), "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 1
    assert json.loads(out.read_text().splitlines()[0])["operator"] == "maximal"


def test_norms(tmp_path, capsys):
    assert main(["norms", "--config", write_config(tmp_path, operators=["sparse"])]) == 0
    item = json.loads(capsys.readouterr().out.splitlines()[0])
    assert item["lower"] > 0 and "testing_upper" in item


def test_refine(tmp_path, capsys):
    assert main(["refine", "--config", write_config(tmp_path), "--depths", "3,5"]) == 0
    entries = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert all(e["depths"] == [3, 5] for e in entries)
    assert any(e["quantity"] == "separated" for e in entries)


def test_refine_rejects_single_depth(tmp_path, capsys):
    assert main(["refine", "--config", write_config(tmp_path), "--depth", "4"]) == 2


def test_config_error_is_line_anchored(tmp_path, capsys):
    cfg = write_config(tmp_path, operators=["teleport"])
    assert main(["sweep", "--config", cfg]) == 2
    err = capsys.readouterr().err
    line = next(i for i, text in enumerate(open(cfg), 1) if '"operators"' in text)
    assert f"cfg.json:{line}:" in err and "teleport" in err


def test_invalid_json_is_line_anchored(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "depths": [4],\n  "alphas": [0.5,]\n}\n')
    assert main(["bumps", "--config", str(path)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == 2


def test_negative_seed(capsys):
    assert main(["sweep", "--seed", "-1"]) == 2


def test_capacity_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, dimension=2, depths=[13], alphas=[1.0])
    assert main(["sweep", "--config", cfg]) == 3


def test_sweep_deterministic(tmp_path):
    cfg = write_config(tmp_path, weights=[{"name": "c", "cascade_seeds": [1, 2]}], operators=["maximal", "sparse"])
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}.jsonl"
        assert main(["sweep", "--config", cfg, "--seed", "5", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fracbump", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout


@pytest.mark.slow
def test_verify_exit_zero(tmp_path):
    out = tmp_path / "verify.jsonl"
    res = subprocess.run([sys.executable, "-m", "fracbump", "verify", "--depth", "6", "--seed", "1",
                          "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stdout + res.stderr
    checks = [json.loads(line) for line in out.read_text().splitlines()]
    assert all(c["ok"] for c in checks) and len(checks) >= 12
