import io
import json

import pytest

from tokenrepair.cli import main
from tokenrepair.uncertainty import write_trace_jsonl

from helpers import second_best_fix_script, no_solution_script, plain_bug, trace_with_profile, write_calc_bug


@pytest.fixture
def calc(tmp_path):
    manifest = write_calc_bug(tmp_path / "bug")
    script = tmp_path / "model.json"
    second_best_fix_script().dump(script)
    return manifest, script


def test_repair_success(calc, tmp_path, capsys):
    manifest, script = calc
    code = main(["repair", str(manifest), "--mock-script", str(script), "--set", "temperature=0",
                 "--out-dir", str(tmp_path / "out"), "--sandbox-root", str(tmp_path / "sb")])
    out = capsys.readouterr().out
    assert code == 0
    assert "PlausibleFound (budget used 11/50)" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["patches"][0]["text"] == "    if dataset == None:"
    assert (tmp_path / "out" / "traces.jsonl").stat().st_size > 0


def test_repair_exhausted(tmp_path, capsys):
    plain_bug(tmp_path / "bug")
    manifest = tmp_path / "bug" / "bug.json"
    manifest.write_text(json.dumps({"id": "plain", "source_path": "src.txt", "hunk_start": 2,
                                    "hunk_end": 2, "buggy_hunk": "original line",
                                    "test_command": "exit 1"}))
    script = tmp_path / "nosol.json"
    no_solution_script().dump(script)
    code = main(["repair", str(manifest), "--mock-script", str(script), "--set", "temperature=0",
                 "--budget", "20", "--out-dir", str(tmp_path / "out")])
    assert code == 1
    # 17 <= 20 after the first level, so a second level runs before the check
    assert "BudgetExhausted (budget used 32/20)" in capsys.readouterr().out


def test_repair_invalid_budget(calc, tmp_path, capsys):
    manifest, script = calc
    code = main(["repair", str(manifest), "--mock-script", str(script), "--budget", "0",
                 "--out-dir", str(tmp_path / "out")])
    assert code == 3
    assert "InvalidConfig" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_repair_usage_errors(calc, tmp_path):
    manifest, script = calc
    assert main(["repair", str(manifest)]) == 2  # mock backend without a script
    assert main(["repair", str(tmp_path / "missing.json"), "--mock-script", str(script)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["repair"])
    assert err.value.code == 2


def test_localize(tmp_path, capsys):
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        write_trace_jsonl(fh, trace_with_profile([0.2, 0.1, 0.8], "a"), trace_id="1")
        write_trace_jsonl(fh, trace_with_profile([0.9, 0.5], "b"), trace_id="2")
    assert main(["localize", str(path), "-k", "2"]) == 0
    out = capsys.readouterr().out
    assert "trace 1 (a, 3 tokens)" in out
    assert "no suspicious positions" in out
    assert main(["localize", str(tmp_path / "nope.jsonl")]) == 2


def test_analyze_modes(tmp_path, capsys):
    paths = tmp_path / "paths.jsonl"
    paths.write_text("\n".join(json.dumps(r) for r in [
        {"label": "fix", "uncertainties": [0.8, 0.5, 0.3, 0.4]},
        {"label": "fix", "uncertainties": [0.6, 0.6, 0.2]}]) + "\n")
    assert main(["analyze", str(paths), "--mode", "tendency", "--out-dir", str(tmp_path / "o")]) == 0
    assert "75.0%" in capsys.readouterr().out
    data = json.loads((tmp_path / "o" / "tendency.json").read_text())
    assert data["rows"][0]["pct_increasing"] == 25.0

    traces = tmp_path / "traces.jsonl"
    buf = io.StringIO()
    write_trace_jsonl(buf, trace_with_profile([0.1, 0.4], "x"), trace_id="1", faulty_positions=[2])
    traces.write_text(buf.getvalue())
    assert main(["analyze", str(traces), "--mode", "grid", "--ks", "1,2"]) == 0
    assert "1.000" in capsys.readouterr().out

    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["analyze", str(empty), "--mode", "grid"]) == 2


def test_mock_gen(tmp_path):
    out = tmp_path / "m.json"
    assert main(["mock-gen", "--branching", "2", "--depth", "3", "--planted", " a, b, c",
                 "--planted-rank", "2", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert {" a", " b", " c", "<eos>"} <= set(data["vocab"])
    assert main(["mock-gen", "--branching", "9", "--vocab-size", "4"]) == 2
