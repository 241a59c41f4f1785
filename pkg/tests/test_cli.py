import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from structdec.cli import main

from conftest import FIXTURES

COPYBIAS = FIXTURES / "copybias"
GOLDEN = FIXTURES / "golden"


def run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_decode_writes_trace_and_manifest(tmp_path):
    trace = tmp_path / "trace.jsonl"
    result = run("decode",
                 "--model", str(COPYBIAS / "proj_model.json"),
                 "--vocab", str(COPYBIAS / "vocab.json"),
                 "--prompt", "q4",
                 "--constraint", str(COPYBIAS / "answer.bnf"),
                 "--max-len", "8", "--trace-out", str(trace))
    assert result.exit_code == 0, result.output
    lines = trace.read_text().splitlines()
    summary = json.loads(lines[-1])
    assert summary["summary"] is True
    assert summary["terminated"] == "eos"
    manifest = json.loads((tmp_path / "trace.jsonl.manifest.json").read_text())
    assert manifest["resolved_seeds"] == [0]
    assert str(trace) in manifest["output_paths"]


def test_decode_flags_max_len_truncation(tmp_path):
    trace = tmp_path / "trace.jsonl"
    result = run("decode",
                 "--model", str(COPYBIAS / "proj_model.json"),
                 "--vocab", str(COPYBIAS / "vocab.json"),
                 "--prompt", "q4",
                 "--constraint", str(COPYBIAS / "answer.bnf"),
                 "--max-len", "2", "--trace-out", str(trace))
    assert result.exit_code == 2
    assert trace.exists()  # trace still written for inspection


def test_decode_missing_model_file_is_config_error(tmp_path):
    result = run("decode", "--model", str(tmp_path / "nope.json"),
                 "--vocab", str(COPYBIAS / "vocab.json"),
                 "--max-len", "4", "--trace-out", str(tmp_path / "t.jsonl"))
    assert result.exit_code == 1
    assert "error:" in result.output


def test_decode_inline_regex_constraint(tmp_path):
    trace = tmp_path / "trace.jsonl"
    result = run("decode",
                 "--model", str(COPYBIAS / "proj_model.json"),
                 "--vocab", str(COPYBIAS / "vocab.json"),
                 "--prompt", "q1",
                 "--constraint", "regex:<<[a-h]>>",
                 "--max-len", "8", "--trace-out", str(trace))
    assert result.exit_code == 0, result.output


def test_dccd_command_writes_results(tmp_path):
    cfg = json.loads((COPYBIAS / "dccd_config.json").read_text())
    cfg["out"] = str(tmp_path / "dccd_result.json")
    for key in ("vocab", "draft_model", "proj_model", "constraint"):
        cfg[key] = str(COPYBIAS / cfg[key])
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    result = run("dccd", "--config", str(cfg_path))
    assert result.exit_code == 0, result.output
    results = json.loads(Path(cfg["out"]).read_text())
    assert [r["prompt"] for r in results] == ["q1", "q5"]
    assert all(not r["all_realizations_invalid"] for r in results)
    assert all(r["winner_text"].startswith("<<") for r in results)


def test_bad_config_version_is_config_error(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"version": 99}))
    result = run("dccd", "--config", str(cfg_path))
    assert result.exit_code == 1
    assert "unsupported config version" in result.output


def test_eval_matches_golden_reports(tmp_path):
    for method in ("cd", "dccd"):
        out = tmp_path / f"eval_{method}"
        result = run("eval", "--dataset", str(COPYBIAS / "dataset.jsonl"),
                     "--method", method,
                     "--config", str(COPYBIAS / "eval_config.json"),
                     "--report-out", str(out))
        assert result.exit_code == 0, result.output
        for suffix in (".json", ".csv"):
            got = out.with_suffix(suffix).read_bytes()
            want = (GOLDEN / f"eval_{method}{suffix}").read_bytes()
            assert got == want, f"eval_{method}{suffix} diverged from golden"


def test_eval_rerun_is_byte_identical(tmp_path):
    args = ("eval", "--dataset", str(COPYBIAS / "dataset.jsonl"),
            "--method", "cd", "--config", str(COPYBIAS / "eval_config.json"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*args, "--report-out", str(a)).exit_code == 0
    assert run(*args, "--report-out", str(b)).exit_code == 0
    assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()


def test_eval_malformed_dataset_row_names_the_row(tmp_path):
    ds = tmp_path / "ds.jsonl"
    ds.write_text('{"id": "bad-row", "prompt": "q1", "gold": "a"}\n')
    result = run("eval", "--dataset", str(ds), "--method", "cd",
                 "--config", str(COPYBIAS / "eval_config.json"),
                 "--report-out", str(tmp_path / "r"))
    assert result.exit_code == 1
    assert "bad-row" in result.output


def test_eval_empty_dataset_is_config_error(tmp_path):
    ds = tmp_path / "ds.jsonl"
    ds.write_text("\n")
    result = run("eval", "--dataset", str(ds), "--method", "cd",
                 "--config", str(COPYBIAS / "eval_config.json"),
                 "--report-out", str(tmp_path / "r"))
    assert result.exit_code == 1
    assert "empty" in result.output


def test_scale_matches_golden_csv(tmp_path):
    out = tmp_path / "scale.csv"
    result = run("scale", "--config", str(COPYBIAS / "scale_config.json"),
                 "--n-values", "1,3,5", "--out", str(out))
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == (GOLDEN / "scale.csv").read_bytes()


@pytest.mark.parametrize("bad", ["2", "0", "1,4", "x", ""])
def test_scale_rejects_bad_n_values(tmp_path, bad):
    result = run("scale", "--config", str(COPYBIAS / "scale_config.json"),
                 "--n-values", bad, "--out", str(tmp_path / "s.csv"))
    assert result.exit_code == 1


def test_unreachable_server_is_config_error(tmp_path):
    result = run("--server", "http://127.0.0.1:1",
                 "decode", "--model", str(COPYBIAS / "proj_model.json"),
                 "--vocab", str(COPYBIAS / "vocab.json"),
                 "--max-len", "4", "--trace-out", str(tmp_path / "t.jsonl"))
    assert result.exit_code == 1
    assert "error:" in result.output
