from __future__ import annotations

import json
import os

import pytest

from persona_align.cli import EXIT_CONFIG, EXIT_DATA, EXIT_USAGE, main
from persona_align.config import DEFAULTS, env_overrides, load_config_file, resolve_config, verify_manifest
from persona_align.errors import ConfigError

SECRET = "sk-live-do-not-print-9f8e7d"


def test_defaults_without_overrides():
    cfg = resolve_config(environ={})
    assert cfg == DEFAULTS and cfg is not DEFAULTS


def test_precedence_flags_over_env_over_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 1\ntrain:\n  alpha_m: 0.1\n  alpha_e: 0.2\n  max_iterations: 7\n")
    env = {"PERSONA_ALIGN_TRAIN__ALPHA_M": "0.3", "PERSONA_ALIGN_SEED": "2", "PERSONA_ALIGN_TRAIN__ALPHA_E": "0.25"}
    cfg = resolve_config(f, {"train": {"alpha_m": 0.5}}, env)
    assert cfg["train"]["alpha_m"] == 0.5
    assert cfg["train"]["alpha_e"] == 0.25 and cfg["seed"] == 2
    assert cfg["train"]["max_iterations"] == 7
    assert cfg["train"]["learning_rate"] == DEFAULTS["train"]["learning_rate"]


def test_unknown_and_mistyped_keys_name_the_key(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("train:\n  alpha_q: 1\n")
    with pytest.raises(ConfigError, match="train.alpha_q"):
        resolve_config(f, environ={})
    f.write_text("train:\n  max_iterations: many\n")
    with pytest.raises(ConfigError, match="train.max_iterations"):
        resolve_config(f, environ={})
    f.write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config_file(f)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.yaml")


def test_credentials_rejected_in_config_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text(f"oracle:\n  api_key: {SECRET}\n")
    with pytest.raises(ConfigError) as exc:
        resolve_config(f, environ={})
    assert SECRET not in str(exc.value)
    f.write_text("oracle:\n  api_key_env: MY_KEY\n")
    assert resolve_config(f, environ={})["oracle"]["api_key_env"] == "MY_KEY"


def test_api_key_env_var_never_enters_config():
    env = {"PERSONA_ALIGN_API_KEY": SECRET, "PERSONA_ALIGN_ORACLE__TOKEN": SECRET, "OTHER": "x"}
    assert env_overrides(env) == {}
    assert SECRET not in json.dumps(resolve_config(environ=env))


def _run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors_exit_2(capsys):
    assert _run(capsys, "no-such-command")[0] == EXIT_USAGE
    assert _run(capsys, "train", "--alpha-e", "abc")[0] == EXIT_USAGE


def test_version(capsys):
    code, out, _ = _run(capsys, "--version")
    assert code == 0 and "0.1.0" in out


def test_missing_required_option_is_config_error(tmp_path, capsys):
    code, _, err = _run(capsys, "--output-dir", str(tmp_path), "ingest")
    assert code == EXIT_CONFIG and "--input" in err


def test_api_key_env_requires_http_oracle(tmp_path, capsys):
    code, _, _ = _run(capsys, "--output-dir", str(tmp_path), "--api-key-env", "X", "synth", "--n-personas", "4",
                      "--n-general", "4", "--n-test", "4")  # fmt: skip
    assert code == EXIT_CONFIG


def test_bad_data_file_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.dat"
    bad.write_text("ID\tCHOICE\n1\t1\n")
    assert _run(capsys, "--output-dir", str(tmp_path), "ingest", "--input", str(bad))[0] == EXIT_DATA


def test_ingest_and_split(tmp_path, capsys, swissmetro_path):
    code, out, _ = _run(capsys, "--output-dir", str(tmp_path), "ingest", "--input", str(swissmetro_path))
    assert code == 0 and "1004 respondents, 9036 records" in out
    code, out, _ = _run(capsys, "--output-dir", str(tmp_path), "split", "--input", str(tmp_path / "ingest" / "panels.jsonl"))
    assert code == 0 and "detailed=250 panels (2250 records), general=200, test=400" in out
    manifest = tmp_path / "split" / "manifest.json"
    assert verify_manifest(manifest) == []
    data = json.loads(manifest.read_text())
    assert data["seeds"]["seed"] == 42 and data["config"]["split"]["n_test_records"] == 400


def test_small_pipeline_with_http_key_in_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PERSONA_ALIGN_API_KEY", SECRET)
    root = ["--output-dir", str(tmp_path), "--seed", "3"]
    assert _run(capsys, *root, "synth", "--n-personas", "8", "--n-general", "30", "--n-test", "20")[0] == 0
    bundle = str(tmp_path / "synth")
    code, out, err = _run(capsys, *root, "infer-personas", "--bundle", bundle)
    assert code == 0, err
    basis = str(tmp_path / "personas" / "basis.jsonl")
    code, out, err = _run(capsys, *root, "train", "--bundle", bundle, "--basis", basis, "--max-iterations", "2",
                          "--m-step-iterations", "10")  # fmt: skip
    assert code == 0, err
    params = str(tmp_path / "train" / "params.jsonl")
    assert _run(capsys, *root, "predict", "--bundle", bundle, "--basis", basis, "--params", params)[0] == 0
    assert _run(capsys, *root, "baseline", "zero-shot", "--bundle", bundle)[0] == 0
    assert _run(capsys, *root, "baseline", "same-group", "--bundle", bundle, "--basis", basis)[0] == 0
    code, out, _ = _run(capsys, *root, "compare", "--bundle", bundle,
                        "--predictions", str(tmp_path / "predict" / "predictions.jsonl"),
                        "--predictions", str(tmp_path / "baseline-zero-shot" / "predictions.jsonl"))  # fmt: skip
    assert code == 0 and "ground truth" in out
    code, out, _ = _run(capsys, *root, "dump-loading", "--params", params, "--basis", basis, "--profile", "0", "1", "2", "1")
    assert code == 0 and "probability" in out
    code, out, _ = _run(capsys, *root, "interpret", "--params", params, "--k", "3", "--restarts", "2")
    assert code == 0
    for dirpath, _, files in os.walk(tmp_path):
        for name in files:
            assert SECRET not in open(os.path.join(dirpath, name), encoding="utf-8", errors="replace").read()
    assert SECRET not in capsys.readouterr().out


def test_train_without_basis_is_config_error(tmp_path, capsys):
    _run(capsys, "--output-dir", str(tmp_path), "synth", "--n-personas", "4", "--n-general", "4", "--n-test", "4")
    code, _, err = _run(capsys, "--output-dir", str(tmp_path), "train", "--bundle", str(tmp_path / "synth"))
    assert code == EXIT_CONFIG and "--basis" in err
