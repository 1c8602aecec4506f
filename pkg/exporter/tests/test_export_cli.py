"""End-to-end command line runs, including validation by the engine CLI."""

import json
import shutil
import subprocess

import pytest

from bundle_exporter.cli import main


def indices_file(tmp_path, indices):
    path = tmp_path / "idx.txt"
    path.write_text(" ".join(str(i) for i in indices) + "\n", encoding="utf-8")
    return str(path)


def test_export_writes_bundle(tmp_path, capsys):
    out = tmp_path / "bundle"
    rc = main(
        ["export", "--model", "toy2", "--calib-indices", indices_file(tmp_path, range(16)), "--out", str(out)]
    )
    assert rc == 0
    assert "wrote bundle" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["model_name"] == "toy2"
    assert manifest["export"]["images"] == 16


def test_unknown_model_exits_2(tmp_path, capsys):
    rc = main(
        ["export", "--model", "nope", "--calib-indices", indices_file(tmp_path, [0, 1]), "--out", str(tmp_path / "b")]
    )
    assert rc == 2
    err = capsys.readouterr().err
    assert "unknown model" in err and "toy2" in err


def test_bad_index_token_exits_2(tmp_path, capsys):
    path = tmp_path / "idx.txt"
    path.write_text("0 1 two\n", encoding="utf-8")
    rc = main(["export", "--model", "toy2", "--calib-indices", str(path), "--out", str(tmp_path / "b")])
    assert rc == 2
    assert "'two'" in capsys.readouterr().err


def test_no_subcommand_prints_help(capsys):
    assert main([]) == 2
    assert "export" in capsys.readouterr().out


def test_layer_and_stage_flags(tmp_path):
    out = tmp_path / "bundle"
    rc = main(
        [
            "export",
            "--model",
            "toy_bn",
            "--calib-indices",
            indices_file(tmp_path, range(8)),
            "--out",
            str(out),
            "--stage",
            "postBN",
            "--layers",
            "conv2",
            "--scores",
            "taylor,act_rms,bn_scale",
            "--patch-cap",
            "50",
        ]
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert [meta["name"] for meta in manifest["layers"]] == ["conv2"]
    assert sorted(manifest["layers"][0]["baseline_scores"]) == ["act_rms", "bn_scale", "taylor"]
    assert manifest["layers"][0]["tensors"]["input_patches"]["shape"][0] == 50
    assert manifest["export"]["stage"] == "postBN"


@pytest.mark.skipif(shutil.which("channel-axes") is None, reason="engine CLI not on PATH")
def test_engine_validates_export(tmp_path):
    out = tmp_path / "bundle"
    rc = main(
        ["export", "--model", "toy_res", "--calib-indices", indices_file(tmp_path, range(12)), "--out", str(out)]
    )
    assert rc == 0
    proc = subprocess.run(["channel-axes", "validate", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "bundle ok" in proc.stdout
    assert "toy_res" in proc.stdout
