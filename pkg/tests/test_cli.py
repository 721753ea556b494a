import json
from pathlib import Path

import pytest

from contrastive_kernel.cli import CHECK_FILES, SUBCOMMANDS, main

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.toml"


def _run(cmd, out, *extra):
    return main([cmd, "--config", str(SMOKE), "--out", str(out), *extra])


def test_missing_config_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["simulate", "--config", str(tmp_path / "none.toml"), "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[task]\nunknown = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_manifest_lists_written_files(tmp_path):
    assert _run("train", tmp_path) == 0
    man = json.loads((tmp_path / "manifest_train.json").read_text())
    names = {f["path"] for f in man["files"]}
    assert {"model.json", "loss_curve.csv", "train_summary.json", "config_resolved.json"} <= names
    assert man["config_hash"] and "trajectory" in man["seeds"]
    summary = json.loads((tmp_path / "train_summary.json").read_text())
    assert 0 < summary["eps_star"] < 0.25


def test_json_tables(tmp_path):
    assert _run("simulate", tmp_path, "--format", "json") == 0
    assert _run("check-kernel-bounds", tmp_path, "--format", "json") == 0
    assert _run("report", tmp_path, "--format", "json") == 0
    rows = json.loads((tmp_path / "summary.json").read_text())
    assert rows and rows[0]["check"] == "check-kernel-bounds"


@pytest.mark.slow
def test_every_subcommand_is_byte_deterministic(tmp_path):
    def snapshot():
        return {p.name: p.read_bytes() for p in tmp_path.iterdir() if not p.name.startswith("manifest_")}

    runs, manifests = [], []
    for _ in range(2):
        for cmd in SUBCOMMANDS:
            assert _run(cmd, tmp_path) in (0, 1)
        runs.append(snapshot())
        manifests.append({cmd: json.loads((tmp_path / f"manifest_{cmd}.json").read_text())
                          for cmd in SUBCOMMANDS})
    assert runs[0].keys() == runs[1].keys()
    for name in runs[0]:
        assert runs[0][name] == runs[1][name], name
    for cmd in SUBCOMMANDS:
        a, b = manifests[0][cmd], manifests[1][cmd]
        assert a["files"] == b["files"] and a["seeds"] == b["seeds"]
        assert a["config_hash"] == b["config_hash"]
    text = (tmp_path / "summary.txt").read_text()
    assert all(cmd in text for cmd in CHECK_FILES)
