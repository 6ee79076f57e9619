"""Command line interface: subcommands, artifacts, and report rendering."""

import contextlib
import io

import numpy as np
import pytest

from evmamba.cli import main
from evmamba.model import ModelSpec

TOY_SPEC = ModelSpec(name="toy", dims=(4, 8, 16, 32), depths=(1, 1, 1, 1),
                     num_classes=4, state_dim=2)
DATA = "synthetic:count=8,classes=4,size=32,seed=0"


def _run(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main(argv)
    return rc, buf.getvalue()


@pytest.fixture()
def toy_config(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(TOY_SPEC.to_json())
    return str(path)


# -- inspect ----------------------------------------------------------------------

def test_inspect_scan_plan_grid():
    rc, out = _run(["inspect", "scan-plan", "4", "4", "2"])
    assert rc == 0
    assert "1 2 1 2\n3 4 3 4\n1 2 1 2\n3 4 3 4" in out
    assert "total recurrence steps: 16" in out


def test_inspect_scan_plan_period_one_single_group():
    rc, out = _run(["inspect", "scan-plan", "3", "3", "1"])
    assert rc == 0
    assert "1 1 1\n1 1 1\n1 1 1" in out


def test_inspect_scan_plan_usage_error():
    rc, _ = _run(["inspect", "scan-plan", "4", "4"])
    assert rc == 2


def test_inspect_variant_stage_table():
    rc, out = _run(["inspect", "tiny"])
    assert rc == 0
    assert "stage kinds: EVSS EVSS InRes InRes" in out
    assert "resolutions at 224x224: stem 112, stages 56/28/14/7" in out
    assert "1,EVSS,2,48,56" in out
    assert "vs budget 6.0M" in out


def test_inspect_layout_override():
    rc, out = _run(["inspect", "tiny", "--layout", "previous"])
    assert rc == 0
    assert "stage kinds: InRes InRes EVSS EVSS" in out


def test_inspect_custom_config(toy_config):
    rc, out = _run(["inspect", toy_config])
    assert rc == 0
    assert "model toy" in out
    assert "no reference budget" in out


# -- verify -----------------------------------------------------------------------

def test_verify_subcommand_passes():
    rc, out = _run(["verify", "--skip-gradchecks"])
    assert rc == 0
    assert "4/4 checks passed" in out
    assert out.count("[PASS]") == 4


# -- profile ----------------------------------------------------------------------

def test_profile_writes_reports(tmp_path):
    rc, out = _run(["profile", "tiny", "--out", str(tmp_path)])
    assert rc == 0
    assert "module,params,macs,scan_steps" in out
    assert (tmp_path / "profile.csv").exists()
    png = (tmp_path / "profile.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    csv = (tmp_path / "profile.csv").read_text()
    assert csv.splitlines()[0] == "module,params,macs,scan_steps"


def test_profile_detailed_rows(toy_config):
    rc, brief = _run(["profile", toy_config, "--hw", "32"])
    rc2, detailed = _run(["profile", toy_config, "--hw", "32", "--detailed"])
    assert rc == rc2 == 0
    assert len(detailed.splitlines()) > len(brief.splitlines())


# -- train / eval -------------------------------------------------------------------

def test_train_then_eval_round_trip(tmp_path, toy_config):
    out_dir = tmp_path / "run"
    rc, out = _run(["train", "--spec", toy_config, "--data", DATA,
                    "--out", str(out_dir), "--epochs", "2", "--batch", "4",
                    "--lr", "1e-3", "--warmup", "1"])
    assert rc == 0
    for name in ("config.json", "metrics.csv", "model.ckpt",
                 "training_curves.png"):
        assert (out_dir / name).exists(), name
    lines = (out_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,acc,lr"
    assert len(lines) == 3
    final_acc = float(lines[-1].split(",")[2])

    rc, out = _run(["eval", str(out_dir / "model.ckpt"), "--spec", toy_config,
                    "--data", DATA, "--out", str(out_dir)])
    assert rc == 0
    # the eval accuracy over the training split equals the last logged value
    assert f"accuracy: {final_acc:.4f}" in out
    assert (out_dir / "confusion.csv").exists()
    assert (out_dir / "confusion.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    header = (out_dir / "confusion.csv").read_text().splitlines()[0]
    assert header == "true\\pred,square,disk,cross,stripe"


def test_eval_rejects_corrupt_checkpoint(tmp_path, toy_config):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(Exception, match="magic"):
        _run(["eval", str(bad), "--spec", toy_config, "--data", DATA])


# -- argument handling ----------------------------------------------------------------

def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_bad_layout_choice_exits():
    with pytest.raises(SystemExit):
        main(["inspect", "tiny", "--layout", "sideways"])


def test_precision_flag_accepted():
    rc, _ = _run(["inspect", "scan-plan", "3", "3", "1", "--precision", "32"])
    assert rc == 0
