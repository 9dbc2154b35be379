"""Command-line interface: exit codes, config precedence, reproducibility."""

import json
import os

import numpy as np
import pytest
import torch

from mattelab import cli, core, distill


def run(argv):
    return cli.main(argv)


# ---------------------------------------------------------------------------
# parser-level behavior
# ---------------------------------------------------------------------------

def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_missing_subcommand_is_usage_error():
    assert run([]) == 1


def test_unknown_flag_is_usage_error():
    assert run(["synth", "--out", "x", "--frobnicate"]) == 1


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _synth_args(out, **over):
    base = {"--n": "8", "--n-test": "2", "--ratio": "0.25", "--size": "64",
            "--clip-len": "2", "--workers": "1", "--seed": "0"}
    base.update(over)
    argv = ["synth", "--out", out]
    for k, v in base.items():
        argv += [k, v]
    return argv


def test_synth_reports_occluded_count(tmp_path, capsys):
    assert run(_synth_args(str(tmp_path / "ds"))) == 0
    out = capsys.readouterr().out
    assert "train clips: 8 (2 occluded)" in out
    assert os.path.exists(str(tmp_path / "ds" / "manifest.jsonl"))


def test_synth_invalid_ratio_exits_one(tmp_path, capsys):
    assert run(_synth_args(str(tmp_path / "ds"), **{"--ratio": "1.5"})) == 1
    assert "--ratio" in capsys.readouterr().err


def test_synth_aggregates_multiple_config_errors(tmp_path, capsys):
    argv = _synth_args(str(tmp_path / "ds"),
                       **{"--ratio": "-1", "--size": "16", "--clip-len": "0"})
    assert run(argv) == 1
    err = capsys.readouterr().err
    assert "--ratio" in err and "--size" in err and "--clip-len" in err


def test_synth_byte_reproducible(tmp_path):
    import hashlib

    def tree_hash(root):
        digest = hashlib.sha256()
        for dirpath, _, names in sorted(os.walk(root)):
            for name in sorted(names):
                digest.update(os.path.relpath(os.path.join(dirpath, name), root).encode())
                digest.update(open(os.path.join(dirpath, name), "rb").read())
        return digest.hexdigest()

    assert run(_synth_args(str(tmp_path / "a"), **{"--n": "2", "--n-test": "1"})) == 0
    assert run(_synth_args(str(tmp_path / "b"), **{"--n": "2", "--n-test": "1"})) == 0
    assert tree_hash(str(tmp_path / "a")) == tree_hash(str(tmp_path / "b"))


# ---------------------------------------------------------------------------
# gen-faces
# ---------------------------------------------------------------------------

def test_gen_faces_writes_pairs(tmp_path, capsys):
    assert run(["gen-faces", "--n", "3", "--size", "64",
                "--out", str(tmp_path / "faces"), "--seed", "1"]) == 0
    assert "wrote 3 faces" in capsys.readouterr().out
    for i in range(3):
        assert os.path.exists(str(tmp_path / "faces" / f"face_{i:04d}.png"))
        assert os.path.exists(str(tmp_path / "faces" / f"skin_{i:04d}.png"))


def test_gen_faces_small_size_exits_one(tmp_path):
    assert run(["gen-faces", "--size", "32", "--out", str(tmp_path / "f")]) == 1


# ---------------------------------------------------------------------------
# training subcommands
# ---------------------------------------------------------------------------

def _teach_args(manifest, out, steps="2"):
    return ["train-teacher", "--manifest", manifest, "--out", out,
            "--steps", steps, "--batch-size", "1", "--clip-len", "2",
            "--lr", "1e-4", "--seed", "3"]


def test_train_teacher_runs_and_is_deterministic(tiny_dataset, tmp_path, capsys):
    assert run(_teach_args(tiny_dataset["manifest"], str(tmp_path / "a"))) == 0
    assert "teacher checkpoint" in capsys.readouterr().out
    assert run(_teach_args(tiny_dataset["manifest"], str(tmp_path / "b"))) == 0
    s1 = distill.load_checkpoint(str(tmp_path / "a" / "teacher.ckpt"))["model"].state_dict()
    s2 = distill.load_checkpoint(str(tmp_path / "b" / "teacher.ckpt"))["model"].state_dict()
    assert all(torch.equal(s1[k], s2[k]) for k in s1)


def test_train_teacher_missing_manifest_exits_one(tmp_path):
    assert run(_teach_args(str(tmp_path / "nope.jsonl"), str(tmp_path / "o"))) in (1, 2)


def test_train_student_requires_teacher_flag(tiny_dataset, tmp_path, capsys):
    assert run(["train-student", "--manifest", tiny_dataset["manifest"],
                "--out", str(tmp_path / "s")]) == 1
    assert "--teacher" in capsys.readouterr().err


def test_train_student_echoes_weighting(tiny_teacher, tiny_dataset, tmp_path, capsys):
    assert run(["train-student", "--teacher", tiny_teacher["ckpt"],
                "--manifest", tiny_dataset["manifest"], "--out", str(tmp_path / "s"),
                "--steps", "2", "--batch-size", "1", "--clip-len", "2",
                "--ugkd-weighting", "exp", "--seed", "4"]) == 0
    out = capsys.readouterr().out
    assert "ugkd-weighting=EXPONENTIAL" in out
    with open(str(tmp_path / "s" / "stage2_log.jsonl")) as fh:
        header = json.loads(fh.readline())["header"]
    assert header["ugkd_weighting"] == "EXPONENTIAL"


def test_train_lr_final_schedules_cosine(tiny_dataset, tmp_path):
    argv = _teach_args(tiny_dataset["manifest"], str(tmp_path / "t"), steps="3")
    argv += ["--lr-final", "1e-5"]
    assert run(argv) == 0
    lrs = []
    with open(str(tmp_path / "t" / "stage1_log.jsonl")) as fh:
        for line in fh:
            rec = json.loads(line)
            if "header" not in rec:
                lrs.append(rec["lr"])
    assert lrs[0] == pytest.approx(1e-4)
    assert lrs[-1] == pytest.approx(1e-5)
    assert lrs[0] > lrs[1] > lrs[2]


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_oracle_prints_perfect_row(tiny_dataset, tmp_path, capsys):
    out = str(tmp_path / "report.txt")
    assert run(["eval", "--manifest", tiny_dataset["manifest"], "--oracle",
                "--out", out]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "MSE SAD Grad Conn IoU Accuracy"
    cells = lines[1].split()
    assert cells[:4] == ["0.00000"] * 4
    assert cells[4] == "1.00000" and cells[5] == "1.00000"
    assert os.path.exists(out) and os.path.exists(str(tmp_path / "report.json"))


def test_eval_requires_checkpoint_without_oracle(tiny_dataset, tmp_path, capsys):
    assert run(["eval", "--manifest", tiny_dataset["manifest"],
                "--out", str(tmp_path / "r.txt")]) == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_eval_with_checkpoint(tiny_teacher, tiny_dataset, tmp_path, capsys):
    assert run(["eval", "--checkpoint", tiny_teacher["ckpt"],
                "--manifest", tiny_dataset["manifest"],
                "--out", str(tmp_path / "r.txt")]) == 0
    assert "report:" in capsys.readouterr().out


def test_eval_corrupt_checkpoint_exits_one(tiny_dataset, tmp_path):
    bad = str(tmp_path / "bad.ckpt")
    open(bad, "wb").write(b"not a checkpoint")
    assert run(["eval", "--checkpoint", bad, "--manifest", tiny_dataset["manifest"],
                "--out", str(tmp_path / "r.txt")]) == 1


# ---------------------------------------------------------------------------
# apply-filter
# ---------------------------------------------------------------------------

def test_apply_filter_identity(tiny_teacher, tmp_path, capsys):
    rng = np.random.default_rng(5)
    src = tmp_path / "frames"
    src.mkdir()
    frames = [rng.random((64, 64, 3)).astype(np.float32) for _ in range(2)]
    for i, f in enumerate(frames):
        core.save_image(str(src / f"frame_{i:03d}.png"), f)
    out = str(tmp_path / "out")
    assert run(["apply-filter", "--frames", str(src), "--checkpoint",
                tiny_teacher["ckpt"], "--out", out, "--filter", "hue:0"]) == 0
    assert "wrote 2 frames" in capsys.readouterr().out
    for i, f in enumerate(frames):
        got = core.load_image(os.path.join(out, f"out_{i:03d}.png"))
        assert np.abs(got - f).max() <= 1.0 / 255.0 + 1e-6


def test_apply_filter_bad_spec_exits_one(tiny_teacher, tmp_path):
    assert run(["apply-filter", "--frames", str(tmp_path), "--checkpoint",
                tiny_teacher["ckpt"], "--out", str(tmp_path / "o"),
                "--filter", "sparkle:9"]) == 1


def test_apply_filter_missing_frames_exits_two(tiny_teacher, tmp_path):
    # a stage failure inside the pipeline is a runtime error, not usage
    assert run(["apply-filter", "--frames", str(tmp_path / "void"), "--checkpoint",
                tiny_teacher["ckpt"], "--out", str(tmp_path / "o"),
                "--filter", "hue:10"]) == 2


# ---------------------------------------------------------------------------
# config files and provenance
# ---------------------------------------------------------------------------

def test_config_file_flag_precedence(tiny_dataset, tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("train.steps=2\ntrain.lr=5e-4\nseed=9\n")
    argv = ["train-teacher", "--manifest", tiny_dataset["manifest"],
            "--out", str(tmp_path / "t"), "--config", str(cfg),
            "--batch-size", "1", "--clip-len", "2", "--lr", "1e-4"]
    assert run(argv) == 0
    echo = capsys.readouterr().out
    assert "train.lr=0.0001 (flag)" in echo  # flag beats file
    assert "train.steps=2 (file)" in echo
    assert "seed=9 (file)" in echo
    assert "train.batch_size=1 (flag)" in echo


def test_config_bare_name_uses_env_dir(tiny_dataset, tmp_path, capsys, monkeypatch):
    (tmp_path / "shared.cfg").write_text("train.steps=2\n")
    monkeypatch.setenv(cli.CONFIG_DIR_ENV, str(tmp_path))
    argv = ["train-teacher", "--manifest", tiny_dataset["manifest"],
            "--out", str(tmp_path / "t"), "--config", "shared.cfg",
            "--batch-size", "1", "--clip-len", "2"]
    assert run(argv) == 0
    assert "train.steps=2 (file)" in capsys.readouterr().out


def test_config_missing_file_exits_one(tmp_path, capsys):
    assert run(_synth_args(str(tmp_path / "ds")) + ["--config", "nope.cfg"]) == 1
    assert "config file" in capsys.readouterr().err
