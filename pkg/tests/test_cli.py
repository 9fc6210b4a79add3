import csv
import json
import re

import numpy as np
import pytest

from fbzero import cli, motions

SMOKE = {
    "env": {"env_kind": "arm2", "episode_len": 20, "history_len": 2},
    "model": {"latent_dim": 4, "critic_hidden": 16, "actor_hidden": 16, "b_hidden": 16, "d_hidden": 16,
              "critic_residual_blocks": 1, "actor_residual_blocks": 1},
    "train": {"n_env": 2, "batch_size": 16, "n_ups": 2, "n_grad_total": 40, "seq_len": 4, "chunk_len": 30,
              "probe_size": 50, "buffer_mult": 4},
    "data": {"n_motions": 2, "n_frames": 60},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps(SMOKE))
    assert cli.main(["train", "--config", str(cfg), "--seed", "1", "--out", str(root / "a"), "--quiet"]) == 0
    assert cli.main(["gen-motions", "--env", "arm2", "--n", "2", "--frames", "40", "--out",
                     str(root / "m.jsonl")]) == 0
    ms = motions.load_motion_set(str(root / "m.jsonl"))
    frame = {"o": ms.motions[0].obs[5].tolist(), "s": ms.motions[0].states[5].tolist()}
    (root / "goal.jsonl").write_text(json.dumps(frame) + "\n")
    frame_b = {"o": ms.motions[1].obs[20].tolist(), "s": ms.motions[1].states[20].tolist()}
    (root / "goal_b.jsonl").write_text(json.dumps(frame_b) + "\n")
    return root, ms


def _ck(root):
    return ["--checkpoint", str(root / "a" / "model.ckpt")]


def test_train_is_deterministic(run, tmp_path):
    root, _ = run
    assert cli.main(["train", "--config", str(root / "c.json"), "--seed", "1", "--out", str(tmp_path / "b"),
                     "--quiet"]) == 0
    assert (root / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    resolved = json.loads((root / "a" / "config.json").read_text())
    assert resolved["train"]["seed"] == 1


def test_train_resume_matches(run, tmp_path):
    root, _ = run
    cfg = str(root / "c.json")
    out = str(tmp_path / "r")
    assert cli.main(["train", "--config", cfg, "--seed", "1", "--out", out, "--until", "8", "--quiet"]) == 0
    assert cli.main(["train", "--config", cfg, "--seed", "1", "--out", out, "--resume",
                     str(tmp_path / "r" / "snapshot.ckpt"), "--quiet"]) == 0
    assert (root / "a" / "metrics.csv").read_bytes() == (tmp_path / "r" / "metrics.csv").read_bytes()


def test_eval_report_rows(run, tmp_path):
    root, ms = run
    suite = [{"kind": "reward", "name": "raise", "episode_len": 10, "episodes": 2},
             {"kind": "goal", "goal": ms.motions[0].states[3].tolist(), "episode_len": 10, "episodes": 2},
             {"kind": "tracking", "motion": ms.motions[0].id, "episodes": 1}]
    (tmp_path / "s.json").write_text(json.dumps({"tasks": suite}))
    out = tmp_path / "e"
    assert cli.main(["eval", *_ck(root), "--suite", str(tmp_path / "s.json"), "--motions", str(root / "m.jsonl"),
                     "--out", str(out)]) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    keys = [(r["task"], r["metric"]) for r in rows]
    assert len(keys) == len(set(keys)) == 6
    assert (out / "report.svg").exists() and (out / "config.json").exists()


def test_infer_goal_prints_latent_and_writes_trajectory(run, tmp_path, capsys):
    root, _ = run
    out = tmp_path / "g"
    assert cli.main(["infer-goal", *_ck(root), "--frame", str(root / "goal.jsonl"), "--steps", "15",
                     "--out", str(out)]) == 0
    text = capsys.readouterr().out
    z = [float(v) for v in re.search(r"z = \[([^\]]*)\]", text).group(1).split(",")]
    assert abs(np.linalg.norm(z) - 2.0) < 1e-4
    with open(out / "trajectory.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 16


@pytest.mark.parametrize("argv", [
    ["infer-reward", "--task", "raise", "--steps", "10"],
    ["infer-reward", "--task", "hold-pose", "--params", '{"pose": [0.5, 0.0]}', "--steps", "10"],
    ["adapt-cem", "--task", "raise", "--steps", "8", "--episodes", "1", "--iterations", "2", "--population", "8",
     "--mass-scale", "1.5"],
])
def test_commands_succeed(run, tmp_path, argv):
    root, _ = run
    assert cli.main([argv[0], *_ck(root), *argv[1:], "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "config.json").exists()


def test_track_adapt_traj_interpolate_project(run, tmp_path):
    root, ms = run
    mfile = str(root / "m.jsonl")
    mid = ms.motions[0].id
    assert cli.main(["track", *_ck(root), "--motions", mfile, "--out", str(tmp_path / "t")]) == 0
    with open(tmp_path / "t" / "tracking.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert cli.main(["adapt-traj", *_ck(root), "--motions", mfile, "--motion-id", mid, "--particles", "4",
                     "--iterations", "2", "--chunks", "2", "--out", str(tmp_path / "at")]) == 0
    with open(tmp_path / "at" / "history.csv") as fh:
        best = [float(r["best_j"]) for r in csv.DictReader(fh)]
    assert best == sorted(best)
    assert cli.main(["interpolate", *_ck(root), "--goal-a", str(root / "goal.jsonl"), "--goal-b",
                     str(root / "goal_b.jsonl"), "--points", "3", "--steps", "5", "--out", str(tmp_path / "i")]) == 0
    assert len(list((tmp_path / "i").glob("trajectory_*.csv"))) == 3
    assert cli.main(["project-latents", *_ck(root), "--motions", mfile, "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "projection.svg").exists()


def test_plot_metrics_and_empty(run, tmp_path, capsys):
    root, _ = run
    assert cli.main(["plot", "--csv", str(root / "a" / "metrics.csv"), "--out", str(tmp_path / "pl")]) == 0
    assert (tmp_path / "pl" / "loss_fb.svg").exists() and (tmp_path / "pl" / "tracking.svg").exists()
    (tmp_path / "two.csv").write_text("x,y\n0,1\n1,2\n")
    assert cli.main(["plot", "--csv", str(tmp_path / "two.csv"), "--out", str(tmp_path / "p2")]) == 0
    svg = (tmp_path / "p2" / "plot.svg").read_text()
    assert len(re.findall(r'points="([^"]*)"', svg)[0].split()) == 2
    (tmp_path / "empty.csv").write_text("x,y\n")
    assert cli.main(["plot", "--csv", str(tmp_path / "empty.csv"), "--out", str(tmp_path / "p3")]) == 0
    assert "warning" in capsys.readouterr().err


def test_errors_are_nonzero(run, tmp_path, capsys):
    root, _ = run
    assert cli.main(["frobnicate"]) != 0
    assert cli.main(["train", "--config", str(root / "c.json"), "--bogus"]) != 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lr_x": 1}}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "train.lr_x" in capsys.readouterr().err
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**SMOKE, "model": {**SMOKE["model"], "latent_dim": 8}}))
    assert cli.main(["infer-goal", *_ck(root), "--config", str(other), "--frame", str(root / "goal.jsonl"),
                     "--out", str(tmp_path / "h")]) == 1
    err = capsys.readouterr().err
    assert "hash mismatch" in err


def test_inputs_not_mutated(run, tmp_path):
    root, _ = run
    before = (root / "m.jsonl").read_bytes(), (root / "a" / "model.ckpt").read_bytes()
    cli.main(["project-latents", *_ck(root), "--motions", str(root / "m.jsonl"), "--out", str(tmp_path / "p")])
    assert before == ((root / "m.jsonl").read_bytes(), (root / "a" / "model.ckpt").read_bytes())
