"""Command-line entry point: ``fbzero <subcommand> ...``.

Every subcommand writes its outputs under ``--out`` (a directory) together
with the resolved ``config.json`` where a run config applies, and exits
nonzero on any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys


def _set_threads(n):
    # must run before numpy is first imported to take effect
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _peek_threads(argv):
    if "--config" in argv:
        try:
            with open(argv[argv.index("--config") + 1]) as fh:
                return int(json.load(fh).get("threads", 1))
        except (OSError, ValueError, IndexError, AttributeError):
            return 1
    return 1


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _load_ckpt(path, config_path=None):
    from . import config as cfgmod
    from . import trainer

    expected = None
    if config_path:
        expected = cfgmod.load(config_path).model_hash
    return trainer.load_model(path, expected_hash=expected)


def _motions(path):
    from . import motions

    return motions.load_motion_set(path)


def _read_frame(path):
    """A goal prompt file: one motion-format frame line ``{"o": [...], "s": [...]}``."""
    import numpy as np

    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise CliError(f"{path}: empty frame file")
    rec = json.loads(lines[-1])
    if "s" not in rec or "o" not in rec:
        raise CliError(f"{path}: frame line needs 's' and 'o' arrays")
    return np.asarray(rec["s"], dtype=np.float32), np.asarray(rec["o"], dtype=np.float32)


def _write_trajectory(path, traj, index=0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "q0", "q1", "qd0", "qd1", "a0", "a1"])
        feats, acts = traj.features[index], traj.actions[index]
        for t in range(len(feats)):
            a = acts[t] if t < len(acts) else [float("nan")] * 2
            w.writerow([t] + [repr(float(v)) for v in feats[t, :4]] + [repr(float(v)) for v in a])


def _print_latent(z, label="z"):
    print(f"{label} = [" + ", ".join(f"{float(v):.6f}" for v in z) + "]")


def _out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _params(text):
    try:
        return json.loads(text) if text else {}
    except json.JSONDecodeError as exc:
        raise CliError(f"--params is not valid JSON: {exc}") from None


def _write_invocation(args):
    """Resolved arguments as config.json beside the outputs (train writes the RunConfig instead)."""
    record = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    if args.command == "gen-motions":
        path = os.path.abspath(args.out) + ".config.json"
    else:
        path = os.path.join(_out(args.out), "config.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- subcommands

def cmd_gen_motions(args):
    from . import motions, toyenv

    env = toyenv.EnvConfig(env_kind=args.env)
    gen = args.generator or ("waypoint_loops" if args.env == "pointmass" else "sinusoid_joints")
    ms = motions.generate_motion_set(env, gen, args.n, args.seed, n_frames=args.frames)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    motions.save_motion_set(ms, args.out)
    print(f"wrote {len(ms)} motions ({ms.total_frames} frames) to {args.out}")


def _dataset(cfg):
    from . import motions

    if cfg.data.motions:
        ms = motions.load_motion_set(cfg.data.motions)
        if ms.env_kind != cfg.env.env_kind:
            raise CliError(f"motion file is for {ms.env_kind}, config env is {cfg.env.env_kind}")
        return ms
    return motions.generate_motion_set(cfg.env, cfg.generator, cfg.data.n_motions, cfg.data.seed,
                                       n_frames=cfg.data.n_frames)


def cmd_train(args):
    from . import config as cfgmod
    from . import trainer

    cfg = cfgmod.load(args.config, seed=args.seed)
    out = _out(args.out or cfg.out_dir)
    cfg.out_dir = out
    cfg.save(os.path.join(out, "config.json"))
    ms = _dataset(cfg)
    tr = trainer.Trainer(cfg.env, ms, cfg.train, cfg.model, cfg.sampler, out_dir=out, run_hash=cfg.model_hash)
    if args.resume:
        tr.load_snapshot(args.resume)
    else:
        for name in ("metrics.csv", "timing.csv"):
            if os.path.exists(os.path.join(out, name)):
                os.remove(os.path.join(out, name))

    def progress(t):
        if not args.quiet:
            last = t.metrics[-1]
            print(f"iter {t.iteration}/{t.cfg.total_iters} emd={last.get('emd_mean', float('nan')):.3f} "
                  f"mpjpe={last.get('mpjpe_mean', float('nan')):.3f}", flush=True)

    tr.run(until=args.until, checkpoint_every=args.snapshot_every, progress=progress)
    tr.save_checkpoint(os.path.join(out, "model.ckpt"))
    if args.snapshot_every or args.until:
        tr.save_snapshot(os.path.join(out, "snapshot.ckpt"))
    print(f"checkpoint: {os.path.join(out, 'model.ckpt')}")


def _suite_from_json(path):
    from . import evaluation

    with open(path) as fh:
        raw = json.load(fh)
    tasks = raw["tasks"] if isinstance(raw, dict) else raw
    suite = []
    allowed = {f for f in evaluation.TaskSpec.__dataclass_fields__}
    for i, t in enumerate(tasks):
        bad = set(t) - allowed
        if bad:
            raise CliError(f"suite task {i}: unknown keys {sorted(bad)}")
        suite.append(evaluation.TaskSpec(**t))
    return suite


def cmd_eval(args):
    from . import evaluation, plots

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    suite = _suite_from_json(args.suite)
    ms = _motions(args.motions) if args.motions else None
    probe = _probe(arrays, args.probe_source, ms)
    report = evaluation.evaluate_checkpoint(model, suite, env, probe=probe, motion_set=ms,
                                            config_hash=header["config_hash"],
                                            checkpoint=os.path.basename(args.checkpoint))
    out = _out(args.out)
    report.to_csv(os.path.join(out, "report.csv"))
    _report_plot(report, os.path.join(out, "report.svg"), plots)
    for r in report.rows:
        print(f"{r.task:40s} {r.metric:22s} {r.mean:10.4f} +- {r.std:.4f} (n={r.episodes})")


def _report_plot(report, path, plots):
    labels, vals, base = [], [], []
    for r in report.rows:
        if r.metric.endswith("_random_latent"):
            continue
        labels.append(f"{r.task} {r.metric}")
        vals.append(r.mean)
        try:
            base.append(report.get(r.task, r.metric + "_random_latent").mean)
        except KeyError:
            base.append(None)
    plots.write(path, plots.bar_chart(labels, vals, base, title="evaluation", ylabel="metric"))


def _probe(arrays, source, ms):
    import numpy as np

    if source == "motions":
        if ms is None:
            raise CliError("--probe-source motions needs --motions")
        return (np.concatenate([m.states for m in ms]), np.concatenate([m.obs for m in ms]))
    if "probe/s" not in arrays or len(arrays["probe/s"]) == 0:
        raise CliError("checkpoint carries no buffer probe states; use --probe-source motions")
    return arrays["probe/s"], arrays["probe/o"]


def _rollout_one(model, env, z, init, steps, seed, params=None):
    import numpy as np

    from .rollout import rollout

    return rollout(env, model, np.asarray(z, dtype=np.float32)[None], [init], steps,
                   np.random.default_rng(seed), params=params)[0]


def cmd_infer_reward(args):
    import numpy as np

    from . import evaluation, inference

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    ms = _motions(args.motions) if args.motions else None
    s, o = _probe(arrays, args.probe_source, ms)
    params = _params(args.params)
    r = evaluation.task_reward(args.task, params, s, env.env_kind)
    z = inference.reward_embedding(model, s, o, r)
    _print_latent(z)
    out = _out(args.out)
    np.savetxt(os.path.join(out, "latent.txt"), z[None], fmt="%.9g")
    traj = _rollout_one(model, env, z, "default", args.steps, args.seed)
    _write_trajectory(os.path.join(out, "trajectory.csv"), traj)
    ret = evaluation.task_reward(args.task, params, traj.features[0, 1:], env.env_kind).sum()
    print(f"return over {args.steps} steps: {ret:.4f}")


def cmd_infer_goal(args):
    import numpy as np

    from . import evaluation, inference, toyenv

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    s, o = _read_frame(args.frame)
    z = inference.goal_embedding(model, s, o)
    _print_latent(z)
    out = _out(args.out)
    np.savetxt(os.path.join(out, "latent.txt"), z[None], fmt="%.9g")
    traj = _rollout_one(model, env, z, args.init, args.steps, args.seed)
    _write_trajectory(os.path.join(out, "trajectory.csv"), traj)
    err = evaluation.mpjpe(traj.poses[0, 1:], toyenv.features_to_pose(s)[0])
    print(f"goal E_mpjpe: {err:.4f}")


def cmd_track(args):
    import numpy as np

    from . import evaluation

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    ms = _motions(args.motions)
    ids = [args.motion_id] if args.motion_id else [m.id for m in ms]
    out = _out(args.out)
    run_env = env.nominal() if args.nominal else env
    with open(os.path.join(out, "tracking.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["motion", "lookahead", "mpjpe", "emd"])
        for mid in ids:
            m = ms.by_id(mid)
            errs, traj = evaluation.track_motion(model, run_env, m, args.lookahead, np.random.default_rng(args.seed))
            e = evaluation.tracking_emd(traj.features[0], m)
            w.writerow([mid, args.lookahead, repr(float(errs[0])), repr(e)])
            print(f"{mid}: E_mpjpe={errs[0]:.4f} EMD={e:.4f}")
            if len(ids) == 1:
                _write_trajectory(os.path.join(out, "trajectory.csv"), traj)


def _adapt_env_overrides(args):
    return {"mass_scale": args.mass_scale} if args.mass_scale != 1.0 else {}


def cmd_adapt_cem(args):
    import numpy as np

    from . import adaptation, evaluation, inference

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    params = _params(args.params)
    obj = adaptation.AdaptObjective(task=args.task, params=params, alpha_r=args.alpha_r,
                                    rollout_len=min(args.steps, env.episode_len),
                                    episodes_per_eval=args.episodes, env_overrides=_adapt_env_overrides(args),
                                    seed=args.seed)
    if args.goal:
        s, o = _read_frame(args.goal)
        z0 = inference.goal_embedding(model, s, o)
    else:
        s, o = _probe(arrays, "buffer", None)
        z0 = inference.reward_embedding(model, s, o, evaluation.task_reward(args.task, params, s, env.env_kind))
    cfg = adaptation.CemConfig(iterations=args.iterations, population=args.population, seed=args.seed)
    z, hist = adaptation.cem_adapt(z0, adaptation.make_objective(obj, env, model), cfg)
    out = _out(args.out)
    adaptation.write_history(hist, os.path.join(out, "history.csv"))
    np.savetxt(os.path.join(out, "latent.txt"), z[None], fmt="%.9g")
    _print_latent(z, "z_star")
    print(f"J: initial {hist[0]['best_j']:.4f} -> best {hist[-1]['best_j']:.4f}")


def cmd_adapt_traj(args):
    import numpy as np

    from . import adaptation, evaluation, inference, motions

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    ms = _motions(args.motions)
    m = ms.by_id(args.motion_id)
    if len(m) > env.episode_len + 1:
        # one rollout covers at most an episode
        m = motions.Motion(m.id, m.obs[: env.episode_len + 1], m.states[: env.episode_len + 1],
                           m.source_params, m.generator)
        print(f"motion truncated to {len(m)} frames (episode length {env.episode_len})")
    z0 = evaluation.tracking_latents_for_rollout(inference.tracking_embeddings(model, m, args.lookahead))
    obj = adaptation.AdaptObjective(task="track", alpha_r=args.alpha_r, rollout_len=len(m) - 1,
                                    episodes_per_eval=1, env_overrides=_adapt_env_overrides(args),
                                    seed=args.seed, reference=m.states)
    env_run = env.nominal()
    cfg = adaptation.AnnealConfig(particles=args.particles, iterations=args.iterations,
                                  chunks=args.chunks, seed=args.seed)
    zs, hist = adaptation.annealed_traj_opt(z0[:-1], adaptation.make_objective(obj, env_run, model), cfg)
    out = _out(args.out)
    adaptation.write_history(hist, os.path.join(out, "history.csv"))
    np.savetxt(os.path.join(out, "latents.txt"), zs, fmt="%.9g")
    print(f"J: initial {hist[0]['best_j']:.4f} -> best {hist[-1]['best_j']:.4f}")


def cmd_interpolate(args):
    import numpy as np

    from . import inference

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    za = inference.goal_embedding(model, *_read_frame(args.goal_a))
    zb = inference.goal_embedding(model, *_read_frame(args.goal_b))
    out = _out(args.out)
    ts = np.linspace(0.0, 1.0, args.points)
    with open(os.path.join(out, "interpolation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "final_q0", "final_q1"] + [f"z{i}" for i in range(len(za))])
        for k, t in enumerate(ts):
            z = inference.slerp(za, zb, float(t))
            traj = _rollout_one(model, env, z, "default", args.steps, args.seed)
            _write_trajectory(os.path.join(out, f"trajectory_{k:02d}.csv"), traj)
            fq = traj.poses[0, -1]
            w.writerow([repr(float(t)), repr(float(fq[0])), repr(float(fq[1]))] + [repr(float(v)) for v in z])
            print(f"t={t:.2f} final pose ({fq[0]:.3f}, {fq[1]:.3f})")


def pca_2d(x):
    """Projection onto the top-2 eigenvectors of the sample covariance (sign-fixed)."""
    import numpy as np

    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(1, len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    top = vecs[:, ::-1][:, :2]
    # deterministic orientation: largest-magnitude loading positive
    for j in range(top.shape[1]):
        if top[np.argmax(np.abs(top[:, j])), j] < 0:
            top[:, j] *= -1
    return xc @ top, vals[::-1][:2]


def cmd_project_latents(args):
    import numpy as np

    from . import fbcore, plots

    model, env, header, arrays = _load_ckpt(args.checkpoint, args.config)
    ms = _motions(args.motions)
    zs, groups, ids = [], [], []
    gen_index = {}
    for m in ms:
        z = fbcore.encode_trajectory(model, m.states, m.obs)
        zs.append(z)
        groups.append(gen_index.setdefault(m.generator, len(gen_index)))
        ids.append(m.id)
    proj, var = pca_2d(np.stack(zs))
    out = _out(args.out)
    with open(os.path.join(out, "projection.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["motion", "pc1", "pc2"])
        for mid, p in zip(ids, proj):
            w.writerow([mid, repr(float(p[0])), repr(float(p[1]))])
    plots.write(os.path.join(out, "projection.svg"),
                plots.scatter(proj.tolist(), groups, title="motion latents (PCA)", xlabel="PC1", ylabel="PC2"))
    print(f"projected {len(zs)} latents; top-2 variances {var[0]:.4f}, {var[1]:.4f}")


def cmd_plot(args):
    from . import plots

    out = _out(args.out)
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print(f"warning: {args.csv} has no data rows; nothing plotted", file=sys.stderr)
        return
    cols = rows[0].keys()
    if "metric" in cols and "task" in cols:
        from . import evaluation

        report = evaluation.EvalReport([evaluation.EvalRow(r["task"], r["metric"], float(r["mean"]),
                                                           float(r["std"]), int(r["episodes"])) for r in rows])
        _report_plot(report, os.path.join(out, "report.svg"), plots)
        return
    if "kind" in cols:
        upd = [r for r in rows if r["kind"] == "update"]
        ev = [r for r in rows if r["kind"] == "eval"]
        x = [float(r["round"]) for r in upd]
        for name in ("loss_d", "loss_fb", "loss_qd", "loss_qr", "loss_pi"):
            y = [float(r[name]) if r[name] else float("nan") for r in upd]
            plots.write(os.path.join(out, f"{name}.svg"),
                        plots.line_plot({name: (x, y)}, name, "update round", name))
        if ev:
            xe = [float(r["round"]) for r in ev]
            series = {k: (xe, [float(r[k]) for r in ev]) for k in ("emd_mean", "mpjpe_mean")}
            plots.write(os.path.join(out, "tracking.svg"),
                        plots.line_plot(series, "tracking during training", "update round", "value"))
        return
    # generic: first column is x, the rest are series
    names = list(cols)
    x = [float(r[names[0]]) for r in rows]
    series = {n: (x, [float(r[n]) for r in rows]) for n in names[1:]}
    plots.write(os.path.join(out, "plot.svg"), plots.line_plot(series, os.path.basename(args.csv), names[0]))


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="fbzero", description="Forward-backward behavioral foundation model toolkit")
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def ckpt_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--config", help="run config whose hash must match the checkpoint")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("gen-motions", help="generate a synthetic motion file")
    sp.add_argument("--env", choices=("pointmass", "arm2"), required=True)
    sp.add_argument("--generator", choices=("waypoint_loops", "sinusoid_joints", "figure_eight"))
    sp.add_argument("--n", type=int, default=24)
    sp.add_argument("--frames", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="motion file path")
    sp.set_defaults(func=cmd_gen_motions)

    sp = sub.add_parser("train", help="pre-train a model")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="run directory (default: config out_dir)")
    sp.add_argument("--resume", help="training snapshot to continue from")
    sp.add_argument("--until", type=int, help="stop after this many env iterations")
    sp.add_argument("--snapshot-every", type=int, help="write snapshot.ckpt every N iterations")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a task suite")
    ckpt_args(sp)
    sp.add_argument("--suite", required=True)
    sp.add_argument("--motions")
    sp.add_argument("--probe-source", choices=("buffer", "motions"), default="buffer")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer-reward", help="zero-shot reward prompting")
    ckpt_args(sp)
    sp.add_argument("--task", required=True)
    sp.add_argument("--params", default="{}", help="task parameters as JSON")
    sp.add_argument("--motions")
    sp.add_argument("--probe-source", choices=("buffer", "motions"), default="buffer")
    sp.add_argument("--steps", type=int, default=200)
    sp.set_defaults(func=cmd_infer_reward)

    sp = sub.add_parser("infer-goal", help="zero-shot goal reaching")
    ckpt_args(sp)
    sp.add_argument("--frame", required=True, help="file with one motion-format frame line")
    sp.add_argument("--init", choices=("default", "fall"), default="default")
    sp.add_argument("--steps", type=int, default=200)
    sp.set_defaults(func=cmd_infer_goal)

    sp = sub.add_parser("track", help="zero-shot motion tracking")
    ckpt_args(sp)
    sp.add_argument("--motions", required=True)
    sp.add_argument("--motion-id")
    sp.add_argument("--lookahead", type=int, default=3)
    sp.add_argument("--nominal", action="store_true", help="track under nominal dynamics")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("adapt-cem", help="CEM over a single latent")
    ckpt_args(sp)
    sp.add_argument("--task", required=True)
    sp.add_argument("--params", default="{}")
    sp.add_argument("--goal", help="frame file for the initial latent (default: reward inference)")
    sp.add_argument("--mass-scale", type=float, default=1.0)
    sp.add_argument("--alpha-r", type=float, default=0.02)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--episodes", type=int, default=4)
    sp.add_argument("--iterations", type=int, default=20)
    sp.add_argument("--population", type=int, default=64)
    sp.set_defaults(func=cmd_adapt_cem)

    sp = sub.add_parser("adapt-traj", help="annealed sampling over a tracking latent sequence")
    ckpt_args(sp)
    sp.add_argument("--motions", required=True)
    sp.add_argument("--motion-id", required=True)
    sp.add_argument("--lookahead", type=int, default=8)
    sp.add_argument("--mass-scale", type=float, default=1.0)
    sp.add_argument("--alpha-r", type=float, default=0.0)
    sp.add_argument("--particles", type=int, default=2048)
    sp.add_argument("--iterations", type=int, default=6)
    sp.add_argument("--chunks", type=int, default=8)
    sp.set_defaults(func=cmd_adapt_traj)

    sp = sub.add_parser("interpolate", help="roll out slerp midpoints between two goal prompts")
    ckpt_args(sp)
    sp.add_argument("--goal-a", required=True)
    sp.add_argument("--goal-b", required=True)
    sp.add_argument("--points", type=int, default=5)
    sp.add_argument("--steps", type=int, default=200)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("project-latents", help="2-D PCA of motion encodings")
    ckpt_args(sp)
    sp.add_argument("--motions", required=True)
    sp.set_defaults(func=cmd_project_latents)

    sp = sub.add_parser("plot", help="SVG plots from a metrics or report CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _set_threads(_peek_threads(argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command not in ("train",):
            _write_invocation(args)
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
