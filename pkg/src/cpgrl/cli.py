"""Command-line entry point: train, eval, compare and export-plots.

Exit codes: 0 success, 1 runtime/file errors, 2 configuration errors,
3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt_mod
from . import ppo
from .actors import make_actor
from .config import (ExperimentConfig, default_config, load_config,
                     parse_config, serialize_config, with_updates)
from .errors import (CheckpointSchemaError, ConfigError, ContractViolationError,
                     PhysicsFaultError, TrainingAbortError)
from .feedback import RunningNorm
from .paramvec import ParamBlock

# compare() accepts this alias for the feedback-disabled variant
OPEN_LOOP_ALIAS = "cpg-actor-open"

TRAJ_COLUMNS = ("t", "z", "z_dot", "q1", "q2", "qd1", "qd2", "pdes1", "pdes2",
                "tau1", "tau2", "r1", "r2", "r3", "r4", "r5", "contact")


def _build_config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "actor", None):
        kind = args.actor
        if kind == OPEN_LOOP_ALIAS:
            kind = "cpg-actor"
            overrides.append("feedback.enabled = false")
        overrides.append(f"actor = {kind}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"total_steps = {args.steps}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seeds = {args.seed}")
    if getattr(args, "seeds", None):
        overrides.append(f"seeds = {args.seeds}")
    if getattr(args, "out", None):
        overrides.append(f"out_dir = {args.out}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"ppo.n_workers = {args.workers}")
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _train_one(cfg: ExperimentConfig, actor_kind: str, seed: int, run_dir: str):
    os.makedirs(run_dir, exist_ok=True)
    text = serialize_config(with_updates(cfg, actor=actor_kind, seeds=(seed,)))
    return ppo.train(actor_kind, cfg.total_steps, cfg, seed,
                     out_dir=run_dir, config_text=text)


def cmd_train(args) -> int:
    cfg = _build_config(args)
    for seed in cfg.seeds:
        run_dir = os.path.join(cfg.out_dir, cfg.actor, f"seed{seed}")
        result = _train_one(cfg, cfg.actor, seed, run_dir)
        print(f"trained {cfg.actor} seed={seed}: {len(result.log_rows)} updates, "
              f"checkpoints at {result.checkpoint_steps} -> {run_dir}")
    return 0


def _load_run(checkpoint_path: str):
    ck = ckpt_mod.load_checkpoint(checkpoint_path)
    cfg = parse_config(ck.config_text) if ck.config_text.strip() else default_config()
    params, norm = ckpt_mod.split_arrays(ck)
    block = ParamBlock(params)
    normalizer = RunningNorm.from_state(norm) if norm else RunningNorm(8)
    actor = make_actor(ck.actor_kind, cfg)
    return ck, cfg, actor, block, normalizer


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: list[str], rows: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt_cell(row[c]) for c in header) + "\n")


def cmd_eval(args) -> int:
    ck, cfg, actor, block, normalizer = _load_run(args.checkpoint)
    metrics, traces = ppo.evaluate(actor, block, normalizer, cfg,
                                   episodes=args.episodes,
                                   deterministic=args.deterministic,
                                   seed=args.seed)
    metrics["checkpoint_step"] = ck.step
    metrics["actor"] = ck.actor_kind
    out = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "eval_metrics.json"), "w") as f:
        json.dump(metrics, f, indent=2)
    for i, tr in enumerate(traces):
        _write_csv(os.path.join(out, f"trajectory_ep{i:03d}.csv"),
                   list(TRAJ_COLUMNS), tr.rows)
        if tr.osc_rows:
            _write_csv(os.path.join(out, f"oscillators_ep{i:03d}.csv"),
                       list(tr.osc_rows[0]), tr.osc_rows)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_compare(args) -> int:
    cfg = _build_config(args)
    actor_list = [a.strip() for a in args.actors.split(",") if a.strip()]
    if len(actor_list) < 2:
        raise ConfigError("compare needs at least 2 actors")
    seeds = cfg.seeds
    os.makedirs(cfg.out_dir, exist_ok=True)
    curve_rows = []
    final_rewards: dict[str, list[float]] = {}
    for label in actor_list:
        kind = "cpg-actor" if label == OPEN_LOOP_ALIAS else label
        run_cfg = cfg
        if label == OPEN_LOOP_ALIAS:
            run_cfg = parse_config(serialize_config(cfg), ["feedback.enabled = false"])
        for seed in seeds:
            run_dir = os.path.join(cfg.out_dir, label, f"seed{seed}")
            result = _train_one(run_cfg, kind, seed, run_dir)
            for row in result.log_rows:
                curve_rows.append({"actor": label, "seed": seed, "step": row.steps,
                                   "mean_ep_reward": row.mean_ep_reward})
            final_rewards.setdefault(label, []).append(
                final_window_reward([r.mean_ep_reward for r in result.log_rows]))
            print(f"compare: finished {label} seed={seed}")
    _write_csv(os.path.join(cfg.out_dir, "comparison.csv"),
               ["actor", "seed", "step", "mean_ep_reward"], curve_rows)
    baseline = actor_list[-1]
    base_mean = float(np.mean(final_rewards[baseline])) if final_rewards[baseline] else float("nan")
    ratio_rows = []
    for label in actor_list:
        mean_final = float(np.mean(final_rewards[label]))
        ratio_rows.append({"actor": label, "mean_final_reward": mean_final,
                           "ratio_vs_" + baseline: mean_final / base_mean
                           if base_mean else float("nan")})
    _write_csv(os.path.join(cfg.out_dir, "ratio.csv"),
               ["actor", "mean_final_reward", "ratio_vs_" + baseline], ratio_rows)
    print(f"comparison written to {cfg.out_dir}")
    return 0


def final_window_reward(curve: list[float], window_frac: float = 0.2) -> float:
    """Mean logged episode reward over the trailing window of a run."""
    if not curve:
        return float("nan")
    k = max(1, int(len(curve) * window_frac))
    return float(np.mean(curve[-k:]))


HIST_BINS = 30


def export_histograms(run_dir: str, out_dir: str) -> bool:
    """Parameter distributions per checkpoint with fixed bin edges."""
    paths = sorted(glob.glob(os.path.join(run_dir, "ck_*.txt")))
    if not paths:
        return False
    groups = {"cpg_params": ["cpg.v"],
              "fb_out": ["fb.Wxi", "fb.bxi", "fb.Wk", "fb.bk"]}
    cks = [ckpt_mod.load_checkpoint(p) for p in paths]
    rows = []
    for group, names in groups.items():
        series = []
        for ck in cks:
            vals = [ck.arrays[n].ravel() for n in names if n in ck.arrays]
            if vals:
                series.append((ck.step, np.concatenate(vals)))
        if not series:
            continue
        allv = np.concatenate([v for _, v in series])
        lo, hi = float(allv.min()), float(allv.max())
        if hi <= lo:
            hi = lo + 1e-9
        edges = np.linspace(lo, hi, HIST_BINS + 1)
        for step, vals in series:
            counts, _ = np.histogram(vals, bins=edges)
            for b in range(HIST_BINS):
                rows.append({"group": group, "step": step,
                             "bin_left": float(edges[b]), "bin_right": float(edges[b + 1]),
                             "count": int(counts[b])})
    _write_csv(os.path.join(out_dir, "param_histograms.csv"),
               ["group", "step", "bin_left", "bin_right", "count"], rows)
    return True


def cmd_export_plots(args) -> int:
    run_dir = args.run
    out_dir = args.out or os.path.join(run_dir, "plots")
    log_path = os.path.join(run_dir, "train_log.csv")
    ck_paths = sorted(glob.glob(os.path.join(run_dir, "ck_*.txt")))
    if not os.path.isfile(log_path) or not ck_paths:
        print(f"error: '{run_dir}' has no train_log.csv / checkpoints", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    export_histograms(run_dir, out_dir)

    with open(log_path) as f:
        header = f.readline().strip().split(",")
        rows = [dict(zip(header, line.strip().split(","))) for line in f if line.strip()]
    _write_csv(os.path.join(out_dir, "reward_curve.csv"),
               ["update", "steps", "mean_ep_reward"],
               [{k: r[k] for k in ("update", "steps", "mean_ep_reward")} for r in rows])

    ck, cfg, actor, block, normalizer = _load_run(ck_paths[-1])
    metrics, traces = ppo.evaluate(actor, block, normalizer, cfg, episodes=1,
                                   deterministic=True, seed=0)
    tr = traces[0]
    _write_csv(os.path.join(out_dir, "desired_positions.csv"),
               ["t", "pdes1", "pdes2"],
               [{k: r[k] for k in ("t", "pdes1", "pdes2")} for r in tr.rows])
    _write_csv(os.path.join(out_dir, "heights.csv"),
               ["t", "z", "foot_z"],
               [{k: r[k] for k in ("t", "z", "foot_z")} for r in tr.rows])
    if tr.osc_rows:
        _write_csv(os.path.join(out_dir, "oscillator_rates.csv"),
                   list(tr.osc_rows[0]), tr.osc_rows)
    print(f"plot data written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpgrl",
                                description="oscillator-network RL on a vertical hopper")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="configuration file (key = value lines)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
        sp.add_argument("--steps", type=int, help="total environment steps")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="parallel environment streams")

    t = sub.add_parser("train", help="train one actor over the configured seeds")
    common(t)
    t.add_argument("--actor", help="cpg-actor | mlp-actor | cpg-in-env | cpg-actor-open")
    t.add_argument("--seed", type=int, help="single seed (overrides config seeds)")
    t.add_argument("--seeds", help="comma-separated seed list")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--deterministic", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="directory for metrics/trajectories")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("compare", help="train several actors and emit aligned curves")
    common(c)
    c.add_argument("--actors", required=True, help="comma-separated actor list")
    c.add_argument("--seeds", help="comma-separated seed list")
    c.set_defaults(fn=cmd_compare)

    x = sub.add_parser("export-plots", help="plot-ready CSVs from a finished run")
    x.add_argument("--run", required=True, help="run directory (one actor, one seed)")
    x.add_argument("--out", help="output directory (default <run>/plots)")
    x.set_defaults(fn=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingAbortError as exc:
        print(f"training aborted: {exc} (dump: {exc.dump_path})", file=sys.stderr)
        return 3
    except (CheckpointSchemaError, PhysicsFaultError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
