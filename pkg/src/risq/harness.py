"""Experiment orchestration: the `risq` CLI with train / eval / sweep /
baseline-check subcommands, paired-seed evaluation, scenario grids, and
CSV/JSON persistence.

Every output row is reproducible from (config hash, seed): run directories
are named by the config hash, evaluation re-runs are byte-identical, and all
randomness flows from the seeds recorded in the rows.
"""

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .baselines import make_policy
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_hash,
    desk_preset,
    from_dict,
    load_config,
    paper_preset,
    save_config,
    to_dict,
)
from .env import RisOfdmEnv
from .ppo import Trainer

TRAINING_COLUMNS = [
    "run_id", "stage", "episode", "episode_seed", "return",
    "min_rate_return", "mean_delay_ms", "jitter_ms", "actor_loss_theta",
    "critic_loss_theta", "entropy_theta", "mean_ratio_theta", "actor_loss_n",
    "critic_loss_n", "entropy_n",
]
EVAL_COLUMNS = [
    "run_id", "policy", "seed", "lambda_per_user", "avg_delay_ms",
    "jitter_ms", "mean_return", "delivered_per_user", "arrivals_per_user",
    "users_without_deliveries",
]
TRACE_COLUMNS = ["slot", "user", "q", "arrivals", "delivered", "rate_bps"]

SWEEP_NAMES = ("lambda", "elements", "burst", "gap", "robustness")
NON_LEARNED = ("max_sum_rate", "random", "no_ris")


def output_root(cfg: RunConfig) -> str:
    return os.environ.get("RISQ_OUTPUT_ROOT", cfg.output_dir)


def run_directory(cfg: RunConfig) -> str:
    return os.path.join(output_root(cfg), f"run-{config_hash(cfg)}")


def write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def _fmt_vector(vec):
    return ";".join(f"{v:g}" for v in np.atleast_1d(vec))


def _variant(cfg: RunConfig, **dotted) -> RunConfig:
    data = to_dict(cfg)
    for key, value in dotted.items():
        node = data
        parts = key.split("__")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return from_dict(data)


# ---------------------------------------------------------------------------
# evaluation


def run_policy_episode(cfg: RunConfig, policy_name, seed, checkpoint_dir=None):
    """One full episode under a named policy; returns (env, episode return).

    The no-RIS policy gets an M=0 variant of the configuration; the seed
    feeds the same channel/traffic streams for every policy (paired seeds).
    """
    eval_cfg = cfg
    if policy_name == "no_ris":
        eval_cfg = _variant(cfg, system__num_elements=0)
    env = RisOfdmEnv(eval_cfg)
    policy = make_policy(policy_name, env, eval_cfg, seed=seed,
                         checkpoint_dir=checkpoint_dir)
    state = env.reset(seed)
    total = 0.0
    for _ in range(eval_cfg.scenario.episode_slots):
        phases, owner = policy.select(env, state)
        reward, state, _ = env.step(phases, owner)
        total += reward
    return env, total


def evaluate_policy(cfg: RunConfig, policy_name, seeds, checkpoint_dir=None,
                    keep_traces=False):
    """Paired-seed evaluation; returns (MetricsRow dicts, traces per seed)."""
    rid = config_hash(cfg)
    rows = []
    traces = []
    for seed in seeds:
        env, total = run_policy_episode(cfg, policy_name, seed, checkpoint_dir)
        stats = env.ledger.delay_stats(cfg.traffic.slot_seconds)
        rows.append({
            "run_id": rid,
            "policy": policy_name,
            "seed": seed,
            "lambda_per_user": _fmt_vector(env.traffic_cfg.lambda_per_slot),
            "avg_delay_ms": stats.avg_delay_ms,
            "jitter_ms": stats.jitter_ms,
            "mean_return": total,
            "delivered_per_user": _fmt_vector(env.ledger.total_departures),
            "arrivals_per_user": _fmt_vector(env.ledger.total_arrivals),
            "users_without_deliveries": int(
                stats.users_without_deliveries.sum()),
        })
        if keep_traces:
            traces.append(env.trace)
    return rows, traces


def trace_rows(trace):
    rows = []
    for rec in trace:
        for user in range(rec.q.size):
            rows.append({
                "slot": rec.slot,
                "user": user,
                "q": int(rec.q[user]),
                "arrivals": int(rec.arrivals[user]),
                "delivered": int(rec.delivered[user]),
                "rate_bps": rec.rates[user],
            })
    return rows


def burst_recovery_slots(trace, burst_slot, user, burst_size, fraction=0.1):
    """Slots until the burst user's backlog drops below fraction*burst_size;
    one past the episode length when it never recovers."""
    threshold = fraction * burst_size
    for rec in trace:
        if rec.slot > burst_slot and rec.q[user] < threshold:
            return rec.slot - burst_slot
    return trace[-1].slot - burst_slot + 1 if trace else 0


def backlog_spread(trace):
    """max - min of the time-averaged per-user backlog."""
    q = np.mean([rec.q for rec in trace], axis=0)
    return float(q.max() - q.min())


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: RunConfig):
    out = run_directory(cfg)
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, "config.json"))
    train_cfg = cfg
    if cfg.ppo.train_positions_per_step:
        # user drops are redrawn every training step to aid generalization;
        # evaluation keeps them fixed per episode
        train_cfg = _variant(cfg, scenario__positions_mode="per_step")
    env = RisOfdmEnv(train_cfg)
    trainer = Trainer(env, train_cfg,
                      checkpoint_dir=os.path.join(out, "checkpoints"))
    history = trainer.train()
    rid = config_hash(cfg)
    for row in history:
        row["run_id"] = rid
    write_csv(os.path.join(out, "training.csv"), TRAINING_COLUMNS, history)
    manifest = {
        "run_id": rid,
        "seed": cfg.seed,
        "episodes": {"pretrain": cfg.ppo.pretrain_episodes,
                     "finetune": cfg.ppo.episodes},
        "artifacts": ["training.csv", "checkpoints/stage1.npz",
                      "checkpoints/stage2.npz"],
    }
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"training complete: {out}")
    return out


def cmd_eval(cfg: RunConfig, policy_name, seeds, checkpoint_dir=None,
             export_traces=False):
    out = run_directory(cfg)
    if checkpoint_dir is None:
        checkpoint_dir = os.path.join(out, "checkpoints")
    rows, traces = evaluate_policy(cfg, policy_name, seeds, checkpoint_dir,
                                   keep_traces=export_traces)
    path = os.path.join(out, f"eval_{policy_name}.csv")
    write_csv(path, EVAL_COLUMNS, rows)
    if export_traces:
        for seed, trace in zip(seeds, traces):
            write_csv(os.path.join(out, f"trace_{policy_name}_seed{seed}.csv"),
                      TRACE_COLUMNS, trace_rows(trace))
    print(f"wrote {path} ({len(rows)} rows)")
    return path


def _sweep_lambda(cfg, seeds, policies, checkpoint_dir):
    base = np.mean(np.atleast_1d(cfg.traffic.lambda_per_slot))
    grid = [round(base * f, 4) for f in (0.85, 0.95, 1.0, 1.05, 1.15)]
    rows = []
    for lam in grid:
        cfg_l = _variant(cfg, traffic__lambda_per_slot=lam)
        for policy in policies:
            prows, _ = evaluate_policy(cfg_l, policy, seeds, checkpoint_dir)
            for r in prows:
                r["lam"] = lam
                rows.append(r)
    return ["lam"] + EVAL_COLUMNS, rows


def _sweep_elements(cfg, seeds, policies, checkpoint_dir):
    rows = []
    for m in (4, 8, 16):
        cfg_m = _variant(cfg, system__num_elements=m)
        prows, _ = evaluate_policy(cfg_m, "max_sum_rate", seeds)
        for r in prows:
            r["m"] = m
            rows.append(r)
    return ["m"] + EVAL_COLUMNS, rows


def _sweep_burst(cfg, seeds, policies, checkpoint_dir):
    slots = cfg.scenario.episode_slots
    burst_slot = max(1, slots // 10)
    burst_size = 40
    cfg_b = _variant(cfg, scenario__burst_injections=[[burst_slot, 0,
                                                       burst_size]])
    rows = []
    for policy in policies:
        if policy not in ("proposed", "max_min_rate"):
            continue
        prows, traces = evaluate_policy(cfg_b, policy, seeds, checkpoint_dir,
                                        keep_traces=True)
        for r, trace in zip(prows, traces):
            r["burst_slot"] = burst_slot
            r["burst_size"] = burst_size
            r["recovery_slots"] = burst_recovery_slots(
                trace, burst_slot, 0, burst_size)
            rows.append(r)
    return ["burst_slot", "burst_size", "recovery_slots"] + EVAL_COLUMNS, rows


def _sweep_gap(cfg, seeds, policies, checkpoint_dir):
    base = float(np.mean(np.atleast_1d(cfg.traffic.lambda_per_slot)))
    k = cfg.system.num_users
    rows = []
    for gap in (0.0, 0.2, 0.4):
        offsets = np.linspace(gap, -gap, k)
        if np.any(base + offsets < 0):
            continue
        cfg_g = _variant(cfg, scenario__lambda_gap=list(offsets))
        for policy in policies:
            if policy not in ("proposed", "max_min_rate"):
                continue
            prows, traces = evaluate_policy(cfg_g, policy, seeds,
                                            checkpoint_dir, keep_traces=True)
            for r, trace in zip(prows, traces):
                r["gap"] = gap
                r["backlog_spread"] = backlog_spread(trace)
                rows.append(r)
    return ["gap", "backlog_spread"] + EVAL_COLUMNS, rows


def _sweep_robustness(cfg, seeds, policies, checkpoint_dir):
    variants = {
        "baseline": {},
        "taps": {"fading__l0": 6, "fading__l1": 3, "fading__l2": 4,
                 "fading__n_cp": 8, "system__num_subcarriers": 8},
        "distribution": {"geometry__inner_radius_m": 3.0,
                         "geometry__outer_radius_m": 15.0},
        "rician": {"fading__k_br_db": 3.0, "fading__k_ru_db": 4.0},
    }
    rows = []
    for name, patch in variants.items():
        cfg_v = _variant(cfg, **patch)
        for policy in policies:
            if policy in ("proposed", "max_min_rate") and name != "baseline":
                # learned checkpoints are dimension-specific; robustness
                # variants reuse them only when the state shape is unchanged
                if "system__num_subcarriers" in patch:
                    continue
            prows, _ = evaluate_policy(cfg_v, policy, seeds, checkpoint_dir)
            for r in prows:
                r["variant"] = name
                rows.append(r)
    return ["variant"] + EVAL_COLUMNS, rows


SWEEPS = {
    "lambda": _sweep_lambda,
    "elements": _sweep_elements,
    "burst": _sweep_burst,
    "gap": _sweep_gap,
    "robustness": _sweep_robustness,
}


def cmd_sweep(cfg: RunConfig, scenario, seeds, policies=None,
              checkpoint_dir=None):
    if scenario not in SWEEPS:
        raise ConfigError(
            f"unknown scenario '{scenario}'; expected one of {SWEEP_NAMES}")
    out = run_directory(cfg)
    if checkpoint_dir is None:
        candidate = os.path.join(out, "checkpoints")
        checkpoint_dir = candidate if os.path.isdir(candidate) else None
    if policies is None:
        policies = list(NON_LEARNED)
        if checkpoint_dir and os.path.exists(
                os.path.join(checkpoint_dir, "stage2.npz")):
            policies = ["proposed", "max_min_rate"] + policies
    columns, rows = SWEEPS[scenario](cfg, seeds, policies, checkpoint_dir)
    path = os.path.join(out, f"sweep_{scenario}.csv")
    write_csv(path, columns, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return path


def cmd_baseline_check(cfg: RunConfig, seeds):
    """Run every non-learned policy and assert the structural invariants."""
    failures = []
    for policy_name in NON_LEARNED:
        for seed in seeds:
            eval_cfg = cfg
            if policy_name == "no_ris":
                eval_cfg = _variant(cfg, system__num_elements=0)
            env = RisOfdmEnv(eval_cfg)
            policy = make_policy(policy_name, env, eval_cfg, seed=seed)
            state = env.reset(seed)
            for _ in range(min(100, eval_cfg.scenario.episode_slots)):
                phases, owner = policy.select(env, state)
                if phases.size and (np.any(phases < 0)
                                    or np.any(phases >= 2 * np.pi)):
                    failures.append(f"{policy_name}: phase range violated")
                if np.any(owner < 0) or np.any(owner >= env.k):
                    failures.append(f"{policy_name}: ownership violated")
                _, state, rec = env.step(phases, owner)
                if rec.power.sum() > eval_cfg.phy.p_max_w + 1e-9:
                    failures.append(f"{policy_name}: power budget violated")
            conserved = np.array_equal(
                env.ledger.total_arrivals - env.ledger.total_departures,
                env.ledger.q)
            if not conserved:
                failures.append(f"{policy_name}: packet conservation violated")
    for failure in failures:
        print(f"FAIL {failure}")
    if not failures:
        print("baseline-check: all invariants hold")
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# CLI


def parse_seeds(spec):
    if ":" in spec:
        lo, hi = spec.split(":")
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",")]


def _load_cfg(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset == "paper":
        cfg = paper_preset()
    else:
        cfg = desk_preset()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="risq",
        description="Delay-aware RIS-OFDM resource allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--preset", choices=["desk", "paper"], default="desk")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted-path config override")

    t = sub.add_parser("train", help="run the two-stage training schedule")
    common(t)

    e = sub.add_parser("eval", help="paired-seed policy evaluation")
    common(e)
    e.add_argument("--policy", required=True)
    e.add_argument("--seeds", default="0:10")
    e.add_argument("--checkpoints", default=None)
    e.add_argument("--trace", action="store_true",
                   help="export per-slot ledger traces")

    s = sub.add_parser("sweep", help="run a scenario grid")
    common(s)
    s.add_argument("--scenario", required=True, choices=SWEEP_NAMES)
    s.add_argument("--seeds", default="0:5")
    s.add_argument("--policies", default=None,
                   help="comma-separated policy names")
    s.add_argument("--checkpoints", default=None)

    b = sub.add_parser("baseline-check",
                       help="assert structural invariants for baselines")
    common(b)
    b.add_argument("--seeds", default="0:3")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.command == "train":
            cmd_train(cfg)
            return 0
        if args.command == "eval":
            cmd_eval(cfg, args.policy, parse_seeds(args.seeds),
                     checkpoint_dir=args.checkpoints,
                     export_traces=args.trace)
            return 0
        if args.command == "sweep":
            policies = args.policies.split(",") if args.policies else None
            cmd_sweep(cfg, args.scenario, parse_seeds(args.seeds),
                      policies=policies, checkpoint_dir=args.checkpoints)
            return 0
        if args.command == "baseline-check":
            return cmd_baseline_check(cfg, parse_seeds(args.seeds))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
