"""Secondary acceptance: all five figure kinds render from real harness CSVs
and the drawn series equal the CSV content."""

import os

import numpy as np
import pandas as pd
import pytest

from risq.config import config_hash, desk_preset, from_dict, save_config, to_dict
from risq.harness import main as risq_main

from risq_plots.cli import main as plots_main
from risq_plots.figures import FigureSpec, plot


@pytest.fixture(scope="module")
def harness_outputs(tmp_path_factory):
    """One micro training + eval + sweep run through the risq CLI."""
    root = tmp_path_factory.mktemp("plots-acceptance")
    cfg = desk_preset()
    data = to_dict(cfg)
    data["output_dir"] = str(root)
    data["scenario"]["episode_slots"] = 15
    data["ppo"].update({"buffer_capacity": 15, "update_epochs": 1,
                        "pretrain_episodes": 2, "episodes": 12})
    data["net"].update({"theta_hidden": [16], "agent_hidden": [8],
                        "critic_hidden": [16]})
    cfg = from_dict(data)
    cfg_path = root / "cfg.json"
    save_config(cfg, cfg_path)
    assert risq_main(["train", "--config", str(cfg_path)]) == 0
    assert risq_main(["eval", "--config", str(cfg_path), "--policy",
                      "proposed", "--seeds", "0:2", "--trace"]) == 0
    assert risq_main(["sweep", "--config", str(cfg_path), "--scenario",
                      "lambda", "--seeds", "0:2", "--policies",
                      "random,max_sum_rate"]) == 0
    run_dir = root / f"run-{config_hash(cfg)}"
    return {
        "training": run_dir / "training.csv",
        "trace": run_dir / "trace_proposed_seed0.csv",
        "sweep": run_dir / "sweep_lambda.csv",
        "out": root,
    }


def test_all_five_kinds_render(harness_outputs):
    jobs = [
        ("delay_vs_lambda", harness_outputs["sweep"]),
        ("jitter_vs_lambda", harness_outputs["sweep"]),
        ("backlog_trace", harness_outputs["trace"]),
        ("rate_trace", harness_outputs["trace"]),
        ("return_curve", harness_outputs["training"]),
    ]
    for kind, csv in jobs:
        for ext in ("png", "svg"):
            out = harness_outputs["out"] / f"{kind}.{ext}"
            assert plots_main([kind, "--in", str(csv),
                               "--out", str(out)]) == 0
            assert out.exists() and out.stat().st_size > 0


def test_golden_series_match_harness_csvs(harness_outputs):
    result = plot(FigureSpec(str(harness_outputs["sweep"]), "delay_vs_lambda",
                             str(harness_outputs["out"] / "golden.png")))
    frame = pd.read_csv(harness_outputs["sweep"])
    for policy, group in frame.groupby("policy"):
        want = group.groupby("lam")["avg_delay_ms"].mean()
        x, y = result.series[policy]
        assert np.array_equal(x, want.index.to_numpy())
        assert np.array_equal(y, want.to_numpy())

    result = plot(FigureSpec(str(harness_outputs["trace"]), "backlog_trace",
                             str(harness_outputs["out"] / "golden2.png")))
    frame = pd.read_csv(harness_outputs["trace"])
    for user, group in frame.groupby("user"):
        ordered = group.sort_values("slot")
        x, y = result.series[f"user {user}"]
        assert np.array_equal(y, ordered["q"].to_numpy(dtype=float))
