"""Figure builders over the experiment CSV schemas.

Each figure kind is a pure function of its CSV content: the same bytes in
give the same data series out, and the rendered series are returned alongside
the image path so tests can diff them against the source exactly.
"""

import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

STYLE_PATH = os.path.join(os.path.dirname(__file__), "risq.mplstyle")

FIGURE_KINDS = ("delay_vs_lambda", "jitter_vs_lambda", "backlog_trace",
                "rate_trace", "return_curve")

REQUIRED_COLUMNS = {
    "delay_vs_lambda": ["lam", "policy", "avg_delay_ms"],
    "jitter_vs_lambda": ["lam", "policy", "jitter_ms"],
    "backlog_trace": ["slot", "user", "q"],
    "rate_trace": ["slot", "user", "rate_bps"],
    "return_curve": ["episode", "stage", "return"],
}


class SchemaError(ValueError):
    """The CSV lacks columns the figure kind needs."""


class EmptyDataError(ValueError):
    """The CSV has no data rows."""


@dataclass
class FigureSpec:
    csv_path: str
    kind: str
    output_path: str
    title: str = ""

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(
                f"unknown figure kind '{self.kind}'; expected one of "
                f"{FIGURE_KINDS}")


@dataclass
class FigureResult:
    output_path: str
    series: dict = field(default_factory=dict)   # label -> (x, y) arrays


def _load(spec: FigureSpec) -> pd.DataFrame:
    frame = pd.read_csv(spec.csv_path)
    required = REQUIRED_COLUMNS[spec.kind]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{spec.csv_path} lacks columns {missing}; figure kind "
            f"'{spec.kind}' expects {required}")
    if frame.empty:
        raise EmptyDataError(f"{spec.csv_path} contains no data rows")
    return frame


def _sweep_lines(frame, value_column):
    series = {}
    for policy, group in frame.groupby("policy", sort=True):
        means = group.groupby("lam", sort=True)[value_column].mean()
        series[str(policy)] = (means.index.to_numpy(dtype=float),
                               means.to_numpy(dtype=float))
    return series


def _trace_lines(frame, value_column):
    series = {}
    for user, group in frame.groupby("user", sort=True):
        ordered = group.sort_values("slot")
        series[f"user {user}"] = (ordered["slot"].to_numpy(dtype=float),
                                  ordered[value_column].to_numpy(dtype=float))
    return series


def _return_lines(frame):
    series = {}
    for stage, group in frame.groupby("stage", sort=True):
        ordered = group.sort_values("episode")
        x = ordered["episode"].to_numpy(dtype=float)
        y = ordered["return"].to_numpy(dtype=float)
        series[str(stage)] = (x, y)
        if y.size >= 10:
            window = np.ones(10) / 10
            smooth = np.convolve(y, window, mode="valid")
            series[f"{stage} (avg-10)"] = (x[9:], smooth)
    return series


_BUILDERS = {
    "delay_vs_lambda": lambda f: _sweep_lines(f, "avg_delay_ms"),
    "jitter_vs_lambda": lambda f: _sweep_lines(f, "jitter_ms"),
    "backlog_trace": lambda f: _trace_lines(f, "q"),
    "rate_trace": lambda f: _trace_lines(f, "rate_bps"),
    "return_curve": _return_lines,
}

_AXIS_LABELS = {
    "delay_vs_lambda": ("arrival rate (packets/slot)", "average delay (ms)"),
    "jitter_vs_lambda": ("arrival rate (packets/slot)", "jitter (ms)"),
    "backlog_trace": ("slot", "backlogged packets"),
    "rate_trace": ("slot", "rate (bit/s)"),
    "return_curve": ("episode", "return"),
}


def plot(spec: FigureSpec) -> FigureResult:
    """Render one figure kind to spec.output_path (png or svg)."""
    frame = _load(spec)
    series = _BUILDERS[spec.kind](frame)

    with plt.style.context(STYLE_PATH):
        fig, ax = plt.subplots()
        for label, (x, y) in series.items():
            ax.plot(x, y, label=label)
        xlabel, ylabel = _AXIS_LABELS[spec.kind]
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if spec.title:
            ax.set_title(spec.title)
        ax.legend()
        rendered = {line.get_label(): (line.get_xdata(), line.get_ydata())
                    for line in ax.get_lines()}
        os.makedirs(os.path.dirname(os.path.abspath(spec.output_path)),
                    exist_ok=True)
        fig.savefig(spec.output_path)
        plt.close(fig)
    return FigureResult(output_path=spec.output_path, series=rendered)
