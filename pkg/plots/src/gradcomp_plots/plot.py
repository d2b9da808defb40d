"""Render figures from the experiment runner's CSV outputs.

Usage: plot <kind> --in CSV [CSV ...] --out IMG [--x-axis iter|bits]

Kinds:
  scatter-up    variance-vs-bits scatter from sweep CSVs, with the analytic
                lower-bound curve alpha = 4^(-b/d) dashed underneath
  box           per-scheme variance boxplot from variance-comparison CSVs
  swarm         same data as `box` drawn as a swarmplot
  convergence   suboptimality curves (log-scale y) from trajectory CSVs,
                against iterations or cumulative bits

Input schemas are validated strictly: the column list must match the
runner's output exactly (unknown or missing columns are rejected), and
empty data produces an error without writing a file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

SWEEP_COLUMNS = ["scheme", "d", "vector_seed", "alpha_hat", "stderr", "bits",
                 "bits_per_coord", "up_margin"]
TRAJECTORY_COLUMNS = ["scheme", "iter", "subopt", "cum_bits"]
VARCOMPARE_COLUMNS = ["scheme", "d", "param", "trial", "omega_hat"]

SCHEMAS = {
    "scatter-up": SWEEP_COLUMNS,
    "box": VARCOMPARE_COLUMNS,
    "swarm": VARCOMPARE_COLUMNS,
    "convergence": TRAJECTORY_COLUMNS,
}


class SchemaError(ValueError):
    """Input CSV does not match the expected column layout."""


def load_frames(kind: str, paths) -> pd.DataFrame:
    expected = SCHEMAS[kind]
    frames = []
    for path in paths:
        df = pd.read_csv(path)
        got = list(df.columns)
        if got != expected:
            unknown = [c for c in got if c not in expected]
            missing = [c for c in expected if c not in got]
            raise SchemaError(
                f"{path}: columns {got} do not match the {kind} schema "
                f"{expected} (unknown: {unknown or '-'}, "
                f"missing: {missing or '-'})")
        df["source"] = Path(path).stem
        frames.append(df)
    data = pd.concat(frames, ignore_index=True)
    if data.empty:
        raise SchemaError("no data rows in input CSVs")
    return data


def up_boundary(bits_per_coord: np.ndarray) -> np.ndarray:
    """Analytic lower bound alpha = 4^(-b/d) on the normalized variance."""
    return 4.0 ** (-np.asarray(bits_per_coord, dtype=float))


def render_scatter_up(data: pd.DataFrame, ax) -> None:
    sns.scatterplot(data=data, x="bits_per_coord", y="alpha_hat",
                    hue="scheme", style="d", s=25, ax=ax)
    lo, hi = data["bits_per_coord"].min(), data["bits_per_coord"].max()
    grid = np.linspace(max(lo * 0.9, 1e-3), hi * 1.05, 400)
    ax.plot(grid, up_boundary(grid), "r--", linewidth=1.2,
            label=r"$\alpha = 4^{-b/d}$")
    ax.set_yscale("log")
    ax.set_xlabel("bits per coordinate")
    ax.set_ylabel(r"normalized variance $\hat\alpha$")
    ax.legend(fontsize=7, ncol=2)


def render_box(data: pd.DataFrame, ax, swarm: bool = False) -> None:
    data = data.copy()
    data["group"] = data["scheme"] + " d=" + data["d"].astype(str)
    order = sorted(data["group"].unique())
    if swarm:
        sns.swarmplot(data=data, x="group", y="omega_hat", order=order,
                      size=2.0, ax=ax)
    else:
        sns.boxplot(data=data, x="group", y="omega_hat", order=order, ax=ax)
    ax.set_yscale("log")
    ax.set_xlabel("")
    ax.set_ylabel(r"empirical variance $\hat\omega$")
    ax.tick_params(axis="x", rotation=30, labelsize=7)


def render_convergence(data: pd.DataFrame, ax, x_axis: str) -> None:
    x_col = "iter" if x_axis == "iter" else "cum_bits"
    for (source, scheme), part in data.groupby(["source", "scheme"]):
        part = part.sort_values(x_col)
        label = scheme if data["source"].nunique() == 1 else f"{scheme} ({source})"
        ax.plot(part[x_col], part["subopt"], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iterations" if x_axis == "iter" else "communicated bits")
    ax.set_ylabel(r"relative suboptimality $(f(x_k)-f^*)/(f(x_0)-f^*)$")
    ax.legend(fontsize=7)


def render(kind: str, paths, out_path, x_axis: str = "iter") -> None:
    data = load_frames(kind, paths)
    sns.set_theme(style="whitegrid", font_scale=0.8)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=150)
    try:
        if kind == "scatter-up":
            render_scatter_up(data, ax)
        elif kind == "box":
            render_box(data, ax)
        elif kind == "swarm":
            render_box(data, ax, swarm=True)
        else:
            render_convergence(data, ax, x_axis)
        fig.tight_layout()
        fig.savefig(out_path, format="png")
    finally:
        plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="render figures from gradcomp CSV outputs")
    parser.add_argument("kind", choices=sorted(SCHEMAS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV file(s)")
    parser.add_argument("--out", required=True, metavar="IMG",
                        help="output PNG path")
    parser.add_argument("--x-axis", choices=["iter", "bits"], default="iter",
                        help="x axis for convergence plots")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out, args.x_axis)
    except (SchemaError, FileNotFoundError, pd.errors.ParserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
