"""Figure rendering for result tables produced by the command line tool.

Kept out of every simulation path on purpose: only the `report` subcommand
imports this module, so a headless install can run all estimators without
touching matplotlib.  Each renderer takes rows parsed from one CSV file and
draws a single PNG next to it (or into a chosen directory).
"""

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

from .errors import ConfigError


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty file, nothing to plot")
        return list(reader.fieldnames), [dict(r) for r in reader]


def _num(value):
    if value is None or value == "":
        return None
    return float(value)


def _distance_from_quantity(name):
    """Total distance encoded in names like tau(2|1); None when absent."""
    if "(" not in name or not name.endswith(")"):
        return None
    inner = name[name.index("(") + 1:-1]
    try:
        return sum(int(part) for part in inner.split("|"))
    except ValueError:
        return None


def _base_quantity(name):
    return name.split("(")[0]


def _plot_estimates(ax, rows, value_col, err_col):
    """Scatter grouped by base quantity, x = encoded distance or row index."""
    groups = {}
    for idx, row in enumerate(rows):
        base = _base_quantity(row["quantity"])
        d = _distance_from_quantity(row["quantity"])
        x = d if d is not None else idx
        y = _num(row.get(value_col))
        err = _num(row.get(err_col)) or 0.0
        if y is None:
            continue
        groups.setdefault(base, []).append((x, y, 3.0 * err))
    for base, pts in sorted(groups.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        es = [p[2] for p in pts]
        if any(e > 0 for e in es):
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=base)
        else:
            ax.plot(xs, ys, marker="s", linestyle="--", label=base)
    positives = [p[1] for pts in groups.values() for p in pts if p[1] > 0]
    total = sum(len(pts) for pts in groups.values())
    if positives and len(positives) == total and max(positives) > 0:
        span = max(positives) / max(min(positives), 1e-300)
        if span > 50.0:
            ax.set_yscale("log")
    ax.legend(fontsize=8)
    return groups


def _render_perc(ax, rows):
    groups = _plot_estimates(ax, rows, "mean", "stderr")
    ps = sorted({row.get("p", "") for row in rows} - {""})
    ax.set_xlabel("distance (or row)")
    ax.set_ylabel("estimate")
    ax.set_title("percolation estimates" + (f"  p = {', '.join(ps)}" if ps else ""))
    return groups


def _render_ising(ax, rows):
    groups = _plot_estimates(ax, rows, "mean", "stderr")
    betas = sorted({row.get("beta", "") for row in rows} - {""})
    ax.set_xlabel("distance (or row)")
    ax.set_ylabel("estimate")
    label = f"  beta = {', '.join(betas)}" if len(betas) == 1 else ""
    ax.set_title("Ising estimates" + label)
    return groups


def _render_walk(ax, rows):
    """Value vs step count per quantity, references as dashed lines."""
    groups = {}
    refs = {}
    for row in rows:
        y = _num(row.get("value"))
        n = _num(row.get("n"))
        if y is None or n is None:
            continue
        groups.setdefault(row["quantity"], []).append((n, y))
        r = _num(row.get("reference"))
        if r is not None:
            refs[row["quantity"]] = r
    for name, pts in sorted(groups.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    for name, r in sorted(refs.items()):
        ax.axhline(r, linestyle=":", linewidth=1.0)
    ax.set_xlabel("n")
    ax.set_ylabel("value")
    ax.set_title("walk quantities")
    ax.legend(fontsize=8)
    return groups


def _render_bars(ax, rows, value_col):
    names = [row["quantity"] for row in rows]
    values = [_num(row.get(value_col)) or 0.0 for row in rows]
    ax.barh(range(len(names)), values)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    if values and min(values) > 0 and max(values) / min(values) > 50.0:
        ax.set_xscale("log")
    ax.set_xlabel(value_col)
    ax.set_title("computed values")
    return dict(zip(names, values))


def render_csv(csv_path, outdir=None):
    """Render one result table; returns the path of the written PNG.

    The column layout picks the renderer: percolation and Ising tables have
    mean/stderr columns, walk tables a value/reference pair, anything else
    falls back to a bar chart of quantity vs value.
    """
    csv_path = Path(csv_path)
    columns, rows = _read_rows(csv_path)
    if not rows:
        raise ConfigError(f"{csv_path}: no data rows")
    target_dir = Path(outdir) if outdir is not None else csv_path.parent
    target_dir.mkdir(parents=True, exist_ok=True)
    out_path = target_dir / (csv_path.stem + ".png")

    fig, ax = plt.subplots(figsize=(7.0, 4.5), dpi=120)
    try:
        if "mean" in columns and "p" in columns:
            _render_perc(ax, rows)
        elif "mean" in columns and "beta" in columns:
            _render_ising(ax, rows)
        elif "value" in columns and "kernel" in columns:
            _render_walk(ax, rows)
        elif "value" in columns:
            _render_bars(ax, rows, "value")
        else:
            raise ConfigError(f"{csv_path}: unrecognised column layout {columns}")
        fig.tight_layout()
        fig.savefig(out_path)
    finally:
        plt.close(fig)
    return out_path
