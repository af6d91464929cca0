"""Sweep aggregation and rendering.

Collects per-trial estimation errors and per-run tracking results into
delimited tables and draws summary figures next to them. Tables are written
with shortest round-trip float formatting through a single code path, so a
rerun of the same sweep produces byte-identical files regardless of how the
work was scheduled. Figures are rasterized with the Agg backend and are a
presentation layer only; nothing reads them back.
"""

import csv
import os

import numpy as np

from . import fom, storage

ESTIMATION_FIELDS = ("method", "r", "n_train_trials", "trial_id", "loop", "e_y")
CONTROL_FIELDS = ("preset", "model", "source", "steps", "completed", "e_r")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sort_key(row, fields):
    key = []
    for f in fields:
        v = row[f]
        key.append(float(v) if isinstance(v, (int, float, np.floating)) else str(v))
    return tuple(key)


def write_rows(path, fields, rows):
    """Write dict rows as CSV in a canonical sorted order."""
    rows = sorted(rows, key=lambda row: _sort_key(row, fields[:-1]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[f]) for f in fields) + "\n")


def write_estimation_csv(path, rows):
    write_rows(path, ESTIMATION_FIELDS, rows)


def write_control_csv(path, rows):
    write_rows(path, CONTROL_FIELDS, rows)


def read_csv_rows(path):
    """Read a delimited table back as dicts with numeric fields restored."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            row = {}
            for key, val in record.items():
                if val in ("true", "false"):
                    row[key] = val == "true"
                    continue
                try:
                    num = float(val)
                except (TypeError, ValueError):
                    row[key] = val
                    continue
                if np.isfinite(num) and num == int(num) and "." not in val and "e" not in val.lower():
                    row[key] = int(num)
                else:
                    row[key] = num
            out.append(row)
    return out


def median_errors(rows, loop="closed"):
    """Median e_y per (method, r, n_train_trials) over test trials."""
    groups = {}
    for row in rows:
        if row["loop"] != loop:
            continue
        key = (row["method"], int(row["r"]), int(row["n_train_trials"]))
        groups.setdefault(key, []).append(float(row["e_y"]))
    return {key: float(np.median(vals)) for key, vals in sorted(groups.items())}


def best_models(rows, loop="closed"):
    """Lowest-median model per method: (method -> (r, n_train_trials, e_y))."""
    med = median_errors(rows, loop=loop)
    best = {}
    for (method, r, ts), val in med.items():
        cur = best.get(method)
        if cur is None or val < cur[2]:
            best[method] = (r, ts, val)
    return best


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def render_estimation_figure(rows, path, loop="closed"):
    """Median relative output error against model order, per fitter."""
    plt = _pyplot()
    med = median_errors(rows, loop=loop)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    series = {}
    for (method, r, ts), val in med.items():
        series.setdefault((method, ts), []).append((r, val))
    for (method, ts), pts in sorted(series.items()):
        pts.sort()
        rs = [p[0] for p in pts]
        es = [p[1] for p in pts]
        ax.semilogy(rs, es, marker="o", label=f"{method}, {ts} trials")
    ax.set_xlabel("model order")
    ax.set_ylabel(f"median {loop}-loop relative output error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_tracking_figure(Y, ref, mask, dt, path, stations=None):
    """Lateral deflection versus time at a few scored stations."""
    plt = _pyplot()
    scored = [j for j in range(Y.shape[0] // 2) if mask[2 * j + 1]]
    if stations is None:
        picks = scored[:: max(1, len(scored) // 3)][-3:] if scored else []
    else:
        picks = [j for j in stations if j in scored]
    t = np.arange(Y.shape[1]) * dt
    fig, axes = plt.subplots(
        max(len(picks), 1), 1, figsize=(7, 2.2 * max(len(picks), 1)), sharex=True
    )
    axes = np.atleast_1d(axes)
    for ax, j in zip(axes, picks):
        ax.plot(t, ref[2 * j + 1], "k--", lw=1, label="reference")
        ax.plot(t, Y[2 * j + 1], lw=1, label="tracked")
        ax.set_ylabel(f"z at point {j} [m]")
        ax.grid(True, alpha=0.3)
    if picks:
        axes[0].legend(fontsize=8)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_input_figure(U, dt, u_max, path):
    """Commanded pressure channels versus time with the magnitude cap."""
    plt = _pyplot()
    t = np.arange(U.shape[1]) * dt
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for i in range(U.shape[0]):
        ax.plot(t, U[i], lw=0.8, label=f"u{i}")
    for bound in (u_max, -u_max):
        ax.axhline(bound, color="k", ls=":", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("pressure command")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_snapshot_figure(Y, ref, length, dt, path, n_frames=4):
    """Overlaid tracked and reference centerlines at evenly spaced times."""
    plt = _pyplot()
    K = Y.shape[1]
    frames = np.linspace(0, K - 1, min(n_frames, K)).astype(int)
    stations = np.linspace(0.0, length, fom.N_OUTPUT_POINTS)
    fig, axes = plt.subplots(
        len(frames), 1, figsize=(7, 1.8 * len(frames)), sharex=True, sharey=True
    )
    axes = np.atleast_1d(axes)
    for ax, k in zip(axes, frames):
        ax.plot(stations + ref[0::2, k], ref[1::2, k], "k--", lw=1, label="reference")
        ax.plot(stations + Y[0::2, k], Y[1::2, k], lw=1.2, label="tracked")
        ax.set_ylabel(f"t = {k * dt:.2f} s")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    axes[-1].set_xlabel("x [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_run_figures(run_dir, dt, u_max, length):
    """Figures for one persisted control run directory."""

    def load(name):
        rows = []
        with open(os.path.join(run_dir, name), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for rec in reader:
                rows.append([float(x) for x in rec[1:]])
        return np.array(rows).T

    Y = load("Y.csv")
    ref = load("REF.csv")
    U = load("U.csv")
    doc = storage.read_json(os.path.join(run_dir, "metrics.json"))
    mask = np.zeros(Y.shape[0], dtype=bool)
    mask[1::2] = True
    if Y.size == 0:
        return
    render_tracking_figure(Y, ref, mask, dt, os.path.join(run_dir, "tracking.png"))
    render_input_figure(U, dt, u_max, os.path.join(run_dir, "inputs.png"))
    render_snapshot_figure(
        Y, ref, length, dt, os.path.join(run_dir, "snapshots.png")
    )
    return doc
