"""SVG renderings of fit/compare/cv artifacts.

Each plot is written together with the tidy CSV it was drawn from.
Output is byte-stable for fixed input (fixed SVG id salt, no date stamp).
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .exceptions import MissingArtifactError
from .io import load_model, read_matrix_csv, read_table_csv, write_table_csv

KINDS = ("patterns", "loss", "cv")


def _figure(**kw):
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "spatmca"
    from matplotlib.figure import Figure

    return Figure(**kw)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    return Path(path)


def _require(path, command):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path.name} not found; run `spatmca {command}` first")
    return path


def plot_patterns(outdir):
    outdir = Path(outdir)
    model = load_model(_require(outdir / "model.json", "fit"))
    u = read_matrix_csv(_require(outdir / "patterns_u.csv", "fit"))
    v = read_matrix_csv(_require(outdir / "patterns_v.csv", "fit"))
    fields = (("u", model.locs1.sites, u), ("v", model.locs2.sites, v))
    d = model.locs1.dim

    tidy = []
    for name, sites, vals in fields:
        for k in range(vals.shape[1]):
            for i, s in enumerate(sites):
                row = {"field": name, "k": k + 1, "site": i + 1}
                row.update({f"x{j + 1}": float(c) for j, c in enumerate(s)})
                row["value"] = float(vals[i, k])
                tidy.append(row)
    write_table_csv(outdir / "patterns_tidy.csv", tidy)

    files = []
    for k in range(u.shape[1]):
        fig = _figure(figsize=(8, 3.2))
        axes = fig.subplots(1, 2)
        for ax, (name, sites, vals) in zip(axes, fields):
            if d == 1:
                order = np.argsort(sites[:, 0])
                ax.plot(sites[order, 0], vals[order, k], "-o", ms=3)
                ax.axhline(0.0, color="0.6", lw=0.6)
                ax.set_xlabel("location")
            else:
                lim = np.abs(vals[:, k]).max() or 1.0
                sc = ax.scatter(sites[:, 0], sites[:, 1], c=vals[:, k], cmap="RdBu_r",
                                vmin=-lim, vmax=lim, marker="s", s=25)
                fig.colorbar(sc, ax=ax)
                ax.set_xlabel("x1")
                ax.set_ylabel("x2")
                ax.set_aspect("equal")
            ax.set_title(f"{name}{k + 1}")
        fig.tight_layout()
        files.append(_save(fig, outdir / f"pattern_k{k + 1}.svg"))
    return files


def plot_loss(outdir):
    outdir = Path(outdir)
    rows = read_table_csv(_require(outdir / "loss_table.csv", "compare"))
    if not rows:
        raise ValueError("loss table is empty; nothing to plot")
    groups = defaultdict(list)
    for r in rows:
        groups[(r["k_policy"], r["method"])].append(float(r["loss"]))
    write_table_csv(outdir / "loss_boxplot_data.csv",
                    [{"k_policy": r["k_policy"], "method": r["method"],
                      "replicate": int(r["replicate"]), "loss": float(r["loss"])} for r in rows])
    policies = list(dict.fromkeys(k for k, _ in groups))
    fig = _figure(figsize=(4.5 * len(policies), 3.5))
    axes = np.atleast_1d(fig.subplots(1, len(policies)))
    for ax, pol in zip(axes, policies):
        methods = [m for (p, m) in groups if p == pol]
        ax.boxplot([groups[(pol, m)] for m in methods])
        ax.set_xticks(range(1, len(methods) + 1), methods, rotation=20)
        ax.set_title(f"K: {pol}")
        ax.set_ylabel("loss")
    fig.tight_layout()
    return [_save(fig, outdir / "loss_boxplot.svg")]


def plot_cv(outdir):
    outdir = Path(outdir)
    rows = read_table_csv(_require(outdir / "cv_trace.csv", "cv"))
    if not rows:
        raise ValueError("CV trace is empty; nothing to plot")
    best = {}
    for r in rows:
        k, sc = int(r["k"]), float(r["cv_score"])
        best[k] = min(best.get(k, np.inf), sc)
    ks = sorted(best)
    write_table_csv(outdir / "cv_curve.csv", [{"k": k, "cv_score": best[k]} for k in ks])
    fig = _figure(figsize=(4.5, 3.5))
    ax = fig.subplots()
    ax.plot(ks, [best[k] for k in ks], "-o")
    ax.set_xticks(ks)
    ax.set_xlabel("K")
    ax.set_ylabel("CV")
    fig.tight_layout()
    return [_save(fig, outdir / "cv_curve.svg")]


def emit_plots(outdir, kind):
    """Render ``kind`` (one of ``patterns``, ``loss``, ``cv``) from the CSVs in ``outdir``."""
    funcs = {"patterns": plot_patterns, "loss": plot_loss, "cv": plot_cv}
    if kind not in funcs:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    return funcs[kind](outdir)
