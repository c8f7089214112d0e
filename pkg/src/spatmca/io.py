"""CSV and model-file formats.

Matrices are plain comma-separated text with an optional single header
row, written at 17 significant digits so that a write/read round trip is
exact.  Fitted models are stored as one JSON document (layout documented
in :func:`save_model`); Python's float repr makes that round trip exact too.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .admm import CoupledPatterns, PenaltyConfig
from .exceptions import InvalidConfigError, ParseError
from .model import CoupledPatternModel
from .tps import LocationSet, SplineCoefficients

MODEL_FORMAT = "spatmca-model"
MODEL_FORMAT_VERSION = 1


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_matrix_csv(text, source="<string>"):
    """Parse CSV text into a 2-D float array.

    The first row is treated as a header iff any of its cells is non-numeric.
    """
    rows = [r for r in csv.reader(text.splitlines())]
    # tolerate a trailing blank line but not blank lines inside the body
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise ParseError(f"{source}: empty file")
    start = 0
    if not all(_is_number(c.strip()) for c in rows[0]):
        start = 1
    body = rows[start:]
    if not body:
        raise ParseError(f"{source}: no data rows")
    width = len(body[0])
    out = np.empty((len(body), width))
    for i, row in enumerate(body):
        line = i + start + 1
        if len(row) != width:
            raise ParseError(f"{source}: ragged row, expected {width} cells, got {len(row)}",
                             row=line)
        for j, cell in enumerate(row):
            try:
                val = float(cell.strip())
            except ValueError:
                raise ParseError(f"{source}: non-numeric cell {cell!r}", row=line,
                                 column=j + 1) from None
            if not math.isfinite(val):
                raise ParseError(f"{source}: non-finite value {cell!r}", row=line, column=j + 1)
            out[i, j] = val
    return out


def read_matrix_csv(path):
    path = Path(path)
    return parse_matrix_csv(path.read_text(encoding="utf-8"), source=str(path))


def write_matrix_csv(path, matrix, header=None):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def write_table_csv(path, rows, columns=None):
    """Write a list of dicts as CSV; floats at full precision."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format(r[c], ".17g") if isinstance(r[c], float) else r[c]
                        for c in columns])


def read_table_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def read_locations(path) -> LocationSet:
    """One row per site, one column per coordinate."""
    return LocationSet(read_matrix_csv(path))


def read_month_labels(path):
    labels = read_matrix_csv(path).ravel()
    if np.any(labels != np.round(labels)):
        raise ParseError(f"{path}: month labels must be integers")
    return labels.astype(int)


def detrend_monthly(y, month_labels):
    """Subtract, per column, the mean over rows that share a month label."""
    y = np.asarray(y, dtype=float)
    labels = np.asarray(month_labels).astype(int).ravel()
    if labels.shape[0] != y.shape[0]:
        raise InvalidConfigError(f"{labels.shape[0]} month labels for {y.shape[0]} rows")
    if np.any((labels < 1) | (labels > 12)):
        raise InvalidConfigError("month labels must lie in 1..12")
    out = y.copy()
    for m in range(1, 13):
        rows = labels == m
        if rows.any():
            out[rows] -= y[rows].mean(axis=0)
    return out


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _splines_to_json(splines):
    return {
        "kernel_weights": [c.kernel_weights.tolist() for c in splines],
        "affine_weights": [c.affine_weights.tolist() for c in splines],
    }


def _splines_from_json(obj):
    return [SplineCoefficients(np.array(a, dtype=float), np.array(b, dtype=float))
            for a, b in zip(obj["kernel_weights"], obj["affine_weights"])]


def model_to_dict(model: CoupledPatternModel, provenance=None):
    cfg = model.config
    pat = model.patterns
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "package_version": __version__,
        "dim": model.locs1.dim,
        "p1": model.locs1.size,
        "p2": model.locs2.size,
        "rank": model.rank,
        "locs1": model.locs1.sites.tolist(),
        "locs2": model.locs2.sites.tolist(),
        "u_hat": pat.u_hat.tolist(),
        "v_hat": pat.v_hat.tolist(),
        "d_hat": model.d_hat.tolist(),
        "u_splines": _splines_to_json(model.u_splines),
        "v_splines": _splines_to_json(model.v_splines),
        "config": {
            "tau1u": cfg.tau1u, "tau2u": cfg.tau2u, "tau1v": cfg.tau1v, "tau2v": cfg.tau2v,
            "rank_k": cfg.rank_k, "zeta": cfg.zeta, "tol": cfg.tol, "max_iter": cfg.max_iter,
        },
        "solver": {
            "converged": bool(pat.converged),
            "iterations": int(pat.iterations),
            "zeta_used": float(pat.zeta),
            "residuals": [float(x) for x in pat.residuals],
        },
        "provenance": provenance or {},
    }


def model_from_dict(obj) -> CoupledPatternModel:
    if obj.get("format") != MODEL_FORMAT:
        raise ParseError("not a spatmca model file")
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format version {obj.get('format_version')}")
    rank = obj["rank"]
    u = np.array(obj["u_hat"], dtype=float).reshape(obj["p1"], rank)
    v = np.array(obj["v_hat"], dtype=float).reshape(obj["p2"], rank)
    sol = obj["solver"]
    pat = CoupledPatterns(u, v, sol["converged"], sol["iterations"], sol["zeta_used"],
                          tuple(sol["residuals"]))
    c = obj["config"]
    cfg = PenaltyConfig(tau1u=c["tau1u"], tau2u=c["tau2u"], tau1v=c["tau1v"], tau2v=c["tau2v"],
                        rank_k=c["rank_k"], zeta=c["zeta"], tol=c["tol"], max_iter=c["max_iter"])
    return CoupledPatternModel(
        pat,
        np.array(obj["d_hat"], dtype=float),
        _splines_from_json(obj["u_splines"]),
        _splines_from_json(obj["v_splines"]),
        LocationSet(np.array(obj["locs1"], dtype=float)),
        LocationSet(np.array(obj["locs2"], dtype=float)),
        cfg,
    )


def save_model(path, model: CoupledPatternModel, provenance=None):
    """Write ``model`` as JSON.

    Top-level keys: ``format``, ``format_version``, ``dim``, ``p1``, ``p2``,
    ``rank``, ``locs1``/``locs2`` (site coordinates), ``u_hat`` (p1 x K),
    ``v_hat`` (p2 x K), ``d_hat`` (K), ``u_splines``/``v_splines`` (per
    pattern kernel and affine weights), ``config`` (tuning values),
    ``solver`` (convergence diagnostics) and ``provenance`` (input digests,
    seed).
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, provenance), fh, indent=1)
        fh.write("\n")


def load_model(path) -> CoupledPatternModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", row=exc.lineno) from None
    return model_from_dict(obj)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment. Keys use flag names
    with or without leading dashes (``tau1u``, ``--max-iter``, ``max_iter``)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key=value", row=lineno)
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = val
    return out
