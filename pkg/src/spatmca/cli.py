"""Command-line interface: ``spatmca fit|cv|predict|simulate|compare``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .admm import PenaltyConfig
from .crosscov import PairedSample, center_columns, sample_cross_cov
from .exceptions import InvalidConfigError, SpatMCAError
from .io import (
    detrend_monthly,
    file_digest,
    load_model,
    read_config_file,
    read_locations,
    read_matrix_csv,
    read_month_labels,
    save_model,
    write_json,
    write_matrix_csv,
    write_table_csv,
)
from .model import fit as fit_model
from .model import predict_cross_cov, predict_patterns
from .simulate import (
    METHODS,
    SimConfig,
    generate_sample,
    run_comparison,
    true_cross_cov,
    true_patterns,
)
from .tuning import CVConfig, select_rank, tune_fixed_rank

log = logging.getLogger("spatmca")

COMMANDS = ("fit", "cv", "predict", "simulate", "compare")


@dataclass
class RunConfig:
    command: str
    out: Path
    options: dict = field(default_factory=dict)
    verbosity: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidConfigError(f"unknown command {self.command!r}")
        self.out = Path(self.out)


# ---------------------------------------------------------------- parsing


def _float_list(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _zeta(text):
    return "auto" if str(text) == "auto" else float(text)


def _add_common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_data(p):
    p.add_argument("--y1", required=True, help="field 1 data CSV (rows = time, columns = sites)")
    p.add_argument("--y2", required=True, help="field 2 data CSV")
    p.add_argument("--locs1", required=True, help="field 1 locations CSV (one row per site)")
    p.add_argument("--locs2", required=True, help="field 2 locations CSV")
    p.add_argument("--months", help="month labels (1..12) per row, for monthly detrending")
    p.add_argument("--center", type=_bool, default=True, help="centre columns (default true)")


def _add_solver(p, with_taus=True):
    if with_taus:
        for name in ("tau1u", "tau1v", "tau2u", "tau2v"):
            p.add_argument(f"--{name}", type=float, default=0.0)
    p.add_argument("--zeta", type=_zeta, default="auto")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=10000)


def _add_grids(p):
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n-tau1", type=int, default=21, help="smoothness grid size incl. 0")
    p.add_argument("--n-tau2", type=int, default=11, help="sparseness grid size incl. 0")
    for name in ("tau1u", "tau1v", "tau2u", "tau2v"):
        p.add_argument(f"--grid-{name}", type=_float_list,
                       help=f"explicit comma-separated {name} grid (must contain 0)")
    p.add_argument("--warm-start", type=_bool, default=True)


def _add_sim(p):
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p1", type=int, default=20)
    p.add_argument("--p2", type=int, default=20)
    p.add_argument("--d1", type=float, default=1.0)
    p.add_argument("--d2", type=float, default=0.0)
    p.add_argument("--noise-sd1", type=float, default=1.0)
    p.add_argument("--noise-sd2", type=float, default=1.0)
    p.add_argument("--bounds1", type=_float_list, default=(-7.0, 7.0))
    p.add_argument("--bounds2", type=_float_list, default=(-7.0, 7.0))
    p.add_argument("--full-scale", action="store_true",
                   help="use the full-size designs (n=1000 for d=1, n=5000 for d=2)")


def build_parser():
    parser = argparse.ArgumentParser(prog="spatmca", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit coupled patterns at given tuning values")
    _add_common(p)
    _add_data(p)
    p.add_argument("--k", type=int, default=1)
    _add_solver(p)
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("cv", help="cross-validated tuning and rank selection, then fit")
    _add_common(p)
    _add_data(p)
    p.add_argument("--k", type=int, help="fixed rank (default: select by CV)")
    p.add_argument("--k-max", type=int, default=5)
    _add_solver(p, with_taus=False)
    _add_grids(p)
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("predict", help="evaluate a fitted model at new locations")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--query1", required=True)
    p.add_argument("--query2", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic paired sample")
    _add_common(p)
    _add_sim(p)

    p = sub.add_parser("compare", help="loss comparison of mca/smooth_only/sparse_only/spatmca")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--k-policy", action="append",
                   help="'fixed:K' or 'cv'; repeatable (default fixed:1)")
    p.add_argument("--k-max", type=int, default=5)
    _add_solver(p, with_taus=False)
    _add_grids(p)
    p.add_argument("--plots", action="store_true")
    return parser


def _prescan(argv):
    """Locate the sub-command and any ``--config`` path before full parsing."""
    command = next((a for a in argv if a in COMMANDS), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def parse_args(argv=None) -> RunConfig:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command, config = _prescan(argv)
    if command and config:
        sub = parser._subparsers._group_actions[0].choices[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, val in read_config_file(config).items():
            action = actions.get(key)
            if action is None or key in ("config", "help"):
                parser.error(f"unknown key {key!r} in {config}")
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    defaults[key] = _bool(val)
                elif action.type is not None:
                    defaults[key] = action.type(val)
                else:
                    defaults[key] = val
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"bad value for {key!r} in {config}: {exc}")
            # a config file may satisfy otherwise-required flags
            action.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    opts = vars(args).copy()
    command = opts.pop("command")
    out = opts.pop("out")
    verbosity = opts.pop("verbose")
    return RunConfig(command, out, opts, verbosity)


# ---------------------------------------------------------------- commands


def _read_sample(o):
    y1 = read_matrix_csv(o["y1"])
    y2 = read_matrix_csv(o["y2"])
    locs1 = read_locations(o["locs1"])
    locs2 = read_locations(o["locs2"])
    if o.get("months"):
        labels = read_month_labels(o["months"])
        y1 = detrend_monthly(y1, labels)
        y2 = detrend_monthly(y2, labels)
    if o.get("center", True):
        y1, y2 = center_columns(y1), center_columns(y2)
    inputs = {k: o[k] for k in ("y1", "y2", "locs1", "locs2", "months") if o.get(k)}
    digests = {k: file_digest(v) for k, v in inputs.items()}
    return PairedSample(y1, y2, locs1, locs2), digests


def _write_fit_outputs(out, model, provenance):
    save_model(out / "model.json", model, provenance)
    k = model.rank
    write_matrix_csv(out / "patterns_u.csv", model.u_hat, [f"u{i + 1}" for i in range(k)])
    write_matrix_csv(out / "patterns_v.csv", model.v_hat, [f"v{i + 1}" for i in range(k)])
    write_matrix_csv(out / "d_hat.csv", model.d_hat[None, :], [f"d{i + 1}" for i in range(k)])
    return ["model.json", "patterns_u.csv", "patterns_v.csv", "d_hat.csv"]


def _solver_summary(model):
    pat = model.patterns
    return {"zeta": pat.zeta, "iterations": pat.iterations, "converged": pat.converged,
            "residuals": {"primal_r": pat.residuals[0], "primal_q": pat.residuals[1],
                          "delta_g": pat.residuals[2]}}


def cmd_fit(cfg: RunConfig):
    o = cfg.options
    sample, digests = _read_sample(o)
    s12 = sample_cross_cov(sample)
    pcfg = PenaltyConfig(tau1u=o["tau1u"], tau2u=o["tau2u"], tau1v=o["tau1v"], tau2v=o["tau2v"],
                         rank_k=o["k"], zeta=o["zeta"], tol=o["tol"], max_iter=o["max_iter"])
    trace = []
    callback = None
    if cfg.verbosity:
        def callback(state):
            trace.append([state.iter, *state.residuals])
            log.debug("iter %d residuals %s", state.iter, state.residuals)
    model = fit_model(s12, sample.locs1, sample.locs2, pcfg, callback=callback)
    files = _write_fit_outputs(cfg.out, model, {"inputs": digests, "seed": o["seed"]})
    if trace:
        write_matrix_csv(cfg.out / "residual_trace.csv", np.array(trace),
                         ["iter", "primal_r", "primal_q", "delta_g"])
        files.append("residual_trace.csv")
    if o.get("plots"):
        from .plots import emit_plots

        files += [p.name for p in emit_plots(cfg.out, "patterns")]
    return {"solver": _solver_summary(model), "outputs": files, "n": sample.n}


def _cv_config(o):
    kw = dict(m_folds=o["folds"], seed=o["seed"], tol=o["tol"], max_iter=o["max_iter"],
              zeta=o["zeta"], warm_start=o["warm_start"], k_max=o["k_max"])
    base = CVConfig.with_grid_sizes(o["n_tau1"], o["n_tau2"], **kw)
    grids = {f"{kind}_grid_{f}": o[f"grid_{kind}{f}"] for kind in ("tau1", "tau2")
             for f in ("u", "v") if o.get(f"grid_{kind}{f}")}
    if grids:
        base = replace(base, **grids)
    return base


def cmd_cv(cfg: RunConfig):
    o = cfg.options
    sample, digests = _read_sample(o)
    cvcfg = _cv_config(o)
    if o.get("k"):
        res = tune_fixed_rank(sample, cvcfg, o["k"])
    else:
        res = select_rank(sample, cvcfg)
    trace = [dict(k=k, tau1u=t1u, tau2u=t2u, tau1v=t1v, tau2v=t2v, cv_score=float(sc),
                  selected=int((k, t1u, t2u, t1v, t2v) == res.selected))
             for (k, t1u, t2u, t1v, t2v), sc in res.scores.items()]
    write_table_csv(cfg.out / "cv_trace.csv", trace)
    k, t1u, t2u, t1v, t2v = res.selected
    selected = {"k": k, "tau1u": t1u, "tau2u": t2u, "tau1v": t1v, "tau2v": t2v,
                "cv_score": res.per_rank[k][1], "k_converged": res.k_converged,
                "per_rank": {str(kk): {"selected": list(sel), "cv_score": sc}
                             for kk, (sel, sc) in res.per_rank.items()}}
    write_json(cfg.out / "selected.json", selected)
    pcfg = res.penalty_config(zeta=o["zeta"], tol=o["tol"], max_iter=o["max_iter"])
    model = fit_model(sample_cross_cov(sample), sample.locs1, sample.locs2, pcfg)
    files = ["cv_trace.csv", "selected.json"]
    files += _write_fit_outputs(cfg.out, model, {"inputs": digests, "seed": o["seed"]})
    if o.get("plots"):
        from .plots import emit_plots

        files += [p.name for p in emit_plots(cfg.out, "cv")]
        files += [p.name for p in emit_plots(cfg.out, "patterns")]
    return {"solver": _solver_summary(model), "selected": selected, "outputs": files}


def cmd_predict(cfg: RunConfig):
    o = cfg.options
    model = load_model(o["model"])
    q1 = read_matrix_csv(o["query1"])
    q2 = read_matrix_csv(o["query2"])
    u, v = predict_patterns(model, q1, q2)
    c = predict_cross_cov(model, q1, q2)
    k = model.rank
    write_matrix_csv(cfg.out / "patterns_u_pred.csv", u, [f"u{i + 1}" for i in range(k)])
    write_matrix_csv(cfg.out / "patterns_v_pred.csv", v, [f"v{i + 1}" for i in range(k)])
    write_matrix_csv(cfg.out / "cross_cov_pred.csv", c)
    return {"outputs": ["patterns_u_pred.csv", "patterns_v_pred.csv", "cross_cov_pred.csv"],
            "model_digest": file_digest(o["model"])}


def _sim_config(o):
    kw = dict(d=o["dim"], n=o["n"], p1=o["p1"], p2=o["p2"], d1=o["d1"], d2=o["d2"],
              noise_sd1=o["noise_sd1"], noise_sd2=o["noise_sd2"], bounds1=tuple(o["bounds1"]),
              bounds2=tuple(o["bounds2"]), seed=o["seed"])
    if o.get("full_scale"):
        return (SimConfig.full_1d if o["dim"] == 1 else SimConfig.full_2d)(
            d1=o["d1"], d2=o["d2"], noise_sd1=o["noise_sd1"], noise_sd2=o["noise_sd2"],
            seed=o["seed"])
    return SimConfig(**kw)


def cmd_simulate(cfg: RunConfig):
    sim = _sim_config(cfg.options)
    sample = generate_sample(sim)
    tp = true_patterns(sim)
    out = cfg.out
    write_matrix_csv(out / "y1.csv", sample.y1)
    write_matrix_csv(out / "y2.csv", sample.y2)
    write_matrix_csv(out / "locs1.csv", sample.locs1.sites)
    write_matrix_csv(out / "locs2.csv", sample.locs2.sites)
    write_matrix_csv(out / "true_u.csv", tp.u, ["u1", "u2"])
    write_matrix_csv(out / "true_v.csv", tp.v, ["v1", "v2"])
    write_matrix_csv(out / "true_cross_cov.csv", true_cross_cov(sim, tp))
    return {"sim": asdict(sim), "outputs": ["y1.csv", "y2.csv", "locs1.csv", "locs2.csv",
                                           "true_u.csv", "true_v.csv", "true_cross_cov.csv"]}


def cmd_compare(cfg: RunConfig):
    o = cfg.options
    sim = _sim_config(o)
    cvcfg = _cv_config(o)
    methods = tuple(m.strip() for m in o["methods"].split(",") if m.strip())
    policies = tuple(o.get("k_policy") or ["fixed:1"])
    rows = run_comparison(sim, methods, o["replicates"], cvcfg, policies,
                          progress=lambda r: log.info("replicate %d finished", r))
    write_table_csv(cfg.out / "loss_table.csv", rows)
    files = ["loss_table.csv"]
    if o.get("plots"):
        from .plots import emit_plots

        files += [p.name for p in emit_plots(cfg.out, "loss")]
    medians = {}
    for r in rows:
        medians.setdefault(f"{r['method']}@{r['k_policy']}", []).append(r["loss"])
    medians = {k: float(np.median(v)) for k, v in medians.items()}
    return {"sim": asdict(sim), "median_loss": medians, "outputs": files}


HANDLERS = {"fit": cmd_fit, "cv": cmd_cv, "predict": cmd_predict, "simulate": cmd_simulate,
            "compare": cmd_compare}


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit status.

    Every run writes ``summary.json``; failures additionally write
    ``error.json`` and return a nonzero status.
    """
    start = time.time()
    out = config.out
    summary = {"command": config.command, "version": __version__,
               "seed": config.options.get("seed"),
               "settings": {k: v for k, v in config.options.items()}}
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary.update(HANDLERS[config.command](config))
        summary["status"] = "ok"
        status = 0
    except (SpatMCAError, OSError, ValueError) as exc:
        kind = type(exc).__name__
        print(f"spatmca {config.command}: {kind}: {exc}", file=sys.stderr)
        summary.update(status="error", error={"type": kind, "message": str(exc)})
        status = 1
    summary["elapsed_seconds"] = round(time.time() - start, 3)
    try:
        if status:
            write_json(out / "error.json", summary["error"])
        write_json(out / "summary.json", summary)
    except OSError as exc:
        print(f"spatmca {config.command}: cannot write summary: {exc}", file=sys.stderr)
        status = status or 1
    return status


def main(argv=None):
    config = parse_args(argv)
    level = logging.WARNING - 10 * min(config.verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
