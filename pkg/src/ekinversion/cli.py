"""Command-line harness: run an experiment, write CSV tables and SVG charts.

Exit codes: 0 success, 2 invalid configuration, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import svg
from .config import ConfigError, ExperimentConfig, InflationConfig, load_config
from .diagnostics import admissible_p, bound_thm2, bound_thm3, c_constant, rate_slope
from .montecarlo import NumericalAbort, run_arms, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4

MOMENT_COLUMNS = (
    "t",
    "mean_V_obs",
    "se_V_obs",
    "bound_thm2",
    "mean_V_obs_p",
    "se_V_obs_p",
    "bound_thm3",
    "mean_V_param",
    "se_V_param",
)


def fmt(v) -> str:
    """17 significant digits; integers stay integers, non-finite values become ``nan``/``inf``."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _write_svg(path: Path, text: str) -> Path:
    path.write_text(text, newline="\n")
    return path


def _resolve(config, seed: Optional[int]) -> ExperimentConfig:
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if seed is not None:
        cfg = cfg.with_updates(base_seed=seed)
    return cfg


def _out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def moment_table(result) -> np.ndarray:
    """Rows of :data:`MOMENT_COLUMNS` for one experiment."""
    cfg, s = result.config, result.summary
    t = s.times
    b2 = bound_thm2(t, cfg.J, s.mean["V_obs"][0])
    p = cfg.moment_order
    V0 = s.mean["V_obs_p"][0]
    if admissible_p(p, cfg.J) and V0 > 0:
        b3 = bound_thm3(t, p, cfg.J, result.problem.model.K, V0)
    else:
        b3 = np.full_like(t, np.nan)
    cols = [t, s.mean["V_obs"], s.se["V_obs"], b2, s.mean["V_obs_p"], s.se["V_obs_p"], b3]
    cols += [s.mean["V_param"], s.se["V_param"]]
    return np.column_stack(cols)


def cmd_collapse(config, out_dir, seed=None, workers=None, svg_out=True) -> Dict[str, Path]:
    cfg = _resolve(config, seed)
    result = run_experiment(cfg, workers)
    table = moment_table(result)
    out = _out(out_dir)
    files = {"moments": write_csv(out / "moments.csv", MOMENT_COLUMNS, table)}
    if svg_out:
        t = table[:, 0]
        p = cfg.moment_order
        chart = svg.line_chart(
            [
                svg.Series("E V_obs", t, table[:, 1]),
                svg.Series("bound (2nd moment)", t, table[:, 3], dashed=True),
                svg.Series(f"E V_obs^(p={p:g})", t, table[:, 4]),
                svg.Series(f"bound (p={p:g})", t, table[:, 6], dashed=True),
                svg.Series("E V_param", t, table[:, 7]),
            ],
            title=f"Ensemble collapse, J={cfg.J}, Q={cfg.Q}",
            ylabel="moment",
            log_y=True,
        )
        files["svg"] = _write_svg(out / "collapse.svg", chart)
    return files


def path_slopes(times, per_path: np.ndarray, window) -> np.ndarray:
    """Late-window log-log slope per row; NaN when a row is not strictly positive there."""
    slopes = np.full(per_path.shape[0], np.nan)
    for i, row in enumerate(per_path):
        try:
            slopes[i] = rate_slope(times, row, window)
        except ValueError:
            pass
    return slopes


def cmd_paths(config, out_dir, seed=None, workers=None, svg_out=True) -> Dict[str, Path]:
    cfg = _resolve(config, seed)
    result = run_experiment(cfg, workers)
    t = result.times
    V = result.per_path["V_obs"]
    out = _out(out_dir)
    rows = ((i, t[k], V[i, k], math.sqrt(V[i, k])) for i in range(V.shape[0]) for k in range(t.size))
    files = {"paths": write_csv(out / "paths.csv", ("path", "t", "V_obs", "norm_e"), rows)}
    window = cfg.window()
    slopes = path_slopes(t, V, window)
    rows = ((i, window[0], window[1], s) for i, s in enumerate(slopes))
    files["slopes"] = write_csv(out / "slopes.csv", ("path", "t_start", "t_end", "slope_V_obs"), rows)
    if svg_out:
        mask = t > 0
        series = [svg.Series(f"path {i}", t[mask], V[i, mask]) for i in range(min(V.shape[0], 20))]
        chart = svg.line_chart(series, title=f"V_obs per path, J={cfg.J}", ylabel="V_obs", log_y=True)
        files["svg"] = _write_svg(out / "paths.svg", chart)
    return files


def _arm_column(arm: str) -> str:
    return arm.replace("=", "")


def arm_alphas(cfg: ExperimentConfig) -> List[float]:
    base = (cfg.inflation or InflationConfig()).alpha
    alphas = [base]
    for a in cfg.extra_alphas:
        if a not in alphas:
            alphas.append(a)
    return alphas


def cmd_inflation(config, out_dir, seed=None, workers=None, svg_out=True) -> Dict[str, Path]:
    """Matched arms without and with inflation; writes residual, spread and estimate tables."""
    cfg = _resolve(config, seed)
    arms = run_arms(cfg, arm_alphas(cfg), workers)
    names = list(arms)
    first = arms[names[0]]
    t = first.times
    out = _out(out_dir)
    files = {}

    def comparison(fields):
        header, cols = ["t"], [t]
        for name in names:
            s = arms[name].summary
            for f in fields:
                header += [f"mean_{f}_{_arm_column(name)}", f"se_{f}_{_arm_column(name)}"]
                cols += [s.mean[f], s.se[f]]
        return header, np.column_stack(cols)

    h, res = comparison(("R_obs", "R_param"))
    files["residuals"] = write_csv(out / "residuals.csv", h, res)
    h, spr = comparison(("V_obs", "V_param"))
    files["spread"] = write_csv(out / "spread.csv", h, spr)

    problem = first.problem
    model, setup = problem.model, problem.setup
    x = problem.fem.interior_nodes
    truth = setup.u_truth if setup.u_truth is not None else np.full(x.size, np.nan)
    est = {name: arms[name].final_means.mean(axis=0) for name in names}
    header = ["x", "truth"] + [f"mean_{_arm_column(n)}" for n in names]
    files["estimates"] = write_csv(out / "estimates.csv", header, np.column_stack([x, truth] + [est[n] for n in names]))
    xo = problem.fem.obs_points
    Atruth = model.apply(truth) if setup.u_truth is not None else np.full(xo.size, np.nan)
    header = ["x_obs", "y", "A_truth"] + [f"A_mean_{_arm_column(n)}" for n in names]
    obs_cols = [xo, setup.y, Atruth] + [model.apply(est[n]) for n in names]
    files["obs_estimates"] = write_csv(out / "obs_estimates.csv", header, np.column_stack(obs_cols))

    window = cfg.window()
    rows = []
    for name in names:
        s = arms[name].summary
        slope = path_slopes(t, s.mean["R_obs"][None, :], window)[0]
        rows.append((name, s.mean["R_obs"][-1], s.se["R_obs"][-1], slope, s.mean["V_obs"][-1], s.se["V_obs"][-1]))
    header = ("arm", "final_mean_R_obs", "final_se_R_obs", "slope_R_obs", "final_mean_V_obs", "final_se_V_obs")
    files["summary"] = write_csv(out / "summary.csv", header, rows)

    if svg_out:
        mask = t > 0
        series = []
        for k, name in enumerate(names):
            color = svg.PALETTE[k % len(svg.PALETTE)]
            s = arms[name].summary
            series.append(svg.Series(f"R_obs {name}", t[mask], s.mean["R_obs"][mask], color=color))
            series.append(svg.Series(f"V_obs {name}", t[mask], s.mean["V_obs"][mask], dashed=True, color=color))
        chart = svg.line_chart(series, title=f"Residuals and spread, J={cfg.J}", ylabel="mean", log_y=True)
        files["svg"] = _write_svg(out / "inflation.svg", chart)
        series = [svg.Series("truth", x, truth, color="black")]
        series += [svg.Series(f"mean {n}", x, est[n]) for n in names]
        files["estimates_svg"] = _write_svg(
            out / "estimates.svg", svg.line_chart(series, title="Final ensemble mean", xlabel="x", ylabel="u")
        )
    return files


def cmd_lowdim(config, out_dir, seed=None, workers=None, svg_out=True) -> Dict[str, Path]:
    """The reduced setup; same outputs as :func:`cmd_inflation`."""
    return cmd_inflation(config, out_dir, seed, workers, svg_out)


def bounds_table(Js: Sequence[int], times: Sequence[float], C0: float = 1.0, K: int = 15, V0: float = 1.0):
    """Rows ``(quantity, J, p, t, value)`` for the bound and constant grids."""
    rows = []
    for J in Js:
        for p in [2] + [q for q in range(3, J + 3) if admissible_p(q, J)]:
            rows.append(("c_constant", J, p, float("nan"), c_constant(p, J)))
        for t in times:
            rows.append(("bound_thm2", J, 2, t, float(bound_thm2(t, J, C0))))
            for p in (q for q in range(3, J + 3) if admissible_p(q, J)):
                rows.append(("bound_thm3", J, p, t, float(bound_thm3(t, p, J, K, V0))))
    return rows


def cmd_bounds_table(out_dir=None, Js=(2, 3, 5, 10, 15), times=(0.0, 1.0, 10.0, 100.0), C0=1.0, K=15, V0=1.0):
    rows = bounds_table(Js, times, C0, K, V0)
    header = ("quantity", "J", "p", "t", "value")
    if out_dir is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
        return {}
    return {"bounds": write_csv(_out(out_dir) / "bounds.csv", header, rows)}


COMMANDS = {
    "collapse": cmd_collapse,
    "paths": cmd_paths,
    "inflation": cmd_inflation,
    "lowdim": cmd_lowdim,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ekinversion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override base_seed")
        sp.add_argument("--threads", type=int, help="worker cap (default: all cores)")
        sp.add_argument("--no-svg", action="store_true")
    bp = sub.add_parser("bounds-table")
    bp.add_argument("--out", help="write bounds.csv here instead of stdout")
    bp.add_argument("--J", type=int, nargs="+", default=[2, 3, 5, 10, 15])
    bp.add_argument("--t", type=float, nargs="+", default=[0.0, 1.0, 10.0, 100.0])
    bp.add_argument("--C0", type=float, default=1.0)
    bp.add_argument("--K", type=int, default=15)
    bp.add_argument("--V0", type=float, default=1.0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bounds-table":
            cmd_bounds_table(args.out, args.J, args.t, args.C0, args.K, args.V0)
        else:
            if args.seed is not None and args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            if args.threads is not None and args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            files = COMMANDS[args.command](args.config, args.out, args.seed, args.threads, not args.no_svg)
            for path in files.values():
                print(path)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
