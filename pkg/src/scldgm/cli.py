"""Batch command-line front-end: experiment configs in, CSV/JSON out.

Subcommands: dde, threshold, bounds, simulate, optimize, convergence.
Exit codes: 0 success, 2 bad config, 3 computation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, codec, dde, optimizer
from .degree import DegreeDistribution, node_dist
from .errors import InvalidInputError
from .grid import LlrGrid, gaussian_llr_pmf

CONFIG_VERSION = 1


class ConfigError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _reject_unknown(obj: dict, allowed, context: str) -> None:
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"{context}: unknown keys {sorted(extra)}")


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise ConfigError(f"{context}: missing required key '{key}'")
    return obj[key]


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = _require(config, "version", path)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version}")
    return config


_KINDS = {kind.value: kind for kind in dde.CodeKind}


def _parse_ensemble(obj, context: str) -> dde.CodeEnsemble:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: ensemble must be an object")
    _reject_unknown(obj, {"kind", "dv", "dc", "vn_terms", "cn_terms", "rate"}, context)
    kind_name = _require(obj, "kind", context)
    if kind_name not in _KINDS:
        raise ConfigError(f"{context}: kind must be one of {sorted(_KINDS)}")
    kind = _KINDS[kind_name]
    try:
        if "dv" in obj or "dc" in obj:
            if "vn_terms" in obj or "cn_terms" in obj or "rate" in obj:
                raise ConfigError(f"{context}: give either dv/dc or vn_terms/rate")
            return dde.regular_ensemble(
                int(_require(obj, "dv", context)), int(_require(obj, "dc", context)), kind
            )
        vn = node_dist(
            {int(d): float(c) for d, c in _require(obj, "vn_terms", context).items()}
        )
        rate = float(_require(obj, "rate", context))
        if "cn_terms" in obj:
            cn = node_dist({int(d): float(c) for d, c in obj["cn_terms"].items()})
            return dde.CodeEnsemble(vn, cn, kind, rate)
        return dde.ldgm_ensemble_from_vn(vn, rate, kind)
    except (InvalidInputError, ValueError, TypeError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _parse_sweep(obj, context: str) -> list[float]:
    if isinstance(obj, list):
        if not obj:
            raise ConfigError(f"{context}: sweep list is empty")
        return [float(x) for x in obj]
    if isinstance(obj, dict):
        _reject_unknown(obj, {"start", "stop", "step"}, context)
        start = float(_require(obj, "start", context))
        stop = float(_require(obj, "stop", context))
        step = float(_require(obj, "step", context))
        if step <= 0 or stop < start:
            raise ConfigError(f"{context}: need step > 0 and stop >= start")
        count = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(count)]
    raise ConfigError(f"{context}: sweep must be a list or start/stop/step object")


def _parse_grid(config: dict) -> LlrGrid:
    try:
        return LlrGrid(
            l_max=float(config.get("l_max", 50.0)),
            n_bits=int(config.get("n_bits", 10)),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _print_table(header, rows) -> None:
    cells = [header] + [[_short(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# --- dde -------------------------------------------------------------------


class _DdePoint:
    def __init__(self, inner, outer, grid, max_iters):
        self.inner, self.outer, self.grid, self.max_iters = inner, outer, grid, max_iters

    def __call__(self, db: float):
        rate = self.inner.rate * self.outer.rate
        sigma = analysis.sigma_from_eb_no(db, rate)
        trace = dde.two_step_dde(self.inner, self.outer, sigma, self.max_iters, self.grid)
        return db, trace


def _cmd_dde(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "inner", "outer", "sweep_db", "n_bits", "l_max", "max_iters",
         "write_traces", "write_pmfs"},
        "dde",
    )
    inner = _parse_ensemble(_require(config, "inner", "dde"), "dde.inner")
    outer = _parse_ensemble(_require(config, "outer", "dde"), "dde.outer")
    sweep = _parse_sweep(_require(config, "sweep_db", "dde"), "dde.sweep_db")
    grid = _parse_grid(config)
    max_iters = int(config.get("max_iters", dde.DEFAULT_MAX_ITERS))
    point = _DdePoint(inner, outer, grid, max_iters)
    results = _pmap(point, sweep, jobs)
    rows = [
        (db, trace.final_inner_error, trace.final_error) for db, trace in results
    ]
    _write_csv(out_dir / "dde_points.csv", ["eb_no_db", "inner_error", "overall_error"], rows)
    if config.get("write_traces", False):
        for db, trace in results:
            with open(out_dir / f"dde_trace_{db:g}dB.csv", "w", newline="") as fh:
                trace.write_csv(fh)
    if config.get("write_pmfs", False):
        rate = inner.rate * outer.rate
        for db in sweep:
            pmf = gaussian_llr_pmf(grid, analysis.sigma_from_eb_no(db, rate))
            with open(out_dir / f"dde_channel_pmf_{db:g}dB.csv", "w", newline="") as fh:
                pmf.write_csv(fh)
    _print_table(["eb_no_db", "inner_error", "overall_error"], rows)
    return 0


# --- threshold -------------------------------------------------------------


def _single_degree(dist: DegreeDistribution) -> int:
    degrees = dist.degrees
    return degrees[0] if len(degrees) == 1 else 0


def _cmd_threshold(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "rows", "precision_db", "n_bits", "l_max", "max_iters"},
        "threshold",
    )
    rows_cfg = _require(config, "rows", "threshold")
    if not isinstance(rows_cfg, list) or not rows_cfg:
        raise ConfigError("threshold.rows: must be a non-empty list")
    grid = _parse_grid(config)
    precision = float(config.get("precision_db", analysis.DEFAULT_PRECISION_DB))
    max_iters = int(config.get("max_iters", dde.DEFAULT_MAX_ITERS))
    out_rows = []
    outer_cache: dict = {}
    for index, row in enumerate(rows_cfg):
        context = f"threshold.rows[{index}]"
        if not isinstance(row, dict):
            raise ConfigError(f"{context}: must be an object")
        _reject_unknown(row, {"label", "inner", "outer"}, context)
        outer = _parse_ensemble(_require(row, "outer", context), f"{context}.outer")
        label = str(row.get("label", index))
        cache_key = (
            tuple(outer.vn_dist.terms.items()),
            tuple(outer.cn_dist.terms.items()),
            outer.kind,
            outer.rate,
        )
        if cache_key not in outer_cache:
            outer_cache[cache_key] = analysis.outer_threshold(
                outer, precision, grid, max_iters
            )
        outer_res = outer_cache[cache_key]
        if "inner" in row:
            inner = _parse_ensemble(row["inner"], f"{context}.inner")
            res = analysis.concatenated_threshold(
                inner, outer, precision, grid, max_iters, outer_result=outer_res
            )
            reported = inner
        else:
            res = outer_res
            reported = outer
        out_rows.append(
            (
                label,
                _single_degree(reported.vn_dist),
                _single_degree(reported.cn_dist),
                res.threshold_eb_no_db,
                res.threshold_sigma,
                res.critical_ber,
                res.gap_to_shannon_db,
            )
        )
    header = ["label", "dv", "dc", "threshold_db", "sigma_th", "critical_ber", "gap_db"]
    _write_csv(out_dir / "thresholds.csv", header, out_rows)
    _print_table(header, out_rows)
    return 0


# --- bounds ----------------------------------------------------------------


class _BoundsPoint:
    def __init__(self, grid, max_iters):
        self.grid, self.max_iters = grid, max_iters

    def __call__(self, task):
        label, inner, outer, db = task
        d_v = inner.vn_dist.max_degree
        if outer is None:
            sigma = analysis.sigma_from_eb_no(db, inner.rate)
            trace, _ = dde.evolve_inner(inner, sigma, self.max_iters, self.grid)
            error = trace.final_inner_error
            bound = analysis.ldgm_lower_bound(d_v, sigma)
        else:
            sigma = analysis.sigma_from_eb_no(db, inner.rate * outer.rate)
            trace = dde.two_step_dde(inner, outer, sigma, self.max_iters, self.grid)
            error = trace.final_error
            bound = analysis.scldgm_lower_bound(d_v, outer.vn_dist.max_degree, sigma)
        return label, db, sigma, error, bound


def _cmd_bounds(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "codes", "sweep_db", "n_bits", "l_max", "max_iters"},
        "bounds",
    )
    codes_cfg = _require(config, "codes", "bounds")
    if not isinstance(codes_cfg, list) or not codes_cfg:
        raise ConfigError("bounds.codes: must be a non-empty list")
    sweep = _parse_sweep(_require(config, "sweep_db", "bounds"), "bounds.sweep_db")
    grid = _parse_grid(config)
    max_iters = int(config.get("max_iters", dde.DEFAULT_MAX_ITERS))
    tasks = []
    for index, entry in enumerate(codes_cfg):
        context = f"bounds.codes[{index}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{context}: must be an object")
        _reject_unknown(entry, {"label", "inner", "outer"}, context)
        inner = _parse_ensemble(_require(entry, "inner", context), f"{context}.inner")
        outer = (
            _parse_ensemble(entry["outer"], f"{context}.outer") if "outer" in entry else None
        )
        label = str(entry.get("label", index))
        tasks += [(label, inner, outer, db) for db in sweep]
    rows = _pmap(_BoundsPoint(grid, max_iters), tasks, jobs)
    _write_csv(
        out_dir / "bounds.csv",
        ["label", "eb_no_db", "sigma", "dde_ber", "bound_ber"],
        rows,
    )
    _print_table(["label", "eb_no_db", "sigma", "dde_ber", "bound_ber"], rows)
    return 0


# --- simulate --------------------------------------------------------------


def _cmd_simulate(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "k", "inner", "outer", "sweep_db", "max_blocks", "min_errors",
         "decoder", "inner_iters", "outer_iters", "seed", "code_seed"},
        "simulate",
    )
    k = int(_require(config, "k", "simulate"))
    inner = _parse_ensemble(_require(config, "inner", "simulate"), "simulate.inner")
    outer = _parse_ensemble(_require(config, "outer", "simulate"), "simulate.outer")
    sweep = _parse_sweep(_require(config, "sweep_db", "simulate"), "simulate.sweep_db")
    decoder = str(config.get("decoder", "two-step"))
    if decoder not in ("two-step", "joint"):
        raise ConfigError("simulate.decoder: must be 'two-step' or 'joint'")
    sim_seed = int(seed if seed is not None else config.get("seed", 0))
    code = codec.build_concatenated(
        k, inner, outer, int(config.get("code_seed", sim_seed))
    )
    points = codec.simulate_ber(
        code,
        sweep,
        max_blocks=int(config.get("max_blocks", 100)),
        min_errors=int(config.get("min_errors", 100)),
        seed=sim_seed,
        decoder=decoder,
        inner_iters=int(config.get("inner_iters", 100)),
        outer_iters=int(config.get("outer_iters", 100)),
        jobs=jobs,
    )
    rows = [
        (p.eb_no_db, p.ber, p.ci_low, p.ci_high, p.blocks, p.bit_errors) for p in points
    ]
    _write_csv(
        out_dir / "simulate.csv",
        ["eb_no_db", "ber", "ci_low", "ci_high", "blocks", "bit_errors"],
        rows,
    )
    _print_table(["eb_no_db", "ber", "ci_low", "ci_high", "blocks", "bit_errors"], rows)
    return 0


# --- optimize --------------------------------------------------------------


def _cmd_optimize(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "degrees", "outer", "rate", "inner_rate", "critical_ber",
         "population", "f_weight", "crossover", "generations", "screen_iters",
         "screen_n_bits", "confirm_iters", "confirm_n_bits", "precision_db",
         "start_db", "seed"},
        "optimize",
    )
    outer = _parse_ensemble(_require(config, "outer", "optimize"), "optimize.outer")
    crit = config.get("critical_ber")
    if crit is None:
        crit = analysis.outer_threshold(outer).critical_ber
    try:
        cfg = optimizer.OptimizationConfig(
            degrees=tuple(int(d) for d in _require(config, "degrees", "optimize")),
            outer=outer,
            rate=float(_require(config, "rate", "optimize")),
            inner_rate=float(_require(config, "inner_rate", "optimize")),
            critical_ber=float(crit),
            population=int(config.get("population", 30)),
            f_weight=float(config.get("f_weight", 0.85)),
            crossover=float(config.get("crossover", 0.7)),
            generations=int(config.get("generations", 150)),
            screen_iters=int(config.get("screen_iters", 50)),
            screen_n_bits=int(config.get("screen_n_bits", 9)),
            confirm_iters=int(config.get("confirm_iters", 200)),
            confirm_n_bits=int(config.get("confirm_n_bits", 10)),
            precision_db=float(config.get("precision_db", 0.01)),
            start_db=(
                float(config["start_db"]) if config.get("start_db") is not None else None
            ),
            seed=int(seed if seed is not None else config.get("seed", 0)),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"optimize: {exc}") from exc
    result = optimizer.de_search(cfg, checkpoint_path=out_dir / "optimize_checkpoint.json")
    (out_dir / "optimized_vn.json").write_text(result.best.vn_dist.to_json() + "\n")
    if result.best.cn_dist is not None:
        (out_dir / "optimized_cn.json").write_text(result.best.cn_dist.to_json() + "\n")
    _write_csv(
        out_dir / "optimize_history.csv",
        ["level_db", "generation", "best_error", "feasible"],
        [(r.level_db, r.generation, r.best_error, int(r.feasible)) for r in result.history],
    )
    print(f"threshold_db {result.threshold_db:.6g}")
    print(f"vn_dist {result.best.vn_dist.to_json()}")
    return 0


# --- convergence -----------------------------------------------------------


def _cmd_convergence(config: dict, out_dir: Path, jobs: int, seed) -> int:
    _reject_unknown(
        config,
        {"version", "inner", "outer", "critical_ber", "sweep_db", "n_bits", "l_max",
         "max_iters", "precision_db"},
        "convergence",
    )
    inner = _parse_ensemble(_require(config, "inner", "convergence"), "convergence.inner")
    sweep = _parse_sweep(_require(config, "sweep_db", "convergence"), "convergence.sweep_db")
    grid = _parse_grid(config)
    max_iters = int(config.get("max_iters", dde.DEFAULT_MAX_ITERS))
    crit = config.get("critical_ber")
    if "outer" in config:
        outer = _parse_ensemble(config["outer"], "convergence.outer")
        rate = inner.rate * outer.rate
        if crit is None:
            crit = analysis.outer_threshold(
                outer,
                float(config.get("precision_db", analysis.DEFAULT_PRECISION_DB)),
                grid,
                max_iters,
            ).critical_ber
    else:
        rate = inner.rate
        if crit is None:
            raise ConfigError("convergence: need either outer or critical_ber")
    worker = _ConvergencePoint(inner, float(crit), rate, grid, max_iters)
    profile = _pmap(worker, sweep, jobs)
    rows = [
        (db, "" if math.isinf(iters) else int(iters)) for db, iters in profile
    ]
    _write_csv(out_dir / "convergence.csv", ["eb_no_db", "iterations"], rows)
    _print_table(["eb_no_db", "iterations"], rows)
    return 0


class _ConvergencePoint:
    def __init__(self, inner, crit, rate, grid, max_iters):
        self.inner, self.crit, self.rate = inner, crit, rate
        self.grid, self.max_iters = grid, max_iters

    def __call__(self, db):
        return analysis.convergence_profile(
            self.inner, self.crit, [db], self.rate, self.grid, self.max_iters
        )[0]


_COMMANDS = {
    "dde": _cmd_dde,
    "threshold": _cmd_threshold,
    "bounds": _cmd_bounds,
    "simulate": _cmd_simulate,
    "optimize": _cmd_optimize,
    "convergence": _cmd_convergence,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scldgm",
        description="Analysis and design of serially concatenated LDGM codes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="JSON experiment config")
        cmd.add_argument("--out", default=".", help="output directory")
        cmd.add_argument("--jobs", type=int, default=1, help="parallel workers")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out_dir, args.jobs, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # computation failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
