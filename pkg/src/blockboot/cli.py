"""Command-line interface.

Subcommands: ``analyze``, ``simulate``, ``select-block``, ``demo-dssbb``,
``field-gen``, ``version``.  Every command is a pure function of its input
files, flags and seed: reruns with the same seed are byte-identical.  Output
files are written atomically (temp file + rename), so malformed input never
leaves partial output behind.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapPlan, build_geometry, run_bootstrap
from .config import (
    Config,
    block_sizes_for,
    build_cov_model,
    build_design,
    build_plan,
    build_region,
    build_score,
    build_selection,
    build_weights,
    load_config,
)
from .designs import draw_sites
from .errors import ConfigError, DataError, NumericError
from .experiments import Scenario, TableJob, inconsistency_demo, run_table
from .field import simulate
from .geometry import Region, scale_region
from .regression import Dataset, WeightSpec, fit
from .selection import SelectionConfig, select_block_size
from .streams import substream

from scipy.stats import norm

log = logging.getLogger("blockboot")

SEED_ENV_VAR = "BLOCKBOOT_SEED"


def _fmt(value) -> str:
    """Shortest decimal that round-trips exactly (repr of a Python float)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    seed = int.from_bytes(os.urandom(4), "big")
    log.info("no seed given; generated seed %d (pass --seed %d to reproduce)", seed, seed)
    return seed


def read_data_csv(path: str):
    """Parse the analysis CSV: header s1..sd[,x1..xq],y; floats; no missing values."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d = 0
    while d < len(header) and header[d] == f"s{d + 1}":
        d += 1
    q = 0
    while d + q < len(header) and header[d + q] == f"x{q + 1}":
        q += 1
    if d == 0 or d + q + 1 != len(header) or header[-1] != "y":
        raise DataError(
            f"{path}:1: header must read s1..sd[,x1..xq],y; got {','.join(header)}"
        )
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"{path}:{lineno}: missing or non-finite value")
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(data)
    return arr[:, :d], arr[:, d : d + q], arr[:, -1], d, q


def _region_for_data(cfg: Config, sites: np.ndarray, d: int):
    """Explicit region from config, or the square bounding box in auto mode."""
    sec = cfg.region
    if int(sec["dimension"]) != d:
        raise DataError(
            f"data has {d} coordinate columns but region.dimension is {sec['dimension']}"
        )
    if sec["lambda"] == "auto":
        lo = sites.min(axis=0)
        lam = float((sites.max(axis=0) - lo).max())
        if lam <= 0:
            raise DataError("degenerate bounding box: all sites coincide")
        log.warning(
            "auto region: using the square bounding box (side %s); scaled "
            "variances depend on this choice", _fmt(lam),
        )
        return scale_region("cube", d, lam), sites - lo
    region = build_region(cfg)
    if not np.all(region.contains(sites)):
        bad = int(np.nonzero(~region.contains(sites))[0][0])
        raise DataError(f"site {bad} at {sites[bad]} lies outside the configured region")
    return region, sites


def _default_candidates(lam: float) -> tuple:
    return (lam / 8.0, lam / 6.0, lam / 4.0, lam / 3.0)


def cmd_analyze(args) -> int:
    cfg = _config_with_flags(args)
    seed = _resolve_seed(args)
    sites, X, y, d, q = read_data_csv(args.data)
    if len(y) < q + 2:
        raise DataError(f"need at least p + 1 = {q + 2} rows, got {len(y)}")
    region, sites = _region_for_data(cfg, sites, d)
    spec = WeightSpec(q)
    dataset = Dataset(sites=sites, W=spec.matrix(sites, X if q else None),
                      y=y, lam=region.lam, d=d)
    score = build_score(cfg)
    try:
        fit_result = fit(dataset, score)
    except NumericError as exc:
        raise NumericError(f"model fit failed: {exc}") from None

    chosen_auto = None
    if cfg.plan["block"] == "auto":
        sel = build_selection(cfg, _default_candidates(region.lam))
        try:
            chosen_auto = select_block_size(
                dataset, fit_result, region, sel,
                substream(seed, "select-block"), score=score,
                variant=cfg.plan["variant"],
            ).chosen
            b = chosen_auto
        except NumericError as exc:
            b = region.lam / 4.0
            log.warning("block selection failed (%s); falling back to b = %s", exc, _fmt(b))
    else:
        b = float(cfg.plan["block"])
    if b > region.lam:
        raise ConfigError(f"plan.block = {b} exceeds the region side {region.lam}")

    plan = build_plan(cfg, b, seed)
    geometry = build_geometry(region, b, dataset.sites)
    out = run_bootstrap(dataset, fit_result, plan, geometry,
                        rng=substream(seed, "analyze"), score=score)

    ses = np.sqrt(out.var_estimate)
    tests = cfg.model["tests"]
    if tests is None:
        tests = [{"coefficient": j, "null": 0.0} for j in range(1, dataset.p)]
    p_values = []
    for t in tests:
        j, null = int(t["coefficient"]), float(t["null"])
        if not 0 <= j < dataset.p:
            raise ConfigError(f"model.tests coefficient {j} out of range")
        if ses[j] == 0.0:
            p_values.append({"coefficient": j, "null": null, "p_value": None,
                             "note": "degenerate (SE=0)"})
        else:
            zstat = abs(fit_result.beta_hat[j] - null) / ses[j]
            p_values.append({"coefficient": j, "null": null,
                             "p_value": float(2.0 * norm.sf(zstat))})

    bundle = {
        "version": __version__,
        "seed": seed,
        "beta_hat": [float(v) for v in fit_result.beta_hat],
        "se": [float(v) for v in ses],
        "ci": [[float(lo), float(hi)] for lo, hi in out.ci],
        "level": out.level,
        "ci_method": plan.ci_method,
        "p_values": p_values,
        "block_size": float(b),
        "block_size_auto": chosen_auto if chosen_auto is None else float(chosen_auto),
        "variant": plan.variant,
        "resamples": plan.M,
        "failure_count": out.failure_count,
        "n_star_mean": out.n_star_mean,
        "region": {"prototype": region.prototype, "dimension": d, "lambda": region.lam},
        "config": cfg.echo(),
    }
    _write_atomic(Path(args.out) / "analysis.json", _json_text(bundle))
    log.info("wrote %s", Path(args.out) / "analysis.json")
    return 0


def _scenarios_from_config(cfg: Config):
    exp = cfg.experiment
    weights = build_weights(cfg)
    beta = tuple(float(v) for v in cfg.model["beta"])
    jobs = []
    for lam in exp["lambdas"]:
        lam = float(lam)
        blocks = block_sizes_for(cfg, lam)
        for kind in exp["designs"]:
            design = build_design(cfg, kind)
            for n in exp["sample_sizes"]:
                for r in exp["ranges"]:
                    scenario = Scenario(
                        design=design, lam=lam, n=int(n),
                        model=build_cov_model(cfg, r), weights=weights,
                        beta_true=beta, score_kind=cfg.model["score"],
                        huber_k=cfg.model["huber_k"],
                        prototype=cfg.region["prototype"],
                        d=int(cfg.region["dimension"]),
                    )
                    jobs.append(TableJob(scenario, blocks, tuple(exp["variants"])))
    if not jobs:
        raise ConfigError("experiment grid is empty")
    return jobs


def cmd_simulate(args) -> int:
    cfg = _config_with_flags(args)
    seed = _resolve_seed(args)
    exp = cfg.experiment
    jobs = _scenarios_from_config(cfg)
    workers = args.workers if args.workers is not None else int(exp["workers"])
    selection = None
    if exp["select_blocks"]:
        selection = build_selection(cfg, jobs[0].block_sizes)
    result = run_table(
        jobs, S=int(exp["samples"]), M=int(exp["resamples"]), seed=seed,
        level=float(cfg.plan["level"]), ci_method=cfg.plan["ci"],
        select_blocks=bool(exp["select_blocks"]), selection=selection,
        workers=workers,
    )
    p = len(result.rows[0].root_mse)
    header = ["scenario", "design", "lambda", "n", "range", "variant", "b"]
    header += [f"truth_{j}" for j in range(p)]
    header += [f"root_mse_{j}" for j in range(p)]
    header += [f"coverage_{j}" for j in range(p)]
    header += ["modal_selected"]
    rows = []
    for row in result.rows:
        rows.append(
            [row.scenario_key, row.design, row.lam, row.n, row.cov_range,
             row.variant, row.b, *row.truth, *row.root_mse, *row.coverage,
             row.modal_selected]
        )
    table_text = _csv_text(header, rows)
    est_text = _csv_text(
        ["scenario", "variant", "b", "sample", "coefficient", "variance_estimate"],
        result.estimates,
    )
    run_text = _json_text({"version": __version__, "seed": seed, "config": cfg.echo()})
    out = Path(args.out)
    _write_atomic(out / "table.csv", table_text)
    _write_atomic(out / "estimates.csv", est_text)
    _write_atomic(out / "run.json", run_text)
    log.info("wrote %s, %s, %s", out / "table.csv", out / "estimates.csv", out / "run.json")
    return 0


def cmd_select_block(args) -> int:
    cfg = _config_with_flags(args)
    seed = _resolve_seed(args)
    sites, X, y, d, q = read_data_csv(args.data)
    region, sites = _region_for_data(cfg, sites, d)
    spec = WeightSpec(q)
    dataset = Dataset(sites=sites, W=spec.matrix(sites, X if q else None),
                      y=y, lam=region.lam, d=d)
    score = build_score(cfg)
    fit_result = fit(dataset, score)
    sel = build_selection(cfg, _default_candidates(region.lam))
    result = select_block_size(
        dataset, fit_result, region, sel, substream(seed, "select-block"),
        score=score, variant=cfg.plan["variant"],
    )
    payload = {
        "version": __version__,
        "seed": seed,
        "chosen_block": float(result.chosen),
        "per_component": [float(v) for v in result.per_component],
        "pilot_block": float(result.pilot_size),
        "pilot_estimate": [float(v) for v in result.pilot_estimate],
        "mse": [[float(v) for v in row] for row in result.mse],
        "candidates": [float(c) for c in sel.candidates],
        "subregions_used": result.subregions_used,
        "subregions_skipped": result.subregions_skipped,
        "config": cfg.echo(),
    }
    _write_atomic(Path(args.out) / "block_selection.json", _json_text(payload))
    log.info("wrote %s", Path(args.out) / "block_selection.json")
    return 0


def cmd_demo_dssbb(args) -> int:
    cfg = _config_with_flags(args)
    seed = _resolve_seed(args)
    demo = cfg.experiment["demo"]
    design = None
    if demo["design"] != "strip":
        design = build_design(cfg, demo["design"])
    workers = args.workers if args.workers is not None else int(cfg.experiment["workers"])
    report = inconsistency_demo(
        a=float(demo["a"]), lam=float(demo["lambda"]),
        block_sizes=tuple(float(b) for b in demo["block_sizes"]),
        S=int(demo["samples"]), M=int(demo["resamples"]), seed=seed,
        cov_range=float(demo["range"]), sill=float(demo["sill"]),
        design=design,
        clip_sigma=demo["clip_sigma"],
        linearized=bool(demo["linearized"]),
        field_redraws=int(demo["field_redraws"]),
        threshold=float(demo["threshold"]),
        workers=workers,
    )
    payload = {
        "version": __version__,
        "seed": seed,
        "notes": list(report.notes),
        "design": report.design_kind,
        "a": report.a,
        "lambda": report.lam,
        "n": report.n,
        "block_sizes": [float(b) for b in report.block_sizes],
        "sigma_inf": report.sigma_inf,
        "sigma_check": report.sigma_check,
        "median_dssbb": {_fmt(b): v for b, v in report.median_dssbb.items()},
        "median_gbbb": {_fmt(b): v for b, v in report.median_gbbb.items()},
        "frac_below_threshold": {_fmt(b): v for b, v in report.frac_below.items()},
        "threshold": report.threshold,
        "config": cfg.echo(),
    }
    sample_rows = []
    for b in report.block_sizes:
        for s, v in enumerate(report.dssbb[b]):
            sample_rows.append((b, "dssbb", s, v))
        for s, v in enumerate(report.gbbb[b]):
            sample_rows.append((b, "gbbb", s, v))
    out = Path(args.out)
    _write_atomic(out / "dssbb_demo.json", _json_text(payload))
    _write_atomic(
        out / "dssbb_samples.csv",
        _csv_text(["b", "method", "sample", "scaled_variance"], sample_rows),
    )
    log.info("wrote %s and %s", out / "dssbb_demo.json", out / "dssbb_samples.csv")
    return 0


def cmd_field_gen(args) -> int:
    cfg = _config_with_flags(args)
    seed = _resolve_seed(args)
    region = build_region(cfg)
    design = build_design(cfg)
    model = build_cov_model(cfg)
    n = int(cfg.experiment["sample_sizes"][0])
    rng = substream(seed, "field-gen")
    sites = draw_sites(design, region, n, rng)
    values = simulate(model, sites, rng)
    header = [f"s{i + 1}" for i in range(region.d)] + ["z"]
    rows = [list(site) + [val] for site, val in zip(sites, values)]
    _write_atomic(Path(args.out) / "field.csv", _csv_text(header, rows))
    log.info("wrote %s", Path(args.out) / "field.csv")
    return 0


def cmd_version(args) -> int:
    print(f"blockboot {__version__}")
    return 0


def _config_with_flags(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    plan = dict(cfg.plan)
    if getattr(args, "block", None) is not None:
        plan["block"] = args.block if args.block == "auto" else _parse_block(args.block)
    if getattr(args, "variant", None) is not None:
        plan["variant"] = args.variant
    if getattr(args, "ci", None) is not None:
        plan["ci"] = args.ci
    if getattr(args, "level", None) is not None:
        plan["level"] = args.level
    return Config(
        region=cfg.region, design=cfg.design, field=cfg.field,
        model=cfg.model, plan=plan, experiment=cfg.experiment,
    )


def _parse_block(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--block must be a number or 'auto', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockboot",
        description="Block bootstrap inference for irregularly spaced spatial data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", help="JSON configuration document")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help=f"RNG seed (else ${SEED_ENV_VAR}, else generated)")
        p.add_argument("--workers", type=int, default=None, help="parallel worker cap")
        if data:
            p.add_argument("--data", required=True, help="CSV data file (s1..sd[,x1..xq],y)")

    p = sub.add_parser("analyze", help="fit and bootstrap a data file")
    common(p, data=True)
    p.add_argument("--block", help="block side, or 'auto' for the empirical rule")
    p.add_argument("--variant", choices=["gbbb", "gbbb-cb", "gbbb-nonoverlap", "dssbb"])
    p.add_argument("--ci", choices=["normal", "percentile"])
    p.add_argument("--level", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run the simulation table harness")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-block", help="empirical block-size selection on a data file")
    common(p, data=True)
    p.add_argument("--variant", choices=["gbbb", "gbbb-cb", "gbbb-nonoverlap", "dssbb"])
    p.set_defaults(func=cmd_select_block)

    p = sub.add_parser("demo-dssbb", help="site-anchored vs grid-anchored comparison")
    common(p)
    p.set_defaults(func=cmd_demo_dssbb)

    p = sub.add_parser("field-gen", help="simulate one field realization to CSV")
    common(p)
    p.set_defaults(func=cmd_field_gen)

    p = sub.add_parser("version", help="print the version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
