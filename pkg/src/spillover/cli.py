"""Command-line front end.

Every command reads an optional JSON configuration, applies command-line
overrides, writes its CSV outputs into ``--out`` and records a
``manifest.json`` with the resolved configuration, its hash, the seed,
library versions and a digest of every output.  Passing a manifest back as
``--config`` reruns the same job::

    spillover replicate --reps 200 --out run1
    spillover replicate --config run1/manifest.json --out run2   # identical CSVs
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, SpilloverError
from .estimators import (
    ESTIMATE_COLUMNS,
    aggregate_periods,
    did_estimate,
    eate_augmented,
    eate_hajek,
    eate_ht,
    fit_diffusion_model,
)
from .panel import HistorySpec, load_panel, validate_panel, write_panel
from .plots import heatmap_svg, line_chart_svg
from .propensity import FeatureSpec, PropensitySpec, estimate_propensity
from .simulation import (
    SCENARIOS,
    EstimatorSpec,
    SimConfig,
    build_world,
    replicate,
    simulate_panel,
    true_eate_mc,
)
from .spatial import circle_mean_weights, distance_matrix, load_distance_csv
from .variance import (
    confidence_interval,
    hajek_wls,
    randomization_test,
    spatial_hac,
    twoway_hac,
)

COMMANDS = ("simulate", "truth", "estimate", "replicate", "frt", "did-compare")
ESTIMATORS = ("ht", "hajek", "augmented", "did")

DEFAULTS = {
    "seed": 0,
    "scenario": "default",
    "sim": {},
    "input": {"panel": None, "distances": None, "schema": None},
    "history": {"target": "00111", "reference": None, "end": None},
    "t": None,
    "periods": None,
    "d_grid": [0, 1, 2, 3, 4, 5, 6, 7, 8],
    "bandwidth": None,
    "estimator": ["hajek"],
    "propensity": {"clip": [0.01, 0.99], "coord_poly": 0, "covariates": None, "true": False},
    "variance": {"kind": None, "cutoff": 0.0, "time_cutoff": 1.0, "kernel": "uniform",
                 "level": 0.95},
    "model": {"unit_effects": False, "lags": True, "bins": None, "bandwidth": None},
    "reps": 100,
    "truth_reps": 100,
    "frt": {"draws": 1000, "estimator": "hajek"},
    "svg": False,
}

# keys whose value is a free-form mapping rather than a nested section
_OPEN = {"sim", "input.schema"}
_FLOAT_FMT = "%.12g"


def _merge(base: dict, upd: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        here = f"{path}{k}"
        if k not in base:
            raise ConfigError(here, "unknown field")
        if isinstance(base[k], dict) and here not in _OPEN:
            if not isinstance(v, dict):
                raise ConfigError(here, "expected an object")
            out[k] = _merge(base[k], v, here + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_grid(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("d_grid", f"cannot parse {text!r} as comma-separated numbers") from None


def parse_history(text: str) -> dict:
    """``TARGET[:REFERENCE][@END]`` such as ``00111``, ``011:000@5``."""
    end = None
    if "@" in text:
        text, e = text.split("@", 1)
        try:
            end = int(e)
        except ValueError:
            raise ConfigError("history.end", f"not an integer: {e!r}") from None
    tgt, _, ref = text.partition(":")
    return {"target": tgt, "reference": ref or None, "end": end}


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.scenario is not None:
        o["scenario"] = args.scenario
    if args.panel is not None or args.distances is not None:
        o["input"] = {k: v for k, v in (("panel", args.panel), ("distances", args.distances))
                      if v is not None}
    if args.d_grid is not None:
        o["d_grid"] = _parse_grid(args.d_grid)
    if args.history is not None:
        o["history"] = parse_history(args.history)
    if args.t is not None:
        o["t"] = args.t
    if args.periods is not None:
        o["periods"] = [int(float(v)) for v in _parse_grid(args.periods)]
    if args.estimator is not None:
        o["estimator"] = [e.strip() for e in args.estimator.split(",") if e.strip()]
    var = {}
    for key, val in (("kind", args.variance), ("cutoff", args.cutoff),
                     ("time_cutoff", args.time_cutoff), ("kernel", args.kernel)):
        if val is not None:
            var[key] = val
    if var:
        o["variance"] = var
    prop = {}
    if args.clip is not None:
        vals = _parse_grid(args.clip)
        if len(vals) != 2:
            raise ConfigError("propensity.clip", "give two numbers LO,HI")
        prop["clip"] = vals
    if args.coord_poly is not None:
        prop["coord_poly"] = args.coord_poly
    if args.true_propensity:
        prop["true"] = True
    if prop:
        o["propensity"] = prop
    if args.reps is not None:
        o["reps"] = args.reps
    if args.truth_reps is not None:
        o["truth_reps"] = args.truth_reps
    if args.draws is not None:
        o["frt"] = {"draws": args.draws}
    if args.svg:
        o["svg"] = True
    return o


def resolve_config(file_cfg: dict | None, overrides: dict) -> dict:
    """Defaults <- configuration file <- command-line overrides, then validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if file_cfg:
        if "config" in file_cfg and "config_hash" in file_cfg:
            file_cfg = file_cfg["config"]  # a manifest from an earlier run
        cfg = _merge(cfg, file_cfg)
    cfg = _merge(cfg, overrides)
    if isinstance(cfg["estimator"], str):
        cfg["estimator"] = [cfg["estimator"]]
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    grid = cfg["d_grid"]
    if not isinstance(grid, list) or not grid:
        raise ConfigError("d_grid", "must be a non-empty list")
    try:
        g = [float(v) for v in grid]
    except (TypeError, ValueError):
        raise ConfigError("d_grid", "must contain numbers") from None
    if any(b <= a for a, b in zip(g, g[1:])):
        raise ConfigError("d_grid", "must be strictly increasing")
    if any(v < 0 or not np.isfinite(v) for v in g):
        raise ConfigError("d_grid", "distances must be finite and non-negative")
    cfg["d_grid"] = g
    for e in cfg["estimator"]:
        if e not in ESTIMATORS:
            raise ConfigError("estimator", f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    v = cfg["variance"]
    if v["kind"] not in (None, "hc0", "spatial", "twoway"):
        raise ConfigError("variance.kind", "choose hc0, spatial or twoway")
    if v["kernel"] not in ("uniform", "bartlett"):
        raise ConfigError("variance.kernel", "choose uniform or bartlett")
    for key in ("cutoff", "time_cutoff"):
        if not isinstance(v[key], (int, float)) or v[key] < 0:
            raise ConfigError(f"variance.{key}", "must be a non-negative number")
    if not 0 < v["level"] < 1:
        raise ConfigError("variance.level", "must lie in (0, 1)")
    lo, hi = cfg["propensity"]["clip"]
    if not 0 <= lo < hi <= 1:
        raise ConfigError("propensity.clip", "need 0 <= lo < hi <= 1")
    if int(cfg["propensity"]["coord_poly"]) not in (0, 1, 2, 3):
        raise ConfigError("propensity.coord_poly", "degree must be 0..3")
    for key in ("reps", "truth_reps"):
        if not isinstance(cfg[key], int) or cfg[key] < 2:
            raise ConfigError(key, "must be an integer >= 2")
    if not isinstance(cfg["frt"]["draws"], int) or cfg["frt"]["draws"] < 1:
        raise ConfigError("frt.draws", "must be a positive integer")
    if cfg["frt"]["estimator"] not in ("ht", "hajek"):
        raise ConfigError("frt.estimator", "choose ht or hajek")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed", "must be an integer")
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError("scenario", f"unknown scenario; choose from {sorted(SCENARIOS)}")
    if cfg["periods"] is not None and (not cfg["periods"]
                                       or list(cfg["periods"]) != sorted(set(cfg["periods"]))):
        raise ConfigError("periods", "must be a strictly increasing list")
    try:
        _history(cfg)
    except SpilloverError as exc:
        raise ConfigError("history", str(exc)) from None
    _sim_config(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _sim_config(cfg: dict) -> SimConfig:
    sim = dict(cfg["sim"])
    sim.setdefault("seed", cfg["seed"])
    try:
        return SimConfig.scenario(cfg["scenario"], **sim)
    except ConfigError as exc:
        raise ConfigError(f"sim.{exc.field}" if not exc.field.startswith("sim.") else exc.field,
                          exc.message) from None
    except TypeError as exc:
        raise ConfigError("sim", str(exc)) from None


def _history(cfg: dict, n_periods: int | None = None) -> HistorySpec:
    h = cfg["history"]
    end = h["end"]
    if end is None and n_periods is not None:
        end = n_periods
    if end is None:
        return HistorySpec.parse(h["target"], h["reference"])
    return HistorySpec.parse(h["target"], h["reference"], end=int(end))


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=_FLOAT_FMT, lineterminator="\n")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy

    return {
        "spillover": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _write_manifest(out: Path, command: str, cfg: dict, files: list) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": _versions(),
        "outputs": {f.name: _sha(f) for f in sorted(files)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_inputs(cfg: dict):
    """Panel and distance matrix from files, or a simulated panel if no file is given."""
    inp = cfg["input"]
    if inp["panel"] is None:
        world = build_world(_sim_config(cfg))
        sp = simulate_panel(world, 0)
        return sp.panel, world.D, sp
    panel = load_panel(inp["panel"], inp["schema"])
    if inp["distances"] is not None:
        D = load_distance_csv(inp["distances"])
        if D.n != panel.n_units:
            raise SpilloverError(f"distance matrix has {D.n} rows for {panel.n_units} units")
    else:
        D = distance_matrix(panel.coords)
    return panel, D, None


def _propensity_spec(cfg: dict) -> PropensitySpec:
    p = cfg["propensity"]
    covs = None if p["covariates"] is None else tuple(p["covariates"])
    feats = FeatureSpec(covariates=covs, coord_poly_degree=int(p["coord_poly"]))
    return PropensitySpec(features=feats, clip=tuple(p["clip"]))


def _variance(rep_or_reps, D, cfg):
    v = cfg["variance"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if v["kind"] == "twoway":
            return twoway_hac(rep_or_reps, D, v["cutoff"], v["time_cutoff"], v["kernel"]).var
        cutoff = 0.0 if v["kind"] == "hc0" else v["cutoff"]
        return spatial_hac(rep_or_reps, D, cutoff, v["kernel"]).var


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg, out: Path) -> list:
    world = build_world(_sim_config(cfg))
    sp = simulate_panel(world, 0)
    h = _history(cfg, world.cfg.n_periods)
    t = cfg["t"] or h.end
    files = [out / "panel.csv", out / "truth.csv"]
    write_panel(sp.panel, files[0])
    truth = true_eate_mc(world, h, cfg["d_grid"], t, n_reps=cfg["truth_reps"],
                         bandwidth=cfg["bandwidth"])
    _write_csv(_truth_frame(truth), files[1])
    if cfg["svg"]:
        files.append(_svg_truth(truth, out))
    return files


def _truth_frame(truth) -> pd.DataFrame:
    df = truth.frame()
    df["oracle_did_bias"] = truth.oracle_bias()
    df["oracle_se"] = truth.oracle_se()
    return df


def _svg_truth(truth, out: Path) -> Path:
    path = out / "truth.svg"
    path.write_text(line_chart_svg(truth.d_grid, [{
        "label": "true EATE", "y": truth.eate,
        "lo": truth.eate - 1.96 * truth.mc_se, "hi": truth.eate + 1.96 * truth.mc_se}],
        title=f"True effect by distance, history {truth.history.label()}"))
    return path


def cmd_truth(cfg, out: Path) -> list:
    world = build_world(_sim_config(cfg))
    h = _history(cfg, world.cfg.n_periods)
    t = cfg["t"] or h.end
    truth = true_eate_mc(world, h, cfg["d_grid"], t, n_reps=cfg["truth_reps"],
                         bandwidth=cfg["bandwidth"])
    files = [out / "truth.csv"]
    _write_csv(_truth_frame(truth), files[0])
    if cfg["svg"]:
        files.append(_svg_truth(truth, out))
    return files


def _estimate_one(kind, panel, D, m, h, t, table, model, cfg):
    if kind == "did":
        return did_estimate(panel, history=h, post_period=t, mapping=m)
    if kind == "ht":
        e = eate_ht(panel, m, h, t, table)
    elif kind == "hajek":
        e = eate_hajek(panel, m, h, t, table)
    else:
        e = eate_augmented(panel, m, h, t, table, model)
    if cfg["variance"]["kind"] in ("hc0", "spatial") and kind == "hajek":
        var = _variance(hajek_wls(panel, m, h, t, table), D, cfg)
        e = e.with_variance(var, confidence_interval(e.tau, var, cfg["variance"]["level"]))
    return e


def cmd_estimate(cfg, out: Path) -> list:
    panel, D, sp = _load_inputs(cfg)
    h = _history(cfg, panel.n_periods)
    validate_panel(panel, [h])
    periods = cfg["periods"] or [cfg["t"] or h.end]
    if cfg["propensity"]["true"]:
        if sp is None:
            raise ConfigError("propensity.true", "true probabilities exist only for simulated panels")
        table = sp.true_table
    else:
        table = estimate_propensity(panel, _propensity_spec(cfg)).table
    model = None
    if "augmented" in cfg["estimator"]:
        mc = cfg["model"]
        bins = mc["bins"] if mc["bins"] is not None else cfg["d_grid"]
        model = fit_diffusion_model(panel, D, bins, bandwidth=mc["bandwidth"],
                                    lag_outcome=mc["lags"], lag_treatment=mc["lags"],
                                    unit_effects=mc["unit_effects"])
    rows, grid = [], {}
    twoway = cfg["variance"]["kind"] == "twoway"
    for d in cfg["d_grid"]:
        m = circle_mean_weights(D, d, cfg["bandwidth"])
        for kind in cfg["estimator"]:
            per = [_estimate_one(kind, panel, D, m, h, t, table, model, cfg) for t in periods]
            for e in per:
                grid[(kind, d, e.t)] = e.tau
            if twoway and len(per) > 1:
                agg = aggregate_periods(per)
                if kind == "hajek":
                    reps = [hajek_wls(panel, m, h, t, table) for t in periods]
                    var = _variance(reps, D, cfg)
                    agg = agg.with_variance(var, confidence_interval(agg.tau, var,
                                                                     cfg["variance"]["level"]))
                rows.append({**agg.row(), "t": "avg"})
            else:
                rows.extend(e.row() for e in per)
    df = pd.DataFrame(rows, columns=list(ESTIMATE_COLUMNS))
    files = [out / "estimates.csv"]
    _write_csv(df, files[0])
    if len(periods) > 1:
        heat = pd.DataFrame([{"estimator": k, "d": d, "t": t, "tau": v}
                             for (k, d, t), v in grid.items()])
        files.append(out / "heatmap.csv")
        _write_csv(heat, files[-1])
    if cfg["svg"]:
        files.extend(_svg_estimates(df, grid, cfg, periods, h, out))
    return files


def _svg_estimates(df, grid, cfg, periods, h, out: Path) -> list:
    files = []
    t_last = periods[-1]
    series = []
    for kind in cfg["estimator"]:
        sub = df[(df.estimator == kind) & (df.t.astype(str).isin([str(t_last), "avg"]))]
        s = {"label": kind, "y": sub.tau.to_numpy(float)}
        if np.isfinite(sub.ci_lo.to_numpy(float)).any():
            s["lo"], s["hi"] = sub.ci_lo.to_numpy(float), sub.ci_hi.to_numpy(float)
        series.append(s)
    path = out / "estimates.svg"
    path.write_text(line_chart_svg(cfg["d_grid"], series,
                                   title=f"Estimated effect by distance, history {h.label()}"))
    files.append(path)
    if len(periods) > 1:
        kind = cfg["estimator"][0]
        vals = np.array([[grid[(kind, d, t)] for d in cfg["d_grid"]] for t in periods])
        path = out / "heatmap.svg"
        path.write_text(heatmap_svg(cfg["d_grid"], periods, vals,
                                    title=f"{kind} estimates by distance and period"))
        files.append(path)
    return files


def _estimator_specs(cfg) -> list:
    v = cfg["variance"]
    p = cfg["propensity"]
    mc = cfg["model"]
    kind_var = None if v["kind"] in (None, "twoway") else v["kind"]
    specs = []
    for kind in cfg["estimator"]:
        specs.append(EstimatorSpec(
            kind, coord_poly_degree=int(p["coord_poly"]),
            covariates=None if p["covariates"] is None else tuple(p["covariates"]),
            propensity="true" if p["true"] else "fitted", clip=tuple(p["clip"]),
            variance=kind_var if kind == "hajek" else None, cutoff=float(v["cutoff"]),
            kernel=v["kernel"], level=v["level"],
            model_bins=None if mc["bins"] is None else tuple(mc["bins"]),
            model_bandwidth=mc["bandwidth"], model_unit_effects=mc["unit_effects"],
            model_lags=mc["lags"]))
    return specs


def cmd_replicate(cfg, out: Path) -> list:
    world = build_world(_sim_config(cfg))
    h = _history(cfg, world.cfg.n_periods)
    t = cfg["t"] or h.end
    truth = true_eate_mc(world, h, cfg["d_grid"], t, n_reps=cfg["truth_reps"],
                         bandwidth=cfg["bandwidth"])
    res = replicate(world, _estimator_specs(cfg), cfg["reps"], h, t, cfg["d_grid"],
                    truth=truth, bandwidth=cfg["bandwidth"])
    files = [out / "replication.csv", out / "truth.csv"]
    _write_csv(res.summary(), files[0])
    _write_csv(_truth_frame(truth), files[1])
    if cfg["svg"]:
        s = res.summary()
        series = [{"label": "truth", "y": truth.eate, "dashed": True}]
        for name in dict.fromkeys(s.estimator):
            sub = s[s.estimator == name]
            series.append({"label": name, "y": sub["mean"].to_numpy(float),
                           "lo": (sub["mean"] - 1.96 * sub["sd"]).to_numpy(float),
                           "hi": (sub["mean"] + 1.96 * sub["sd"]).to_numpy(float)})
        path = out / "replication.svg"
        path.write_text(line_chart_svg(cfg["d_grid"], series,
                                       title=f"Mean estimate over {cfg['reps']} replications"))
        files.append(path)
    return files


def cmd_frt(cfg, out: Path) -> list:
    panel, D, _ = _load_inputs(cfg)
    h = _history(cfg, panel.n_periods)
    t = cfg["t"] or h.end
    fit = estimate_propensity(panel, _propensity_spec(cfg))
    summary, draws = [], []
    for d in cfg["d_grid"]:
        m = circle_mean_weights(D, d, cfg["bandwidth"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = randomization_test(panel, fit, h, m, t, estimator=cfg["frt"]["estimator"],
                                   n_draws=cfg["frt"]["draws"], seed=cfg["seed"])
        summary.append({"d": d, "t": t, "observed": r.observed, "p_value": r.p_value,
                        "n_draws": r.n_draws, "n_valid": int(np.isfinite(r.draws).sum())})
        draws.append(pd.DataFrame({"d": d, "draw": np.arange(r.n_draws), "tau": r.draws}))
    files = [out / "frt.csv", out / "frt_draws.csv"]
    _write_csv(pd.DataFrame(summary), files[0])
    _write_csv(pd.concat(draws, ignore_index=True), files[1])
    return files


def cmd_did_compare(cfg, out: Path) -> list:
    world = build_world(_sim_config(cfg))
    h = _history(cfg, world.cfg.n_periods)
    t = cfg["t"] or h.end
    truth = true_eate_mc(world, h, cfg["d_grid"], t, n_reps=cfg["truth_reps"],
                         bandwidth=cfg["bandwidth"])
    poly = int(cfg["propensity"]["coord_poly"]) or 2
    specs = [EstimatorSpec("did"), EstimatorSpec("hajek"),
             EstimatorSpec("hajek", label=f"hajek_poly{poly}", coord_poly_degree=poly)]
    res = replicate(world, specs, cfg["reps"], h, t, cfg["d_grid"], truth=truth,
                    bandwidth=cfg["bandwidth"])
    s = res.summary()
    df = pd.DataFrame({"d": truth.d_grid, "truth": truth.eate, "truth_se": truth.mc_se})
    for spec in specs:
        sub = s[s.estimator == spec.name].reset_index(drop=True)
        df[f"{spec.name}_mean"] = sub["mean"]
        df[f"{spec.name}_bias"] = sub["bias"]
        df[f"{spec.name}_mc_se"] = sub["mc_se"]
    df["oracle_did_bias"] = truth.oracle_bias()
    df["oracle_se"] = truth.oracle_se()
    files = [out / "did_compare.csv"]
    _write_csv(df, files[0])
    if cfg["svg"]:
        series = [{"label": "truth", "y": truth.eate, "dashed": True}]
        series += [{"label": sp.name, "y": df[f"{sp.name}_mean"].to_numpy(float)} for sp in specs]
        path = out / "did_compare.svg"
        path.write_text(line_chart_svg(cfg["d_grid"], series,
                                       title="DID against weighting estimators"))
        files.append(path)
    return files


RUNNERS = {
    "simulate": cmd_simulate,
    "truth": cmd_truth,
    "estimate": cmd_estimate,
    "replicate": cmd_replicate,
    "frt": cmd_frt,
    "did-compare": cmd_did_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spillover",
        description="Spatio-temporal spillover effects from panel data with interference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration (or a manifest.json to rerun)")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenario", choices=sorted(SCENARIOS))
        p.add_argument("--panel", help="long-format panel CSV (estimate, frt)")
        p.add_argument("--distances", help="N x N distance matrix CSV")
        p.add_argument("--d-grid", help="comma-separated distances, e.g. 0,1,2,4")
        p.add_argument("--history", help="TARGET[:REFERENCE][@END], e.g. 00111:00000")
        p.add_argument("--t", type=int, help="outcome period (default: end of history)")
        p.add_argument("--periods", help="comma-separated outcome periods (heatmap / twoway)")
        p.add_argument("--estimator", help="comma-separated: ht, hajek, augmented, did")
        p.add_argument("--variance", choices=("hc0", "spatial", "twoway"))
        p.add_argument("--cutoff", type=float, help="distance cutoff of the HAC kernel")
        p.add_argument("--time-cutoff", type=float, help="period cutoff of the two-way kernel")
        p.add_argument("--kernel", choices=("uniform", "bartlett"))
        p.add_argument("--clip", help="propensity clipping bounds LO,HI")
        p.add_argument("--coord-poly", type=int, help="degree of the coordinate polynomial")
        p.add_argument("--true-propensity", action="store_true",
                       help="use the simulator's true probabilities")
        p.add_argument("--reps", type=int, help="replications")
        p.add_argument("--truth-reps", type=int, help="Monte-Carlo draws for the true effect")
        p.add_argument("--draws", type=int, help="randomization draws (frt)")
        p.add_argument("--svg", action="store_true", help="also write SVG charts")
    return parser


def _error(exc: SpilloverError) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    arm = getattr(exc, "arm", None)
    if arm is not None:
        payload["arm"] = arm
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = None
        if args.config:
            try:
                file_cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("config", f"cannot read {args.config}: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config", "top level must be an object")
        cfg = resolve_config(file_cfg, _overrides(args))
    except ConfigError as exc:
        parser.error(f"invalid configuration at {exc.field}: {exc.message}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files = RUNNERS[args.command](cfg, out)
    except ConfigError as exc:
        parser.error(f"invalid configuration at {exc.field}: {exc.message}")
    except (SpilloverError, ValueError) as exc:
        if not isinstance(exc, SpilloverError):
            exc = SpilloverError(str(exc))
        print(_error(exc), file=sys.stderr)
        return 2
    _write_manifest(out, args.command, cfg, files)
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
