"""``doaloc`` command-line front end.

Exit codes: 0 ok, 2 parse error, 3 nongeneric trajectory, 4 solver failure,
5 configuration error, 6 insufficient measurements, 130 interrupted.
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

from . import sim
from .frames import FrameTransform
from .linear_system import NongenericTrajectoryError
from .measurement import DoaMeasurement, MeasurementSet
from .pipeline import InsufficientMeasurementsError, Method, estimate
from .sdp import DegenerateExtractionError, SolverError, SolverOptions, constraint_residuals

log = logging.getLogger("doaloc")

EXIT_OK, EXIT_PARSE, EXIT_NONGENERIC, EXIT_SOLVER, EXIT_CONFIG, EXIT_INSUFFICIENT = 0, 2, 3, 4, 5, 6
EXIT_INTERRUPTED = 130

MEASUREMENT_COLUMNS = ["k", "u_A", "v_A", "w_A", "x_B", "y_B", "z_B", "theta_rad", "phi_rad"]
RESULT_COLUMNS = ["sigma_deg", "K", "method", "trial", "rotation_error_rad", "position_error_m", "status"]


class ParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


class ConfigError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- measurement files --------------------------------------------------------

def write_measurements(ms: MeasurementSet, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MEASUREMENT_COLUMNS)
        for m in ms:
            w.writerow([m.k, *map(_fmt, m.pos_a_global), *map(_fmt, m.pos_b_ins), *map(_fmt, m.doa)])


def read_measurements(path) -> MeasurementSet:
    """Parse a measurement CSV; errors carry the 1-based line number."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file")
        if [h.strip() for h in header] != MEASUREMENT_COLUMNS:
            raise ParseError(path, 1, f"expected header {','.join(MEASUREMENT_COLUMNS)}")
        last_k = 0
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MEASUREMENT_COLUMNS):
                raise ParseError(path, line, f"expected {len(MEASUREMENT_COLUMNS)} fields, got {len(row)}")
            try:
                k = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError as e:
                raise ParseError(path, line, str(e)) from None
            if k <= last_k:
                raise ParseError(path, line, f"instant k={k} is not after k={last_k}")
            try:
                rows.append(DoaMeasurement(k, vals[0:3], vals[3:6], vals[6:8]))
            except ValueError as e:
                raise ParseError(path, line, str(e)) from None
            last_k = k
    if not rows:
        raise ParseError(path, 2, "no measurements")
    return MeasurementSet(rows)


# -- configs ------------------------------------------------------------------

# config key -> TrajectoryConfig field
_TRAJECTORY_KEYS = {
    "speed_range_mps": "speed_range",
    "measurement_interval_s": "measurement_interval",
    "max_turn_rate_radps": "max_turn_rate",
    "max_climb_rate_mps": "max_climb_rate",
    "initial_positions_m": "initial_positions",
    "K_max": "K_max",
    "seed": "seed",
    "planar_agent_a": "planar_agent_a",
}
_CAMPAIGN_KEYS = {
    "sigma_deg", "K_values", "trials_per_cell", "methods", "truth_sampling",
    "translation_box_m", "seed",
}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _check_keys(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")


def trajectory_config(cfg: dict, seed: int | None = None) -> sim.TrajectoryConfig:
    d = cfg.get("trajectory", {})
    _check_keys("trajectory", d, _TRAJECTORY_KEYS)
    kw = {_TRAJECTORY_KEYS[k]: v for k, v in d.items()}
    if seed is not None:
        kw["seed"] = seed
    try:
        return sim.TrajectoryConfig.from_dict(kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"trajectory: {e}") from None


def campaign_spec(cfg: dict, seed: int | None = None) -> sim.CampaignSpec:
    d = dict(cfg.get("campaign", {}))
    _check_keys("campaign", d, _CAMPAIGN_KEYS)
    if "translation_box_m" in d:
        d["translation_box"] = d.pop("translation_box_m")
    if seed is not None:
        d["seed"] = seed
    try:
        return sim.CampaignSpec.from_dict(d)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"campaign: {e}") from None


def solver_options(cfg: dict) -> SolverOptions:
    try:
        return SolverOptions.from_dict(cfg.get("solver", {}))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"solver: {e}") from None


# -- commands -----------------------------------------------------------------

def _write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, allow_nan=True)
        f.write("\n")


def _write_table(rows: list[dict], path, fmt: str) -> None:
    if fmt == "json":
        _write_json(rows, path)
        return
    with open(path, "w", newline="") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()})


def _load_truth(path) -> FrameTransform:
    try:
        with open(path) as f:
            d = json.load(f)
        return FrameTransform(np.array(d["rotation"]), np.array(d["translation_m"]))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read truth file {path}: {e}") from None


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    opts = solver_options(cfg)
    ms = read_measurements(args.measurements)
    truth = _load_truth(args.truth) if args.truth else None
    rep = estimate(ms, args.method, opts, truth)
    out = rep.to_dict()
    out["diagnostics"].pop("cost_trace", None) if not args.trace else None
    if args.format == "csv":
        row = {"method": rep.method.value}
        row.update({f"r{i + 1}{j + 1}": _fmt(rep.r_bar[i, j]) for i in range(3) for j in range(3)})
        row.update({f"t{i + 1}_m": _fmt(rep.t_bar[i]) for i in range(3)})
        if rep.rotation_error is not None:
            row["rotation_error_rad"] = _fmt(rep.rotation_error)
            row["position_error_m"] = _fmt(rep.position_error)
        text = ",".join(row) + "\n" + ",".join(row.values()) + "\n"
    else:
        text = json.dumps(out, indent=2) + "\n"
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        Path(args.out_dir, f"estimate.{args.format}").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    _check_keys("config", cfg, {"trajectory", "noise", "truth"})
    seed = args.seed if args.seed is not None else cfg.get("trajectory", {}).get("seed", 0)
    tcfg = trajectory_config(cfg, seed)
    noise = cfg.get("noise", {})
    _check_keys("noise", noise, {"sigma_deg", "seed"})
    truth_cfg = cfg.get("truth", {})
    _check_keys("truth", truth_cfg, {"translation_box_m"})
    sigma_deg = noise.get("sigma_deg", 0.0)
    if not isinstance(sigma_deg, (int, float)) or sigma_deg < 0:
        raise ConfigError("noise.sigma_deg must be a non-negative number")
    noise_seed = noise.get("seed", seed)
    sc = sim.random_scenario(tcfg, tcfg.seed, noise_seed, truth_cfg.get("translation_box_m", 500.0))
    sigma = float(np.radians(sigma_deg))
    ms = sc.observe(sigma)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_measurements(ms, out / "measurements.csv")
    _write_json({
        "rotation": sc.truth.rotation.tolist(),
        "translation_m": sc.truth.translation.tolist(),
        "pos_a_global_m": sc.pos_a_global.tolist(),
        "pos_b_global_m": sc.pos_b_global.tolist(),
        "sigma_deg": sigma_deg,
        "noise_seed": noise_seed,
        "noise_rad": (sigma * sc.noise()).tolist(),
        "noiseless_angles_rad": sc.measurements.angles.tolist(),
        "trajectory_seed": tcfg.seed,
        "mean_distance_m": sc.mean_distance(),
    }, out / "truth.json")
    return EXIT_OK


def cmd_campaign(args) -> int:
    cfg = load_config(args.config)
    _check_keys("config", cfg, {"trajectory", "campaign", "solver", "n_jobs"})
    spec = campaign_spec(cfg, args.seed)
    tcfg = trajectory_config(cfg)
    opts = solver_options(cfg)
    n_jobs = args.jobs if args.jobs is not None else cfg.get("n_jobs", 1)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    result = sim.CampaignResult(spec)
    interrupted = False
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULT_COLUMNS)

        def on_trial(_t, recs):
            for r in recs:
                w.writerow([_fmt(np.degrees(r.sigma)), r.K, r.method, r.trial,
                            _fmt(r.rotation_error), _fmt(r.position_error), r.status])
            f.flush()
            result.records.extend(recs)

        try:
            sim.run_campaign(spec, tcfg, opts, n_jobs=n_jobs, on_trial=on_trial)
        except KeyboardInterrupt:
            interrupted = True
            log.warning("interrupted after %d completed trials", result.trials_completed)
    ext = args.format
    _write_table(sim.table_vs_K(result, "rotation"), out / f"fig2_rotation_vs_K.{ext}", ext)
    _write_table(sim.table_vs_K(result, "position"), out / f"fig3_position_vs_K.{ext}", ext)
    _write_table(sim.table_vs_sigma(result), out / f"fig4_rotation_vs_sigma.{ext}", ext)
    cells = result.cells()
    _write_json({
        "completed_trials": result.trials_completed,
        "requested_trials": spec.trials_per_cell,
        "interrupted": interrupted,
        "distance": result.distance_stats(),
        "cells": [{
            "sigma_deg": float(np.degrees(s)), "K": K, "method": m,
            "median_rotation_error_rad": c.median_rotation_error,
            "median_position_error_m": c.median_position_error,
            "median_rank1_ratio": c.median_rank1_ratio,
            "n_ok": c.n_ok, "n_failed": c.n_failed, "flagged": c.flagged,
        } for (s, K, m), c in cells.items()],
    }, out / "summary.json")
    return EXIT_INTERRUPTED if interrupted else EXIT_OK


def cmd_constraints_check(args) -> int:
    try:
        with open(args.estimate) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read estimate {args.estimate}: {e}") from None
    psi = d.get("diagnostics", {}).get("psi_hat")
    source = "psi_hat"
    if psi is None or args.projected:
        try:
            psi = np.r_[np.ravel(d["r_bar"]), d["t_bar"]]
        except KeyError as e:
            raise ConfigError(f"estimate lacks {e}") from None
        source = "r_bar"
    res = constraint_residuals(np.asarray(psi, dtype=float))
    rows = [{"constraint": f"C{i + 1}", "residual": float(v)} for i, v in enumerate(res)]
    if args.format == "json":
        sys.stdout.write(json.dumps({"source": source, "residuals": rows,
                                     "max_abs": float(np.max(np.abs(res)))}, indent=2) + "\n")
    else:
        sys.stdout.write("constraint,residual\n")
        for r in rows:
            sys.stdout.write(f"{r['constraint']},{_fmt(r['residual'])}\n")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doaloc", description="DOA-based relative frame localisation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt_default="json"):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default=fmt_default)

    s = sub.add_parser("solve", help="estimate the frame transform from a measurement CSV")
    s.add_argument("measurements")
    s.add_argument("--method", choices=[m.value for m in Method], default=Method.SDP_O.value)
    s.add_argument("--truth", help="truth JSON (from simulate) to score the estimate")
    s.add_argument("--trace", action="store_true", help="keep the refinement cost trace")
    common(s)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="write a seeded scenario: measurements.csv + truth.json")
    s.add_argument("--seed", type=int)
    common(s, "csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("campaign", help="run a Monte Carlo campaign and write result tables")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, help="worker processes (overrides config n_jobs)")
    common(s, "csv")
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("constraints-check", help="print rotation-constraint residuals of an estimate")
    s.add_argument("estimate", help="estimate JSON written by solve")
    s.add_argument("--projected", action="store_true", help="check r_bar/t_bar instead of psi_hat")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_constraints_check)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DOA_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, sim.ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NongenericTrajectoryError as e:
        print(str(e), file=sys.stderr)
        return EXIT_NONGENERIC
    except InsufficientMeasurementsError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (SolverError, DegenerateExtractionError) as e:
        print(str(e), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
