"""``crossing-lab`` command line.

Each stage reads only the files written by the stage before it::

    simulate   one trial          -> series.csv, metrics.json
    campaign   DoE grid           -> campaign.csv, campaign.meta.json
    fit        campaign.csv       -> surfaces.json, plot/<metric>_hO_<mm>mm.csv
    optimize   surfaces + campaign -> decision.json
    plot-data  surfaces + campaign -> plot/<metric>_hO_<mm>mm.csv
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__
from .campaign import SCHEMA_VERSION as CAMPAIGN_SCHEMA_VERSION
from .campaign import CampaignError, CampaignParseError, load_campaign, run_campaign, save_campaign
from .config import CONFIG_SCHEMA_VERSION, ConfigError, RunConfig, load_config
from .fitting import FitError, fit_report, plot_data_csv, surfaces_from_json, surfaces_to_json
from .scenario import CROSSING_TORQUE_MODES, FAILED, run_trial
from .strategy import StrategyProblem, decision_to_json, optimize

EXIT_OK = 0
EXIT_ERROR = 1  # bad input: missing file, invalid config, schema mismatch
EXIT_USAGE = 2  # argparse
EXIT_STALLED = 3
EXIT_TIPPED = 4
EXIT_REAR_CONTACT = 5
EXIT_FAILED = 6  # diverged or never reached the step
EXIT_INFEASIBLE = 7  # no damping keeps the wheel off its end stops

OUTCOME_EXIT = {
    "cleared": EXIT_OK,
    "rear-flyover": EXIT_OK,
    "stalled": EXIT_STALLED,
    "tipped": EXIT_TIPPED,
    "rear-contact": EXIT_REAR_CONTACT,
    FAILED: EXIT_FAILED,
}

SCHEMAS = (f"file schemas: config v{CONFIG_SCHEMA_VERSION} (TOML), "
           f"campaign CSV + sidecar v{CAMPAIGN_SCHEMA_VERSION}, surfaces JSON v1, "
           "metrics JSON v1, decision JSON v1")

EXIT_HELP = """exit codes:
  0  success (simulate: cleared or rear-flyover)
  1  invalid input (missing file, bad config, schema mismatch, fit error)
  2  usage error
  3  simulate: stalled      4  simulate: tipped
  5  simulate: rear-contact 6  simulate: failed trial
  7  optimize: no feasible damping
"""


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or os.environ.get("CROSSING_LAB_OUT") or cfg.output_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _height(text: str, wheel_radius: float) -> float:
    """Metres, or a percentage of the wheel radius such as ``50%``."""
    try:
        if text.endswith("%"):
            return float(text[:-1]) / 100.0 * wheel_radius
        return float(text)
    except ValueError:
        raise CliError(f"--hO: not a height: {text!r}") from None


def _weights(text: str):
    try:
        w = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"--weights: expected three comma-separated numbers, got {text!r}") from None
    if len(w) != 3:
        raise CliError("--weights: expected three comma-separated numbers")
    return w


def _write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _plot_name(metric: str, hO: float) -> str:
    return f"{metric}_hO_{hO * 1000:.3f}mm.csv"


def _write_plot_data(out: Path, surfaces, campaign):
    plot_dir = out / "plot"
    plot_dir.mkdir(exist_ok=True)
    for s in surfaces:
        _write(plot_dir / _plot_name(s.spec.metric, s.hO), plot_data_csv(s, campaign.records))


# --- subcommands ------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    wr = cfg.vehicle.wheel_radius
    hO = _height(args.hO, wr)
    if not args.cav > 0:
        raise CliError("--cav must be > 0")
    if not 0 < args.vc <= 20:
        raise CliError("--vc must lie in (0, 20] m/s")
    if not 0 <= hO <= 1.5 * wr:
        raise CliError(f"--hO must lie in [0, {1.5 * wr:.4g}] m")
    out = _out_dir(args, cfg)
    solver = cfg.solver
    if args.torque_mode is not None:
        solver = dataclasses.replace(solver, crossing_torque=args.torque_mode)
    res = run_trial(cfg.vehicle, cfg.contact, hO, args.vc, args.cav, settings=solver)
    if res.series is not None:
        _write(out / "series.csv", res.series.to_csv())
    _write(out / "metrics.json", res.to_json() + "\n")
    print(res.to_json())
    outcome = FAILED if res.failed else res.outcome
    return OUTCOME_EXIT.get(outcome, EXIT_FAILED)


def cmd_campaign(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    workers = args.workers if args.workers is not None else cfg.workers
    if workers < 1:
        raise CliError("--workers must be >= 1")
    plan = cfg.doe_plan
    recovery = out / "campaign.recovery.jsonl" if args.resume else None
    try:
        result = run_campaign(plan, cfg.vehicle, cfg.contact, workers=workers,
                              settings=cfg.solver, recovery_path=recovery)
    except CampaignError as exc:
        if exc.partial is not None:
            save_campaign(exc.partial, out / "campaign.partial.csv", cfg.vehicle.wheel_radius)
        raise
    path = save_campaign(result, out / "campaign.csv", cfg.vehicle.wheel_radius)
    print(f"{len(result.records)} trials, {len(result.failures)} failed -> {path}")
    for f in result.failures:
        print(f"failed: hO={f.hO} vc={f.vc} cAV={f.cAV}: {f.diagnostic}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    campaign = load_campaign(args.campaign or out / "campaign.csv")
    report = fit_report(campaign, scaling=cfg.fit.scaling, stroke_limit=cfg.stroke_limit,
                        exclude_flagged=cfg.fit.exclude_flagged)
    surfaces = list(report.surfaces.values())
    _write(out / "surfaces.json", surfaces_to_json(surfaces))
    _write_plot_data(out, surfaces, campaign)
    for s in sorted(surfaces, key=lambda s: (s.spec.metric, s.hO)):
        print(f"{s.spec.metric:10s} hO={s.hO:.5f} m  n={s.n_points:3d}  "
              f"R2={s.r_squared:.4f}  rmse={s.rmse:.4g}")
    if report.flagged:
        print(f"{len(report.flagged)} trials reach the stroke limit"
              + (" (excluded)" if report.excluded else ""))
    for (metric, hO), msg in sorted(report.errors.items()):
        print(f"fit error: {metric} at hO={hO}: {msg}", file=sys.stderr)
    return EXIT_ERROR if report.errors else EXIT_OK


def _query(args, cfg: RunConfig) -> dict:
    q = {}
    if args.query is not None:
        path = Path(args.query)
        if not path.exists():
            raise FileNotFoundError(f"query file not found: {path}")
        try:
            q = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"query: invalid JSON: {exc}") from None
        if not isinstance(q, dict):
            raise CliError("query: expected a JSON object")
        unknown = set(q) - {"hO_m", "vc_mps", "weights", "detection_distance_m"}
        if unknown:
            raise CliError(f"query.{sorted(unknown)[0]}: unknown field")
    if args.hO is not None:
        q["hO_m"] = _height(args.hO, cfg.vehicle.wheel_radius)
    if args.vc is not None:
        q["vc_mps"] = args.vc
    if args.weights is not None:
        q["weights"] = list(_weights(args.weights))
    for key in ("hO_m", "vc_mps"):
        if key not in q:
            raise CliError(f"query.{key}: required (query file or --hO/--vc)")
    return q


def cmd_optimize(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    q = _query(args, cfg)
    surfaces = surfaces_from_json(Path(args.surfaces or out / "surfaces.json"))
    campaign = load_campaign(args.campaign or out / "campaign.csv")
    st = cfg.strategy
    try:
        problem = StrategyProblem(
            surfaces, hO=float(q["hO_m"]), vc=float(q["vc_mps"]),
            cAV_bounds=st.cAV_bounds, torque_bounds=cfg.vehicle.torque_limits,
            stroke_limit=cfg.stroke_limit, weights=tuple(q.get("weights", st.weights)),
            detection_distance=float(q.get("detection_distance_m", st.detection_distance)),
            grid_points=st.grid_points)
    except (TypeError, ValueError) as exc:
        raise CliError(f"query: {exc}") from None
    decision = optimize(problem, campaign)
    text = decision_to_json(decision)
    _write(out / "decision.json", text)
    print(text, end="")
    print(f"decision latency {decision.decision_latency * 1e3:.3f} ms, "
          f"budget {decision.time_budget * 1e3:.1f} ms", file=sys.stderr)
    return EXIT_OK if decision.feasible else EXIT_INFEASIBLE


def cmd_plot_data(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    surfaces = surfaces_from_json(Path(args.surfaces or out / "surfaces.json"))
    campaign = load_campaign(args.campaign or out / "campaign.csv")
    _write_plot_data(out, surfaces, campaign)
    print(f"{len(surfaces)} plot-data files -> {out / 'plot'}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration (defaults if omitted)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (overrides $CROSSING_LAB_OUT and paths.output_dir)")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; every stage is deterministic and ignores it")

    parser = argparse.ArgumentParser(
        prog="crossing-lab", formatter_class=fmt,
        description="Step-obstacle crossing simulation, response surfaces and damping choice.",
        epilog=SCHEMAS + "\n\n" + EXIT_HELP)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           formatter_class=fmt, epilog=SCHEMAS + "\n\n" + EXIT_HELP)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "run one crossing; writes series.csv and metrics.json")
    p.add_argument("--hO", required=True, help="step height in m, or percent of wheel radius ('50%%')")
    p.add_argument("--vc", type=float, required=True, help="approach speed, m/s")
    p.add_argument("--cav", type=float, required=True, help="front longitudinal damping, N s/m")
    p.add_argument("--torque-mode", choices=CROSSING_TORQUE_MODES, default=None,
                   help="drive torque after first contact (default from config)")

    p = add("campaign", cmd_campaign, "run the DoE grid; writes campaign.csv and campaign.meta.json")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default solver.workers)")
    p.add_argument("--resume", action="store_true",
                   help="checkpoint to campaign.recovery.jsonl and skip trials already there")

    p = add("fit", cmd_fit, "fit response surfaces; writes surfaces.json and plot/*.csv")
    p.add_argument("campaign", nargs="?", help="campaign CSV (default OUT/campaign.csv)")

    p = add("optimize", cmd_optimize, "choose the damping for one obstacle; writes decision.json")
    p.add_argument("--query", metavar="JSON",
                   help="file with {hO_m, vc_mps, weights, detection_distance_m}")
    p.add_argument("--hO", default=None, help="step height in m or percent of wheel radius")
    p.add_argument("--vc", type=float, default=None, help="approach speed, m/s")
    p.add_argument("--weights", default=None, help="w_E,w_pitch,w_CDWO (default from config)")
    p.add_argument("--surfaces", metavar="PATH", help="surfaces JSON (default OUT/surfaces.json)")
    p.add_argument("--campaign", metavar="PATH", help="campaign CSV (default OUT/campaign.csv)")

    p = add("plot-data", cmd_plot_data, "write gridded (vc, cAV, predicted, observed) CSVs")
    p.add_argument("--surfaces", metavar="PATH", help="surfaces JSON (default OUT/surfaces.json)")
    p.add_argument("--campaign", metavar="PATH", help="campaign CSV (default OUT/campaign.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg = str(exc) if "not found" in str(exc) else f"file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
    except (ConfigError, CampaignParseError, FitError, CliError, CampaignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
