"""Command-line entry point: ``rlempc --mode {train,deploy,compare,stability-audit}``."""

import argparse
import csv
import io
import json
import logging
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .audit import stability_audit
from .config import MODES, ConfigError, config_hash, load_config, parse_config, serialize_config
from .ddpg import load_actor, save_actor
from .metrics import REFERENCE_IMPROVEMENT, _jsonable, improvement_table
from .orchestrator import FrozenEstimator, OracleEstimator, PolicyEstimator, compare, deploy, train

log = logging.getLogger("rlempc")

OUT_ENV = "RLEMPC_OUT"


class WeightsNotFound(FileNotFoundError):
    pass


def header(cfg):
    return {"tool": "rlempc", "version": __version__, "config_hash": config_hash(cfg), "seed": cfg.run.seed,
            "mode": cfg.run.mode}


def _write(path, text):
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _csv(path, head, columns, rows):
    buf = io.StringIO()
    for k, v in head.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return _write(path, buf.getvalue())


def _json(path, head, payload):
    return _write(path, json.dumps({"header": head, **_jsonable(payload)}, indent=2, sort_keys=True) + "\n")


def _estimator(cfg, scenario):
    kind = cfg.run.estimator
    if kind == "frozen":
        return FrozenEstimator()
    if kind == "oracle":
        return OracleEstimator(scenario)
    return PolicyEstimator(_load_weights(cfg.run.weights))


def _load_weights(path):
    if not path or not Path(path).is_file():
        raise WeightsNotFound(f"weights not found: {path or '(no --weights given)'}")
    actor, _ = load_actor(path)
    return actor


def run_train(cfg, out):
    head = header(cfg)
    training = replace(cfg.training, seed=cfg.run.seed)
    result = train(training, cfg.empc, cfg.agent, cfg.integrator, cfg.model)
    weights = out / "actor.bin"
    save_actor(weights, result.actor, head["config_hash"],
               {"seed": cfg.run.seed, "episodes": training.episodes, "version": __version__})
    curve = result.episode_rewards
    _csv(out / "reward_curve.csv", head, ("episode", "average_reward"),
         [(i + 1, float(r)) for i, r in enumerate(curve)])
    _json(out / "training.json", head, {
        "episodes": len(curve), "aborted": result.aborted, "solves": result.solves,
        "plant_steps": result.plant_steps, "updates": result.updates, "slope": result.slope(),
        "first_50_mean": float(np.nanmean(curve[:50])), "last_50_mean": float(np.nanmean(curve[-50:])),
    })
    plotting.reward_curve(curve, out / "reward_curve.png")
    return {"weights": str(weights)}


def _trajectory_outputs(out, stem, head, res, title):
    _write(out / f"{stem}.csv", res.trajectory.to_csv(head))
    plotting.trajectory(res.trajectory, out / f"{stem}.png", title)


def run_deploy(cfg, out):
    head = header(cfg)
    res = deploy(_estimator(cfg, cfg.scenario), cfg.scenario, cfg.empc, cfg.integrator, agent_cfg=cfg.agent,
                 constants=cfg.model, seed=cfg.run.seed)
    _trajectory_outputs(out, "trajectory", head, res, f"{cfg.scenario.name}, {cfg.run.estimator} estimate")
    _json(out / "metrics.json", head, {
        "estimator": cfg.run.estimator, "scenario": cfg.scenario.name, **res.metrics.to_dict(),
        "solver_failures": res.solver_failures,
    })
    return {"yield": res.metrics.yield_total}


def run_compare(cfg, out):
    head = header(cfg)
    actor = _load_weights(cfg.run.weights)
    runs = compare(actor, cfg.scenario, cfg.empc, cfg.integrator, seed=cfg.run.seed, agent_cfg=cfg.agent,
                   constants=cfg.model)
    for name, res in runs.items():
        _trajectory_outputs(out, f"trajectory_{name}", head, res, f"{cfg.scenario.name}, {name}")
    rows = improvement_table(runs["empc_only"].metrics, runs["empc_rl"].metrics, runs["oracle"].metrics)
    cols = ("step", "yield_empc", "yield_rl", "yield_oracle", "improvement_pct", "empc_rel_oracle_pct",
            "rl_rel_oracle_pct", "reported_improvement_pct")
    _csv(out / "improvement.csv", head, cols, [
        (r.step, r.yield_empc, r.yield_rl, r.yield_oracle, r.improvement_pct, r.empc_rel_oracle, r.rl_rel_oracle,
         REFERENCE_IMPROVEMENT[r.step] if cfg.scenario.deactivation and r.step < len(REFERENCE_IMPROVEMENT)
         else "")
        for r in rows
    ])
    _json(out / "metrics.json", head, {name: res.metrics.to_dict() for name, res in runs.items()})
    plotting.comparison({k: v.trajectory for k, v in runs.items()}, out / "comparison.png")
    plotting.improvement(rows, out / "improvement.png",
                         REFERENCE_IMPROVEMENT if cfg.scenario.deactivation else None)
    return {"improvement": [r.improvement_pct for r in rows]}


def run_audit(cfg, out):
    head = header(cfg)
    est = None
    if cfg.run.weights:
        est = PolicyEstimator(_load_weights(cfg.run.weights))
    scenario = cfg.scenario
    report = stability_audit(cfg.stability, cfg.empc, cfg.integrator, scenario, est, cfg.run.seed, cfg.model,
                             periods=int(round(scenario.t_final / cfg.empc.sampling_period)))
    _json(out / "certificate.json", head, report.certificate)
    _json(out / "stability_report.json", head, report.to_dict())
    times = np.arange(len(report.v_trace)) * cfg.empc.sampling_period
    _csv(out / "lyapunov_trace.csv", head, ("time", "V", "rho", "rho_e"),
         [(t, v, report.certificate["rho"], report.certificate["rho_e"]) for t, v in zip(times, report.v_trace)])
    plotting.lyapunov(times, report.v_trace, report.certificate["rho"], report.certificate["rho_e"],
                      out / "lyapunov.png")
    return {"passed": report.passed}


RUNNERS = {"train": run_train, "deploy": run_deploy, "compare": run_compare, "stability-audit": run_audit}


def run(cfg, out_dir=None):
    """Execute one run; returns a summary dict.  Writes the effective config first."""
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    _write(out / "config.ini", f"# config_hash: {config_hash(cfg)}\n# version: {__version__}\n"
           + serialize_config(cfg))
    return RUNNERS[cfg.run.mode](cfg, out)


def build_parser():
    p = argparse.ArgumentParser(prog="rlempc", description=__doc__)
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    p.add_argument("--weights", help="actor weight file")
    p.add_argument("--estimator", choices=("trained", "frozen", "oracle"))
    p.add_argument("--version", action="version", version=f"rlempc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args, environ=None):
    """Config file plus command-line and environment overrides."""
    environ = os.environ if environ is None else environ
    cfg = load_config(args.config) if args.config else parse_config("")
    run_over = {}
    if args.mode:
        run_over["mode"] = args.mode
    if args.seed is not None:
        run_over["seed"] = args.seed
    if args.weights:
        run_over["weights"] = args.weights
    if args.estimator:
        run_over["estimator"] = args.estimator
    if environ.get(OUT_ENV):
        run_over["out_dir"] = environ[OUT_ENV]
    if args.out:
        run_over["out_dir"] = args.out
    try:
        return replace(cfg, run=replace(cfg.run, **run_over))
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        cfg = resolve(args)
        summary = run(cfg)
    except (ConfigError, WeightsNotFound, FileNotFoundError) as exc:
        _report_error(exc, cfg)
        return 2
    except Exception as exc:  # structured report for any module failure
        _report_error(exc, cfg, tb=True)
        return 1
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


def _report_error(exc, cfg, tb=False):
    """JSON error on stderr, mirrored to ``error.json`` once the output directory is known."""
    report = {"error": type(exc).__name__, "message": str(exc), "version": __version__}
    if tb:
        report["traceback"] = traceback.format_exc()
    text = json.dumps(report, indent=2)
    print(text, file=sys.stderr)
    if cfg is not None:
        out = Path(cfg.run.out_dir)
        if out.is_dir():
            _write(out / "error.json", text + "\n")


if __name__ == "__main__":
    sys.exit(main())
