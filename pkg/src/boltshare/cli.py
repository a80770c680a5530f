"""Command-line pipeline: simulate, gen-data, train, search, optimize, verify, gauge.

Every run writes a JSON manifest recording inputs, outputs (with sha256),
seeds and wall time. Failures print one JSON object on stderr and exit with a
code that identifies the failure class (see ``EXIT_CODES``).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .gauge import GaugeReadings, load_ratios
from .joint import BoltParams, JointConfig, load_config
from .network import RampConfig, TargetLoadNotReached, distribution_at_load, run
from .optimize import (
    DesignSpace,
    GAConfig,
    PSOConfig,
    SolverBackend,
    SurrogateBackend,
    ga_optimize,
    grid_search,
    pso_optimize,
    verify_candidate,
)
from .surrogate import (
    Dataset,
    MLPModel,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    generate_dataset,
    rejected_path_for,
    train,
)

log = logging.getLogger("boltshare")

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "missing_file": 3,
    "schema": 4,
    "target_not_reached": 5,
    "invalid_value": 6,
    "diverged": 7,
}
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_CONFIG = "builtin:reference_joint.json"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so errors come out as JSON."""

    def error(self, message):
        raise UsageError(message)


def _floats(n: int | None = None):
    def parse(text: str) -> list[float]:
        try:
            values = [float(v) for v in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
        if n is not None and len(values) != n:
            raise argparse.ArgumentTypeError(f"expected {n} values, got {len(values)}")
        return values

    return parse


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: str | None = None
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256(path)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _load_joint(args, manifest: RunManifest) -> JointConfig:
    if args.config == DEFAULT_CONFIG:
        text = resources.files("boltshare").joinpath("data", "reference_joint.json").read_text()
        manifest.config = DEFAULT_CONFIG
        return JointConfig.from_dict(json.loads(text))
    if not Path(args.config).is_file():
        raise FileNotFoundError(args.config)
    manifest.config = str(args.config)
    manifest.add_input(args.config)
    return load_config(args.config)


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return path


def _ramp(args) -> RampConfig:
    return RampConfig(increment=args.increment, total=args.total, mode=args.mode)


def _params(args) -> BoltParams:
    return BoltParams(tuple(args.bhc), tuple(args.torque))


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args, manifest: RunManifest) -> dict:
    cfg = _load_joint(args, manifest)
    params = _params(args)
    history = run(cfg, params, _ramp(args))
    history.to_csv(args.out)
    manifest.add_output(args.out)
    if args.figure:
        from .plotting import plot_load_history

        plot_load_history(history, args.figure, args.target)
        manifest.add_output(args.figure)
    result = distribution_at_load(history, args.target)
    summary = {"bhc_mm": list(params.clearances), "torque_Nm": list(params.torques), **result.to_dict()}
    summary_path = args.summary or Path(args.out).with_suffix(".summary.json")
    _write_json(summary_path, summary)
    manifest.add_output(summary_path)
    return summary


def cmd_verify(args, manifest: RunManifest) -> dict:
    cfg = _load_joint(args, manifest)
    params = _params(args)
    result = verify_candidate(params, cfg, args.target, _ramp(args))
    out = {"bhc_mm": list(params.clearances), "torque_Nm": list(params.torques), **result.to_dict()}
    if args.out:
        _write_json(args.out, out)
        manifest.add_output(args.out)
    return out


def cmd_gen_data(args, manifest: RunManifest) -> dict:
    cfg = _load_joint(args, manifest)
    manifest.seeds["seed"] = args.seed
    dataset = generate_dataset(cfg, args.n, args.seed, args.target, _ramp(args), args.jobs)
    dataset.to_csv(args.out)
    side = rejected_path_for(args.out)
    dataset.write_rejected(side)
    manifest.add_output(args.out)
    manifest.add_output(side)
    return {"n": len(dataset), "redrawn": len(dataset.rejected), "u_mean": float(dataset.y.mean())}


def cmd_train(args, manifest: RunManifest) -> dict:
    data = _require(args.data)
    side = rejected_path_for(data)
    manifest.add_input(data)
    if side.is_file():
        manifest.add_input(side)
    else:
        log.warning("no %s next to the dataset; the model gets no reachability guard", side.name)
    manifest.seeds["seed"] = args.seed
    dataset = Dataset.from_csv(data, side if side.is_file() else None).split(args.seed)
    config = TrainConfig(max_epochs=args.max_epochs)
    result = train(dataset, config, args.seed)
    result.model.save(args.out)
    manifest.add_output(args.out)
    if args.metrics:
        result.write_metrics(args.metrics)
        manifest.add_output(args.metrics)
    scores = {k: asdict(v) for k, v in evaluate(result.model, dataset).items()}
    if args.figure:
        from .plotting import plot_training

        plot_training(result.history, args.figure)
        manifest.add_output(args.figure)
    if args.parity:
        from .plotting import plot_parity

        X, y = dataset.part("test")
        plot_parity(result.model.predict(X), y, args.parity, scores["test"]["r2"])
        manifest.add_output(args.parity)
    first, last = result.history[0], result.history[-1]
    out = {
        "epochs": last.epoch,
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "initial_train_wmse": first.train_wmse,
        "final_train_wmse": last.train_wmse,
        "metrics": scores,
    }
    if result.model.guard is not None:
        out["reachability_guard"] = {
            "accepted_kept": float(result.model.reachable(dataset.X).mean()),
            "rejected_flagged": float((~result.model.reachable(dataset.rejected)).mean()),
        }
    return out


def _space(args) -> DesignSpace:
    return DesignSpace(
        clearance_levels=tuple(args.clearance_levels) if args.clearance_levels else None,
        torque_levels=tuple(args.torque_levels) if args.torque_levels else None,
    )


def _backend(args, cfg, manifest):
    if args.backend == "surrogate":
        if not args.model:
            raise UsageError("--backend surrogate needs --model")
        manifest.add_input(_require(args.model))
        return SurrogateBackend(MLPModel.load(args.model))
    return SolverBackend(cfg, args.target, _ramp(args), jobs=args.jobs)


def _best_record(x, u_backend, cfg, args) -> dict:
    x = [float(v) for v in x]
    n = len(x) // 2
    out = {"x": x, "bhc_mm": x[:n], "torque_Nm": x[n:], "u_backend": float(u_backend)}
    try:
        exact = verify_candidate(x, cfg, args.target, _ramp(args))
        out.update(u_exact=exact.u, ratios_exact=list(exact.ratios))
    except TargetLoadNotReached as exc:
        log.warning("best candidate does not reach the target load: %s", exc)
        out.update(u_exact=None, ratios_exact=None)
    return out


def cmd_optimize(args, manifest: RunManifest) -> dict:
    cfg = _load_joint(args, manifest)
    backend = _backend(args, cfg, manifest)
    manifest.seeds[args.method] = args.seed
    try:
        if args.method == "grid":
            res = grid_search(_space(args), backend, database=getattr(args, "database", None),
                              chunk_size=getattr(args, "chunk_size", 1 << 18))
            best = _best_record(res.best_x, res.best_u, cfg, args)
            best.update(method="grid", backend=backend.kind, n_patterns=res.n_patterns,
                        n_skipped=res.n_skipped)
            manifest.timings["search_s"] = res.elapsed
            if getattr(args, "database", None):
                manifest.outputs[str(args.database)] = sha256(args.database)
        else:
            if args.method == "ga":
                trace = ga_optimize(_space(args), backend, GAConfig(max_iter=args.max_iter), args.seed)
            else:
                trace = pso_optimize(_space(args), backend, PSOConfig(max_iter=args.max_iter), args.seed)
            if args.out:
                trace.to_csv(args.out)
                manifest.add_output(args.out)
            if args.figure:
                from .plotting import plot_trace

                plot_trace(trace, args.figure)
                manifest.add_output(args.figure)
            best = _best_record(trace.best_x, trace.best_u, cfg, args)
            best.update(method=args.method, backend=backend.kind, seed=args.seed,
                        iterations=trace.rows[-1].iteration, converged=trace.converged,
                        backend_calls=trace.backend_calls)
            manifest.timings["search_s"] = trace.elapsed
    finally:
        backend.close()
    if args.best:
        _write_json(args.best, best)
        manifest.add_output(args.best)
    return best


def cmd_search(args, manifest: RunManifest) -> dict:
    args.method, args.backend, args.seed, args.jobs = "grid", "surrogate", 0, 1
    return cmd_optimize(args, manifest)


def cmd_gauge(args, manifest: RunManifest) -> dict:
    if (args.sigma is None) == (args.csv is None):
        raise UsageError("give exactly one of --sigma or --csv")
    if args.sigma is not None:
        out = {"ratios": load_ratios(GaugeReadings.from_sequence(args.sigma)).tolist()}
    else:
        manifest.add_input(_require(args.csv))
        rows = []
        with open(args.csv, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    values = [float(v) for v in row]
                except ValueError:
                    if not rows:
                        continue  # header line
                    raise
                rows.append(load_ratios(GaugeReadings.from_sequence(values)).tolist())
        out = {"ratios": rows}
    if args.out:
        _write_json(args.out, out)
        manifest.add_output(args.out)
    return out


# -- parser ------------------------------------------------------------------


def _add_joint(p, ramp: bool = True) -> None:
    p.add_argument("--config", default=DEFAULT_CONFIG,
                   help="joint configuration JSON (default: the bundled three-bolt joint)")
    p.add_argument("--target", type=float, default=30000.0, help="target total load [N]")
    if ramp:
        p.add_argument("--increment", type=float, default=0.005, help="displacement step [mm]")
        p.add_argument("--total", type=float, default=3.0, help="maximum applied displacement [mm]")
        p.add_argument("--mode", choices=("substep", "fixed"), default="substep",
                       help="substep lands exactly on knee points; fixed keeps one tangent per step")


def _add_design(p) -> None:
    p.add_argument("--bhc", type=_floats(), required=True, help="clearances [mm], comma-separated")
    p.add_argument("--torque", type=_floats(), required=True, help="torques [N*m], comma-separated")


def _add_grid(p) -> None:
    p.add_argument("--clearance-levels", type=_floats(), help="override the clearance grid levels [mm]")
    p.add_argument("--torque-levels", type=_floats(), help="override the torque grid levels [N*m]")


def build_parser() -> Parser:
    parser = Parser(prog="boltshare", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(p):
        p.add_argument("--manifest", help="run manifest path (default: next to the main output)")

    p = sub.add_parser("simulate", help="load history for one design")
    _add_joint(p)
    _add_design(p)
    p.add_argument("--out", default="history.csv", help="load history CSV")
    p.add_argument("--summary", help="summary JSON (default: <out>.summary.json)")
    p.add_argument("--figure", help="also draw the load history to this PNG")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="exact load ratios and unevenness for one design")
    _add_joint(p)
    _add_design(p)
    p.add_argument("--out", help="result JSON (also printed to stdout)")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-data", help="label random designs with the solver")
    _add_joint(p)
    p.add_argument("--n", type=int, default=1000, help="number of labeled samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data.csv", help="dataset CSV; re-drawn inputs go to <out>.rejected.csv")
    p.add_argument("--jobs", type=int, default=1, help="solver processes")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit the MLP surrogate")
    p.add_argument("--data", required=True, help="dataset CSV from gen-data")
    p.add_argument("--out", default="model.json", help="model JSON")
    p.add_argument("--metrics", help="per-epoch loss CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--figure", help="training curve PNG")
    p.add_argument("--parity", help="test-split parity plot PNG")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="full grid database with the surrogate")
    _add_joint(p)
    _add_grid(p)
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--database", help="stream every (pattern, u) row to this CSV")
    p.add_argument("--chunk-size", type=int, default=1 << 18, help="patterns per evaluation chunk")
    p.add_argument("--best", default="best.json", help="best pattern JSON")
    common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("optimize", help="grid, GA or PSO search")
    _add_joint(p)
    _add_grid(p)
    p.add_argument("--method", choices=("grid", "ga", "pso"), required=True)
    p.add_argument("--backend", choices=("solver", "surrogate"), default="solver")
    p.add_argument("--model", help="model JSON (surrogate backend)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=200, help="iteration cap for GA/PSO")
    p.add_argument("--jobs", type=int, default=1, help="solver processes per population")
    p.add_argument("--out", help="trace CSV (GA/PSO)")
    p.add_argument("--best", default="best.json", help="best design JSON")
    p.add_argument("--figure", help="convergence plot PNG (GA/PSO)")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("gauge", help="bolt load ratios from four gauge stresses")
    p.add_argument("--sigma", type=_floats(4), help="four stresses, loaded end first")
    p.add_argument("--csv", help="batch mode: CSV with four stresses per row")
    p.add_argument("--out", help="result JSON (also printed to stdout)")
    common(p)
    p.set_defaults(func=cmd_gauge)
    return parser


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    main = getattr(args, "best", None) if args.command in ("search", "optimize") else getattr(args, "out", None)
    if main:
        return Path(main).with_suffix(".manifest.json")
    return Path(f"{args.command}.manifest.json")


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None) -> int:
    level = os.environ.get("BOLTSHARE_LOG", "warning").lower()
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(LOG_LEVELS.get(level, logging.WARNING))
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc))

    manifest = RunManifest(subcommand=args.command)
    t0 = time.perf_counter()
    try:
        result = args.func(args, manifest)
    except UsageError as exc:
        return _fail("usage", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", f"no such file: {exc.filename or exc.args[0]}")
    except jsonschema.ValidationError as exc:
        return _fail("schema", exc.message, path=list(exc.absolute_path))
    except json.JSONDecodeError as exc:
        return _fail("schema", f"not valid JSON: {exc}")
    except TargetLoadNotReached as exc:
        return _fail("target_not_reached", str(exc), target_N=exc.target, max_load_N=exc.max_load)
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc))
    except ValueError as exc:
        return _fail("invalid_value", str(exc))
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}")

    manifest.results = result
    manifest.timings["wall_s"] = time.perf_counter() - t0
    manifest.write(_manifest_path(args))
    print(json.dumps(result, default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


if __name__ == "__main__":
    sys.exit(main())
