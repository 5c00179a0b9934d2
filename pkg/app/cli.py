"""Command-line entry point: python -m app <command>."""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from . import crud, harness
from .data import load_default_iris
from .database import init_db
from .errors import QShardError
from .models import ExperimentConfig, NoiseGeneration, RunArtifact

logger = logging.getLogger(__name__)

LOG_LEVEL = os.environ.get("QSHARD_LOG_LEVEL", "INFO")
FULL_REPETITIONS = 100

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


# ============ Config ============

def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    data = json.loads(Path(path).read_text()) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {
        "name": args.name,
        "nodes": args.nodes,
        "shots": args.shots,
        "threshold": args.threshold,
        "repetitions": FULL_REPETITIONS if args.full else args.repetitions,
        "seed": args.seed,
        "max_iterations": args.max_iterations,
        "iris_path": args.iris,
        "workers": args.workers,
    }
    if args.analytic:
        overrides["shots"] = None
    if args.alternate:
        overrides["alternate"] = True
    if args.mu is not None:
        overrides["noise"] = {"generation": NoiseGeneration.gaussian.value, "mu": args.mu}
    return overrides


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config, _overrides(args))
    if args.analytic:
        config = config.model_copy(update={"shots": None})
    return config


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--name")
    parser.add_argument("--nodes", type=int)
    parser.add_argument("--mu", type=float, help="Gaussian noise mean")
    parser.add_argument("--shots", type=int)
    parser.add_argument("--analytic", action="store_true", help="exact expectations instead of shots")
    parser.add_argument("--threshold", type=float, help="enable gradient compression")
    parser.add_argument("--alternate", action="store_true", help="cyclic group-to-node schedule")
    parser.add_argument("--repetitions", type=int)
    parser.add_argument("--full", action="store_true", help=f"{FULL_REPETITIONS} repetitions")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-iterations", type=int)
    parser.add_argument("--iris", help="Iris CSV (default: IRIS_PATH or the bundled copy)")
    parser.add_argument("--workers", type=int, help="processes for independent repetitions")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--formats", nargs="+", default=["csv", "json"], choices=["csv", "json", "xlsx"])
    parser.add_argument("--save", action="store_true", help="store artifacts in the sqlite database")


# ============ Commands ============

def _persist(artifacts: Sequence[RunArtifact], args: argparse.Namespace) -> None:
    if not args.save:
        return
    init_db()
    for artifact in artifacts:
        crud.save_artifact(artifact)
    logger.info("artifacts_saved count=%d", len(artifacts))


def _exit_code(artifacts: Sequence[RunArtifact]) -> int:
    """1 if any run errored, 2 if a run stopped at the cap without converging, else 0."""
    runs = [(artifact.config, run) for artifact in artifacts for run in artifact.runs]
    if any(run.error is not None for _, run in runs):
        return EXIT_ERROR
    if any(not run.converged and not config.run_to_cap for config, run in runs):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _sweep_output(result: dict, args: argparse.Namespace, filename: str) -> int:
    out = Path(args.out or harness.RESULTS_DIR)
    path = harness.emit_table(result["rows"], out / filename)
    for artifact in result["artifacts"]:
        harness.emit_results(artifact, out / artifact.config_hash[:12], args.formats)
    _persist(result["artifacts"], args)
    extra = {k: v for k, v in result.items() if k not in ("rows", "artifacts")}
    print(json.dumps({"table": str(path), "rows": result["rows"], **extra}, indent=2, default=str))
    return _exit_code(result["artifacts"])


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    artifact = harness.run_experiment(config)
    harness.emit_results(artifact, args.out, args.formats)
    _persist([artifact], args)
    print(json.dumps(artifact.summary, indent=2))
    return _exit_code([artifact])


def cmd_sweep_noise(args: argparse.Namespace) -> int:
    result = harness.sweep_noise(_config(args), args.node_counts, args.mus)
    return _sweep_output(result, args, "sweep_noise.csv")


def cmd_sweep_differ(args: argparse.Namespace) -> int:
    result = harness.sweep_differ(_config(args), args.differs, args.instances, args.sweep_nodes)
    return _sweep_output(result, args, "sweep_differ.csv")


def cmd_sweep_threshold(args: argparse.Namespace) -> int:
    base = _config(args)
    if args.table:
        result = harness.table_compression(base, args.node_counts, args.mus, args.thresholds)
        return _sweep_output(result, args, "table_compression.csv")
    result = harness.sweep_threshold(base, args.thresholds, args.sweep_nodes, args.mu_value)
    return _sweep_output(result, args, "sweep_threshold.csv")


def cmd_report(args: argparse.Namespace) -> int:
    artifacts = [harness.load_summary(p) for p in args.paths]
    if args.db:
        init_db()
        artifacts += [crud.get_artifact(a["config_hash"]) for a in crud.list_artifacts(limit=500)]
    rows = harness.compression_rows(artifacts) if args.table else harness.report_rows(artifacts)
    if args.out:
        harness.emit_table(rows, args.out)
    print(json.dumps(rows, indent=2, default=str))
    return EXIT_OK


def _grid(values: Sequence[str]) -> List[tuple]:
    grid = []
    for value in values:
        t, p1, k = value.split(":")
        grid.append((int(t), float(p1), int(k)))
    return grid


def cmd_check_bound(args: argparse.Namespace) -> int:
    result = harness.check_bound(_config(args), _grid(args.grid))
    return _sweep_output(result, args, "check_bound.csv")


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .main import app
    from .routes.server import attach_server
    from .runtime import ParameterServer, RunContext

    config = _config(args)
    context = RunContext.build(config, load_default_iris(config.iris_path), args.repetition)
    server = ParameterServer(context)

    def finished(result):
        artifact = RunArtifact(config_hash=config.config_hash(), config=config, runs=[result])
        artifact.summary = harness.summarize(config, [result])
        harness.emit_results(artifact, args.out, args.formats)
        init_db()
        crud.save_artifact(artifact)
        logger.info("served_run_finished converged=%s iterations=%d", result.converged, result.iterations)

    attach_server(app, server, finished)
    uvicorn.run(app, host=args.host, port=args.port, log_level=LOG_LEVEL.lower())
    return EXIT_OK


def cmd_worker(args: argparse.Namespace) -> int:
    from .runtime import RunContext
    from .transport import RemoteWorker

    config = _config(args)
    context = RunContext.build(config, load_default_iris(config.iris_path), args.repetition)
    RemoteWorker(context.worker(args.node), args.url, poll_interval=args.poll).run()
    return EXIT_OK


# ============ Parser ============

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qshard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the configured repetitions")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-noise", help="iterations and speed-up per (M, mu)")
    _add_config_flags(p)
    p.add_argument("--node-counts", type=int, nargs="+", default=list(harness.DEFAULT_NODES))
    p.add_argument("--mus", type=float, nargs="+", default=list(harness.DEFAULT_MUS))
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("sweep-differ", help="speed-up against noise heterogeneity")
    _add_config_flags(p)
    p.add_argument("--differs", type=float, nargs="+", default=list(harness.DEFAULT_DIFFERS))
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--sweep-nodes", type=int, default=4)
    p.set_defaults(func=cmd_sweep_differ)

    p = sub.add_parser("sweep-threshold", help="compression ratio against threshold")
    _add_config_flags(p)
    p.add_argument("--thresholds", type=float, nargs="+", default=list(harness.DEFAULT_THRESHOLDS))
    p.add_argument("--sweep-nodes", type=int, default=4)
    p.add_argument("--mu-value", type=float, default=0.016)
    p.add_argument("--table", action="store_true", help="with/without compression table instead")
    p.add_argument("--node-counts", type=int, nargs="+", default=list(harness.TABLE_NODES))
    p.add_argument("--mus", type=float, nargs="+", default=list(harness.TABLE_MUS))
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("report", help="tabulate stored artifacts")
    p.add_argument("paths", nargs="*", help="summary.json files")
    p.add_argument("--db", action="store_true", help="include every artifact in the database")
    p.add_argument("--table", action="store_true", help="compression table rows")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check-bound", help="observed R1 against its upper bound")
    _add_config_flags(p)
    p.add_argument("--grid", nargs="+", default=["100:0.01:8192", "200:0.01:1024"],
                   help="T:p1:shots triples; p1 = 0 rows are marked noise_free")
    p.set_defaults(func=cmd_check_bound)

    p = sub.add_parser("serve", help="parameter server over HTTP")
    _add_config_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--repetition", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("worker", help="remote worker for a served run")
    _add_config_flags(p)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--url", default="http://127.0.0.1:8000")
    p.add_argument("--repetition", type=int, default=0)
    p.add_argument("--poll", type=float, default=0.05)
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (QShardError, ValidationError, FileNotFoundError, ValueError) as e:
        logger.error("command_failed command=%s error=%s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
