"""Experiment driver: repetitions, sweeps, summaries and result files."""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import kendalltau

from .compression import compression_ratio
from .data import TRAIN_FRACTION, Dataset, load_default_iris
from .engine import merged_depolarizing_prob
from .models import (
    SCHEMA_VERSION, ExperimentConfig, NoiseGeneration, NoiseMode, NoiseSpec,
    OptimizerKind, RunArtifact, RunResult,
)
from .noise_lab import differ_metric
from .runtime import train
from .theory import TheoryParams, descent_bound, ideal_speedup, r1_iteration_mean, r1_metric, r1_upper_bound

logger = logging.getLogger(__name__)

# Output location - use RESULTS_DIR env var, fallback to local ./results
RESULTS_DIR = os.environ.get("RESULTS_DIR", str(Path(__file__).parent.parent / "results"))

D_DEFAULT = 8
HISTORY_COLUMNS = [
    "run", "iteration", "loss", "train_acc", "test_acc", "grad_norm", "exact_grad_sq",
    "transmitted_components", "circuits",
]
RUN_EXCLUDE = {"elapsed_seconds"}

DEFAULT_NODES = (1, 2, 4, 8)
DEFAULT_MUS = (0.0, 0.01, 0.03, 0.05)
DEFAULT_DIFFERS = (0.0, 0.3, 0.6)
DEFAULT_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(8))
TABLE_MUS = (0.016, 0.064)
TABLE_NODES = (2, 4, 8)
TABLE_THRESHOLDS = (0.1, 0.5)


# ============ Repetitions ============

def _run_one(args: Tuple[ExperimentConfig, Dataset, int]) -> RunResult:
    config, dataset, repetition = args
    try:
        return train(config, dataset, repetition)
    except Exception as e:
        logger.error("run_failed name=%s run=%d error=%s", config.name, repetition, e)
        return RunResult(run=repetition, seed=config.seed, error=f"{type(e).__name__}: {e}")


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> RunArtifact:
    """Run every repetition of `config`; failed runs are recorded, not raised."""
    if dataset is None:
        dataset = load_default_iris(config.iris_path)
    tasks = [(config, dataset, rep) for rep in range(config.repetitions)]
    logger.info("experiment_started name=%s nodes=%d repetitions=%d workers=%d",
                config.name, config.nodes, config.repetitions, config.workers)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            runs = list(executor.map(_run_one, tasks))
    else:
        runs = [_run_one(task) for task in tasks]

    artifact = RunArtifact(config_hash=config.config_hash(), config=config, runs=runs)
    artifact.summary = summarize(config, runs)
    logger.info("experiment_finished name=%s converged=%d/%d mean_iterations=%s",
                config.name, artifact.summary["converged"], len(runs), artifact.summary["mean_iterations"])
    return artifact


def _stats(values: Sequence[float]) -> Dict[str, Optional[float]]:
    if len(values) == 0:
        return {"mean": None, "std": None, "min": None, "q1": None, "median": None, "q3": None, "max": None}
    arr = np.asarray(values, dtype=np.float64)
    q1, median, q3 = np.percentile(arr, [25, 50, 75])
    return {
        "mean": float(arr.mean()), "std": float(arr.std()), "min": float(arr.min()),
        "q1": float(q1), "median": float(median), "q3": float(q3), "max": float(arr.max()),
    }


def summarize(config: ExperimentConfig, runs: Sequence[RunResult]) -> dict:
    ok = [r for r in runs if r.error is None]
    converged = [r for r in ok if r.converged]
    iterations = _stats([r.iterations for r in converged])
    d = len(ok[0].final_theta) if ok and ok[0].final_theta else D_DEFAULT
    summary = {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "nodes": config.nodes,
        "runs": len(runs),
        "failed": len(runs) - len(ok),
        "converged": len(converged),
        "mean_iterations": iterations["mean"],
        "iterations": iterations,
        "mean_transmitted": float(np.mean([r.ledger.transmitted for r in ok])) if ok else None,
        "mean_circuits": float(np.mean([r.ledger.circuits for r in ok])) if ok else None,
        "mean_wall_circuits": float(np.mean([r.ledger.wall_circuits for r in ok])) if ok else None,
        "mean_train_accuracy": float(np.mean([r.train_accuracy for r in ok])) if ok else None,
        "mean_test_accuracy": float(np.mean([r.test_accuracy for r in ok])) if ok else None,
        "normalized_features": config.normalize_features,
    }
    if config.compressed and ok:
        summary["volume_ratio"] = float(np.mean([
            compression_ratio(r.ledger, r.ledger.uncompressed_volume(d)) for r in ok if r.ledger.iterations
        ]))
        summary["residual_handoffs"] = int(sum(r.ledger.residual_handoffs for r in ok))
    gradients = [r.final_gradient for r in ok if r.final_gradient is not None]
    if gradients:
        summary["r1"] = r1_metric(gradients)
    tracked = [[row.exact_grad_sq for row in r.history if row.exact_grad_sq is not None] for r in ok]
    if any(tracked):
        summary["r1_mean"] = r1_iteration_mean(tracked)
    differs = [differ_metric(r.noise) for r in ok if r.noise and sum(r.noise.p1_values) > 0]
    if differs:
        summary["mean_differ"] = float(np.mean(differs))
    constructions = {r.noise.construction for r in ok if r.noise and r.noise.construction}
    if constructions:
        summary["noise_construction"] = sorted(constructions)
    return summary


# ============ Speed-up ============

def speedup_summary(baseline: RunArtifact, parallel: RunArtifact, d: int = D_DEFAULT) -> dict:
    """Speed-up of `parallel` over the single-node `baseline`, from mean iteration counts."""
    nodes = parallel.config.nodes
    n1 = baseline.summary.get("mean_iterations")
    nm = parallel.summary.get("mean_iterations")
    result = {"ideal_speedup": ideal_speedup(d, nodes), "mean_speedup": None, "run_speedups": []}
    if n1 and nm:
        result["mean_speedup"] = (1 + 2 * d) * n1 / ((1 + 2 * d / nodes) * nm)
    paired = []
    for single, multi in zip(baseline.runs, parallel.runs):
        if single.converged and multi.converged and single.iterations and multi.iterations:
            paired.append((1 + 2 * d) * single.iterations / ((1 + 2 * d / nodes) * multi.iterations))
    result["run_speedups"] = paired
    w1, wm = baseline.summary.get("mean_wall_circuits"), parallel.summary.get("mean_wall_circuits")
    result["wall_proxy_speedup"] = w1 / wm if w1 and wm else None
    return result


class ArtifactCache:
    """Memoizes experiments within a sweep so shared baselines run once."""

    def __init__(self, dataset: Optional[Dataset] = None):
        self.dataset = dataset
        self._artifacts: Dict[str, RunArtifact] = {}

    def run(self, config: ExperimentConfig) -> RunArtifact:
        key = config.config_hash()
        if key not in self._artifacts:
            if self.dataset is None:
                self.dataset = load_default_iris(config.iris_path)
            self._artifacts[key] = run_experiment(config, self.dataset)
        return self._artifacts[key]

    @property
    def artifacts(self) -> List[RunArtifact]:
        return list(self._artifacts.values())


def _variant(base: ExperimentConfig, **changes) -> ExperimentConfig:
    return ExperimentConfig.model_validate({**base.model_dump(), **changes})


def _gaussian(mu: float) -> dict:
    return NoiseSpec(generation=NoiseGeneration.gaussian, mu=mu).model_dump()


# ============ Sweeps ============

def sweep_noise(
    base: ExperimentConfig,
    nodes: Iterable[int] = DEFAULT_NODES,
    mus: Iterable[float] = DEFAULT_MUS,
    dataset: Optional[Dataset] = None,
) -> dict:
    """Iterations and speed-up per (M, mu); Kendall tau of mean iterations against mu per M."""
    cache = ArtifactCache(dataset)
    nodes, mus = list(nodes), list(mus)
    rows = []
    for mu in mus:
        baseline = cache.run(_variant(base, name=f"{base.name}-M1-mu{mu}", nodes=1, noise=_gaussian(mu),
                                      alternate=False))
        for m in nodes:
            artifact = cache.run(_variant(base, name=f"{base.name}-M{m}-mu{mu}", nodes=m, noise=_gaussian(mu)))
            speed = speedup_summary(baseline, artifact)
            rows.append({
                "nodes": m, "mu": mu,
                **{f"iterations_{k}": v for k, v in artifact.summary["iterations"].items()},
                "converged": artifact.summary["converged"],
                "mean_speedup": speed["mean_speedup"],
                "ideal_speedup": speed["ideal_speedup"],
                "wall_proxy_speedup": speed["wall_proxy_speedup"],
            })

    trend = {}
    for m in nodes:
        series = [(r["mu"], r["iterations_mean"]) for r in rows if r["nodes"] == m and r["iterations_mean"] is not None]
        if len(series) >= 2:
            tau, _ = kendalltau([s[0] for s in series], [s[1] for s in series])
            trend[m] = float(tau)
    return {"rows": rows, "kendall_tau": trend, "artifacts": cache.artifacts}


def sweep_differ(
    base: ExperimentConfig,
    differs: Iterable[float] = DEFAULT_DIFFERS,
    instances: int = 10,
    nodes: int = 4,
    mean: float = 0.04,
    dataset: Optional[Dataset] = None,
) -> dict:
    """Speed-up against noise heterogeneity, with and without alternate training."""
    cache = ArtifactCache(dataset)
    single = NoiseSpec(generation=NoiseGeneration.explicit, p1=[mean]).model_dump()
    baseline = cache.run(_variant(base, name=f"{base.name}-M1-differ", nodes=1, noise=single, alternate=False))

    rows = []
    for target in differs:
        for alternate in (False, True):
            per_instance, all_speedups = [], []
            for instance in range(instances):
                noise = NoiseSpec(generation=NoiseGeneration.differ, target_differ=target,
                                  mean=mean, seed=base.seed * 1000 + instance).model_dump()
                artifact = cache.run(_variant(
                    base, name=f"{base.name}-differ{target}-i{instance}-alt{int(alternate)}",
                    nodes=nodes, noise=noise, alternate=alternate,
                ))
                speed = speedup_summary(baseline, artifact)
                if speed["mean_speedup"] is not None:
                    per_instance.append(speed["mean_speedup"])
                all_speedups.extend(speed["run_speedups"])
            rows.append({
                "differ": target,
                "alternate": alternate,
                "mean_speedup": float(np.mean(all_speedups)) if all_speedups else None,
                "instance_variance": float(np.var(per_instance)) if per_instance else None,
                "instances": len(per_instance),
            })
    return {"rows": rows, "artifacts": cache.artifacts}


def sweep_threshold(
    base: ExperimentConfig,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    nodes: int = 4,
    mu: float = 0.016,
    dataset: Optional[Dataset] = None,
) -> dict:
    """Compression ratio and speed-up as the threshold grows."""
    cache = ArtifactCache(dataset)
    noise = _gaussian(mu)
    baseline = cache.run(_variant(base, name=f"{base.name}-M1-mu{mu}", nodes=1, noise=noise,
                                  threshold=None, alternate=False))
    dense = cache.run(_variant(base, name=f"{base.name}-M{nodes}-mu{mu}", nodes=nodes, noise=noise, threshold=None))

    rows = []
    for thr in thresholds:
        artifact = cache.run(_variant(base, name=f"{base.name}-M{nodes}-mu{mu}-thr{thr}",
                                      nodes=nodes, noise=noise, threshold=thr))
        rows.append({
            "threshold": thr,
            "compression_ratio": _ratio(artifact, dense),
            "mean_iterations": artifact.summary["mean_iterations"],
            "mean_speedup": speedup_summary(baseline, artifact)["mean_speedup"],
        })
    return {"rows": rows, "artifacts": cache.artifacts}


def _ratio(compressed: RunArtifact, dense: RunArtifact) -> Optional[float]:
    cv_with, cv_without = compressed.summary.get("mean_transmitted"), dense.summary.get("mean_transmitted")
    if cv_with is None or not cv_without:
        return None
    return compression_ratio(int(round(cv_with)), int(round(cv_without)))


def table_compression(
    base: ExperimentConfig,
    nodes: Iterable[int] = TABLE_NODES,
    mus: Iterable[float] = TABLE_MUS,
    thresholds: Iterable[float] = TABLE_THRESHOLDS,
    dataset: Optional[Dataset] = None,
) -> dict:
    """Iterations, volume, compression ratio and speed-up with and without compression."""
    cache = ArtifactCache(dataset)
    rows = []
    for thr in thresholds:
        for mu in mus:
            noise = _gaussian(mu)
            baseline = cache.run(_variant(base, name=f"{base.name}-M1-mu{mu}", nodes=1, noise=noise,
                                          threshold=None, alternate=False))
            for m in nodes:
                dense = cache.run(_variant(base, name=f"{base.name}-M{m}-mu{mu}", nodes=m, noise=noise,
                                           threshold=None))
                sparse = cache.run(_variant(base, name=f"{base.name}-M{m}-mu{mu}-thr{thr}", nodes=m,
                                            noise=noise, threshold=thr))
                rows.append(_table_row(thr, m, mu, baseline, dense, sparse))
    return {"rows": rows, "artifacts": cache.artifacts}


def _table_row(thr: float, nodes: int, mu: float, baseline: Optional[RunArtifact],
               dense: RunArtifact, sparse: RunArtifact) -> dict:
    return {
        "threshold": thr, "nodes": nodes, "mu": mu,
        "iterations_without": dense.summary["mean_iterations"],
        "iterations_with": sparse.summary["mean_iterations"],
        "cv_without": dense.summary["mean_transmitted"],
        "cv_with": sparse.summary["mean_transmitted"],
        "compression_ratio": _ratio(sparse, dense),
        "speedup_without": speedup_summary(baseline, dense)["mean_speedup"] if baseline else None,
        "speedup_with": speedup_summary(baseline, sparse)["mean_speedup"] if baseline else None,
    }


def check_bound(
    base: ExperimentConfig,
    grid: Iterable[Tuple[int, float, int]],
    dataset: Optional[Dataset] = None,
) -> dict:
    """Observed R1 against the bound for plain-SGD merged-noise runs; grid of (T, p1, shots).

    Each row carries the final-iterate R1 and its average over the iterates, the bound, and
    the descent-lemma variant of the bound. Rows with p1 = 0 are marked `noise_free`: there the
    bound reduces to its optimization term, which a T-step run is not guaranteed to reach.
    """
    cache = ArtifactCache(dataset)
    rows = []
    for iterations, p1, shots in grid:
        config = _variant(
            base, name=f"{base.name}-bound-T{iterations}-p{p1}-K{shots}",
            optimizer=OptimizerKind.sgd, learning_rate=None, noise_mode=NoiseMode.merged,
            noise=NoiseSpec(generation=NoiseGeneration.explicit, p1=[p1] * base.nodes).model_dump(),
            shots=shots, max_iterations=iterations, run_to_cap=True, final_gradient=True,
            track_exact_gradient=True, threshold=None, auto_threshold_percentile=None,
        )
        artifact = cache.run(config)
        d = len(artifact.runs[0].final_theta) if artifact.runs and artifact.runs[0].final_theta else D_DEFAULT
        p_tilde = merged_depolarizing_prob(p1, config.depth)
        params = TheoryParams(
            d=d, lam=config.lam, shots=shots, n_data=int(round(len(cache.dataset) * TRAIN_FRACTION)),
            iterations=iterations, p_tilde_max=p_tilde,
        )
        bound, relaxed = r1_upper_bound(params), descent_bound(params)
        observed, averaged = artifact.summary.get("r1"), artifact.summary.get("r1_mean")
        row = {
            "iterations": iterations, "p1": p1, "p_tilde": p_tilde, "shots": shots,
            "r1": observed, "r1_mean": averaged, "bound": bound,
            "holds": observed is not None and observed <= bound,
            "descent_bound": relaxed,
            "holds_descent": averaged is not None and averaged <= relaxed,
            "noise_free": p_tilde == 0,
        }
        rows.append(row)
        logger.info("bound_check T=%d p1=%.4f shots=%d r1=%s r1_mean=%s bound=%.6f descent_bound=%.6f",
                    iterations, p1, shots, observed, averaged, bound, relaxed)
        if not row["holds"]:
            logger.warning("bound_exceeded T=%d p1=%.4f shots=%d noise_free=%s r1=%s bound=%.6f",
                           iterations, p1, shots, row["noise_free"], observed, bound)
    return {"rows": rows, "artifacts": cache.artifacts}


# ============ Reports over stored artifacts ============

REPORT_KEYS = ("runs", "converged", "failed", "mean_iterations", "mean_transmitted",
               "mean_train_accuracy", "mean_test_accuracy", "volume_ratio", "r1", "mean_differ")


def report_rows(artifacts: Iterable[RunArtifact]) -> List[dict]:
    rows = []
    for artifact in artifacts:
        config = artifact.config
        rows.append({
            "config_hash": artifact.config_hash[:12],
            "name": config.name,
            "nodes": config.nodes,
            "mu": config.noise.mu,
            "threshold": config.threshold,
            "alternate": config.alternate,
            **{key: artifact.summary.get(key) for key in REPORT_KEYS},
        })
    return rows


def compression_rows(artifacts: Iterable[RunArtifact]) -> List[dict]:
    """Pair each compressed artifact with its dense twin (same M and mu) and the M=1 baseline."""
    gaussian = [a for a in artifacts if a.config.noise.generation == NoiseGeneration.gaussian]
    dense = {(a.config.nodes, a.config.noise.mu): a for a in gaussian if not a.config.compressed}
    rows = []
    for sparse in sorted((a for a in gaussian if a.config.compressed),
                         key=lambda a: (a.config.threshold if a.config.threshold is not None else -1.0,
                                        a.config.noise.mu, a.config.nodes)):
        key = (sparse.config.nodes, sparse.config.noise.mu)
        if key not in dense:
            logger.warning("no_dense_twin name=%s nodes=%d mu=%s", sparse.config.name, *key)
            continue
        baseline = dense.get((1, sparse.config.noise.mu))
        rows.append(_table_row(sparse.config.threshold, key[0], key[1], baseline, dense[key], sparse))
    return rows


# ============ Output ============

def history_frame(artifact: RunArtifact) -> pd.DataFrame:
    rows = [{"run": run.run, **row.model_dump()} for run in artifact.runs for row in run.history]
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def artifact_json(artifact: RunArtifact) -> str:
    data = artifact.model_dump(mode="json", exclude={"runs": {"__all__": RUN_EXCLUDE}})
    return json.dumps(data, indent=2, sort_keys=True)


def emit_results(
    artifact: RunArtifact,
    out_dir: Union[str, Path, None] = None,
    formats: Sequence[str] = ("csv", "json"),
) -> List[Path]:
    """Write history.csv, summary.json and optionally results.xlsx."""
    out = Path(out_dir or Path(RESULTS_DIR) / artifact.config_hash[:12])
    out.mkdir(parents=True, exist_ok=True)
    written = []
    frame = history_frame(artifact)
    if "csv" in formats:
        path = out / "history.csv"
        frame.to_csv(path, index=False)
        written.append(path)
    if "json" in formats:
        path = out / "summary.json"
        path.write_text(artifact_json(artifact))
        written.append(path)
    if "xlsx" in formats:
        path = out / "results.xlsx"
        _write_workbook(path, frame, artifact.summary)
        written.append(path)
    logger.info("results_written dir=%s files=%d", out, len(written))
    return written


def _write_workbook(path: Path, frame: pd.DataFrame, summary: dict) -> None:
    import openpyxl

    wb = openpyxl.Workbook()
    sheet = wb.active
    sheet.title = "history"
    sheet.append(HISTORY_COLUMNS)
    for row in frame.itertuples(index=False):
        sheet.append([None if pd.isna(v) else v for v in row])

    sheet = wb.create_sheet("summary")
    sheet.append(["key", "value"])
    for key, value in sorted(summary.items()):
        sheet.append([key, json.dumps(value) if isinstance(value, (dict, list)) else value])
    wb.save(path)


def emit_table(rows: Sequence[dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
    return path


def load_summary(path: Union[str, Path]) -> RunArtifact:
    return RunArtifact.model_validate_json(Path(path).read_text())
