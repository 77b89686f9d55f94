"""Command line: ``fisher-sgd simulate|fit|replicate --config PATH``.

Exit codes: 0 success, 1 numerical failure (the partial trajectory is still
written), 2 usage or I/O error (nothing is written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import RunAborted, Trajectory
from .experiment import (
    ConfigError,
    build_model,
    evaluate,
    fit,
    model_name,
    simulate_dataset,
)
from .numerics import NotPositiveDefinite

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_replicate", "load_config", "replication_seeds"]

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
FLOAT_FORMAT = "%.17g"
NUMERICAL_ERRORS = (RunAborted, NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError)


class UsageError(Exception):
    """Bad arguments, unreadable inputs or unwritable outputs."""


# ---------------------------------------------------------------------------
# configuration and seeds


def load_config(path, seed=None, iters=None, out=None) -> dict:
    """Parse a JSON config and apply command-line overrides.

    Relative data and truth paths are resolved against the config's directory.
    """
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError("config must be a JSON object")
    if seed is not None:
        config["seed"] = seed
    if iters is not None:
        config.setdefault("schedule", {})["k_total"] = iters
    if out is not None:
        config["out"] = str(out)
    if "seed" not in config:
        raise UsageError("config needs an integer 'seed' (or pass --seed)")
    if not isinstance(config["seed"], int) or config["seed"] < 0:
        raise UsageError("'seed' must be a non-negative integer")
    base = path.parent
    for key in ("data", "truth"):
        entry = config.get(key)
        if isinstance(entry, str):
            config[key] = str(base / entry)
        elif isinstance(entry, dict) and "path" in entry:
            entry["path"] = str(base / entry["path"])
    config.setdefault("out", "out")
    try:
        model_name(config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return config


def replication_seeds(master: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent data and fit generators for replication ``index``."""
    data_seq, fit_seq = np.random.SeedSequence([master, index]).spawn(2)
    return np.random.default_rng(data_seq), np.random.default_rng(fit_seq)


def _single_seeds(master: int):
    data_seq, fit_seq = np.random.SeedSequence([master]).spawn(2)
    return np.random.default_rng(data_seq), np.random.default_rng(fit_seq)


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x) -> str:
    x = float(x)
    return FLOAT_FORMAT % x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory, model) -> str:
    d = model.theta_dim
    names = model.parameter_names
    header = ["iter", "gamma", "phase"] + [f"theta_{j + 1}" for j in range(d)] + names + ["grad_norm", "mean_acceptance"]
    rows = []
    for i in range(len(traj)):
        theta = traj.theta[i]
        eta = model.reparam.forward(theta)
        rows.append(
            [traj.iteration[i], float(traj.gamma[i]), traj.phase[i]]
            + [float(t) for t in theta]
            + [float(e) for e in eta]
            + [float(traj.grad_norm[i]), float(traj.acceptance[i])]
        )
    return _csv_text(header, rows)


# ---------------------------------------------------------------------------
# data files


def write_dataset(name: str, data: dict, directory: Path, sbm_format: str = "dense") -> Path:
    if name == "toy":
        rows = [[i, float(v)] for i, v in enumerate(data["y"])]
        path = directory / "data.csv"
        _write(path, _csv_text(["id", "y"], rows))
    elif name == "logistic":
        rows = [[int(u), float(t), float(v)] for u, t, v in zip(data["unit"], data["time"], data["y"])]
        path = directory / "data.csv"
        _write(path, _csv_text(["id", "time", "y"], rows))
    else:
        adj = np.asarray(data["adjacency"], dtype=np.int64)
        path = directory / "adjacency.csv"
        if sbm_format == "edgelist":
            i, j = np.nonzero(adj)
            _write(path, "".join(f"{a},{b}\n" for a, b in zip(i, j)))
        else:
            _write(path, "".join(",".join(str(v) for v in row) + "\n" for row in adj))
    return path


def _read_rows(path: Path, columns):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(c not in reader.fieldnames for c in columns):
                raise UsageError(f"{path} must have a header with columns {','.join(columns)}")
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc}") from exc
    try:
        return {c: np.array([float(r[c]) for r in rows]) for c in columns}
    except ValueError as exc:
        raise UsageError(f"non-numeric value in {path}: {exc}") from exc


def read_dataset(config: dict) -> dict:
    """Load the dataset named by ``config['data']`` (a path or ``{"path", "format", "n_nodes"}``)."""
    name = model_name(config)
    entry = config.get("data")
    if entry is None:
        raise UsageError("fit needs a 'data' entry in the config")
    spec = {"path": entry} if isinstance(entry, str) else dict(entry)
    if "path" not in spec:
        raise UsageError("'data' needs a 'path'")
    path = Path(spec["path"])
    if name == "toy":
        cols = _read_rows(path, ["id", "y"])
        return {"y": cols["y"][np.argsort(cols["id"], kind="stable")]}
    if name == "logistic":
        cols = _read_rows(path, ["id", "time", "y"])
        _, unit = np.unique(cols["id"], return_inverse=True)
        return {"unit": unit, "time": cols["time"], "y": cols["y"]}
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read adjacency {path}: {exc}") from exc
    if spec.get("format", "dense") == "edgelist":
        if raw.size and raw.shape[1] != 2:
            raise UsageError("edge list rows must be 'i,j'")
        edges = raw.astype(np.int64)
        n = int(spec.get("n_nodes", edges.max() + 1 if edges.size else 0))
        adj = np.zeros((n, n))
        adj[edges[:, 0], edges[:, 1]] = 1.0
    else:
        adj = raw
    if adj.shape[0] != adj.shape[1]:
        raise UsageError("adjacency matrix must be square")
    return {"adjacency": adj}


def read_truth(config: dict) -> dict | None:
    path = config.get("truth")
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read truth file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(config: dict) -> int:
    name = model_name(config)
    data_rng, _ = _single_seeds(config["seed"])
    data, truth = simulate_dataset(config, data_rng)
    out = Path(config["out"])
    write_dataset(name, data, out, config.get("sbm_format", "dense"))
    _write(out / "truth.json", dumps({"model": name, **truth}))
    return EXIT_OK


def _result_document(model, result, evaluation) -> dict:
    doc = {
        "parameter_names": model.parameter_names,
        "theta_hat_chart": result.theta_hat,
        "theta_hat_original": model.reparam.forward(result.theta_hat),
        "theta0_chart": result.theta0,
        "fim_whole": result.fim_whole,
        "ci": evaluation.report.to_dict(),
        "phases": {"k_end_preheating": result.k_end_preheating, "k_end_heating": result.k_end_heating},
        "diagnostics": {**result.diagnostics, "restarts": result.restarts},
    }
    if evaluation.truth is not None:
        doc["truth_original"] = evaluation.truth
        doc["estimate_aligned"] = evaluation.estimate
        doc["covered"] = evaluation.covers
        doc["ellipsoid_covered"] = evaluation.report.ellipsoid_covers
    if evaluation.permutation is not None:
        doc["label_permutation"] = evaluation.permutation
    if evaluation.oracle is not None:
        doc["oracle"] = evaluation.oracle
    return doc


def cmd_fit(config: dict) -> int:
    data = read_dataset(config)
    truth = read_truth(config)
    try:
        model = build_model(config, data)
    except ValueError as exc:
        raise UsageError(f"invalid data: {exc}") from exc
    _, fit_rng = _single_seeds(config["seed"])
    out = Path(config["out"])
    try:
        result = fit(config, model, fit_rng)
        evaluation = evaluate(model, result, truth, float(config.get("level", 0.95)))
    except NUMERICAL_ERRORS as exc:
        traj = getattr(exc, "trajectory", None)
        if traj is not None and len(traj):
            _write(out / "trajectory.csv", trajectory_csv(traj, model))
        _write(out / "error.json", dumps({"error": type(exc).__name__, "message": str(exc)}))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(out / "result.json", dumps(_result_document(model, result, evaluation)))
    _write(out / "trajectory.csv", trajectory_csv(result.trajectory, model))
    return EXIT_OK


def run_replication(config: dict, index: int) -> dict:
    """Simulate and fit replication ``index``; failures are returned, not raised."""
    data_rng, fit_rng = replication_seeds(config["seed"], index)
    data, truth = simulate_dataset(config, data_rng)
    model = build_model(config, data)
    record = {"index": index, "parameter_names": model.parameter_names}
    try:
        result = fit(config, model, fit_rng)
        evaluation = evaluate(model, result, truth, float(config.get("level", 0.95)))
    except NUMERICAL_ERRORS as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}", truth_original=truth_vector_of(model, truth))
        return record
    record.update(
        status="ok",
        truth_original=evaluation.truth,
        estimate_aligned=evaluation.estimate,
        theta_hat_chart=result.theta_hat,
        covered=evaluation.covers,
        ellipsoid_statistic=evaluation.report.ellipsoid_statistic,
        ellipsoid_threshold=evaluation.report.ellipsoid_threshold,
        ellipsoid_covered=evaluation.report.ellipsoid_covers,
        phases={"k_end_preheating": result.k_end_preheating, "k_end_heating": result.k_end_heating},
        restarts=result.restarts,
        se=[iv.se for iv in evaluation.report.intervals],
    )
    if evaluation.permutation is not None:
        record["label_permutation"] = evaluation.permutation
    return _jsonable(record)


def truth_vector_of(model, truth):
    return [truth["parameters"][n] for n in model.parameter_names]


def _replication_job(args):
    config, index = args
    return run_replication(config, index)


def summarize(records: list[dict]) -> list[list]:
    """Summary rows: a joint ``theta`` row, then one row per original parameter.

    RMSE of the joint row is ``sqrt(sum_j MSE_j)`` over original-space
    parameters and its coverage is that of the Wald ellipsoid.
    """
    names = records[0]["parameter_names"]
    ok = [r for r in records if r["status"] == "ok"]
    failures = len(records) - len(ok)
    truth = np.array(records[0]["truth_original"], dtype=float)
    rows = []

    def cov_row(flags):
        if not flags:
            return math.nan, math.nan
        c = float(np.mean(flags))
        return c, math.sqrt(c * (1.0 - c) / len(flags))

    if ok:
        err = np.array([r["estimate_aligned"] for r in ok], dtype=float) - truth
        mse = np.mean(err**2, axis=0)
        covered = np.array([r["covered"] for r in ok], dtype=bool)
        ell = [bool(r["ellipsoid_covered"]) for r in ok]
    else:
        mse = np.full(len(names), math.nan)
        covered = np.zeros((0, len(names)), dtype=bool)
        ell = []
    c, se = cov_row(ell)
    rows.append(["theta", "", float(math.sqrt(np.sum(mse))), c, se, failures])
    for j, name in enumerate(names):
        c, se = cov_row(list(covered[:, j]))
        rows.append([name, float(truth[j]), float(math.sqrt(mse[j])), c, se, failures])
    return rows


SUMMARY_HEADER = ["parameter", "true", "rmse", "coverage", "coverage_se", "failures"]


def cmd_replicate(config: dict, workers: int = 1) -> int:
    m = int(config.get("replications", 0))
    if m < 1:
        raise UsageError("replicate needs 'replications' >= 1 in the config")
    jobs = [(config, i) for i in range(m)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replication_job, jobs))
    else:
        records = [_replication_job(j) for j in jobs]
    records.sort(key=lambda r: r["index"])
    out = Path(config["out"])
    for r in records:
        _write(out / "replications" / f"rep_{r['index']:05d}.json", dumps(r))
    _write(out / "summary.csv", _csv_text(SUMMARY_HEADER, summarize(records)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fisher-sgd", description="Fisher-preconditioned SGD for latent variable models.")
    parser.add_argument("command", choices=["simulate", "fit", "replicate"])
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--iters", type=int, help="override schedule.k_total")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for replicate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.workers < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = load_config(args.config, args.seed, args.iters, args.out)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "fit":
            return cmd_fit(config)
        return cmd_replicate(config, args.workers)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
