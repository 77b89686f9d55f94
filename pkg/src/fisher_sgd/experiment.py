"""Model-specific wiring shared by the command line and the replication harness.

A *dataset* is a plain dict of arrays (``y`` for the toy model; ``unit``,
``time``, ``y`` for logistic growth; ``adjacency`` for the SBM). A *truth* is a
dict with the original-space parameters by name and, when known, the latent
values. Configuration is the parsed JSON document described in the README.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import RunResult, Schedule, run_independent, run_nonindependent, uniform_init
from .inference import ConfidenceReport, confidence_report
from .models import (
    BENCHMARK_ALPHA,
    BENCHMARK_DESIGN,
    BENCHMARK_P,
    LogisticGrowthNlme,
    Sbm,
    ToyGaussian,
    logistic_pilot,
    sbm_align_labels,
    toy_mle_oracle,
)

__all__ = [
    "MODELS",
    "ConfigError",
    "simulation_settings",
    "simulate_dataset",
    "build_model",
    "schedule_from_config",
    "initial_theta",
    "fit",
    "Evaluation",
    "evaluate",
    "truth_vector",
]

MODELS = ("toy", "logistic", "sbm")

SCHEDULE_KEYS = ("gamma0", "k_pre", "alpha", "k_heat_min", "c_heating", "k_total", "r_tail")

SIMULATION_DEFAULTS = {
    "toy": {"n": 500, "mu": 2.0, "omega2": 4.0, "sigma2_noise": 1.0},
    "logistic": {
        "n_units": BENCHMARK_DESIGN["n_units"],
        "times": BENCHMARK_DESIGN["times"].tolist(),
        "beta": list(BENCHMARK_DESIGN["beta"]),
        "alpha": BENCHMARK_DESIGN["alpha"],
        "gamma": [list(r) for r in BENCHMARK_DESIGN["gamma"]],
        "sigma2": BENCHMARK_DESIGN["sigma2"],
    },
    "sbm": {"n": 100, "alpha": BENCHMARK_ALPHA.tolist(), "p": BENCHMARK_P.tolist()},
}


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


def model_name(config: dict) -> str:
    name = config.get("model")
    if name not in MODELS:
        raise ConfigError(f"'model' must be one of {MODELS}, got {name!r}")
    return name


def simulation_settings(config: dict) -> dict:
    """Simulation design with defaults filled in from the reference designs."""
    name = model_name(config)
    settings = dict(SIMULATION_DEFAULTS[name])
    extra = config.get("simulate", {}) or {}
    unknown = set(extra) - set(settings)
    if unknown:
        raise ConfigError(f"unknown simulation keys for {name}: {sorted(unknown)}")
    settings.update(extra)
    if name == "toy" and "sigma2_noise" in config:
        settings["sigma2_noise"] = config["sigma2_noise"]
    return settings


def _times(spec) -> NDArray[np.float64]:
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


def simulate_dataset(config: dict, rng: np.random.Generator) -> tuple[dict, dict]:
    """Draw one dataset from the configured design; returns ``(data, truth)``."""
    name = model_name(config)
    s = simulation_settings(config)
    try:
        if name == "toy":
            y, z = ToyGaussian.simulate(int(s["n"]), s["mu"], s["omega2"], s["sigma2_noise"], rng)
            truth = {"parameters": {"mu": float(s["mu"]), "omega2": float(s["omega2"])}, "latent": z.tolist()}
            return {"y": y}, truth
        if name == "logistic":
            model, z = LogisticGrowthNlme.simulate(
                int(s["n_units"]), _times(s["times"]), s["beta"], s["alpha"], s["gamma"], s["sigma2"], rng
            )
            eta = LogisticGrowthNlme.pack(s["beta"], s["alpha"], s["gamma"], s["sigma2"])
            truth = {"parameters": dict(zip(model.parameter_names, eta.tolist())), "latent": z.tolist()}
            return {"unit": model.unit, "time": model.time, "y": model.y}, truth
        alpha = np.asarray(s["alpha"], dtype=float)
        p = np.asarray(s["p"], dtype=float)
        model, z = Sbm.simulate(int(s["n"]), alpha, p, rng)
        eta = np.concatenate([alpha, p.reshape(-1)])
        truth = {"parameters": dict(zip(model.parameter_names, eta.tolist())), "latent": z.tolist()}
        return {"adjacency": model.y}, truth
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from exc


def build_model(config: dict, data: dict):
    name = model_name(config)
    if name == "toy":
        sigma2 = float(config.get("sigma2_noise", simulation_settings(config)["sigma2_noise"]))
        return ToyGaussian(data["y"], sigma2)
    if name == "logistic":
        chart = config.get("chart", "pilot")
        if chart == "pilot":
            options = logistic_pilot(data["time"], data["y"])
        elif chart == "unit":
            options = {}
        elif isinstance(chart, dict):
            options = {"chart_scales": chart.get("scales"), "beta2_loc": float(chart.get("beta2_loc", 0.0))}
        else:
            raise ConfigError("logistic 'chart' must be 'pilot', 'unit' or an object")
        return LogisticGrowthNlme(data["unit"], data["time"], data["y"], **options)
    k = config.get("k")
    if k is None:
        k = len(simulation_settings(config)["alpha"])
    return Sbm(data["adjacency"], int(k))


def schedule_from_config(config: dict) -> Schedule:
    raw = config.get("schedule", {}) or {}
    unknown = set(raw) - set(SCHEDULE_KEYS)
    if unknown:
        raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
    try:
        return Schedule(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid schedule: {exc}") from exc


def centre_init(dim: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Chart origin; for the SBM this is uniform alpha and every p equal to 1/2."""
    return np.zeros(dim)


def initial_theta(config: dict, model, rng: np.random.Generator) -> NDArray[np.float64]:
    """``init`` is ``"random"`` (uniform on [-1, 1]^d in chart space),
    ``"centre"`` (the chart origin), or an object with either ``theta`` (chart
    space) or ``original`` (constrained)."""
    init = config.get("init", "random")
    if init == "random":
        return uniform_init(model.theta_dim, rng)
    if init == "centre":
        return centre_init(model.theta_dim, rng)
    if isinstance(init, dict) and "theta" in init:
        theta = np.asarray(init["theta"], dtype=float)
    elif isinstance(init, dict) and "original" in init:
        theta = model.reparam.inverse(np.asarray(init["original"], dtype=float))
    else:
        raise ConfigError("'init' must be 'random' or an object with 'theta' or 'original'")
    if theta.shape != (model.theta_dim,):
        raise ConfigError(f"initial theta must have {model.theta_dim} entries")
    return theta


def fit(config: dict, model, rng: np.random.Generator) -> RunResult:
    """Run Fisher-SGD on ``model`` with the configured schedule, sampler and init."""
    schedule = schedule_from_config(config)
    sampler = config.get("sampler", {}) or {}
    theta0 = initial_theta(config, model, rng)
    sweeps = int(sampler.get("sweeps", 1))
    if isinstance(model, Sbm):
        return run_nonindependent(
            model,
            schedule,
            theta0,
            rng,
            sweeps=sweeps,
            max_restarts=int(config.get("max_restarts", 20)),
            init=centre_init if config.get("init") == "centre" else uniform_init,
        )
    return run_independent(
        model,
        schedule,
        theta0,
        rng,
        exact=sampler.get("exact"),
        sweeps=sweeps,
        adapt=bool(sampler.get("adapt", True)),
        proposal_scale=float(sampler.get("proposal_scale", 1.0)),
    )


def truth_vector(model, truth: dict) -> NDArray[np.float64]:
    params = truth["parameters"]
    missing = [n for n in model.parameter_names if n not in params]
    if missing:
        raise ConfigError(f"truth lacks parameters {missing}")
    return np.array([params[n] for n in model.parameter_names], dtype=float)


def _posterior_mode(draws, k: int) -> NDArray[np.int64]:
    z = np.asarray(draws, dtype=np.int64)
    counts = np.zeros((z.shape[1], k), dtype=np.int64)
    for row in z:
        counts[np.arange(z.shape[1]), row] += 1
    return counts.argmax(axis=1)


def _sbm_relabel(eta, perm, k):
    """Original-space SBM vector with class ``a`` moved to position ``perm[a]``."""
    alpha = np.empty(k)
    alpha[perm] = eta[:k]
    p = np.empty((k, k))
    p[np.ix_(perm, perm)] = eta[k:].reshape(k, k)
    return np.concatenate([alpha, p.reshape(-1)])


def _sbm_pull(eta, perm, k):
    """Inverse of :func:`_sbm_relabel`: read class ``a`` from position ``perm[a]``."""
    return np.concatenate([eta[:k][perm], eta[k:].reshape(k, k)[np.ix_(perm, perm)].reshape(-1)])


@dataclass
class Evaluation:
    """Estimate and confidence report, expressed in the truth's labelling when known."""

    report: ConfidenceReport
    estimate: NDArray[np.float64]
    truth: NDArray[np.float64] | None
    covers: list[bool] | None
    permutation: list[int] | None
    oracle: dict | None


def evaluate(model, result: RunResult, truth: dict | None = None, level: float = 0.95) -> Evaluation:
    """Confidence report for a fit, optionally scored against a known truth.

    For the SBM the classes are matched to the true labels through the
    posterior mode of the retained latent draws; the report is computed in the
    fit's own labelling (with the truth relabelled into it) and the estimate and
    coverage flags are returned in the truth's labelling.
    """
    eta_hat = model.reparam.forward(result.theta_hat)
    perm = None
    oracle = None
    if isinstance(model, ToyGaussian):
        mu, omega2 = toy_mle_oracle(model.y, model.sigma2)
        oracle_theta = model.reparam.inverse(np.array([mu, omega2]))
        oracle = {
            "theta_mle_chart": oracle_theta.tolist(),
            "max_abs_gap_chart": float(np.max(np.abs(result.theta_hat - oracle_theta))),
        }
    if truth is None:
        report = confidence_report(result.theta_hat, result.fim_whole, model.reparam, level)
        return Evaluation(report, eta_hat, None, None, None, oracle)

    eta_true = truth_vector(model, truth)
    eta_ref = eta_true
    if isinstance(model, Sbm):
        k = model.k
        if result.tail_draws and truth.get("latent") is not None:
            mode = _posterior_mode(result.tail_draws, k)
            perm = sbm_align_labels(np.asarray(truth["latent"]), mode, k)
        else:
            perm = np.arange(k)
        eta_ref = _sbm_relabel(eta_true, perm, k)
    report = confidence_report(
        result.theta_hat, result.fim_whole, model.reparam, level, theta_ref=model.reparam.inverse(eta_ref)
    )
    covers = report.covers(eta_ref)
    estimate = eta_hat
    if perm is not None:
        estimate = _sbm_pull(eta_hat, perm, model.k)
        covers = [bool(c) for c in _sbm_pull(np.array(covers, dtype=float), perm, model.k)]
    return Evaluation(
        report, estimate, eta_true, covers, None if perm is None else [int(a) for a in perm], oracle
    )

