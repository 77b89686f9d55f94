"""Fisher-preconditioned stochastic gradient ascent on the marginal likelihood.

The engine alternates latent simulation with a preconditioned gradient step.
The preconditioner is the mean outer product of per-unit stochastic
approximations of the marginal score, which doubles as the Fisher information
estimate returned with the fit.

Step sizes follow three phases: an exponential ramp from ``gamma0`` to 1
(pre-heating), a plateau at 1 that ends once the filtered mean gradient stops
shrinking (heating), then ``(k - k_end_heating) ** -alpha`` (decreasing).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .model import GlobalModel, IndependentModel
from .numerics import CascadedFilter, NotPositiveDefinite, spd_solve, sym_eigen, symmetrize
from .sampler import ADAPT_EVERY, MwgState, adapt_proposal, mwg_sweep

__all__ = [
    "Phase",
    "Schedule",
    "PhaseState",
    "Trajectory",
    "RunResult",
    "RunAborted",
    "Diverged",
    "PreconditionerFailed",
    "RestartLimitExceeded",
    "step_size",
    "phase_of",
    "enter_phase",
    "update_delta",
    "fim_outer",
    "precondition",
    "heating_update",
    "solve_with_jitter",
    "fim_tail_hessian",
    "uniform_init",
    "run_independent",
    "run_nonindependent",
]

JITTER_START = 1e-8
JITTER_MAX = 1e-2


class Phase(str, enum.Enum):
    PRE_HEATING = "pre-heating"
    HEATING = "heating"
    DECREASING = "decreasing"


@dataclass(frozen=True)
class Schedule:
    gamma0: float = 1e-4
    k_pre: int = 1000
    alpha: float = 2.0 / 3.0
    k_heat_min: int = 500
    c_heating: float = 1e-3
    k_total: int = 10_000
    r_tail: int | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma0 <= 1.0:
            raise ValueError(f"gamma0 must lie in (0, 1], got {self.gamma0}")
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (1/2, 1], got {self.alpha}")
        if self.k_pre < 0 or self.k_heat_min < 0 or self.k_total < 0:
            raise ValueError("iteration counts must be non-negative")
        if not 0.0 < self.c_heating <= 1.0:
            raise ValueError(f"c_heating must lie in (0, 1], got {self.c_heating}")
        if self.r_tail is not None and not 0 <= self.r_tail <= self.k_total:
            raise ValueError("r_tail must lie in [0, k_total]")

    @property
    def tail(self) -> int:
        if self.r_tail is not None:
            return self.r_tail
        return min(self.k_total // 10, 1000)


@dataclass(frozen=True)
class PhaseState:
    phase: Phase
    filter: CascadedFilter
    k_end_heating: int | None = None
    prev_filtered_norm: float | None = None
    heating_iterations: int = 0

    @classmethod
    def start(cls, schedule: Schedule) -> "PhaseState":
        first = Phase.PRE_HEATING if schedule.k_pre > 0 else Phase.HEATING
        return cls(first, CascadedFilter(schedule.c_heating))


def phase_of(k: int, schedule: Schedule, state: PhaseState) -> Phase:
    if k <= schedule.k_pre and schedule.k_pre > 0:
        return Phase.PRE_HEATING
    if state.k_end_heating is None:
        return Phase.HEATING
    return Phase.DECREASING


def enter_phase(state: PhaseState, phase: Phase) -> PhaseState:
    if phase is not state.phase:
        return replace(state, phase=phase)
    return state


def step_size(k: int, schedule: Schedule, state: PhaseState) -> float:
    if k < 0:
        raise ValueError("iteration index must be non-negative")
    if schedule.k_pre > 0 and k <= schedule.k_pre:
        return schedule.gamma0 ** (1.0 - k / schedule.k_pre)
    if state.k_end_heating is None:
        return 1.0
    return float(k - state.k_end_heating) ** (-schedule.alpha)


def update_delta(prev, g, gamma: float):
    return (1.0 - gamma) * np.asarray(prev, dtype=float) + gamma * np.asarray(g, dtype=float)


def fim_outer(deltas: NDArray[np.float64], average: bool = True) -> NDArray[np.float64]:
    """``sum_i delta_i delta_i^T``, divided by the number of rows when ``average``."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim != 2 or deltas.shape[0] == 0:
        raise ValueError("delta bank must be a non-empty (n, d) array")
    out = deltas.T @ deltas
    if average:
        out /= deltas.shape[0]
    return symmetrize(out)


def precondition(i_star, gamma: float, phase: Phase) -> NDArray[np.float64]:
    """Blend toward a scaled identity during pre-heating, pass through afterwards."""
    i_star = np.asarray(i_star, dtype=float)
    if phase is not Phase.PRE_HEATING:
        return i_star
    r = max(1.0, float(np.trace(i_star)))
    return (1.0 - gamma) * r * np.eye(i_star.shape[0]) + gamma * i_star


def heating_update(
    state: PhaseState, v, k: int, schedule: Schedule
) -> tuple[PhaseState, bool]:
    """Feed the mean gradient to the heating filter and decide whether heating ends.

    Heating stops at the first strict increase of the filtered-gradient norm,
    but never before ``k_heat_min`` heating iterations.
    """
    if state.phase is not Phase.HEATING:
        raise ValueError(f"heating_update called in phase {state.phase.value}")
    filt = state.filter.update(v)
    n = state.heating_iterations + 1
    norm = filt.norm
    prev = state.prev_filtered_norm
    stop = n >= schedule.k_heat_min and prev is not None and norm > prev
    new = replace(state, filter=filt, prev_filtered_norm=norm, heating_iterations=n)
    if stop:
        new = replace(new, phase=Phase.DECREASING, k_end_heating=k)
    return new, stop


def solve_with_jitter(p, v) -> tuple[NDArray[np.float64], float]:
    """Solve ``p x = v``; on failure retry with ``lam * tr(p)/d`` added to the diagonal.

    ``lam`` starts at 1e-8 and doubles up to 1e-2. Returns ``(x, lam)`` with
    ``lam = 0`` when no jitter was needed.
    """
    try:
        return spd_solve(p, v), 0.0
    except NotPositiveDefinite:
        pass
    d = p.shape[0]
    level = float(np.trace(p)) / d
    lam = JITTER_START
    while lam <= JITTER_MAX and level > 0:
        try:
            return spd_solve(p + lam * level * np.eye(d), v), lam
        except NotPositiveDefinite:
            lam *= 2.0
    raise NotPositiveDefinite("preconditioner not positive definite after jitter exhaustion")


def fim_tail_hessian(hessians) -> NDArray[np.float64]:
    """Negative mean of complete-data Hessians, symmetrised."""
    hessians = [np.asarray(h, dtype=float) for h in hessians]
    if not hessians:
        raise ValueError("need at least one Hessian")
    return symmetrize(-np.mean(hessians, axis=0))


def uniform_init(dim: int, rng: np.random.Generator) -> NDArray[np.float64]:
    return rng.uniform(-1.0, 1.0, size=dim)


# ---------------------------------------------------------------------------
# results


@dataclass
class Trajectory:
    """Per-iteration records, one row per executed iteration."""

    iteration: list[int] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)
    phase: list[str] = field(default_factory=list)
    theta: list[NDArray[np.float64]] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)
    jitter: list[float] = field(default_factory=list)
    eig_min: list[float] = field(default_factory=list)
    eig_max: list[float] = field(default_factory=list)

    def append(self, k, gamma, phase, theta, grad_norm, acceptance, jitter, spectrum=None):
        self.iteration.append(k)
        self.gamma.append(gamma)
        self.phase.append(phase.value)
        self.theta.append(theta.copy())
        self.grad_norm.append(grad_norm)
        self.acceptance.append(acceptance)
        self.jitter.append(jitter)
        if spectrum is not None:
            self.eig_min.append(spectrum[0])
            self.eig_max.append(spectrum[1])

    def __len__(self):
        return len(self.iteration)

    def theta_array(self, dim: int) -> NDArray[np.float64]:
        if not self.theta:
            return np.zeros((0, dim))
        return np.vstack(self.theta)


@dataclass
class RunResult:
    theta_hat: NDArray[np.float64]
    fim_whole: NDArray[np.float64]
    tail_draws: list
    trajectory: Trajectory
    theta0: NDArray[np.float64]
    k_end_preheating: int | None
    k_end_heating: int | None
    restarts: int = 0
    diagnostics: dict = field(default_factory=dict)


class RunAborted(RuntimeError):
    """A run stopped early; ``trajectory`` keeps the iterations done so far."""

    def __init__(self, message: str, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.trajectory = trajectory if trajectory is not None else Trajectory()


class Diverged(RunAborted):
    pass


class PreconditionerFailed(RunAborted):
    pass


class RestartLimitExceeded(RunAborted):
    pass


# ---------------------------------------------------------------------------
# main loops


def _spectrum(p):
    w, _ = sym_eigen(p)
    return float(w[0]), float(w[-1])


def _step(theta, gamma, p, v, k, traj):
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
        raise Diverged(f"iteration {k}: non-finite gradient or preconditioner", traj)
    try:
        direction, lam = solve_with_jitter(p, v)
    except NotPositiveDefinite as exc:
        raise PreconditionerFailed(f"iteration {k}: {exc}", traj) from exc
    new = theta + gamma * direction
    if not np.all(np.isfinite(new)):
        raise Diverged(f"iteration {k}: non-finite parameter {new}", traj)
    return new, lam


def run_independent(
    model: IndependentModel,
    schedule: Schedule,
    theta0,
    rng: np.random.Generator,
    z0=None,
    exact: bool | None = None,
    sweeps: int = 1,
    adapt: bool = True,
    proposal_scale: float = 1.0,
    track_spectrum: bool = False,
    keep_tail: bool = True,
) -> RunResult:
    """Fisher-SGD for ``N`` independent units.

    Parameters
    ----------
    exact
        Draw latents from the exact posterior. Defaults to whatever the model
        supports; otherwise ``sweeps`` Metropolis-within-Gibbs sweeps are run
        per iteration.
    track_spectrum
        Record the extreme eigenvalues of the preconditioner at each iteration.
    keep_tail
        Keep the last ``schedule.tail`` latent states in the result.
    """
    theta = np.array(theta0, dtype=float).reshape(-1)
    theta_start = theta.copy()
    d, n = model.theta_dim, model.n_units
    if theta.size != d:
        raise ValueError(f"theta0 has {theta.size} entries, model expects {d}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    if exact is None:
        exact = model.has_exact_posterior
    z = np.asarray(z0, dtype=float) if z0 is not None else model.initial_latent(theta, rng)
    mwg = None if exact else MwgState.create(n, model.latent_dim, proposal_scale, adapt)

    state = PhaseState.start(schedule)
    deltas = np.zeros((n, d))
    i_star = np.zeros((d, d))
    traj = Trajectory()
    tail, r = [], schedule.tail
    jitter_iters = []

    for k in range(1, schedule.k_total + 1):
        phase = phase_of(k, schedule, state)
        state = enter_phase(state, phase)
        if exact:
            z = model.exact_posterior_draw(theta, rng)
            acc = math.nan
        else:
            rates = []
            for _ in range(sweeps):
                try:
                    z, flags = mwg_sweep(model, z, theta, mwg, rng)
                except FloatingPointError as exc:
                    raise Diverged(f"iteration {k}: {exc}", traj) from exc
                rates.append(flags.mean())
                if mwg.adaptation_enabled and mwg.window_iterations >= ADAPT_EVERY:
                    adapt_proposal(mwg)
            acc = float(np.mean(rates))

        gamma = step_size(k, schedule, state)
        grads = model.grad_log_complete(z, theta)
        deltas = update_delta(deltas, grads, gamma)
        v = grads.mean(axis=0)
        i_star = fim_outer(deltas)
        p = precondition(i_star, gamma, phase)
        if phase is Phase.HEATING:
            state, stopped = heating_update(state, v, k, schedule)
            if stopped and mwg is not None:
                mwg.adaptation_enabled = False
        theta, lam = _step(theta, gamma, p, v, k, traj)
        if lam:
            jitter_iters.append(k)
        traj.append(k, gamma, phase, theta, float(np.linalg.norm(v)), acc, lam,
                    _spectrum(p) if track_spectrum else None)
        if keep_tail and k > schedule.k_total - r:
            tail.append(z.copy())

    return RunResult(
        theta_hat=theta,
        fim_whole=n * i_star,
        tail_draws=tail,
        trajectory=traj,
        theta0=theta_start,
        k_end_preheating=schedule.k_pre if schedule.k_total >= schedule.k_pre > 0 else None,
        k_end_heating=state.k_end_heating,
        diagnostics={
            "jitter_iterations": jitter_iters,
            "final_proposal_scale_mean": float(mwg.scale.mean()) if mwg is not None else None,
            "acceptance_rate": mwg.acceptance_rate() if mwg is not None else None,
        },
    )


def run_nonindependent(
    model: GlobalModel,
    schedule: Schedule,
    theta0,
    rng: np.random.Generator,
    z0=None,
    sweeps: int = 1,
    max_restarts: int = 20,
    init: Callable[[int, np.random.Generator], NDArray[np.float64]] = uniform_init,
    keep_tail: bool = True,
) -> RunResult:
    """Fisher-SGD when the complete log-density does not split over units.

    The preconditioner is built from the model's ``score_terms``; the returned
    Fisher information is minus the mean complete-data Hessian over the last
    ``schedule.tail`` iterations. When the latent state degenerates (the model's
    ``needs_restart``, e.g. an empty SBM class) the run starts over from a fresh
    ``init`` draw and new latents, at most ``max_restarts`` times.
    """
    theta = np.array(theta0, dtype=float).reshape(-1)
    if theta.size != model.theta_dim:
        raise ValueError(f"theta0 has {theta.size} entries, model expects {model.theta_dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    restarts = 0
    z_init = z0
    while True:
        outcome = _run_global_once(model, schedule, theta, rng, z_init, sweeps, keep_tail)
        if outcome is not None:
            outcome.restarts = restarts
            return outcome
        restarts += 1
        if restarts > max_restarts:
            raise RestartLimitExceeded(f"latent state degenerated {restarts} times")
        theta = init(model.theta_dim, rng)
        z_init = None


def _run_global_once(model, schedule, theta, rng, z0, sweeps, keep_tail):
    theta_start = theta.copy()
    d = model.theta_dim
    z = model.initial_latent(theta, rng) if z0 is None else np.array(z0, copy=True)
    if model.needs_restart(z):
        return None
    state = PhaseState.start(schedule)
    deltas = None
    traj = Trajectory()
    tail, hessians, r = [], [], schedule.tail
    jitter_iters = []

    for k in range(1, schedule.k_total + 1):
        phase = phase_of(k, schedule, state)
        state = enter_phase(state, phase)
        for _ in range(sweeps):
            z = model.sample_latent(z, theta, rng)
        if model.needs_restart(z):
            return None
        gamma = step_size(k, schedule, state)
        terms = model.score_terms(z, theta)
        v = terms.sum(axis=0)
        terms *= gamma
        if deltas is None:
            deltas = terms
        else:
            deltas *= 1.0 - gamma
            deltas += terms
        i_star = fim_outer(deltas, average=False)
        p = precondition(i_star, gamma, phase)
        if phase is Phase.HEATING:
            state, _ = heating_update(state, v, k, schedule)
        theta, lam = _step(theta, gamma, p, v, k, traj)
        if lam:
            jitter_iters.append(k)
        traj.append(k, gamma, phase, theta, float(np.linalg.norm(v)), math.nan, lam)
        if k > schedule.k_total - r:
            hessians.append(model.hessian_log_complete(z, theta))
            if keep_tail:
                tail.append(np.array(z, copy=True))

    fim = fim_tail_hessian(hessians) if hessians else np.full((d, d), np.nan)
    return RunResult(
        theta_hat=theta,
        fim_whole=fim,
        tail_draws=tail,
        trajectory=traj,
        theta0=theta_start,
        k_end_preheating=schedule.k_pre if schedule.k_total >= schedule.k_pre > 0 else None,
        k_end_heating=state.k_end_heating,
        diagnostics={"jitter_iterations": jitter_iters},
    )
