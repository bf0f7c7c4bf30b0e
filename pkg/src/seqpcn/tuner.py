"""Burn-in tuning of (beta, kappa) by fixed-length ascent in log10-log10 space.

Each iteration runs the chain for ``n_hp`` steps at each of the four probe
points ``(beta*delta, kappa)``, ``(beta/delta, kappa)``, ``(beta, kappa*delta)``
and ``(beta, kappa/delta)``, estimates the gradient of the objective from the
two difference quotients, and moves a fixed distance along it. The chain
is never restarted between probes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .kernels import PCN, SEQ_GIBBS, SEQ_PCN, Chain, KernelConfig, LogLikelihood, Sampler
from .metrics import efficiency_per_param

logger = logging.getLogger(__name__)

DEFAULT_DELTA = math.sqrt(2.0)
DEFAULT_STEP = 0.1
DEFAULT_N_HP = 1000

Evaluate = Callable[[float, float], float]


def objective(samples, n_accepted: int | None = None) -> float:
    """Mean over parameters of efficiency times standard deviation.

    ``samples`` are consecutive unthinned states of one window. A window
    without accepted proposals scores 0.
    """
    x = np.asarray(samples, dtype=float)
    if n_accepted == 0 or x.shape[0] < 2 or np.all(np.ptp(x, axis=0) == 0):
        return 0.0
    eff = efficiency_per_param(x)
    s = x.std(axis=0, ddof=1)
    return float(np.mean(eff * s))


@dataclass
class TunerState:
    """Current tuning point plus every probe evaluated so far.

    ``history`` rows are ``(iteration, beta, kappa, f)``. A pinned
    parameter (``tune_beta`` / ``tune_kappa`` False) is never probed or
    moved.
    """

    beta: float
    kappa: float
    step_length: float = DEFAULT_STEP
    delta: float = DEFAULT_DELTA
    n_hp: int = DEFAULT_N_HP
    beta_min: float = 1e-3
    kappa_min: float = 1e-3
    tune_beta: bool = True
    tune_kappa: bool = True
    iteration: int = 0
    stalled: bool = False
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.delta > 1:
            raise ValueError(f"probe factor delta must exceed 1, got {self.delta}")
        if self.n_hp < 100:
            raise ValueError(f"n_hp must be at least 100, got {self.n_hp}")
        if not (self.tune_beta or self.tune_kappa):
            raise ValueError("at least one of beta and kappa must be tuned")
        self.beta = _clamp(self.beta, self.beta_min)
        self.kappa = _clamp(self.kappa, self.kappa_min)

    @property
    def evaluations_per_iteration(self) -> int:
        return 2 * (int(self.tune_beta) + int(self.tune_kappa))

    def best(self) -> tuple[float, float, float]:
        """``(beta, kappa, f)`` of the highest objective seen (first on ties)."""
        if not self.history:
            return self.beta, self.kappa, float("nan")
        fs = [h[3] for h in self.history]
        _, b, k, f = self.history[int(np.argmax(fs))]
        return b, k, f


def _clamp(value: float, lower: float) -> float:
    return min(max(float(value), lower), 1.0)


def _quotient(evaluate, state: TunerState, lo: tuple, hi: tuple, axis: int) -> float:
    f_hi = evaluate(*hi)
    state.history.append((state.iteration, hi[0], hi[1], f_hi))
    f_lo = evaluate(*lo)
    state.history.append((state.iteration, lo[0], lo[1], f_lo))
    span = hi[axis] - lo[axis]
    return (f_hi - f_lo) / span if span > 0 else 0.0


def probe_gradient(state: TunerState, evaluate: Evaluate) -> tuple[float, float]:
    """Finite-difference gradient of the objective at the current point.

    Probes run in the order beta+, beta-, kappa+, kappa- and are appended
    to ``state.history``. Probes beyond the bounds are clamped and the
    quotient uses the clamped coordinates.
    """
    b, k, d = state.beta, state.kappa, state.delta
    g_beta = g_kappa = 0.0
    if state.tune_beta:
        g_beta = _quotient(
            evaluate, state, (_clamp(b / d, state.beta_min), k), (_clamp(b * d, state.beta_min), k), 0
        )
    if state.tune_kappa:
        g_kappa = _quotient(
            evaluate, state, (b, _clamp(k / d, state.kappa_min)), (b, _clamp(k * d, state.kappa_min)), 1
        )
    return g_beta, g_kappa


def tuner_move(state: TunerState, gradient: tuple[float, float]) -> TunerState:
    """Step ``step_length`` in log10 space along the normalised ascent direction.

    A zero or non-finite gradient leaves the point unchanged and sets
    ``stalled``. The returned state shares the history list.
    """
    ln10 = math.log(10.0)
    gb = gradient[0] * state.beta * ln10 if state.tune_beta else 0.0
    gk = gradient[1] * state.kappa * ln10 if state.tune_kappa else 0.0
    norm = math.hypot(gb, gk)
    if not (norm > 0 and math.isfinite(norm)):
        return replace(state, stalled=True, iteration=state.iteration + 1)
    log_b = math.log10(state.beta) + state.step_length * gb / norm
    log_k = math.log10(state.kappa) + state.step_length * gk / norm
    return replace(
        state,
        beta=_clamp(10.0**log_b, state.beta_min),
        kappa=_clamp(10.0**log_k, state.kappa_min),
        stalled=False,
        iteration=state.iteration + 1,
    )


def tune(evaluate: Evaluate, state: TunerState, n_iterations: int) -> TunerState:
    """Alternate probing and moving for ``n_iterations`` iterations."""
    for _ in range(n_iterations):
        grad = probe_gradient(state, evaluate)
        state = tuner_move(state, grad)
        logger.debug("tuner iteration %d -> beta=%.4g kappa=%.4g", state.iteration, state.beta, state.kappa)
    return state


@dataclass
class AdaptResult:
    config: KernelConfig
    state: TunerState
    burn_in: Chain
    sampler: Sampler

    @property
    def history(self) -> list:
        return self.state.history


MODES = {SEQ_PCN: (True, True), SEQ_GIBBS: (False, True), PCN: (True, False)}


def adapt(
    prior,
    log_likelihood: LogLikelihood,
    beta0: float,
    kappa0: float,
    budget: int,
    seed: int | None = 0,
    mode: str = SEQ_PCN,
    n_hp: int = DEFAULT_N_HP,
    step_length: float = DEFAULT_STEP,
    delta: float = DEFAULT_DELTA,
    record_thin: int | None = None,
) -> AdaptResult:
    """Tune the kernel during burn-in of a single chain.

    ``mode`` selects what is tuned: ``seqpcn`` tunes both parameters,
    ``gibbs`` pins beta to 1, ``pcn`` pins kappa to 1. The run stops once
    the step budget cannot pay for another full iteration and returns the
    best probe seen, the recorded burn-in chain (thinned by
    ``record_thin``, default ``n_hp``) and the live sampler so that a
    production run can continue from the final state.
    """
    if mode not in MODES:
        raise ValueError(f"unknown tuning mode {mode!r}; expected one of {tuple(MODES)}")
    if budget < 5 * n_hp:
        raise ValueError(f"budget {budget} is below the minimum of 5 * n_hp = {5 * n_hp}")
    tune_beta, tune_kappa = MODES[mode]
    state = TunerState(
        beta=beta0 if tune_beta else 1.0,
        kappa=kappa0 if tune_kappa else 1.0,
        step_length=step_length,
        delta=delta,
        n_hp=n_hp,
        tune_beta=tune_beta,
        tune_kappa=tune_kappa,
    )
    record_thin = record_thin or n_hp
    sampler = Sampler(prior, log_likelihood, _config(mode, state.beta, state.kappa), np.random.default_rng(seed))
    steps, thetas, logls, flags = [np.array([0])], [sampler.state.theta[None, :]], [np.array([sampler.state.log_likelihood])], []

    def evaluate(beta: float, kappa: float) -> float:
        sampler.config = _config(mode, beta, kappa)
        st, th, ll, fl = sampler.run(n_hp, thin=1, include_initial=False)
        keep = st % record_thin == 0
        steps.append(st[keep])
        thetas.append(th[keep])
        logls.append(ll[keep])
        flags.append(fl)
        return objective(th, int(fl.sum()))

    n_iter = budget // (state.evaluations_per_iteration * n_hp)
    state = tune(evaluate, state, n_iter)
    beta, kappa, _ = state.best()
    config = _config(mode, beta, kappa)
    chain = Chain(
        np.concatenate(steps),
        np.vstack(thetas),
        np.concatenate(logls),
        np.concatenate(flags) if flags else np.zeros(0, dtype=bool),
        record_thin,
        config,
        seed,
        {"tuning": True},
    )
    sampler.config = config
    return AdaptResult(config, state, chain, sampler)


def _config(mode: str, beta: float, kappa: float) -> KernelConfig:
    if mode == SEQ_GIBBS:
        return KernelConfig(SEQ_GIBBS, 1.0, kappa)
    if mode == PCN:
        return KernelConfig(PCN, beta, 1.0)
    return KernelConfig(SEQ_PCN, beta, kappa)
