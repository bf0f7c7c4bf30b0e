"""Proposal kernels, acceptance rules and the chain runner.

Every kernel consumes random numbers in the same order per step: the box
centre (two uniforms per attempt, sequential kernels only), then the
Gaussian innovation, then one uniform for the accept decision. The initial
state is a prior draw taken before the first step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conditional import BoxFactorCache, BoxSelection, draw_box
from .grid import GaussianPrior, sample_prior

RANDOM_WALK = "mh"
PCN = "pcn"
SEQ_GIBBS = "gibbs"
SEQ_PCN = "seqpcn"
KERNEL_KINDS = (RANDOM_WALK, PCN, SEQ_GIBBS, SEQ_PCN)

LogLikelihood = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class KernelConfig:
    """Kernel kind and its tuning parameters.

    ``pcn`` ignores ``kappa`` (the box is the whole domain) and ``gibbs``
    ignores ``beta`` (the box is redrawn from its conditional law). For the
    random walk ``beta`` is the step size and may exceed 1.
    """

    kind: str = SEQ_PCN
    beta: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not self.beta > 0 or (self.kind != RANDOM_WALK and self.beta > 1):
            raise ValueError(f"beta must lie in (0, 1] for {self.kind}, got {self.beta}")
        if not 0 < self.kappa <= 1:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")

    @property
    def effective(self) -> tuple[float, float]:
        """``(beta, kappa)`` actually used by the proposal."""
        if self.kind == PCN:
            return self.beta, 1.0
        if self.kind == SEQ_GIBBS:
            return 1.0, self.kappa
        return self.beta, self.kappa

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "kappa": self.kappa}


def propose_rw(theta: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    return theta + beta * rng.standard_normal(theta.shape[0])


def propose_pcn(prior: GaussianPrior, theta: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    xi = prior.chol @ rng.standard_normal(prior.n)
    return math.sqrt(1.0 - beta * beta) * (theta - prior.mean) + beta * xi + prior.mean


def propose_seq_pcn(
    prior: GaussianPrior,
    theta: np.ndarray,
    beta: float,
    kappa: float,
    rng: np.random.Generator,
    cache: BoxFactorCache | None = None,
) -> tuple[np.ndarray, BoxSelection]:
    """pCN move restricted to a random box, centred on the box's conditional mean.

    With ``beta = 1`` this is a plain sequential Gibbs draw, with a box
    covering the whole grid it reduces to :func:`propose_pcn`.
    """
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    sel = draw_box(prior.grid, kappa, rng)
    cache = cache if cache is not None else BoxFactorCache(prior)
    cg = cache.condition(sel, theta[sel.outside])
    xi = cg.cond_chol @ rng.standard_normal(sel.q)
    if beta == 1.0:
        new_block = cg.cond_mean + xi
    else:
        new_block = math.sqrt(1.0 - beta * beta) * (theta[sel.inside] - cg.cond_mean) + beta * xi + cg.cond_mean
    proposal = theta.copy()
    proposal[sel.inside] = new_block
    return proposal, sel


def _check_log(value: float, what: str) -> float:
    if math.isnan(value):
        raise FloatingPointError(f"{what} is NaN")
    return value


def accept_prior_sampling(logl_current: float, logl_proposed: float, rng: np.random.Generator) -> bool:
    """Accept with probability ``min(1, L(proposed) / L(current))``."""
    _check_log(logl_current, "current log-likelihood")
    _check_log(logl_proposed, "proposed log-likelihood")
    u = rng.random()
    diff = logl_proposed - logl_current
    if diff >= 0:
        return True
    return u < math.exp(diff)


def accept_mh(log_post_current: float, log_post_proposed: float, rng: np.random.Generator) -> bool:
    """Metropolis rule on the unnormalised log posterior (symmetric proposal)."""
    return accept_prior_sampling(log_post_current, log_post_proposed, rng)


@dataclass
class ChainState:
    theta: np.ndarray
    log_likelihood: float
    step: int = 0
    log_prior: float = 0.0


class ChainError(RuntimeError):
    """A likelihood evaluation failed; carries the step and the proposed field."""

    def __init__(self, step: int, theta: np.ndarray, cause: BaseException):
        super().__init__(f"likelihood evaluation failed at step {step}: {cause}")
        self.step = step
        self.theta = np.array(theta, copy=True)
        self.cause = cause


@dataclass
class Chain:
    """Thinned record of a chain.

    Row ``r`` of ``thetas`` is the state after ``steps[r]`` transitions;
    ``steps`` always starts with the initial state 0. ``accept_flags`` has
    one entry per transition, thinned or not.
    """

    steps: np.ndarray
    thetas: np.ndarray
    log_likelihoods: np.ndarray
    accept_flags: np.ndarray
    thin: int
    config: KernelConfig
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(self.accept_flags.size)

    @property
    def accepted(self) -> np.ndarray:
        """Accept flag of the transition that produced each recorded row."""
        out = np.zeros(self.steps.size, dtype=bool)
        later = self.steps > 0
        out[later] = self.accept_flags[self.steps[later] - 1]
        return out


class Sampler:
    """Single Markov chain whose kernel can be changed between segments."""

    def __init__(
        self,
        prior: GaussianPrior,
        log_likelihood: LogLikelihood,
        config: KernelConfig,
        rng: np.random.Generator,
        theta0: np.ndarray | None = None,
        cache: BoxFactorCache | None = None,
    ):
        self.prior = prior
        self.log_likelihood = log_likelihood
        self.config = config
        self.rng = rng
        self.cache = cache if cache is not None else BoxFactorCache(prior)
        theta = sample_prior(prior, rng) if theta0 is None else np.array(theta0, dtype=float)
        self.state = ChainState(theta, self._evaluate(theta, 0), 0, prior.log_density(theta))

    def _evaluate(self, theta, step) -> float:
        try:
            value = float(self.log_likelihood(theta))
        except Exception as exc:
            raise ChainError(step, theta, exc) from exc
        if math.isnan(value):
            raise ChainError(step, theta, FloatingPointError("log-likelihood is NaN"))
        return value

    def propose(self, theta: np.ndarray) -> np.ndarray:
        cfg = self.config
        beta, kappa = cfg.effective
        if cfg.kind == RANDOM_WALK:
            return propose_rw(theta, cfg.beta, self.rng)
        if cfg.kind == PCN:
            return propose_pcn(self.prior, theta, beta, self.rng)
        return propose_seq_pcn(self.prior, theta, beta, kappa, self.rng, self.cache)[0]

    def step(self) -> bool:
        """One propose/accept transition; returns whether it was accepted."""
        s = self.state
        proposal = self.propose(s.theta)
        logl = self._evaluate(proposal, s.step + 1)
        if self.config.kind == RANDOM_WALK:
            logp = self.prior.log_density(proposal)
            ok = accept_mh(s.log_prior + s.log_likelihood, logp + logl, self.rng)
        else:
            logp = 0.0
            ok = accept_prior_sampling(s.log_likelihood, logl, self.rng)
        s.step += 1
        if ok:
            s.theta, s.log_likelihood = proposal, logl
            if self.config.kind == RANDOM_WALK:
                s.log_prior = logp
        return ok

    def run(self, n_steps: int, thin: int = 1, include_initial: bool = True):
        """Advance ``n_steps`` transitions.

        Returns ``(steps, thetas, log_likelihoods, accept_flags)`` where the
        rows are the states whose absolute step count is a multiple of
        ``thin``.
        """
        if n_steps < 0 or thin < 1:
            raise ValueError(f"need n_steps >= 0 and thin >= 1, got {n_steps}, {thin}")
        s = self.state
        steps, thetas, logls = [], [], []
        if include_initial and s.step % thin == 0:
            steps.append(s.step)
            thetas.append(s.theta)
            logls.append(s.log_likelihood)
        flags = np.zeros(n_steps, dtype=bool)
        for i in range(n_steps):
            flags[i] = self.step()
            if s.step % thin == 0:
                steps.append(s.step)
                thetas.append(s.theta)
                logls.append(s.log_likelihood)
        thetas = np.array(thetas) if thetas else np.empty((0, self.prior.n))
        return np.array(steps, dtype=np.int64), thetas, np.array(logls, dtype=float), flags


def run_chain(
    config: KernelConfig,
    prior: GaussianPrior,
    log_likelihood: LogLikelihood,
    n_steps: int,
    thin: int = 1,
    seed: int | None = 0,
    cache: BoxFactorCache | None = None,
) -> Chain:
    """Run one chain from a prior draw; deterministic for a given seed."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}")
    if thin < 1:
        raise ValueError(f"thin must be at least 1, got {thin}")
    sampler = Sampler(prior, log_likelihood, config, np.random.default_rng(seed), cache=cache)
    steps, thetas, logls, flags = sampler.run(n_steps, thin)
    return Chain(steps, thetas, logls, flags, thin, config, seed)


def constant_log_likelihood(theta: np.ndarray) -> float:
    """Flat likelihood; turns any prior-sampling kernel into a prior sampler."""
    return 0.0
