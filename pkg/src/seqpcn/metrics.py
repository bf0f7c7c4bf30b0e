"""Chain diagnostics: acceptance rate, autocorrelation efficiency, ESS,
Gelman-Rubin and marginal KL divergence."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

#: Acceptance rate that is optimal for single-parameter random-walk tuning
#: on Gaussian targets. Documentation only; nothing here tunes towards it.
OPTIMAL_ACCEPTANCE = 0.234
#: sqrt(R-hat) at or below this is read as acceptable convergence.
RHAT_THRESHOLD = 1.2

MIN_SERIES_LENGTH = 10
MIN_KL_SAMPLES = 100
DEFAULT_KL_BINS = 50

_CHUNK = 128


def acceptance_rate(flags, burn_in_fraction: float = 0.5) -> float:
    """Fraction of accepted proposals after discarding the burn-in part.

    ``flags`` is either a boolean sequence (one entry per transition) or a
    :class:`~seqpcn.kernels.Chain`.
    """
    flags = np.asarray(getattr(flags, "accept_flags", flags), dtype=bool)
    if flags.size == 0:
        raise ValueError("acceptance rate of an empty chain is undefined")
    kept = flags[int(flags.size * burn_in_fraction) :]
    if kept.size == 0:
        raise ValueError("burn-in removes every step")
    return float(kept.mean())


def _autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation of each column of ``x`` up to ``max_lag``."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[: max_lag + 1] / n
    with np.errstate(invalid="ignore", divide="ignore"):
        return acov / acov[0]


def autocorrelation_sums(samples) -> np.ndarray:
    """Truncated ``sum_{i>=1} rho_i`` for every column of ``samples``.

    The sum runs over Geyer's initial positive sequence: pairs
    ``rho_{2t} + rho_{2t+1}`` are added while positive, with lags capped at
    ``n // 3``. Constant columns get NaN.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n < MIN_SERIES_LENGTH:
        raise ValueError(f"need at least {MIN_SERIES_LENGTH} samples, got {n}")
    max_lag = max(n // 3, 1)
    n_pairs = (max_lag + 1) // 2
    out = np.empty(p)
    for start in range(0, p, _CHUNK):
        block = x[:, start : start + _CHUNK]
        constant = np.ptp(block, axis=0) == 0
        rho = _autocorr(block, 2 * n_pairs - 1)
        pairs = rho[0::2] + rho[1::2]
        positive = pairs > 0
        # number of leading positive pairs per column
        stop = np.where(positive.all(axis=0), n_pairs, np.argmin(positive, axis=0))
        cums = np.vstack([np.zeros(block.shape[1]), np.cumsum(np.where(np.isfinite(pairs), pairs, 0.0), axis=0)])
        sums = cums[stop, np.arange(block.shape[1])] - 1.0
        sums[constant] = np.nan
        out[start : start + block.shape[1]] = sums
    return out


def _eff_from_sum(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        eff = 1.0 / (1.0 + 2.0 * s)
    eff = np.where((eff > 1.0) | (eff <= 0.0) | ~np.isfinite(eff), 1.0, eff)
    return np.where(np.isnan(s), 0.0, eff)


def efficiency_per_param(samples) -> np.ndarray:
    """Efficiency ``1 / (1 + 2 sum rho_i)`` of each column, clamped to (0, 1].

    Columns that never change get efficiency 0.
    """
    return _eff_from_sum(autocorrelation_sums(samples))


def efficiency(series) -> float:
    series = np.asarray(series, dtype=float).reshape(-1)
    return float(efficiency_per_param(series[:, None])[0])


def combined_efficiency(samples) -> float:
    """Efficiency of several parameters jointly.

    Averages the truncated autocorrelation sums over the non-constant
    columns before taking the reciprocal. A chain whose columns are all
    constant scores 0.
    """
    sums = autocorrelation_sums(samples)
    sums = sums[~np.isnan(sums)]
    if sums.size == 0:
        return 0.0
    return float(_eff_from_sum(sums.mean()))


def effective_sample_size(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    return efficiency_per_param(x) * x.shape[0]


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor sqrt(R-hat) of one parameter.

    ``chains`` holds ``m >= 2`` equally long sequences. Returns inf when the
    within-chain variance vanishes.
    """
    return float(gelman_rubin_per_param(np.asarray(chains, dtype=float)[:, :, None])[0])


def gelman_rubin_per_param(chains) -> np.ndarray:
    """sqrt(R-hat) for every parameter of ``chains`` shaped ``(m, n, p)``."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    m, n, _ = x.shape
    if m < 2:
        raise ValueError(f"Gelman-Rubin needs at least 2 chains, got {m}")
    if n < MIN_SERIES_LENGTH:
        raise ValueError(f"chains must have at least {MIN_SERIES_LENGTH} samples, got {n}")
    moments = [chain_moments(c) for c in x]
    return gelman_rubin_from_moments([mo[0] for mo in moments], [mo[1] for mo in moments], n)


def chain_moments(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and unbiased variance; constant columns get exactly 0.

    Summation rounding otherwise leaves a variance of order 1e-32 on a
    column that never moved, which would inflate sqrt(R-hat) to ~1e14
    instead of reporting it as undefined.
    """
    x = np.asarray(samples, dtype=float)
    var = x.var(axis=0, ddof=1)
    var[np.ptp(x, axis=0) == 0] = 0.0
    return x.mean(axis=0), var


def gelman_rubin_from_moments(means, variances, n: int) -> np.ndarray:
    """sqrt(R-hat) from per-chain means and unbiased variances, each ``(m, p)``.

    Lets callers pool chains without keeping their samples in memory.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    m = means.shape[0]
    if m < 2:
        raise ValueError(f"Gelman-Rubin needs at least 2 chains, got {m}")
    w = variances.mean(axis=0)
    b_over_n = means.var(axis=0, ddof=1)
    v = (n - 1) / n * w + (1.0 + 1.0 / m) * b_over_n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(v / w)
    return np.where(w > 0, r, np.inf)


def kl_marginal(samples, reference, bins: int = DEFAULT_KL_BINS) -> float:
    """Histogram estimate of KL(samples || reference) for one parameter.

    Both samples share ``bins`` equal bins over their joint range widened
    by 1% on each side; empty bins receive a pseudo-count of 0.5.
    """
    p = np.asarray(samples, dtype=float).reshape(-1)
    q = np.asarray(reference, dtype=float).reshape(-1)
    if p.size < MIN_KL_SAMPLES or q.size < MIN_KL_SAMPLES:
        raise ValueError(f"KL estimate needs at least {MIN_KL_SAMPLES} samples on both sides")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    span = hi - lo
    if not span > 0:
        raise ValueError("samples and reference are both concentrated on a single value")
    edges = np.linspace(lo - 0.01 * span, hi + 0.01 * span, bins + 1)
    cp = np.histogram(p, edges)[0].astype(float)
    cq = np.histogram(q, edges)[0].astype(float)
    cp[cp == 0] = 0.5
    cq[cq == 0] = 0.5
    pp = cp / cp.sum()
    qq = cq / cq.sum()
    return float(np.sum(pp * np.log(pp / qq)))


def kl_per_param(samples, reference, bins: int = DEFAULT_KL_BINS) -> np.ndarray:
    s = np.asarray(samples, dtype=float)
    r = np.asarray(reference, dtype=float)
    if s.shape[1] != r.shape[1]:
        raise ValueError(f"parameter count mismatch: {s.shape[1]} vs {r.shape[1]}")
    return np.array([kl_marginal(s[:, j], r[:, j], bins) for j in range(s.shape[1])])


def post_burn_in(chain, burn_in_fraction: float = 0.5) -> np.ndarray:
    """Recorded states after the burn-in part of the chain."""
    if not 0 <= burn_in_fraction < 1:
        raise ValueError(f"burn-in fraction must lie in [0, 1), got {burn_in_fraction}")
    if burn_in_fraction == 0:
        return chain.thetas
    return chain.thetas[chain.steps > burn_in_fraction * chain.n_steps]


@dataclass
class MetricsReport:
    acceptance_rate: float
    eff_per_param: np.ndarray
    eff_combined: float
    ess_per_param: np.ndarray
    rhat_per_param: np.ndarray | None = None
    rhat_max: float | None = None
    kl_per_param: np.ndarray | None = None
    kl_mean: float | None = None
    n_samples: int = 0
    n_chains: int = 1

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, np.ndarray):
                value = [_json_float(v) for v in value]
            elif isinstance(value, float):
                value = _json_float(value)
            out[key] = value
        return out


def _json_float(v):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def metrics_report(chains, reference=None, burn_in_fraction: float = 0.5, bins: int = DEFAULT_KL_BINS) -> MetricsReport:
    """Diagnostics over one or more chains of the same run.

    Acceptance and efficiencies are averaged over chains. sqrt(R-hat)
    needs at least two chains; KL needs a reference sample matrix.
    """
    chains = list(chains)
    if not chains:
        raise ValueError("no chains given")
    kept = [post_burn_in(c, burn_in_fraction) for c in chains]
    n = min(k.shape[0] for k in kept)
    kept = [k[:n] for k in kept]
    acc = float(np.mean([acceptance_rate(c.accept_flags, burn_in_fraction) for c in chains]))
    eff = np.mean([efficiency_per_param(k) for k in kept], axis=0)
    eff_c = float(np.mean([combined_efficiency(k) for k in kept]))
    report = MetricsReport(acc, eff, eff_c, eff * n, n_samples=n, n_chains=len(chains))
    if len(chains) >= 2:
        report.rhat_per_param = gelman_rubin_per_param(np.stack(kept))
        report.rhat_max = float(np.max(report.rhat_per_param))
    if reference is not None:
        kl = np.mean([kl_per_param(k, reference, bins) for k in kept], axis=0)
        report.kl_per_param = kl
        report.kl_mean = float(kl.mean())
    return report
