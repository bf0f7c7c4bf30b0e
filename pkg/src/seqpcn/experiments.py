"""Experiment drivers behind the command line: multi-chain runs, (beta, kappa)
sweeps, adaptive tuning with restarts and long reference chains.

Work items run in a process pool when more than one worker is requested.
Every item derives its own seed from the master seed and its position in
the experiment, so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cases import Case, build_case
from .chainio import read_chain, write_chain, write_history
from .kernels import PCN, SEQ_GIBBS, SEQ_PCN, Chain, KernelConfig, Sampler, constant_log_likelihood, run_chain
from .metrics import (
    acceptance_rate,
    chain_moments,
    combined_efficiency,
    gelman_rubin_from_moments,
    kl_per_param,
    metrics_report,
    post_burn_in,
)
from .tuner import adapt

logger = logging.getLogger(__name__)

DEFAULT_THIN = 200
DEFAULT_BURN_IN = 0.5
DEFAULT_REPEATS = 3


def derive_seed(master: int, *key: int) -> int:
    """Seed for the work item at position ``key`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


_CASES: dict[str, Case] = {}
_REFERENCES: dict[str, np.ndarray] = {}


def _case(problem: dict) -> Case:
    """Per-process cache; building the prior dominates short runs."""
    key = json.dumps(problem, sort_keys=True)
    if key not in _CASES:
        _CASES.clear()
        _CASES[key] = build_case(problem)
    return _CASES[key]


def load_reference(path) -> np.ndarray:
    """Sample matrix of a reference chain file (already burn-in free)."""
    key = str(Path(path).resolve())
    if key not in _REFERENCES:
        _REFERENCES[key] = read_chain(path).thetas
    return _REFERENCES[key]


def kernel_for(beta: float, kappa: float) -> KernelConfig:
    """Kernel of a sweep cell; the edge rows use the plain special kernels."""
    if kappa >= 1.0:
        return KernelConfig(PCN, beta, 1.0)
    if beta >= 1.0:
        return KernelConfig(SEQ_GIBBS, 1.0, kappa)
    return KernelConfig(SEQ_PCN, beta, kappa)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _likelihood(case: Case, prior_only: bool):
    return constant_log_likelihood if prior_only else case.log_likelihood


# --------------------------------------------------------------------- run


@dataclass
class RunResult:
    chains: list
    errors: list = field(default_factory=list)
    report: dict | None = None


def _chain_task(args) -> tuple[Chain | None, str | None]:
    problem, config, n_steps, thin, seed, prior_only = args
    try:
        case = _case(problem)
        chain = run_chain(config, case.prior, _likelihood(case, prior_only), n_steps, thin, seed)
        chain.metadata = {"prior_only": prior_only}
        return chain, None
    except Exception as exc:  # reported per chain, never fatal for siblings
        logger.error("chain with seed %s failed: %s", seed, exc)
        return None, f"{type(exc).__name__}: {exc}"


def run_experiment(
    problem: dict,
    config: KernelConfig,
    n_steps: int,
    thin: int = DEFAULT_THIN,
    n_chains: int = 1,
    seed: int = 0,
    workers: int = 1,
    out=None,
    reference=None,
    prior_only: bool = False,
    burn_in_fraction: float = DEFAULT_BURN_IN,
) -> RunResult:
    """Run ``n_chains`` independent chains and summarise them.

    With ``out`` set, writes ``chain_<i>.csv`` (plus sidecars) and
    ``metrics.json``.
    """
    _validate_run(n_steps, thin, n_chains, burn_in_fraction)
    seeds = [derive_seed(seed, i) for i in range(n_chains)]
    results = _map(_chain_task, [(problem, config, n_steps, thin, s, prior_only) for s in seeds], workers)
    chains = [c for c, _ in results]
    errors = [f"chain {i}: {e}" for i, (_, e) in enumerate(results) if e]
    good = [c for c in chains if c is not None]
    report = None
    if good:
        ref = load_reference(reference) if reference else None
        report = metrics_report(good, ref, burn_in_fraction).to_dict()
        report["config"] = config.to_dict()
        report["seeds"] = seeds
        report["master_seed"] = seed
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        grid = _case(problem).grid
        for i, c in enumerate(chains):
            if c is not None:
                write_chain(c, out / f"chain_{i}.csv", grid)
        payload = dict(report or {}, errors=errors)
        (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return RunResult(chains, errors, report)


def _validate_run(n_steps, thin, n_chains, burn_in_fraction):
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}")
    if thin < 1:
        raise ValueError(f"thin must be at least 1, got {thin}")
    if n_chains < 1:
        raise ValueError(f"need at least one chain, got {n_chains}")
    if not 0 <= burn_in_fraction < 1:
        raise ValueError(f"burn-in fraction must lie in [0, 1), got {burn_in_fraction}")


# ------------------------------------------------------------------- sweep

SWEEP_FIELDS = ["beta", "kappa", "repeat", "acceptance", "eff", "rhat_max", "kl_mean", "status"]
MEAN_FIELDS = ["beta", "kappa", "n_ok", "acceptance", "eff", "eff_se", "rhat_max", "kl_mean"]


def _sweep_task(args) -> dict:
    problem, beta, kappa, repeat, n_steps, thin, seed, burn_in, reference = args
    row = {"beta": beta, "kappa": kappa, "repeat": repeat, "seed": seed}
    try:
        case = _case(problem)
        chain = run_chain(kernel_for(beta, kappa), case.prior, case.log_likelihood, n_steps, thin, seed)
        kept = post_burn_in(chain, burn_in)
        row.update(
            acceptance=acceptance_rate(chain.accept_flags, burn_in),
            eff=combined_efficiency(kept),
            kl_mean=float(np.mean(kl_per_param(kept, load_reference(reference)))) if reference else math.nan,
            moments=chain_moments(kept),
            n=kept.shape[0],
            status="ok",
        )
    except Exception as exc:
        logger.error("sweep cell beta=%s kappa=%s repeat=%s failed: %s", beta, kappa, repeat, exc)
        logger.debug("%s", traceback.format_exc())
        row.update(acceptance=math.nan, eff=math.nan, kl_mean=math.nan, status=f"error: {type(exc).__name__}: {exc}")
    return row


@dataclass
class SweepResult:
    rows: list
    means: list
    best: dict
    errors: list


def sweep(
    problem: dict,
    betas,
    kappas,
    n_steps: int,
    thin: int = DEFAULT_THIN,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
    workers: int = 1,
    out=None,
    reference=None,
    burn_in_fraction: float = DEFAULT_BURN_IN,
) -> SweepResult:
    """Run every (beta, kappa, repeat) combination.

    sqrt(R-hat) of a cell pools its repeats. Failed combinations become
    rows with an error status and the sweep carries on.
    """
    betas = [float(b) for b in betas]
    kappas = [float(k) for k in kappas]
    for v in betas + kappas:
        if not 0 < v <= 1:
            raise ValueError(f"sweep grid values must lie in (0, 1], got {v}")
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    _validate_run(n_steps, thin, 1, burn_in_fraction)
    tasks = [
        (problem, b, k, r, n_steps, thin, derive_seed(seed, ib, ik, r), burn_in_fraction, reference)
        for ib, b in enumerate(betas)
        for ik, k in enumerate(kappas)
        for r in range(repeats)
    ]
    rows = _map(_sweep_task, tasks, workers)
    means = []
    for b in betas:
        for k in kappas:
            cell = [r for r in rows if r["beta"] == b and r["kappa"] == k]
            ok = [r for r in cell if r["status"] == "ok"]
            rhat = math.nan
            if len(ok) >= 2:
                n = min(r["n"] for r in ok)
                rhat = float(np.max(gelman_rubin_from_moments([r["moments"][0] for r in ok], [r["moments"][1] for r in ok], n)))
            for r in cell:
                r["rhat_max"] = rhat if r["status"] == "ok" else math.nan
            effs = np.array([r["eff"] for r in ok])
            means.append(
                {
                    "beta": b,
                    "kappa": k,
                    "n_ok": len(ok),
                    "acceptance": _mean([r["acceptance"] for r in ok]),
                    "eff": _mean(effs),
                    "eff_se": float(effs.std(ddof=1) / math.sqrt(effs.size)) if effs.size >= 2 else math.nan,
                    "rhat_max": rhat,
                    "kl_mean": _mean([r["kl_mean"] for r in ok]),
                }
            )
    scored = [m for m in means if m["n_ok"] > 0 and math.isfinite(m["eff"])]
    best = dict(max(scored, key=lambda m: m["eff"])) if scored else {}
    errors = [f"beta={r['beta']} kappa={r['kappa']} repeat={r['repeat']}: {r['status']}" for r in rows if r["status"] != "ok"]
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "sweep.csv", SWEEP_FIELDS, rows)
        _write_rows(out / "sweep_mean.csv", MEAN_FIELDS, means)
        (out / "sweep_best.json").write_text(json.dumps(_jsonable(best), indent=2, sort_keys=True) + "\n")
    return SweepResult(rows, means, best, errors)


def _mean(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.mean()) if values.size else math.nan


def _jsonable(d: dict) -> dict:
    return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v)) for k, v in d.items()}


def _write_rows(path: Path, fields: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in fields})


def read_sweep_means(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "n_ok" else float(v)) for k, v in r.items()})
    return out


def interpolate_efficiency(means: list[dict], beta: float, kappa: float) -> float:
    """Bilinear interpolation of sweep efficiency in log10-log10 space.

    Points outside the swept grid are clamped to its edge.
    """
    bs = sorted({m["beta"] for m in means})
    ks = sorted({m["kappa"] for m in means})
    table = {(m["beta"], m["kappa"]): m["eff"] for m in means}
    lb, lk = np.log10(bs), np.log10(ks)
    x = float(np.clip(math.log10(beta), lb[0], lb[-1]))
    y = float(np.clip(math.log10(kappa), lk[0], lk[-1]))
    i = int(np.clip(np.searchsorted(lb, x) - 1, 0, max(len(bs) - 2, 0)))
    j = int(np.clip(np.searchsorted(lk, y) - 1, 0, max(len(ks) - 2, 0)))
    i1, j1 = min(i + 1, len(bs) - 1), min(j + 1, len(ks) - 1)
    tx = (x - lb[i]) / (lb[i1] - lb[i]) if i1 != i else 0.0
    ty = (y - lk[j]) / (lk[j1] - lk[j]) if j1 != j else 0.0
    f00, f10 = table[(bs[i], ks[j])], table[(bs[i1], ks[j])]
    f01, f11 = table[(bs[i], ks[j1])], table[(bs[i1], ks[j1])]
    return float((1 - tx) * (1 - ty) * f00 + tx * (1 - ty) * f10 + (1 - tx) * ty * f01 + tx * ty * f11)


# ------------------------------------------------------------------- adapt


def _adapt_task(args) -> dict:
    problem, mode, beta0, kappa0, budget, n_hp, step_length, n_steps, thin, seed, restart = args
    try:
        case = _case(problem)
        if beta0 is None or kappa0 is None:
            start = np.random.default_rng(seed)
            lo = math.log10(0.01)
            beta0 = beta0 if beta0 is not None else 10 ** start.uniform(lo, 0.0)
            kappa0 = kappa0 if kappa0 is not None else 10 ** start.uniform(lo, 0.0)
        res = adapt(case.prior, case.log_likelihood, beta0, kappa0, budget, seed, mode, n_hp, step_length)
        out = {"restart": restart, "seed": seed, "start": (beta0, kappa0), "config": res.config, "history": res.history}
        out["final"] = (res.state.beta, res.state.kappa)
        if n_steps > 0:
            sampler = res.sampler
            prod = Sampler(case.prior, case.log_likelihood, res.config, sampler.rng, theta0=sampler.state.theta)
            steps, thetas, logls, flags = prod.run(n_steps, thin)
            out["chain"] = Chain(steps, thetas, logls, flags, thin, res.config, seed, {"tuned": True})
        out["status"] = "ok"
        return out
    except Exception as exc:
        logger.error("adapt restart %d failed: %s", restart, exc)
        return {"restart": restart, "seed": seed, "status": f"error: {type(exc).__name__}: {exc}"}


def adapt_experiment(
    problem: dict,
    mode: str = SEQ_PCN,
    beta0: float | None = None,
    kappa0: float | None = None,
    budget: int = 40_000,
    n_hp: int = 1000,
    step_length: float = 0.1,
    n_steps: int = 0,
    thin: int = DEFAULT_THIN,
    restarts: int = 1,
    seed: int = 0,
    workers: int = 1,
    out=None,
    burn_in_fraction: float = DEFAULT_BURN_IN,
) -> list[dict]:
    """Tune from ``restarts`` starting points, then optionally run production.

    Unset starting values are drawn log-uniformly from [0.01, 1] per
    restart. Writes ``history_<r>.csv``, ``tuned_<r>.json`` and, when
    ``n_steps > 0``, ``chain_<r>.csv``.
    """
    tasks = [
        (problem, mode, beta0, kappa0, budget, n_hp, step_length, n_steps, thin, derive_seed(seed, r), r)
        for r in range(restarts)
    ]
    results = _map(_adapt_task, tasks, workers)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for res in results:
            r = res["restart"]
            summary = {"restart": r, "seed": res["seed"], "status": res["status"]}
            if res["status"] == "ok":
                write_history(res["history"], out / f"history_{r}.csv")
                summary.update(start=list(res["start"]), final=list(res["final"]), tuned=res["config"].to_dict())
                if "chain" in res:
                    write_chain(res["chain"], out / f"chain_{r}.csv", _case(problem).grid)
                    summary["metrics"] = metrics_report([res["chain"]], None, burn_in_fraction).to_dict()
            (out / f"tuned_{r}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return results


# --------------------------------------------------------------- reference


def reference_chain(
    problem: dict,
    config: KernelConfig,
    n_steps: int,
    thin: int = DEFAULT_THIN,
    seed: int = 0,
    out=None,
    burn_in_fraction: float = DEFAULT_BURN_IN,
) -> Chain:
    """Long chain with its burn-in removed, for use as a KL reference."""
    if n_steps < thin:
        raise ValueError(f"budget of {n_steps} steps is smaller than the thinning stride {thin}")
    case = _case(problem)
    chain = run_chain(config, case.prior, case.log_likelihood, n_steps, thin, derive_seed(seed, 0))
    keep = chain.steps > burn_in_fraction * chain.n_steps
    ref = Chain(
        chain.steps[keep],
        chain.thetas[keep],
        chain.log_likelihoods[keep],
        chain.accept_flags,
        thin,
        config,
        chain.seed,
        {"reference": True, "burn_in_fraction": burn_in_fraction},
    )
    if out is not None:
        write_chain(ref, Path(out) / "reference.csv", case.grid)
    return ref
