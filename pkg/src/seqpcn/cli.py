"""Command line: ``seqpcn {gen-case,run,sweep,adapt,reference,metrics}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .cases import load_problem, save_problem, template
from .chainio import read_chain
from .kernels import KERNEL_KINDS, SEQ_PCN, KernelConfig
from .metrics import metrics_report
from .tuner import DEFAULT_N_HP, DEFAULT_STEP, MODES

log = logging.getLogger("seqpcn")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, steps: bool = True) -> None:
    p.add_argument("--config", required=True, help="problem file (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--thin", type=int, default=ex.DEFAULT_THIN, help="record every N-th state")
    p.add_argument("--burn-in", type=float, default=ex.DEFAULT_BURN_IN, help="fraction of each chain discarded")
    if steps:
        p.add_argument("--steps", type=int, required=True, help="MCMC steps per chain")


def _kernel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", choices=KERNEL_KINDS, default=SEQ_PCN)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--kappa", type=float, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqpcn", description="Sequential pCN-MCMC experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-case", help="write a problem file from a template")
    g.add_argument("template", help="base, case2..case5, direct-oracle or scaled(N[,n_obs])")
    g.add_argument("--out", required=True, help="problem file to write")
    g.add_argument("--seed", type=int, help="data seed written into the file")
    g.add_argument("--noise-std", type=float, help="override the observation noise")
    g.add_argument("--thickness", type=float, help="override the aquifer thickness (m)")

    r = sub.add_parser("run", help="run independent chains and report metrics")
    _common(r)
    _kernel_args(r)
    r.add_argument("--chains", type=int, default=1)
    r.add_argument("--reference", help="reference chain CSV for KL")
    r.add_argument("--prior-only", action="store_true", help="ignore the data (constant likelihood)")

    s = sub.add_parser("sweep", help="grid of (beta, kappa) combinations")
    _common(s)
    s.add_argument("--betas", type=_floats, default=[0.25, 0.5, 0.75, 1.0])
    s.add_argument("--kappas", type=_floats, default=[0.1, 0.2, 0.5, 1.0])
    s.add_argument("--repeats", type=int, default=ex.DEFAULT_REPEATS)
    s.add_argument("--reference", help="reference chain CSV for KL")

    a = sub.add_parser("adapt", help="tune (beta, kappa) during burn-in, then run production")
    _common(a, steps=False)
    a.add_argument("--steps", type=int, default=0, help="production steps after tuning")
    a.add_argument("--mode", choices=sorted(MODES), default=SEQ_PCN, help="gibbs pins beta=1, pcn pins kappa=1")
    a.add_argument("--beta", type=float, help="starting beta (random if unset)")
    a.add_argument("--kappa", type=float, help="starting kappa (random if unset)")
    a.add_argument("--budget", type=int, default=40_000, help="burn-in steps spent tuning")
    a.add_argument("--n-hp", type=int, default=DEFAULT_N_HP, help="steps per probe evaluation")
    a.add_argument("--step-length", type=float, default=DEFAULT_STEP, help="move length in log10 space")
    a.add_argument("--restarts", type=int, default=1)

    f = sub.add_parser("reference", help="long chain stored as KL reference")
    _common(f)
    _kernel_args(f)

    m = sub.add_parser("metrics", help="diagnostics for existing chain files")
    m.add_argument("chains", nargs="+", help="chain CSV files")
    m.add_argument("--reference", help="reference chain CSV for KL")
    m.add_argument("--burn-in", type=float, default=ex.DEFAULT_BURN_IN)
    m.add_argument("--out", help="write the report here instead of stdout")
    return parser


def _kernel(ns) -> KernelConfig:
    return KernelConfig(ns.kernel, ns.beta, ns.kappa)


def cmd_gen_case(ns) -> int:
    problem = template(ns.template)
    if ns.seed is not None:
        problem["seed"] = ns.seed
    if ns.noise_std is not None:
        problem["observations"]["noise_std"] = ns.noise_std
    if ns.thickness is not None:
        problem["thickness"] = ns.thickness
    save_problem(problem, ns.out)
    print(ns.out)
    return 0


def cmd_run(ns) -> int:
    res = ex.run_experiment(
        load_problem(ns.config), _kernel(ns), ns.steps, ns.thin, ns.chains, ns.seed, ns.workers,
        ns.out, ns.reference, ns.prior_only, ns.burn_in,
    )
    return _finish(res.errors, res.report and {k: res.report.get(k) for k in ("acceptance_rate", "eff_combined", "rhat_max", "kl_mean")})


def cmd_sweep(ns) -> int:
    res = ex.sweep(
        load_problem(ns.config), ns.betas, ns.kappas, ns.steps, ns.thin, ns.repeats, ns.seed, ns.workers,
        ns.out, ns.reference, ns.burn_in,
    )
    return _finish(res.errors, ex._jsonable(res.best))


def cmd_adapt(ns) -> int:
    results = ex.adapt_experiment(
        load_problem(ns.config), ns.mode, ns.beta, ns.kappa, ns.budget, ns.n_hp, ns.step_length,
        ns.steps, ns.thin, ns.restarts, ns.seed, ns.workers, ns.out, ns.burn_in,
    )
    errors = [f"restart {r['restart']}: {r['status']}" for r in results if r["status"] != "ok"]
    summary = [{"restart": r["restart"], "tuned": r["config"].to_dict()} for r in results if r["status"] == "ok"]
    return _finish(errors, summary)


def cmd_reference(ns) -> int:
    ref = ex.reference_chain(load_problem(ns.config), _kernel(ns), ns.steps, ns.thin, ns.seed, ns.out, ns.burn_in)
    return _finish([], {"rows": int(ref.thetas.shape[0]), "path": str(Path(ns.out) / "reference.csv")})


def cmd_metrics(ns) -> int:
    chains = [read_chain(p) for p in ns.chains]
    ref = ex.load_reference(ns.reference) if ns.reference else None
    report = metrics_report(chains, ref, ns.burn_in).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if ns.out:
        Path(ns.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _finish(errors: list, summary) -> int:
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if summary is not None:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 1 if errors else 0


COMMANDS = {
    "gen-case": cmd_gen_case,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "adapt": cmd_adapt,
    "reference": cmd_reference,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
