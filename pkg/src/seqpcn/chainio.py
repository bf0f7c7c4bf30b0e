"""Chain files: one CSV of recorded states plus a JSON sidecar.

The CSV header is ``step,accepted,log_likelihood,theta_0,...``. Floats are
written with 17 significant digits so that a re-read chain is bitwise equal
to the one in memory. The sidecar carries the kernel, seed, grid and the
full per-step accept flags (bit-packed, base64) which thinning would
otherwise lose.
"""

from __future__ import annotations

import base64
import csv
import json
from pathlib import Path

import numpy as np

from .kernels import Chain, KernelConfig


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def _pack(flags: np.ndarray) -> str:
    return base64.b64encode(np.packbits(flags.astype(np.uint8)).tobytes()).decode("ascii")


def _unpack(text: str, n: int) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(text), dtype=np.uint8)
    return np.unpackbits(raw)[:n].astype(bool)


def write_chain(chain: Chain, path, grid=None, extra: dict | None = None) -> Path:
    """Write ``chain`` to ``path`` (CSV) and its sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_par = chain.thetas.shape[1]
    header = ["step", "accepted", "log_likelihood"] + [f"theta_{j}" for j in range(n_par)]
    table = np.column_stack([chain.steps, chain.accepted.astype(np.int64), chain.log_likelihoods, chain.thetas])
    fmt = ["%d", "%d", "%.17g"] + ["%.17g"] * n_par
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    meta = {
        "config": chain.config.to_dict(),
        "seed": chain.seed,
        "thin": chain.thin,
        "n_steps": chain.n_steps,
        "n_params": n_par,
        "accept_flags": _pack(chain.accept_flags),
        "metadata": chain.metadata,
    }
    if grid is not None:
        meta["grid"] = {"nx": grid.nx, "ny": grid.ny, "lx": grid.lx, "ly": grid.ly}
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_chain(path) -> Chain:
    """Inverse of :func:`write_chain`.

    Without a sidecar the accept flags are rebuilt from the CSV column,
    which is only exact for unthinned chains.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if header[:3] != ["step", "accepted", "log_likelihood"]:
        raise ValueError(f"{path} is not a chain file (header starts {header[:3]})")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    steps = data[:, 0].astype(np.int64)
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        cfg = KernelConfig(**meta["config"])
        flags = _unpack(meta["accept_flags"], int(meta["n_steps"]))
        return Chain(steps, data[:, 3:], data[:, 2], flags, int(meta["thin"]), cfg, meta.get("seed"), meta.get("metadata", {}))
    flags = data[1:, 1].astype(bool) if steps.size and steps[0] == 0 else data[:, 1].astype(bool)
    thin = int(steps[1] - steps[0]) if steps.size > 1 else 1
    return Chain(steps, data[:, 3:], data[:, 2], flags, thin, KernelConfig(), None, {})


def write_history(history, path) -> Path:
    """Tuning history as ``iteration,beta,kappa,f``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "beta", "kappa", "f"])
        for it, b, k, f in history:
            w.writerow([it, repr(float(b)), repr(float(k)), repr(float(f))])
    return path


def read_history(path) -> list[tuple[int, float, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iteration"]), float(r["beta"]), float(r["kappa"]), float(r["f"])) for r in rows]
