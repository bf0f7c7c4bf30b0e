"""Steady confined groundwater flow, observation operators, Gaussian
likelihoods and the analytic posterior for direct observations.

Heads solve ``div(K grad h) + s = 0`` on a cell-centred grid, with ``s``
the volumetric source density (extraction wells are negative sources),
fixed heads on the left/right edges and no flow across top and bottom.
Transmissivity is ``K * thickness``; with the default unit thickness a
pumping rate in m^3/d removes ``rate / (dx * dy)`` per unit area from its
cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import diags
from scipy.sparse.linalg import cg

from .grid import GaussianPrior, Grid2D

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Well:
    x: float
    y: float
    rate: float  # m^3/d, extraction positive


@dataclass(frozen=True, eq=False)
class FlowProblem:
    grid: Grid2D
    head_left: float = 20.0
    head_right: float = 0.0
    wells: tuple[Well, ...] = ()
    thickness: float = 1.0
    _pumping: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.head_left) and np.isfinite(self.head_right)):
            raise ValueError("boundary heads must be finite")
        if not self.thickness > 0:
            raise ValueError(f"aquifer thickness must be positive, got {self.thickness}")
        object.__setattr__(self, "wells", tuple(Well(*w) if not isinstance(w, Well) else w for w in self.wells))
        pumping = np.zeros(self.grid.n_cells)
        for w in self.wells:
            pumping[self.grid.cell_index(w.x, w.y)] += w.rate
        pumping.setflags(write=False)
        object.__setattr__(self, "_pumping", pumping)

    @property
    def pumping(self) -> np.ndarray:
        """Extraction rate per cell, m^3/d."""
        return self._pumping


class FlowSolverError(RuntimeError):
    pass


def _transmissibilities(problem: FlowProblem, log_k: np.ndarray):
    g = problem.grid
    k = problem.thickness * np.exp(np.asarray(log_k, dtype=float)).reshape(g.ny, g.nx)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise FlowSolverError("conductivity field has non-finite or non-positive entries")
    tx = (g.dy / g.dx) * 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    ty = (g.dx / g.dy) * 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    # Dirichlet edges sit half a cell away from the first/last centre
    tl = 2.0 * (g.dy / g.dx) * k[:, 0]
    tr = 2.0 * (g.dy / g.dx) * k[:, -1]
    return tx, ty, tl, tr


def assemble(problem: FlowProblem, log_k: np.ndarray):
    """Banded upper storage of the SPD system matrix plus its right-hand side.

    Returns ``(ab, rhs, (tx, ty, tl, tr))`` with ``ab`` in the layout
    expected by :func:`scipy.linalg.solveh_banded` (``nx`` super-diagonals).
    """
    g = problem.grid
    nx, ny = g.nx, g.ny
    tx, ty, tl, tr = _transmissibilities(problem, log_k)
    diag = np.zeros((ny, nx))
    diag[:, :-1] += tx
    diag[:, 1:] += tx
    diag[:-1, :] += ty
    diag[1:, :] += ty
    diag[:, 0] += tl
    diag[:, -1] += tr
    rhs = -problem.pumping.reshape(ny, nx).copy()
    rhs[:, 0] += tl * problem.head_left
    rhs[:, -1] += tr * problem.head_right

    n = g.n_cells
    ab = np.zeros((nx + 1, n))
    ab[nx] = diag.ravel()
    if nx > 1:
        east = np.zeros((ny, nx))
        east[:, :-1] = tx
        ab[nx - 1, 1:] = -east.ravel()[:-1]
    if ny > 1:
        ab[0, nx:] = -ty.ravel()
    return ab, rhs.ravel(), (tx, ty, tl, tr)


def _offsets(ab: np.ndarray):
    # five-point stencil: only the east (1) and north (nx) couplings are set
    u = ab.shape[0] - 1
    return sorted({1, u}) if ab.shape[1] > 1 else []


def _apply(ab: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Multiply the banded symmetric matrix by ``h``."""
    u = ab.shape[0] - 1
    out = ab[u] * h
    for d in _offsets(ab):
        band = ab[u - d, d:]
        out[:-d] += band * h[d:]
        out[d:] += band * h[:-d]
    return out


def _to_sparse(ab: np.ndarray):
    u = ab.shape[0] - 1
    n = ab.shape[1]
    offsets, bands = [0], [ab[u]]
    for d in _offsets(ab):
        band = ab[u - d, d:]
        offsets += [d, -d]
        bands += [band, band]
    return diags(bands, offsets, shape=(n, n), format="csr")


def solve_flow(problem: FlowProblem, log_k: np.ndarray) -> np.ndarray:
    """Hydraulic head in every cell (row-major) for log-conductivity ``log_k``."""
    ab, rhs, _ = assemble(problem, log_k)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    try:
        head = linalg.solveh_banded(ab, rhs, lower=False, check_finite=False)
    except linalg.LinAlgError:
        head = None
    if head is not None and np.linalg.norm(_apply(ab, head) - rhs) <= RESIDUAL_TOL * scale:
        return head
    a = _to_sparse(ab)
    x0 = head if head is not None and np.all(np.isfinite(head)) else None
    head, info = cg(a, rhs, x0=x0, rtol=RESIDUAL_TOL * 0.1, atol=0.0, maxiter=20 * problem.grid.n_cells)
    res = np.linalg.norm(a @ head - rhs) / scale
    if info != 0 or res > RESIDUAL_TOL:
        raise FlowSolverError(f"flow solve did not converge: relative residual {res:.3e} (cg info {info})")
    return head


def residual(problem: FlowProblem, log_k: np.ndarray, head: np.ndarray) -> np.ndarray:
    """Per-cell mass-balance residual of a head field (m^3/d)."""
    ab, rhs, _ = assemble(problem, log_k)
    return _apply(ab, np.asarray(head, dtype=float)) - rhs


def boundary_fluxes(problem: FlowProblem, log_k: np.ndarray, head: np.ndarray) -> tuple[float, float]:
    """``(inflow across the left edge, outflow across the right edge)`` in m^3/d."""
    g = problem.grid
    _, _, tl, tr = _transmissibilities(problem, log_k)
    h = np.asarray(head).reshape(g.ny, g.nx)
    inflow = float(np.sum(tl * (problem.head_left - h[:, 0])))
    outflow = float(np.sum(tr * (h[:, -1] - problem.head_right)))
    return inflow, outflow


def observation_cells(grid: Grid2D, locations) -> np.ndarray:
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    return np.array([grid.cell_index(x, y) for x, y in locations], dtype=np.int64)


def observe(field_values: np.ndarray, grid: Grid2D, locations) -> np.ndarray:
    """Values of the cells containing each location."""
    return np.asarray(field_values)[observation_cells(grid, locations)]


@dataclass(frozen=True, eq=False)
class Observations:
    """Measured values ``d`` with per-observation noise standard deviation.

    Head data carry ``locations`` (m); direct data carry cell ``indices``.
    ``clean`` keeps the noise-free values when the data are synthetic.
    """

    values: np.ndarray
    noise_std: np.ndarray
    locations: np.ndarray | None = None
    indices: np.ndarray | None = None
    clean: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), values.shape).copy()
        if np.any(~(std > 0)):
            raise ValueError("noise standard deviations must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "noise_std", std)
        if self.locations is not None:
            loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
            if loc.shape[0] != values.size:
                raise ValueError(f"{loc.shape[0]} locations for {values.size} values")
            object.__setattr__(self, "locations", loc)
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
            if idx.size != values.size:
                raise ValueError(f"{idx.size} indices for {values.size} values")
            object.__setattr__(self, "indices", idx)


def log_likelihood(predicted: np.ndarray, obs: Observations) -> float:
    """Gaussian log-likelihood without its normalising constant."""
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != obs.values.shape:
        raise ValueError(f"predicted shape {predicted.shape} does not match data {obs.values.shape}")
    if np.any(np.isnan(predicted)):
        raise FloatingPointError("forward model returned NaN")
    z = (obs.values - predicted) / obs.noise_std
    return -0.5 * float(z @ z)


def synth_data(problem: FlowProblem, true_log_k, locations, noise_std, rng: np.random.Generator) -> Observations:
    """Noisy head observations simulated from a known conductivity field."""
    clean = observe(solve_flow(problem, true_log_k), problem.grid, locations)
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), clean.shape)
    noisy = clean + std * rng.standard_normal(clean.size)
    return Observations(noisy, std, locations=locations, clean=clean)


def direct_forward(log_k: np.ndarray, indices) -> np.ndarray:
    log_k = np.asarray(log_k)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= log_k.size):
        raise IndexError(f"cell index out of range for a field of {log_k.size} cells")
    return log_k[idx]


class HeadLikelihood:
    """Log-likelihood of head observations for a log-conductivity field."""

    def __init__(self, problem: FlowProblem, obs: Observations):
        if obs.locations is None:
            raise ValueError("head observations need locations")
        self.problem = problem
        self.obs = obs
        self.cells = observation_cells(problem.grid, obs.locations)

    def predict(self, log_k: np.ndarray) -> np.ndarray:
        return solve_flow(self.problem, log_k)[self.cells]

    def __call__(self, log_k: np.ndarray) -> float:
        return log_likelihood(self.predict(log_k), self.obs)


class DirectLikelihood:
    """Log-likelihood of noisy direct measurements of field cells."""

    def __init__(self, obs: Observations):
        if obs.indices is None:
            raise ValueError("direct observations need cell indices")
        self.obs = obs

    def __call__(self, log_k: np.ndarray) -> float:
        return log_likelihood(direct_forward(log_k, self.obs.indices), self.obs)


@dataclass(frozen=True, eq=False)
class KrigingPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def kriging_posterior(prior: GaussianPrior, indices, d, noise_std) -> KrigingPosterior:
    """Exact Gaussian posterior for noisy direct observations of cells."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), d.shape)
    if np.all(np.isinf(std)):
        return KrigingPosterior(prior.mean.copy(), np.array(prior.cov))
    sigma_h = prior.cov[:, idx]  # Sigma H^T
    innov = sigma_h[idx] + np.diag(std**2)
    try:
        c = linalg.cho_factor(innov, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"innovation covariance is singular: {exc}") from exc
    gain = linalg.cho_solve(c, sigma_h.T).T
    mean = prior.mean + gain @ (d - prior.mean[idx])
    cov = prior.cov - gain @ sigma_h.T
    return KrigingPosterior(mean, 0.5 * (cov + cov.T))
