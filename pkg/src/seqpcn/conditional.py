"""Box selection and conditional Gaussian blocks for sequential resampling."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .grid import GaussianPrior, Grid2D

MAX_BOX_ATTEMPTS = 1000


@dataclass(frozen=True, eq=False)
class BoxSelection:
    """Split of the grid cells into a resampled block and its complement.

    ``inside`` and ``outside`` are ascending cell indices. ``key`` holds the
    inclusive column and row ranges of the box, which determine it fully.
    """

    inside: np.ndarray
    outside: np.ndarray
    center: tuple[float, float]
    kappa: float
    key: tuple[int, int, int, int]

    @property
    def q(self) -> int:
        return self.inside.size

    @property
    def is_full(self) -> bool:
        return self.outside.size == 0

    def permutation(self) -> np.ndarray:
        """Cell order with the box first; ``theta[perm]`` stacks the blocks."""
        return np.concatenate([self.inside, self.outside])


def _axis_range(centers_norm: np.ndarray, c: float, kappa: float):
    hit = np.flatnonzero(np.abs(centers_norm - c) <= kappa)
    if hit.size == 0:
        return None
    return int(hit[0]), int(hit[-1])


def box_from_center(grid: Grid2D, center: tuple[float, float], kappa: float) -> BoxSelection | None:
    """Box of half-width ``kappa`` (normalised units) around ``center``.

    Returns None when no cell centre falls inside.
    """
    xs = (np.arange(grid.nx) + 0.5) / grid.nx
    ys = (np.arange(grid.ny) + 0.5) / grid.ny
    cols = _axis_range(xs, center[0], kappa)
    rows = _axis_range(ys, center[1], kappa)
    if cols is None or rows is None:
        return None
    return _box_from_ranges(grid, cols, rows, center, kappa)


def _box_from_ranges(grid, cols, rows, center, kappa) -> BoxSelection:
    col_mask = np.zeros(grid.nx, dtype=bool)
    col_mask[cols[0] : cols[1] + 1] = True
    row_mask = np.zeros(grid.ny, dtype=bool)
    row_mask[rows[0] : rows[1] + 1] = True
    mask = (row_mask[:, None] & col_mask[None, :]).ravel()
    return BoxSelection(
        inside=np.flatnonzero(mask),
        outside=np.flatnonzero(~mask),
        center=(float(center[0]), float(center[1])),
        kappa=float(kappa),
        key=(cols[0], cols[1], rows[0], rows[1]),
    )


def draw_box(grid: Grid2D, kappa: float, rng: np.random.Generator) -> BoxSelection:
    """Draw a uniform centre in the unit square and select the box around it.

    Centres that capture no cell are redrawn, so every box holds at least
    one cell. Each attempt consumes two uniforms (x then y).
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"kappa must lie in (0, 1], got {kappa}")
    for _ in range(MAX_BOX_ATTEMPTS):
        center = rng.random(2)
        sel = box_from_center(grid, (center[0], center[1]), kappa)
        if sel is not None:
            return sel
    raise RuntimeError(f"no non-empty box found in {MAX_BOX_ATTEMPTS} draws with kappa={kappa}")


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """``N(cond_mean, cond_chol @ cond_chol.T)`` of the box given the rest."""

    cond_mean: np.ndarray
    cond_chol: np.ndarray

    @property
    def cond_cov(self) -> np.ndarray:
        return self.cond_chol @ self.cond_chol.T


@dataclass(frozen=True, eq=False)
class BoxFactors:
    """Quantities of a box that do not depend on the conditioning values.

    The conditional mean is ``mean[inside] + gain @ (r - mean[outside])``.
    """

    gain: np.ndarray
    cond_chol: np.ndarray


def box_factors(prior: GaussianPrior, sel: BoxSelection, method: str = "precision") -> BoxFactors:
    """Kriging gain and conditional covariance factor for a box.

    ``method="precision"`` works on the ``q x q`` block of the precision
    matrix, ``method="schur"`` inverts the ``(Np-q)`` outside block of the
    covariance directly. Both give the same distribution.
    """
    inside, outside = sel.inside, sel.outside
    if sel.is_full:
        return BoxFactors(np.zeros((inside.size, 0)), prior.chol)
    try:
        if method == "precision":
            return _factors_precision(prior, inside, outside)
        if method == "schur":
            return _factors_schur(prior, inside, outside)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"conditioning a box of {inside.size} cells on {outside.size} cells failed: {exc}"
        ) from exc
    raise ValueError(f"unknown conditioning method {method!r}")


def _factors_precision(prior, inside, outside) -> BoxFactors:
    lam11 = prior.precision[np.ix_(inside, inside)]
    lam12 = prior.precision[np.ix_(inside, outside)]
    # Factor the reversed block so that the inverse factor comes out lower
    # triangular: if J A J = R R^T then A^-1 = (J R^-T J)(J R^-T J)^T.
    rev = lam11[::-1, ::-1]
    r = linalg.cholesky(rev, lower=True)
    r_inv_t = linalg.solve_triangular(r, np.eye(r.shape[0]), lower=True).T
    cond_chol = np.ascontiguousarray(r_inv_t[::-1, ::-1])
    gain = -linalg.cho_solve((r, True), lam12[::-1])[::-1]
    return BoxFactors(gain, cond_chol)


def _factors_schur(prior, inside, outside) -> BoxFactors:
    s11 = prior.cov[np.ix_(inside, inside)]
    s12 = prior.cov[np.ix_(inside, outside)]
    s22 = prior.cov[np.ix_(outside, outside)]
    c22 = linalg.cho_factor(s22, lower=True)
    gain = linalg.cho_solve(c22, s12.T).T
    cond = s11 - gain @ s12.T
    cond = 0.5 * (cond + cond.T)
    return BoxFactors(gain, linalg.cholesky(cond, lower=True))


def condition(
    prior: GaussianPrior,
    sel: BoxSelection,
    current_outside: np.ndarray,
    method: str = "precision",
) -> ConditionalGaussian:
    """Conditional law of the box cells given the outside values."""
    r = np.asarray(current_outside, dtype=float)
    if r.shape != (sel.outside.size,):
        raise ValueError(f"expected {sel.outside.size} outside values, got shape {r.shape}")
    f = box_factors(prior, sel, method)
    return _from_factors(prior, sel, f, r)


def _from_factors(prior, sel, f: BoxFactors, r) -> ConditionalGaussian:
    mean = prior.mean[sel.inside]
    if r.size:
        mean = mean + f.gain @ (r - prior.mean[sel.outside])
    return ConditionalGaussian(mean, f.cond_chol)


def sample_conditional(cg: ConditionalGaussian, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal(cg.cond_mean.size)
    return cg.cond_mean + cg.cond_chol @ xi


class BoxFactorCache:
    """LRU cache of :class:`BoxFactors` keyed by box extent.

    A box is fixed by its column and row ranges, so on an ``nx x ny`` grid
    only a few thousand distinct boxes exist and the expensive
    factorisations repeat constantly during a chain.
    """

    def __init__(self, prior: GaussianPrior, max_bytes: int = 1536 * 2**20, method: str = "precision"):
        self.prior = prior
        self.max_bytes = max_bytes
        self.method = method
        self._store: OrderedDict[tuple, BoxFactors] = OrderedDict()
        self._bytes = 0
        self.hits = 0
        self.misses = 0

    def factors(self, sel: BoxSelection) -> BoxFactors:
        f = self._store.get(sel.key)
        if f is not None:
            self._store.move_to_end(sel.key)
            self.hits += 1
            return f
        self.misses += 1
        f = box_factors(self.prior, sel, self.method)
        size = f.gain.nbytes + f.cond_chol.nbytes
        if sel.is_full:
            size = 0  # shares the prior's factor
        self._store[sel.key] = f
        self._bytes += size
        while self._bytes > self.max_bytes and len(self._store) > 1:
            key, old = self._store.popitem(last=False)
            self._bytes -= 0 if old.cond_chol is self.prior.chol else old.gain.nbytes + old.cond_chol.nbytes
        return f

    def condition(self, sel: BoxSelection, current_outside: np.ndarray) -> ConditionalGaussian:
        return _from_factors(self.prior, sel, self.factors(sel), np.asarray(current_outside, dtype=float))
