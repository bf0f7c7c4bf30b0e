"""Regular 2D grids, stationary covariance models and the multi-Gaussian prior."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

#: Largest number of cells for which a dense prior is assembled.
DEFAULT_MAX_CELLS = 16384

EXPONENTIAL = "exponential"
MATERN25 = "matern25"
KERNEL_KINDS = (EXPONENTIAL, MATERN25)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-6


@dataclass(frozen=True)
class Grid2D:
    """Cell-centred rectangular grid on ``[0, lx] x [0, ly]``.

    Cells are numbered row-major, ``k = j * nx + i`` with ``i`` the column
    (x direction) and ``j`` the row (y direction).
    """

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ValueError(f"cell counts must be positive integers, got nx={self.nx}, ny={self.ny}")
        if not (self.lx > 0 and self.ly > 0) or not (math.isfinite(self.lx) and math.isfinite(self.ly)):
            raise ValueError(f"domain lengths must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def x_centers(self) -> np.ndarray:
        """x coordinate of every cell, length ``n_cells``."""
        return np.tile((np.arange(self.nx) + 0.5) * self.dx, self.ny)

    @property
    def y_centers(self) -> np.ndarray:
        return np.repeat((np.arange(self.ny) + 0.5) * self.dy, self.nx)

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, 2)`` array."""
        return np.column_stack([self.x_centers, self.y_centers])

    def cell_index(self, x: float, y: float) -> int:
        """Index of the cell containing ``(x, y)``.

        Points on a shared cell edge go to the lower-index cell, which is
        also the nearest-centre rule with ties broken downward.
        """
        if not (0.0 <= x <= self.lx and 0.0 <= y <= self.ly):
            raise ValueError(f"point ({x}, {y}) lies outside the domain [0, {self.lx}] x [0, {self.ly}]")
        i = min(max(math.ceil(x / self.dx) - 1, 0), self.nx - 1)
        j = min(max(math.ceil(y / self.dy) - 1, 0), self.ny - 1)
        return j * self.nx + i


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid2D:
    return Grid2D(nx, ny, float(lx), float(ly))


@dataclass(frozen=True)
class CovarianceModel:
    """Stationary anisotropic covariance of a log-conductivity field.

    ``lengthscales[0]`` acts along the x axis rotated counter-clockwise by
    ``rotation`` degrees, ``lengthscales[1]`` along the perpendicular axis.
    """

    kind: str = EXPONENTIAL
    lengthscales: tuple[float, float] = (1.0, 1.0)
    rotation: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        l1, l2 = self.lengthscales
        if not (l1 > 0 and l2 > 0):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    def scaled_distance(self, delta: np.ndarray) -> np.ndarray:
        """Effective distance ``h`` for separation vectors ``delta[..., 2]``."""
        delta = np.asarray(delta, dtype=float)
        phi = math.radians(self.rotation)
        c, s = math.cos(phi), math.sin(phi)
        # components in the rotated frame
        u = c * delta[..., 0] + s * delta[..., 1]
        v = -s * delta[..., 0] + c * delta[..., 1]
        return np.hypot(u / self.lengthscales[0], v / self.lengthscales[1])

    def from_distance(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if self.kind == EXPONENTIAL:
            return self.variance * np.exp(-h)
        r5 = math.sqrt(5.0) * h
        return self.variance * (1.0 + r5 + (5.0 / 3.0) * h * h) * np.exp(-r5)


def covariance_at(model: CovarianceModel, p, q) -> float:
    """Covariance between the field values at points ``p`` and ``q``."""
    delta = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    return float(model.from_distance(model.scaled_distance(delta)))


def covariance_matrix(model: CovarianceModel, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    delta = points[None, :, :] - points[:, None, :]
    cov = model.from_distance(model.scaled_distance(delta))
    # exact symmetry regardless of rounding in the rotation
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Multi-Gaussian prior ``N(mean, cov)`` on the cells of a grid.

    Holds the lower Cholesky factor and the precision matrix alongside the
    covariance. ``jitter`` is the nugget that had to be added to the
    diagonal before factorising (0 when none was needed).
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    precision: np.ndarray
    grid: Grid2D | None = None
    model: CovarianceModel | None = None
    jitter: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def log_density(self, theta: np.ndarray) -> float:
        """Unnormalised log prior density."""
        r = np.asarray(theta) - self.mean
        return -0.5 * float(r @ self.precision @ r)

    @classmethod
    def from_moments(cls, mean, cov, grid: Grid2D | None = None, model: CovarianceModel | None = None):
        """Factorise ``cov``, escalating a diagonal nugget if needed."""
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        scale = float(np.max(np.diag(cov)))
        chol, jitter = _cholesky_with_jitter(cov, scale)
        if jitter:
            cov = cov + jitter * np.eye(mean.size)
            logger.info("prior covariance needed a nugget of %.3g", jitter)
        precision = linalg.cho_solve((chol, True), np.eye(mean.size))
        precision = 0.5 * (precision + precision.T)
        for a in (mean, cov, chol, precision):
            a.setflags(write=False)
        return cls(mean, cov, chol, precision, grid, model, jitter, {"jitter": jitter})


def _cholesky_with_jitter(cov: np.ndarray, scale: float):
    jitter = 0.0
    while True:
        try:
            a = cov if jitter == 0.0 else cov + jitter * np.eye(cov.shape[0])
            return linalg.cholesky(a, lower=True), jitter
        except linalg.LinAlgError:
            jitter = _JITTER_START * scale if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX * scale * (1 + 1e-9):
                raise np.linalg.LinAlgError(
                    f"covariance of size {cov.shape[0]} is not positive definite even with a "
                    f"nugget of {_JITTER_MAX * scale:.3g}; min diagonal {np.min(np.diag(cov)):.3g}"
                ) from None


def build_prior(
    grid: Grid2D,
    model: CovarianceModel,
    mean_value: float,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> GaussianPrior:
    """Assemble, factorise and invert the dense prior covariance of ``grid``."""
    if grid.n_cells > max_cells:
        raise ValueError(f"grid has {grid.n_cells} cells, above the dense-storage cap of {max_cells}")
    cov = covariance_matrix(model, grid.centers())
    mean = np.full(grid.n_cells, float(mean_value))
    return GaussianPrior.from_moments(mean, cov, grid=grid, model=model)


def sample_prior(prior: GaussianPrior, rng: np.random.Generator) -> np.ndarray:
    """One draw ``mean + chol @ xi`` with ``xi`` standard normal."""
    xi = rng.standard_normal(prior.n)
    return prior.mean + prior.chol @ xi
