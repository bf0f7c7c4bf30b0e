import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqpcn.grid import (
    CovarianceModel,
    GaussianPrior,
    build_grid,
    build_prior,
    covariance_at,
    covariance_matrix,
    sample_prior,
)

coords = st.floats(-5000, 5000, allow_nan=False)
lengths = st.floats(10.0, 5000.0)
angles = st.floats(-360.0, 360.0)
kinds = st.sampled_from(["exponential", "matern25"])


def test_single_cell_grid():
    g = build_grid(1, 1, 1.0, 1.0)
    assert g.n_cells == 1
    np.testing.assert_allclose(g.centers(), [[0.5, 0.5]])


def test_base_grid_spacing():
    g = build_grid(50, 50, 5000, 5000)
    assert g.dx == 100.0 and g.dy == 100.0
    assert g.n_cells == 2500


def test_2x2_centres_row_major():
    g = build_grid(2, 2, 2.0, 2.0)
    np.testing.assert_allclose(g.centers(), [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]])


@pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, -2, 1, 1), (1, 1, 0.0, 1), (1, 1, 1, -1)])
def test_bad_grid(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_cell_index_ties_and_bounds():
    g = build_grid(4, 2, 4.0, 2.0)
    assert g.cell_index(0.5, 0.5) == 0
    assert g.cell_index(1.0, 0.5) == 0  # shared face goes to the lower index
    assert g.cell_index(3.9, 1.9) == 7
    assert g.cell_index(0.0, 0.0) == 0
    with pytest.raises(ValueError):
        g.cell_index(4.1, 1.0)


@given(st.integers(1, 30), st.integers(1, 30), lengths, lengths)
def test_centres_strictly_inside(nx, ny, lx, ly):
    c = build_grid(nx, ny, lx, ly).centers()
    assert np.all((c[:, 0] > 0) & (c[:, 0] < lx) & (c[:, 1] > 0) & (c[:, 1] < ly))


def test_zero_separation_gives_variance():
    m = CovarianceModel("matern25", (300.0, 700.0), 30.0, 2.5)
    assert covariance_at(m, (1.0, 2.0), (1.0, 2.0)) == 2.5


def test_isotropic_exponential_one_lengthscale():
    m = CovarianceModel("exponential", (100.0, 100.0), 0.0, 1.0)
    assert covariance_at(m, (0, 0), (60.0, 80.0)) == pytest.approx(0.36787944117144233, rel=1e-14)


def test_matern_one_lengthscale():
    m = CovarianceModel("matern25", (1.0, 1.0), 0.0, 1.0)
    # (1 + sqrt5 + 5/3) exp(-sqrt5)
    assert covariance_at(m, (0, 0), (1.0, 0.0)) == pytest.approx(0.5239941088318203, rel=1e-12)


def test_matern_decays():
    m = CovarianceModel("matern25", (1.0, 1.0), 0.0, 1.0)
    h = np.linspace(0, 30, 601)
    c = m.from_distance(h)
    assert np.all(np.diff(c) <= 0) and c[-1] < 1e-20


def test_major_axis_runs_bottom_left_to_top_right():
    m = CovarianceModel("exponential", (1500.0, 2000.0), 135.0, 1.0)
    d = 1000.0 / math.sqrt(2)
    along = covariance_at(m, (0, 0), (d, d))
    across = covariance_at(m, (0, 0), (-d, d))
    assert along == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert across == pytest.approx(math.exp(-1000.0 / 1500.0), rel=1e-12)


@given(kinds, lengths, lengths, angles, coords, coords, coords, coords)
def test_covariance_symmetric_and_bounded(kind, l1, l2, rot, a, b, c, d):
    m = CovarianceModel(kind, (l1, l2), rot, 1.7)
    v1 = covariance_at(m, (a, b), (c, d))
    v2 = covariance_at(m, (c, d), (a, b))
    assert v1 == pytest.approx(v2, rel=1e-12, abs=1e-300)
    assert 0.0 <= v1 <= 1.7


@given(kinds, lengths, angles, angles, coords, coords)
def test_isotropic_kernel_ignores_rotation(kind, ell, r1, r2, dx, dy):
    a = CovarianceModel(kind, (ell, ell), r1, 1.0)
    b = CovarianceModel(kind, (ell, ell), r2, 1.0)
    assert covariance_at(a, (0, 0), (dx, dy)) == pytest.approx(covariance_at(b, (0, 0), (dx, dy)), rel=1e-9, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(kinds, lengths, lengths, angles)
def test_covariance_matrix_psd(kind, l1, l2, rot):
    pts = build_grid(5, 4, 1000.0, 800.0).centers()
    c = covariance_matrix(CovarianceModel(kind, (l1, l2), rot, 1.0), pts)
    assert np.array_equal(c, c.T)
    assert np.linalg.eigvalsh(c).min() > -1e-9


@pytest.mark.parametrize("bad", [dict(kind="gauss"), dict(lengthscales=(0.0, 1.0)), dict(variance=-1.0)])
def test_bad_covariance_model(bad):
    with pytest.raises(ValueError):
        CovarianceModel(**bad)


def test_single_cell_prior():
    p = build_prior(build_grid(1, 1, 1, 1), CovarianceModel(), -2.5)
    np.testing.assert_array_equal(p.cov, [[1.0]])
    np.testing.assert_array_equal(p.chol, [[1.0]])
    np.testing.assert_array_equal(p.mean, [-2.5])


def test_two_cell_prior_off_diagonal():
    p = build_prior(build_grid(2, 1, 200.0, 100.0), CovarianceModel("exponential", (100.0, 100.0)), 0.0)
    assert p.cov[0, 1] == pytest.approx(math.exp(-1), rel=1e-14)


def test_prior_invariants(small_prior):
    p = small_prior
    assert np.array_equal(p.cov, p.cov.T)
    np.testing.assert_allclose(np.diag(p.cov), 1.0)
    rec = p.chol @ p.chol.T
    assert np.abs(rec - p.cov).max() <= 1e-8 * np.abs(p.cov).max()
    np.testing.assert_allclose(p.precision @ p.cov, np.eye(p.n), atol=1e-6)
    assert np.allclose(p.chol, np.tril(p.chol))
    assert p.jitter == 0.0


def test_prior_arrays_read_only(small_prior):
    with pytest.raises(ValueError):
        small_prior.mean[0] = 0.0


def test_smooth_matern_needs_and_records_jitter():
    g = build_grid(20, 20, 100.0, 100.0)
    p = build_prior(g, CovarianceModel("matern25", (3000.0, 3000.0)), 0.0)
    assert p.jitter > 0
    assert p.metadata["jitter"] == p.jitter
    rec = p.chol @ p.chol.T
    assert np.abs(rec - p.cov).max() <= 1e-8 * np.abs(p.cov).max()


def test_indefinite_covariance_reports():
    with pytest.raises(np.linalg.LinAlgError, match="not positive definite"):
        GaussianPrior.from_moments([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_cell_cap():
    with pytest.raises(ValueError, match="cap"):
        build_prior(build_grid(20, 20, 1, 1), CovarianceModel(), 0.0, max_cells=100)


class _ZeroRng:
    def standard_normal(self, n):
        return np.zeros(n)


def test_sample_prior_zero_innovation_is_mean(small_prior):
    np.testing.assert_array_equal(sample_prior(small_prior, _ZeroRng()), small_prior.mean)


def test_sample_prior_scalar_oracle():
    p = GaussianPrior.from_moments([0.0], [[4.0]])

    class R:
        def standard_normal(self, n):
            return np.full(n, 1.5)

    assert sample_prior(p, R())[0] == 3.0


def test_prior_sample_moments(small_prior):
    rng = np.random.default_rng(7)
    n = 50_000
    draws = np.array([sample_prior(small_prior, rng) for _ in range(n)])
    emp = np.cov(draws.T)
    assert np.linalg.norm(emp - small_prior.cov) <= 0.05 * np.linalg.norm(small_prior.cov)
    se = np.sqrt(np.diag(small_prior.cov) / n)
    assert np.all(np.abs(draws.mean(axis=0) - small_prior.mean) <= 4 * se)


def test_sample_prior_uses_generator(small_prior):
    a = sample_prior(small_prior, np.random.default_rng(3))
    b = sample_prior(small_prior, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
