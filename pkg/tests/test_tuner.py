import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqpcn import tuner
from seqpcn.kernels import PCN, SEQ_GIBBS, SEQ_PCN
from seqpcn.tuner import TunerState, adapt, objective, probe_gradient, tune, tuner_move

SQ2 = math.sqrt(2.0)


def concave(opt=(0.3, 0.1)):
    """Concave bowl in log10-log10 coordinates with its peak at ``opt``."""

    def f(beta, kappa):
        d2 = (math.log10(beta / opt[0])) ** 2 + (math.log10(kappa / opt[1])) ** 2
        return 20.0 - d2

    return f


def log_dist(a, b):
    return math.hypot(math.log10(a[0] / b[0]), math.log10(a[1] / b[1]))


def test_objective_zero_when_nothing_moves():
    assert objective(np.ones((200, 4)), 0) == 0.0
    assert objective(np.ones((200, 4))) == 0.0


def test_objective_hand_arithmetic(monkeypatch):
    z = np.random.default_rng(0).standard_normal((300, 2))
    x = z / z.std(axis=0, ddof=1) * np.array([2.0, 4.0])
    monkeypatch.setattr(tuner, "efficiency_per_param", lambda s: np.array([0.5, 0.25]))
    assert objective(x, 10) == pytest.approx(1.0, rel=1e-12)


@given(st.floats(0.01, 100.0))
def test_objective_homogeneous(c):
    x = np.cumsum(np.random.default_rng(1).standard_normal((500, 3)), axis=0)
    assert objective(c * x, 5) == pytest.approx(c * objective(x, 5), rel=1e-9)


def test_gradient_of_constant_is_zero():
    s = TunerState(0.3, 0.3)
    assert probe_gradient(s, lambda b, k: 7.0) == (0.0, 0.0)
    assert len(s.history) == 4


def test_probe_order_and_points():
    s = TunerState(0.25, 0.5)
    seen = []
    probe_gradient(s, lambda b, k: seen.append((b, k)) or 0.0)
    assert seen == [(0.25 * SQ2, 0.5), (0.25 / SQ2, 0.5), (0.25, min(0.5 * SQ2, 1.0)), (0.25, 0.5 / SQ2)]


def test_gradient_log_beta():
    b = 0.2
    s = TunerState(b, 0.5)
    g = probe_gradient(s, lambda beta, kappa: math.log10(beta))
    want = (math.log10(b * SQ2) - math.log10(b / SQ2)) / (b * SQ2 - b / SQ2)
    assert g[0] == pytest.approx(want, rel=1e-12) and g[0] > 0
    assert g[1] == 0.0


def test_upper_probe_clamps_at_one():
    s = TunerState(1.0, 0.5)
    g = probe_gradient(s, lambda beta, kappa: beta)
    assert s.history[0][1] == 1.0
    assert g[0] == pytest.approx(1.0, rel=1e-12)  # slope over [1/sqrt2, 1]


def test_zero_gradient_does_not_move():
    s = TunerState(0.3, 0.2)
    t = tuner_move(s, (0.0, 0.0))
    assert (t.beta, t.kappa) == (0.3, 0.2) and t.stalled


def test_corner_stays_clamped():
    t = tuner_move(TunerState(1.0, 1.0), (3.0, 0.5))
    assert (t.beta, t.kappa) == (1.0, 1.0)


def test_one_move_geometry():
    s = TunerState(0.1, 0.1)
    t = tuner_move(s, (2.0, -2.0))
    step = 0.1 / SQ2
    assert math.log10(t.beta) == pytest.approx(-1 + step, rel=1e-12)
    assert math.log10(t.kappa) == pytest.approx(-1 - step, rel=1e-12)
    assert log_dist((t.beta, t.kappa), (0.1, 0.1)) == pytest.approx(0.1, rel=1e-12)


def test_chain_rule_weights_by_position():
    # equal linear gradient, but kappa is ten times larger, so it moves more
    t = tuner_move(TunerState(0.01, 0.1), (1.0, 1.0))
    assert math.log10(t.kappa / 0.1) > math.log10(t.beta / 0.01)


@pytest.mark.parametrize("bad", [dict(delta=1.0), dict(n_hp=50), dict(tune_beta=False, tune_kappa=False)])
def test_state_validation(bad):
    with pytest.raises(ValueError):
        TunerState(0.5, 0.5, **bad)


def test_state_clamps_start():
    s = TunerState(3.0, 1e-6)
    assert (s.beta, s.kappa) == (1.0, 1e-3)


def test_synthetic_optimum_from_random_starts():
    rng = np.random.default_rng(2024)
    for _ in range(5):
        start = 10 ** rng.uniform(-3, 0, size=2)
        s = tune(concave(), TunerState(*start), 50)
        assert log_dist((s.beta, s.kappa), (0.3, 0.1)) < 0.2
        b, k, _ = s.best()
        assert log_dist((b, k), (0.3, 0.1)) < 0.2


def test_best_so_far_non_decreasing():
    s = tune(concave(), TunerState(0.002, 0.9), 30)
    fs = np.array([h[3] for h in s.history])
    best = np.maximum.accumulate(fs)
    assert np.all(np.diff(best) >= 0)
    assert s.best()[2] == fs.max()


def test_tune_deterministic():
    a = tune(concave(), TunerState(0.01, 0.5), 20)
    b = tune(concave(), TunerState(0.01, 0.5), 20)
    assert a.history == b.history


def test_pinned_beta_probes_only_kappa():
    s = TunerState(1.0, 0.5, tune_beta=False)
    seen = []
    probe_gradient(s, lambda b, k: seen.append((b, k)) or k)
    assert [b for b, _ in seen] == [1.0, 1.0]
    t = tuner_move(s, (5.0, -1.0))
    assert t.beta == 1.0 and t.kappa < 0.5


def _direct_problem(small_prior):
    from seqpcn.flow import DirectLikelihood, Observations

    obs = Observations([-2.0, -3.1, -2.2], 0.3, indices=[0, 4, 8])
    return small_prior, DirectLikelihood(obs)


def test_adapt_minimal_budget(small_prior):
    prior, lik = _direct_problem(small_prior)
    res = adapt(prior, lik, 0.5, 0.5, budget=500, seed=1, n_hp=100)
    assert res.state.iteration == 1
    assert len(res.history) == 4
    assert res.burn_in.n_steps == 400
    fs = [h[3] for h in res.history]
    b, k, f = res.history[int(np.argmax(fs))][1:]
    assert (res.config.beta, res.config.kappa) == (b, k)
    assert all(math.isfinite(v) and v >= 0 for v in fs)


def test_adapt_budget_guard(small_prior):
    prior, lik = _direct_problem(small_prior)
    with pytest.raises(ValueError, match="budget"):
        adapt(prior, lik, 0.5, 0.5, budget=499, n_hp=100)


def test_adapt_deterministic(small_prior):
    prior, lik = _direct_problem(small_prior)
    a = adapt(prior, lik, 0.3, 0.3, budget=2000, seed=9, n_hp=100)
    b = adapt(prior, lik, 0.3, 0.3, budget=2000, seed=9, n_hp=100)
    assert a.history == b.history
    assert a.burn_in.thetas.tobytes() == b.burn_in.thetas.tobytes()


@pytest.mark.parametrize("mode,pinned", [(SEQ_GIBBS, "beta"), (PCN, "kappa")])
def test_adapt_pinned_modes(small_prior, mode, pinned):
    prior, lik = _direct_problem(small_prior)
    res = adapt(prior, lik, 0.3, 0.3, budget=1000, seed=2, mode=mode, n_hp=100)
    assert res.config.kind == mode
    assert getattr(res.config, pinned) == 1.0
    assert getattr(res.state, pinned) == 1.0
    assert res.state.iteration == 5  # two probes per iteration


def test_adapt_tuned_values_in_range(small_prior):
    prior, lik = _direct_problem(small_prior)
    res = adapt(prior, lik, 0.9, 0.9, budget=3000, seed=4, mode=SEQ_PCN, n_hp=100)
    assert 0 < res.config.beta <= 1 and 0 < res.config.kappa <= 1
    assert res.sampler.config == res.config
