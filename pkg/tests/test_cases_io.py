import math

import numpy as np
import pytest

from seqpcn.cases import BASE_WELLS, TEMPLATES, build_case, load_problem, save_problem, template
from seqpcn.chainio import read_chain, read_history, write_chain, write_history
from seqpcn.experiments import (
    derive_seed,
    interpolate_efficiency,
    kernel_for,
    read_sweep_means,
    run_experiment,
    sweep,
)
from seqpcn.kernels import PCN, SEQ_GIBBS, SEQ_PCN, KernelConfig, run_chain
from seqpcn.metrics import metrics_report


def test_base_template_wells():
    p = template("base")
    assert [(w["x"], w["y"], w["rate"]) for w in p["wells"]] == [
        (500.0, 2350.0, 120.0),
        (3500.0, 2350.0, 70.0),
        (2000.0, 3550.0, 90.0),
        (2000.0, 1050.0, 90.0),
    ]
    assert p["grid"] == {"nx": 50, "ny": 50, "lx": 5000.0, "ly": 5000.0}
    assert len(p["observations"]["locations"]) == 41
    assert p["observations"]["noise_std"] == 0.05


def test_variant_templates():
    assert template("case2")["observations"]["noise_std"] == 0.02
    assert len(template("case3")["observations"]["locations"]) == 16
    cov = template("case4")["covariance"]
    assert cov["kind"] == "matern25" and cov["l1"] == cov["l2"] == 1000.0
    assert template("case5")["grid"]["nx"] == 100


def test_templates_are_fresh_copies():
    a = template("base")
    a["wells"][0]["rate"] = 0.0
    assert template("base")["wells"][0]["rate"] == BASE_WELLS[0]["rate"] == 120.0


@pytest.mark.parametrize("name", ["scaled(10)", "scaled:10", "scaled10", "scaled(10, 21)"])
def test_scaled_names(name):
    p = template(name)
    assert p["grid"]["nx"] == p["grid"]["ny"] == 10


def test_scaled_observation_subset():
    locs = template("scaled(25,21)")["observations"]["locations"]
    full = template("base")["observations"]["locations"]
    assert locs == full[::2]
    with pytest.raises(ValueError):
        template("scaled(10,42)")


def test_unknown_template():
    with pytest.raises(ValueError, match="unknown template"):
        template("case9")


def test_problem_file_round_trip(tmp_path):
    for name in TEMPLATES:
        p = template(name)
        assert load_problem(save_problem(p, tmp_path / f"{name}.json")) == p


def test_load_problem_validates(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"grid": {"nx": 2, "ny": 2, "lx": 1, "ly": 1}}')
    with pytest.raises(ValueError, match="covariance"):
        load_problem(path)


def test_build_case_synthesises_data_deterministically():
    a = build_case(template("scaled(8)"))
    b = build_case(template("scaled(8)"))
    assert a.observations.values.tobytes() == b.observations.values.tobytes()
    assert a.true_field.shape == (64,)
    resid = (a.observations.values - a.observations.clean) / 0.05
    assert np.abs(resid).max() < 5
    assert math.isfinite(a.log_likelihood(a.true_field))


def test_build_case_uses_given_values():
    p = template("direct-oracle")
    p["observations"]["values"] = [-2.0, -2.5, -3.0, -1.0, 0.0]
    case = build_case(p)
    assert case.true_field is None
    np.testing.assert_array_equal(case.observations.values, p["observations"]["values"])


def test_build_case_without_observations():
    p = template("direct-oracle")
    del p["observations"]
    case = build_case(p)
    assert case.log_likelihood(np.zeros(100)) == 0.0


def test_unknown_observation_mode():
    p = template("direct-oracle")
    p["observations"]["mode"] = "fluxes"
    with pytest.raises(ValueError, match="observation mode"):
        build_case(p)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
    seeds = {derive_seed(3, i, j) for i in range(5) for j in range(5)}
    assert len(seeds) == 25
    assert derive_seed(3, 0) != derive_seed(4, 0)


def test_kernel_for_edges():
    assert kernel_for(0.3, 1.0).kind == PCN
    assert kernel_for(1.0, 0.3).kind == SEQ_GIBBS
    assert kernel_for(1.0, 1.0).kind == PCN
    assert kernel_for(0.3, 0.3) == KernelConfig(SEQ_PCN, 0.3, 0.3)


def _small_chain(thin=1, seed=5):
    case = build_case(template("direct-oracle"))
    return run_chain(KernelConfig(SEQ_PCN, 0.5, 0.3), case.prior, case.log_likelihood, 400, thin, seed), case


@pytest.mark.parametrize("thin", [1, 7])
def test_chain_round_trip_is_exact(tmp_path, thin):
    chain, case = _small_chain(thin)
    back = read_chain(write_chain(chain, tmp_path / "c.csv", case.grid))
    assert back.thetas.tobytes() == chain.thetas.tobytes()
    assert back.log_likelihoods.tobytes() == chain.log_likelihoods.tobytes()
    np.testing.assert_array_equal(back.steps, chain.steps)
    np.testing.assert_array_equal(back.accept_flags, chain.accept_flags)
    assert back.config == chain.config and back.seed == chain.seed and back.thin == thin
    a = metrics_report([chain]).to_dict()
    b = metrics_report([back]).to_dict()
    assert a == b


def test_chain_file_layout(tmp_path):
    chain, _ = _small_chain()
    path = write_chain(chain, tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:4] == ["step", "accepted", "log_likelihood", "theta_0"]
    assert len(lines[0].split(",")) == 3 + 100
    assert len(lines) == 402


def test_chain_without_sidecar(tmp_path):
    chain, _ = _small_chain()
    path = write_chain(chain, tmp_path / "c.csv")
    path.with_suffix(".json").unlink()
    back = read_chain(path)
    np.testing.assert_array_equal(back.accept_flags, chain.accept_flags)


def test_read_chain_rejects_other_csv(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="not a chain file"):
        read_chain(path)


def test_history_round_trip(tmp_path):
    hist = [(0, 0.1, 0.2, 0.0031), (0, 0.1 * math.sqrt(2), 0.2, 1e-17), (1, 1.0, 1e-3, 0.5)]
    assert read_history(write_history(hist, tmp_path / "h.csv")) == hist


@pytest.fixture(scope="module")
def tiny_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    res = sweep(template("direct-oracle"), [0.1, 1.0], [0.3, 1.0], 600, thin=2, repeats=2, seed=1, out=out)
    return res, out


def test_sweep_tables(tiny_sweep):
    res, out = tiny_sweep
    assert len(res.rows) == 8 and len(res.means) == 4 and not res.errors
    for m in res.means:
        cell = [r for r in res.rows if r["beta"] == m["beta"] and r["kappa"] == m["kappa"]]
        assert m["eff"] == pytest.approx(np.mean([r["eff"] for r in cell]), rel=1e-12)
        assert m["acceptance"] == pytest.approx(np.mean([r["acceptance"] for r in cell]), rel=1e-12)
    assert res.best["eff"] == max(m["eff"] for m in res.means)
    back = read_sweep_means(out / "sweep_mean.csv")
    for a, b in zip(back, res.means):
        assert a["eff"] == b["eff"] and a["beta"] == b["beta"]
    assert (out / "sweep.csv").read_text().count("\n") == 9
    assert (out / "sweep_best.json").exists()


def test_sweep_matches_direct_run(tiny_sweep):
    res, _ = tiny_sweep
    row = next(r for r in res.rows if r["beta"] == 0.1 and r["kappa"] == 0.3 and r["repeat"] == 1)
    case = build_case(template("direct-oracle"))
    chain = run_chain(kernel_for(0.1, 0.3), case.prior, case.log_likelihood, 600, 2, derive_seed(1, 0, 0, 1))
    from seqpcn.metrics import combined_efficiency, post_burn_in

    assert row["eff"] == combined_efficiency(post_burn_in(chain))


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        sweep(template("direct-oracle"), [0.0], [0.5], 100)
    with pytest.raises(ValueError):
        sweep(template("direct-oracle"), [0.5], [1.5], 100)


def test_interpolation():
    means = [
        {"beta": b, "kappa": k, "eff": eff}
        for (b, k, eff) in [(0.01, 0.1, 1.0), (0.1, 0.1, 2.0), (0.01, 1.0, 3.0), (0.1, 1.0, 4.0)]
    ]
    assert interpolate_efficiency(means, 0.1, 0.1) == 2.0
    assert interpolate_efficiency(means, math.sqrt(0.001), math.sqrt(0.1)) == pytest.approx(2.5)
    assert interpolate_efficiency(means, 0.5, 5.0) == 4.0  # clamped
    assert interpolate_efficiency(means, 1e-5, 0.01) == 1.0


def test_run_experiment_writes_files(tmp_path):
    res = run_experiment(template("direct-oracle"), KernelConfig(PCN, 0.4), 300, thin=3, n_chains=2, seed=2, out=tmp_path)
    assert not res.errors
    assert (tmp_path / "chain_0.csv").exists() and (tmp_path / "chain_1.csv").exists()
    assert (tmp_path / "metrics.json").exists()
    assert res.report["rhat_max"] is not None
    assert res.report["seeds"] == [derive_seed(2, 0), derive_seed(2, 1)]
