import numpy as np
import pytest

from rakingratio.measures import indicator
from rakingratio.montecarlo import (
    BivariateNormalGenerator,
    DiscreteGenerator,
    ExperimentConfig,
    _ecdf_errors,
    berry_esseen_check,
    drop_probability_bound,
    ecdf_experiment,
    replication_rng,
    run_raking_experiment,
    sample_vs_theory,
)


def small_config(a2, **kw):
    grid, f = a2
    opts = dict(n=300, reps=400, schedule=[0, 1, 0], functions=[f], seed=7)
    opts.update(kw)
    return ExperimentConfig(DiscreteGenerator(grid, [f]), **opts)


def test_config_validation(a2):
    with pytest.raises(ValueError):
        small_config(a2, n=0)
    with pytest.raises(ValueError):
        small_config(a2, reps=0)


def test_replication_streams_are_independent_of_order():
    a = replication_rng(3, 5).standard_normal(4)
    replication_rng(3, 4).standard_normal(10)
    assert np.array_equal(a, replication_rng(3, 5).standard_normal(4))
    assert not np.array_equal(a, replication_rng(3, 6).standard_normal(4))


def test_thread_count_does_not_change_results(a2):
    one = run_raking_experiment(small_config(a2, threads=1))
    four = run_raking_experiment(small_config(a2, threads=4))
    assert np.array_equal(one.values, four.values)
    assert one.dropped == four.dropped


def test_report_fields(a2):
    rep = run_raking_experiment(small_config(a2))
    assert rep.values.shape == (rep.kept, 4, 1)
    assert rep.dropped <= rep.reps
    assert rep.max_margin_error < 1e-12
    d = rep.to_dict()
    assert np.all(np.isfinite(d["bias"])) and np.all(np.isfinite(d["ncov"]))
    # unraked variance matches the classical empirical variance loosely
    assert rep.ncov[0, 0, 0] == pytest.approx(rep.theory[0, 0, 0], rel=0.2)


def test_discrete_generator_noise_moments(a2):
    grid, f = a2
    s = DiscreteGenerator(grid, [f]).draw(np.random.default_rng(0), 200_000)
    cells = np.array([np.flatnonzero((grid.codes == c).all(axis=1))[0] for c in s.codes])
    resid = s.values["f"] - f.mean[cells]
    assert abs(resid.mean()) < 0.01
    assert resid.var() == pytest.approx(0.5, rel=0.01)


def test_drop_bound_and_dropping(a2):
    grid, f = a2
    t = [grid.target(0), grid.target(1)]
    assert drop_probability_bound(t, 10) == pytest.approx(5 * 0.8**10)
    rep = run_raking_experiment(small_config(a2, n=8, reps=300))
    assert rep.dropped > 0
    assert rep.dropped / rep.reps <= 3 * rep.drop_bound


def test_all_dropped_raises(a2):
    with pytest.raises(RuntimeError):
        run_raking_experiment(small_config(a2, n=1, reps=5))


def test_berry_esseen_rejects_degenerate(a2):
    grid, f = a2
    ind = indicator(grid, 0, 0)
    cfg = ExperimentConfig(DiscreteGenerator(grid, [f, ind]), n=100, reps=10,
                           schedule=[0], functions=[f, ind])
    with pytest.raises(ValueError):
        berry_esseen_check(cfg, ind, 1)


def test_berry_esseen_small(a2):
    ks = berry_esseen_check(small_config(a2, n=1000, reps=2000), a2[1], 1)
    assert ks < 0.05


def test_ecdf_errors_by_hand():
    z = np.array([0.0, 1.0, 3.0])
    w = np.full(3, 1 / 3)
    d, err = _ecdf_errors(z, w, lambda t: np.clip(t / 3, 0, 1))
    # |F_n - F| at 1 and 3 is 1/3 and 0; gaps are 1 and 2
    assert d == pytest.approx(1 / 3)
    np.testing.assert_allclose(err, [1 / 3, 1 / 3, 0.0], atol=1e-15)


def test_bivariate_targets_and_cells():
    gen = BivariateNormalGenerator()
    tx, ty = gen.target(0), gen.target(1)
    assert tx.probs.size == 10 and ty.probs.size == 10
    assert tx.probs.sum() == pytest.approx(1.0)
    s = gen.draw(np.random.default_rng(1), 1000)
    x = s.values["X"]
    j = s.codes[:, 0]
    inner = (j > 0) & (j < 9)
    assert np.all(x[inner] > gen.thresholds[j[inner] - 1])
    assert np.all(x[inner] <= gen.thresholds[j[inner]])


def test_ecdf_experiment_small():
    cfg = ExperimentConfig(BivariateNormalGenerator(), n=200, reps=50, seed=1, threads=2)
    rep = ecdf_experiment(cfg)
    for z in "XY":
        assert rep.D[z]["10"] < rep.D[z]["0"]
        assert 0 <= rep.p[z]["10"] <= 1
    with pytest.raises(ValueError):
        ecdf_experiment(ExperimentConfig(BivariateNormalGenerator(), n=10, reps=2, steps=3))


def test_sample_vs_theory_small(a2):
    out = sample_vs_theory(small_config(a2), N=2, draws=20_000)
    assert out["deviation_sample_gn"] < 0.05
    assert out["deviation_raking"] < 0.25


def test_normality_and_covariance_at_full_size(a2):
    grid, f = a2
    cfg = small_config(a2, n=5000, reps=10_000, schedule=[0], seed=11, threads=4)
    rep = run_raking_experiment(cfg)
    assert berry_esseen_check(cfg, f, 0, report=rep) < 0.02
    assert berry_esseen_check(cfg, f, 1, report=rep) < 0.03
    cfg = small_config(a2, n=2000, reps=10_000, seed=11, threads=4)
    out = sample_vs_theory(cfg, N=3)
    assert out["deviation_sample_gn"] < 0.02
    assert out["deviation_raking"] < 0.05


def test_unraked_indicators_match_multinomial(a2):
    grid, _ = a2
    from rakingratio.measures import cell_indicators
    inds = cell_indicators(grid)
    cfg = ExperimentConfig(DiscreteGenerator(grid, inds), n=50, reps=100_000, schedule=[0],
                           functions=inds, seed=2, threads=4)
    out = sample_vs_theory(cfg, N=0)
    ref = np.diag(grid.p) - np.outer(grid.p, grid.p)
    np.testing.assert_allclose(out["theory"], ref, atol=1e-15)
    assert out["deviation_sample_gn"] < 0.01
    assert out["deviation_raking"] < 0.01
