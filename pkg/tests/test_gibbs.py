import math
from fractions import Fraction

import numpy as np
import pytest

from shellgibbs.errors import DomainError
from shellgibbs.gibbs import (
    DIVERGENT,
    GibbsParams,
    b_moment_bound,
    b_moment_exact,
    b_moment_monte_carlo,
    b_norm_moment,
    expected_sobolev_sq,
    marginal_gof_test,
    sample_gibbs,
    sample_gibbs_ensemble,
    sup_norm_escape,
)
from shellgibbs.nonlinearity import ModelParams
from shellgibbs.rng import CounterStream
from shellgibbs.spectral import GridParams, ShellState, sobolev_norm_array

G16 = GridParams(1, 2, 16)
MODEL = ModelParams("SABRA", 1, -0.5)


def test_params_validation():
    with pytest.raises(DomainError):
        GibbsParams(0, G16)
    with pytest.raises(DomainError):
        GibbsParams(-1, G16)


def test_sample_gibbs_scalar_and_batch():
    p = GibbsParams(2, G16)
    s = sample_gibbs(p, CounterStream(3, 5))
    assert isinstance(s, ShellState)
    b = sample_gibbs(p, CounterStream(3, np.arange(8)))
    np.testing.assert_array_equal(b[5], s.modes)
    # ensemble rows do not depend on how the id range is split
    full = sample_gibbs_ensemble(p, 1, 50)
    np.testing.assert_array_equal(full[20:], sample_gibbs_ensemble(p, 1, 30, start=20))


def test_coordinate_moments():
    p = GibbsParams(2, GridParams(1, 2, 4))
    x = sample_gibbs_ensemble(p, 0, 100_000).reshape(100_000, -1)
    n = x.shape[0]
    var_se = math.sqrt(2 / n) * 0.5
    assert np.all(np.abs(x.var(axis=0) - 0.5) < 3.5 * var_se)
    assert np.all(np.abs(x.mean(axis=0)) < 3.5 * math.sqrt(0.5 / n))
    m4 = np.mean(x**4, axis=0)
    m4_se = np.std(x**4, axis=0) / math.sqrt(n)
    assert np.all(np.abs(m4 - 3 / 4) < 3.5 * m4_se)


def test_expected_sobolev_closed_forms():
    assert expected_sobolev_sq(GibbsParams(2, GridParams(1, 2)), -0.5, truncated=False) == pytest.approx(1.0)
    assert expected_sobolev_sq(GibbsParams(1, GridParams(1, 2)), -1, truncated=False) == pytest.approx(2 / 3)
    assert expected_sobolev_sq(GibbsParams(1, GridParams()), 0, truncated=False) == DIVERGENT
    assert expected_sobolev_sq(GibbsParams(1, GridParams()), 0.5, truncated=False) == DIVERGENT


def test_sup_norm_escape_decreases():
    fr = [sup_norm_escape(GibbsParams(1, GridParams(M=M)), 2.0, 20_000, 0) for M in (3, 8, 16, 32)]
    assert all(b < a for a, b in zip(fr, fr[1:]))
    assert fr[-1] < 0.05


def test_b_moment_interior_formula():
    p = GibbsParams(1, G16)
    a, b = 1.0, -0.5
    k = lambda n: 2.0**n  # noqa: E731
    for n in range(3, 15):
        first = 2 * (a * a * k(n + 1) ** 2 + b * b * k(n) ** 2 + (a + b) ** 2 * k(n - 1) ** 2)
        assert b_moment_exact(n, p, MODEL) == pytest.approx(2 * first, rel=1e-14)
        assert b_moment_exact(n, p, MODEL) < b_moment_bound(n, p, MODEL)
    assert isinstance(b_moment_exact(5, p, ModelParams("GOY", 1, Fraction(-1, 2)), exact=True), Fraction)


def test_b_moment_domain():
    p = GibbsParams(1, G16)
    for n in (1, 2, 15, 16):
        with pytest.raises(DomainError):
            b_moment_exact(n, p, MODEL)
        assert b_moment_exact(n, p, MODEL, boundary=True) > 0


def test_b_moment_monte_carlo_small():
    p = GibbsParams(1, G16)
    est = b_moment_monte_carlo(5, p, MODEL, 100_000, seed=2)
    assert abs(est.value - b_moment_exact(5, p, MODEL)) <= 3.5 * est.stderr


def test_b_norm_moment():
    with pytest.raises(DomainError):
        b_norm_moment(GibbsParams(1, G16), MODEL, 0.0)
    vals = [b_norm_moment(GibbsParams(1, GridParams(M=M)), MODEL, 1.0).value for M in (8, 12, 16, 24)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert abs(vals[3] - vals[2]) / vals[3] < 1e-6
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zero = ModelParams("SABRA", 0, 0)
    assert b_norm_moment(GibbsParams(1, G16), zero, 1.0).value == 0
    mc = b_norm_moment(GibbsParams(1, GridParams(M=8)), MODEL, 1.0, p=4, samples=5000)
    assert mc.value > 0 and mc.stderr > 0


def test_gof_accepts_gibbs_samples():
    p = GibbsParams(1, GridParams(M=32))
    rep = marginal_gof_test(sample_gibbs_ensemble(p, 11, 10_000), p, seed=11)
    assert rep.passed, rep.failures
    assert rep.sample_count == 10_000
    pv = np.asarray(rep.test_verdicts["ks_pvalues"])
    assert np.all((pv >= 0) & (pv <= 1))


def test_gof_rejects_scaled_and_wrong_temperature():
    p = GibbsParams(1, GridParams(M=32))
    x = sample_gibbs_ensemble(p, 12, 10_000)
    scaled = marginal_gof_test(1.5 * x, p)
    assert not scaled.passed
    assert any(f.startswith("variance") for f in scaled.failures)
    hot = sample_gibbs_ensemble(GibbsParams(4, GridParams(M=32)), 12, 10_000)
    assert not marginal_gof_test(hot, p).passed


def test_gof_needs_samples():
    p = GibbsParams(1, GridParams(M=4))
    with pytest.raises(DomainError):
        marginal_gof_test(sample_gibbs_ensemble(p, 0, 99), p)


def test_sobolev_mean_matches_closed_form():
    p = GibbsParams(1, GridParams(M=16))
    x = sample_gibbs_ensemble(p, 4, 50_000)
    for alpha in (-1.0, -0.5):
        v = sobolev_norm_array(x, p.grid, alpha) ** 2
        se = np.std(v, ddof=1) / math.sqrt(len(v))
        assert abs(np.mean(v) - expected_sobolev_sq(p, alpha)) <= 3.5 * se
