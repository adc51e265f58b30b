import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from timeaug.stats import (P_FLOOR, format_mean_sd, spearman_rho, summarize, t_sf_two_tailed,
                           ttest_from_stats, ttest_independent)


def t_pdf(x, df):
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def two_tailed_by_quadrature(t, df):
    tail, _ = integrate.quad(t_pdf, abs(t), np.inf, args=(df,), epsabs=1e-14, epsrel=1e-12)
    return 2 * tail


@pytest.mark.parametrize("t,df", [(0.5, 3), (2.101, 18), (-2.228, 18), (4.0, 10), (1.0, 1), (3.3, 40)])
def test_p_value_matches_quadrature(t, df):
    assert_allclose(t_sf_two_tailed(t, df), two_tailed_by_quadrature(t, df), rtol=1e-8, atol=1e-14)


def test_97_5_percent_quantile_of_t18():
    assert abs(t_sf_two_tailed(2.101, 18) - 0.05) < 5e-4


def test_core50_row_from_summary_stats():
    res = ttest_from_stats(0.554, 0.070, 10, 0.629, 0.081, 10)
    assert res.df == 18
    assert abs(res.t - (-2.22)) < 0.01
    assert abs(res.p_two_tailed - 0.039) < 1e-3


def test_identical_samples_give_t0_p1():
    res = ttest_independent([0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
    assert res.t == 0.0 and res.p_two_tailed == 1.0


def test_zero_variance_unequal_means_is_an_error():
    with pytest.raises(ValueError):
        ttest_independent([0.5, 0.5], [0.6, 0.6])


def test_needs_two_samples_per_group():
    with pytest.raises(ValueError):
        ttest_independent([0.5], [0.6, 0.7])


def test_p_floor():
    res = ttest_from_stats(0.326, 0.004, 10, 0.534, 0.004, 10)
    assert res.p_two_tailed == P_FLOOR


def test_matches_direct_pooled_formula():
    rng = np.random.default_rng(3)
    a, b = rng.normal(0.5, 0.1, 7), rng.normal(0.6, 0.05, 9)
    sp2 = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    t = (a.mean() - b.mean()) / math.sqrt(sp2 * (1 / len(a) + 1 / len(b)))
    res = ttest_independent(a, b)
    assert_allclose(res.t, t, rtol=1e-12)
    assert res.df == 14


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.lists(st.floats(0, 1), min_size=2, max_size=12))
def test_antisymmetry(a, b):
    try:
        ab = ttest_independent(a, b)
    except ValueError:
        return
    ba = ttest_independent(b, a)
    assert_allclose(ab.t, -ba.t, atol=1e-12)
    assert_allclose(ab.p_two_tailed, ba.p_two_tailed, rtol=1e-12)
    assert 0 < ab.p_two_tailed <= 1


def test_summary_and_formatting():
    s = summarize([0.5, 0.6, 0.7])
    assert_allclose([s["mean"], s["sd"], s["se"]], [0.6, 0.1, 0.1 / math.sqrt(3)])
    assert format_mean_sd([0.5, 0.6, 0.7]) == "0.600 ± 0.100"


def test_spearman():
    assert spearman_rho([0, 30, 120, 360], [0.1, 0.2, 0.3, 0.4]) == pytest.approx(1.0)
    assert spearman_rho([0, 30, 120, 360], [0.4, 0.3, 0.2, 0.1]) == pytest.approx(-1.0)
