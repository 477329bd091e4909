import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochshape.stochastics import (
    Const,
    SamplingError,
    Scenario,
    ScenarioDistribution,
    TruncNormalParams,
    deterministic,
    sample_scenario,
    sample_truncated_normal,
    stream,
)

LOW_VARIANCE = ScenarioDistribution(
    TruncNormalParams(1.5, 1e-2, 1, 2),
    TruncNormalParams(4, 1e-2, 3, 5),
    TruncNormalParams(10, 1e-2, 9, 11),
    Const(0.0),
)


def test_degenerate_window():
    p = TruncNormalParams(1.5, 1e-2, 1.5 - 1e-15, 1.5)
    v = sample_truncated_normal(p, stream(0, "test"))
    assert v == pytest.approx(1.5, abs=1e-14)


def test_draws_stay_in_window():
    v = sample_truncated_normal(TruncNormalParams(1.5, 1e-2, 1, 2), stream(0, "test"), 100_000)
    assert v.min() >= 1 and v.max() <= 2


def test_sample_mean():
    v = sample_truncated_normal(TruncNormalParams(10, 0.2, 9, 11), stream(1, "test"), 100_000)
    # three standard errors of 0.2 / sqrt(1e5) is about 0.0019
    assert abs(v.mean() - 10) <= 0.01


def test_ks_statistic_against_analytic_cdf():
    p = TruncNormalParams(1.5, 0.4, 1, 2)  # visibly truncated on both sides
    v = np.sort(sample_truncated_normal(p, stream(2, "test"), 100_000))
    F = p.cdf(v)
    n = v.size
    ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    assert ks <= 0.01


def test_far_tail_window_raises():
    with pytest.raises(SamplingError):
        sample_truncated_normal(TruncNormalParams(0, 1e-3, 1, 2), stream(0, "test"))


@pytest.mark.parametrize("std, lo, hi", [(0.0, 0, 1), (-1.0, 0, 1), (1.0, 1, 1), (1.0, 2, 1)])
def test_invalid_params(std, lo, hi):
    with pytest.raises(ValueError):
        TruncNormalParams(0.0, std, lo, hi)


def test_deterministic_distribution_repeats():
    dist = deterministic(1.5, 4, 10)
    assert dist.is_deterministic()
    s = {sample_scenario(dist, stream(0, "step", n)) for n in range(10)}
    assert s == {Scenario((1.5, 4.0), 10.0, 0.0)}


def test_low_variance_ranges():
    for n in range(200):
        s = sample_scenario(LOW_VARIANCE, stream(3, "step", n))
        assert 1 <= s.kappa[0] <= 2
        assert 3 <= s.kappa[1] <= 5
        assert 9 <= s.g <= 11


def test_common_inclusion_kappa():
    dist = ScenarioDistribution(Const(1.5), TruncNormalParams(4, 0.2, 3, 5), Const(10.0), Const(0.0), n_inclusions=6)
    s = sample_scenario(dist, stream(0, "step", 1))
    assert len(s.kappa) == 7
    assert len(set(s.kappa[1:])) == 1


def test_separate_inclusion_kappas():
    comps = tuple(TruncNormalParams(4, 0.2, 3, 5) for _ in range(3))
    dist = ScenarioDistribution(Const(1.5), Const(4.0), Const(10.0), Const(0.0), 3, False, comps)
    s = sample_scenario(dist, stream(0, "step", 1))
    assert len(set(s.kappa[1:])) == 3


def test_kappa_per_label_broadcasts_shared_value():
    s = Scenario((1.5, 4.0), 10.0)
    assert s.kappa_per_label(4).tolist() == [1.5, 4.0, 4.0, 4.0]
    with pytest.raises(ValueError):
        Scenario((1.5, 4.0, 5.0), 10.0).kappa_per_label(5)


def test_non_positive_kappa_rejected():
    with pytest.raises(ValueError):
        Scenario((1.5, 0.0), 10.0)


def test_independence_of_kappa0_and_g():
    dist = ScenarioDistribution(
        TruncNormalParams(1.5, 0.2, 1, 2), Const(4.0), TruncNormalParams(10, 0.2, 9, 11), Const(0.0)
    )
    draws = np.array([(s.kappa[0], s.g) for s in (sample_scenario(dist, stream(4, "estimate", 0, l)) for l in range(100_000))])
    assert abs(np.corrcoef(draws.T)[0, 1]) <= 0.01


def test_streams_are_keyed_not_sequential():
    a = stream(7, "estimate", 3, 5).normal(size=4)
    stream(7, "estimate", 3, 4).normal(size=1000)  # unrelated draws in between
    b = stream(7, "estimate", 3, 5).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream(7, "estimate", 3, 6).normal(size=4))
    assert not np.array_equal(a, stream(7, "step", 3, 5).normal(size=4))
    assert not np.array_equal(a, stream(8, "estimate", 3, 5).normal(size=4))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**63), n=st.integers(0, 10**6), l=st.integers(0, 10**4))
def test_same_key_same_scenario(seed, n, l):
    assert sample_scenario(LOW_VARIANCE, stream(seed, "estimate", n, l)) == sample_scenario(
        LOW_VARIANCE, stream(seed, "estimate", n, l)
    )


@settings(max_examples=50, deadline=None)
@given(
    mean=st.floats(-10, 10),
    std=st.floats(1e-3, 5),
    lo_z=st.floats(-3, 2),
    width_z=st.floats(0.01, 6),
)
def test_draws_always_inside_window(mean, std, lo_z, width_z):
    p = TruncNormalParams(mean, std, mean + lo_z * std, mean + (lo_z + width_z) * std)
    v = sample_truncated_normal(p, stream(0, "test"), 200)
    assert np.all((v >= p.lo) & (v <= p.hi))


def test_cdf_endpoints():
    p = TruncNormalParams(10, 0.2, 9, 11)
    assert p.cdf(9) == 0.0 and p.cdf(11) == pytest.approx(1.0)
    assert p.cdf(10) == pytest.approx(0.5)
    assert p.acceptance() == pytest.approx(math.erf(5 / math.sqrt(2)))
