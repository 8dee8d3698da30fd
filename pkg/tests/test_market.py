import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_market, richness_scan
from riskbid.market import MarketModel, fit_market


def test_uniform_counts():
    m = fit_market([0, 1, 0, 1], delta_max=1)
    np.testing.assert_allclose(m.probs_, [0.5, 0.5])


def test_single_atom():
    m = fit_market([3], delta_max=3)
    np.testing.assert_array_equal(m.probs_, [0, 0, 0, 1])


def test_smoothing_formula():
    # hand evaluation: (1 + 1) / (4 + 1 * 4) for every bin
    m = fit_market([0, 1, 2, 3], delta_max=3, smoothing=1)
    np.testing.assert_allclose(m.probs_, [0.25] * 4, atol=1e-15)
    m = fit_market([0, 0, 0, 3], delta_max=3, smoothing=1)
    np.testing.assert_allclose(m.probs_, [4 / 8, 1 / 8, 1 / 8, 2 / 8])


def test_clamping_counts_and_warns(caplog):
    m = fit_market([0, 5, 9], delta_max=4)
    assert m.n_clamped_ == 2
    np.testing.assert_allclose(m.probs_, [1 / 3, 0, 0, 0, 2 / 3])
    assert "clamped" in caplog.text


@pytest.mark.parametrize("prices", [[], [-1, 2], [1.5]])
def test_fit_rejects_bad_prices(prices):
    with pytest.raises(ValueError):
        fit_market(prices)


def test_richness_uniform_examples():
    m = MarketModel.from_probs(np.full(10, 0.1))
    assert m.budget_richness(1, 2) == 6  # smallest U with 0.1 U (U+1) / 2 >= 2
    assert m.budget_richness(1, 1000) == 9
    assert m.budget_richness(5, 0) == 0


def test_richness_rejects_t_zero():
    m = MarketModel.from_probs([0.5, 0.5])
    with pytest.raises(ValueError):
        m.budget_richness(0, 3)


def test_richness_matches_linear_scan():
    rng = np.random.default_rng(0)
    for _ in range(20):
        probs = random_market(rng, int(rng.integers(1, 30)))
        m = MarketModel.from_probs(probs)
        t = rng.integers(1, 50, size=40)
        b = rng.integers(0, 500, size=40)
        got = m.budget_richness(t, b)
        want = [richness_scan(probs, ti, bi) for ti, bi in zip(t, b)]
        np.testing.assert_array_equal(got, want)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=200), st.floats(0, 3))
def test_market_invariants(prices, smoothing):
    m = fit_market(prices, smoothing=smoothing)
    assert np.all(m.probs_ >= 0)
    assert abs(m.probs_.sum() - 1) < 1e-12
    assert np.all(np.diff(m.cum_win_) >= 0) and abs(m.cum_win_[-1] - 1) < 1e-12
    assert np.all(np.diff(m.cum_cost_) >= -1e-15)
    a = np.arange(m.probs_.size)
    assert np.all(m.cum_cost_ <= a * m.cum_win_ + 1e-12)


def test_csv_roundtrip(tmp_path):
    m = fit_market([0, 2, 2, 7, 3], delta_max=8, smoothing=0.5)
    m.to_csv(tmp_path / "m.csv")
    m2 = MarketModel.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(m.probs_, m2.probs_)


def test_get_params():
    assert MarketModel(delta_max=5).get_params() == {"delta_max": 5, "smoothing": 0.0}
