"""Empirical market-price distribution and the budget-richness solver."""

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonneg, check_positive_int

logger = logging.getLogger(__name__)


class MarketModel(BaseEstimator):
    """Histogram estimate of the integer market price distribution m(delta).

    Parameters
    ----------
    delta_max : int or None
        Largest representable price. ``None`` uses the largest observed price.
        Observed prices above it are clamped to it.
    smoothing : float
        Additive (Laplace) pseudo-count per price bin.

    Attributes
    ----------
    probs_ : ndarray of shape (delta_max + 1,)
    cum_win_ : ndarray, prefix sums of ``probs_``
    cum_cost_ : ndarray, prefix sums of ``delta * probs_``
    n_clamped_ : int, number of prices clamped during ``fit``
    """

    def __init__(self, delta_max=None, smoothing=0.0):
        self.delta_max = delta_max
        self.smoothing = smoothing

    def fit(self, prices, y=None):
        prices = np.asarray(prices)
        if prices.size == 0:
            raise ValueError("cannot fit a market model on zero prices")
        if prices.ndim != 1:
            prices = prices.ravel()
        if not np.all(np.isfinite(prices)) or np.any(prices != np.round(prices)):
            raise ValueError("market prices must be finite integers")
        prices = prices.astype(np.int64)
        if prices.min() < 0:
            raise ValueError(f"negative market price {prices.min()}")
        smoothing = check_nonneg(self.smoothing, "smoothing")

        if self.delta_max is None:
            delta_max = int(prices.max())
        else:
            delta_max = check_positive_int(self.delta_max, "delta_max", allow_zero=True)
        over = prices > delta_max
        self.n_clamped_ = int(over.sum())
        if self.n_clamped_:
            logger.warning("clamped %d market prices above delta_max=%d", self.n_clamped_, delta_max)
            prices = np.minimum(prices, delta_max)

        counts = np.bincount(prices, minlength=delta_max + 1).astype(float)
        probs = (counts + smoothing) / (prices.size + smoothing * (delta_max + 1))
        self._set_probs(probs)
        return self

    @classmethod
    def from_probs(cls, probs):
        """Build a fitted model directly from a probability vector over 0..len-1."""
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty 1-D array")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be nonnegative and sum to 1")
        model = cls(delta_max=probs.size - 1)
        model.n_clamped_ = 0
        model._set_probs(probs / probs.sum())
        return model

    def _set_probs(self, probs):
        self.probs_ = probs
        self.delta_max_ = probs.size - 1
        self.cum_win_ = np.cumsum(probs)
        self.cum_cost_ = np.cumsum(np.arange(probs.size) * probs)

    @property
    def expected_price(self):
        check_is_fitted(self, "probs_")
        return float(self.cum_cost_[-1])

    def budget_richness(self, t, b):
        """Smallest integer price U with expected cost sum_{d<=U} d m(d) >= b / t.

        Saturates at ``delta_max`` when b / t exceeds the total expected cost.
        ``t`` and ``b`` may be arrays (broadcast together).
        """
        check_is_fitted(self, "probs_")
        t_arr = np.asarray(t)
        b_arr = np.asarray(b)
        if np.any(t_arr <= 0):
            raise ValueError("budget richness needs at least one remaining auction (t >= 1)")
        if np.any(b_arr < 0):
            raise ValueError("remaining budget must be nonnegative")
        target = b_arr / t_arr
        u = np.searchsorted(self.cum_cost_, target, side="left")
        u = np.minimum(u, self.delta_max_)
        if u.ndim == 0:
            return int(u)
        return u.astype(np.int64)

    def to_csv(self, path):
        check_is_fitted(self, "probs_")
        with open(path, "w", newline="\n") as fh:
            fh.write("delta,prob\n")
            for d, p in enumerate(self.probs_.tolist()):
                fh.write(f"{d},{p!r}\n")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        deltas = data[:, 0].astype(np.int64)
        if not np.array_equal(deltas, np.arange(deltas.size)):
            raise ValueError(f"{path}: delta column must be 0..n-1 in order")
        return cls.from_probs(data[:, 1])


def fit_market(prices, delta_max=None, smoothing=0.0):
    return MarketModel(delta_max=delta_max, smoothing=smoothing).fit(prices)
