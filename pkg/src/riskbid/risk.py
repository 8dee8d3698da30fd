"""Risk tendencies beta(t, b) and the uncertainty-adjusted impression value."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_finite, check_nonneg, check_positive_int


def adjust_value(r_mean, r_std, beta):
    """theta = r_mean + beta * r_std, unclamped (may be negative)."""
    theta = np.add(r_mean, np.multiply(beta, r_std))
    return float(theta) if np.ndim(theta) == 0 else theta


def cantelli_bound(lam):
    """One-sided tail bound P(X - mu > lam * sigma) <= 1 / (1 + lam^2) (mirrored for lam < 0)."""
    lam = check_finite(lam, "lambda")
    if lam == 0:
        raise ValueError("Cantelli bound is vacuous at lambda = 0")
    return 1.0 / (1.0 + lam * lam)


def evaluate_expert(alpha, u_hat, market, t, b):
    """tanh(alpha * (U(t, b) - u_hat) / u_hat) with U the budget richness."""
    if u_hat < 1:
        raise ValueError("u_hat must be >= 1")
    u = market.budget_richness(t, b)
    return np.tanh(alpha * (np.asarray(u, dtype=float) - u_hat) / u_hat)


class RiskTendency(BaseEstimator, TransformerMixin):
    """Base class: maps resource states (t, b) to a risk tendency.

    ``transform`` takes an (n, 2) array of (t, b) rows; calling the object with
    ``(t, b)`` broadcasts scalars or arrays.
    """

    kind = None

    def fit(self, X=None, y=None):
        return self

    def __call__(self, t, b):
        raise NotImplementedError

    def transform(self, X):
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("expected an (n, 2) array of (t, b) states")
        return np.asarray(self(X[:, 0], X[:, 1]), dtype=float)


class ZeroRiskTendency(RiskTendency):
    kind = "zero"

    def __call__(self, t, b):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(b)).shape)[()]


class ConstantRiskTendency(RiskTendency):
    kind = "constant"

    def __init__(self, beta0=0.0):
        self.beta0 = beta0

    def __call__(self, t, b):
        return np.full(np.broadcast(np.asarray(t), np.asarray(b)).shape, float(self.beta0))[()]


class ExpertRiskTendency(RiskTendency):
    """tanh-shaped tendency driven by budget richness against a threshold ``u_hat``.

    Parameters
    ----------
    alpha : float
        Slope, >= 0. ``alpha = 0`` gives a zero tendency everywhere.
    u_hat : int
        Budget-richness threshold in price units.
    market : MarketModel, optional
        May also be supplied through ``fit``.
    """

    kind = "expert"

    def __init__(self, alpha=0.1, u_hat=1, market=None):
        self.alpha = alpha
        self.u_hat = u_hat
        self.market = market

    def fit(self, X=None, y=None):
        """``X`` is a fitted MarketModel (or None to use ``self.market``)."""
        market = X if X is not None else self.market
        if market is None:
            raise ValueError("ExpertRiskTendency needs a fitted MarketModel")
        check_is_fitted(market, "probs_")
        check_nonneg(self.alpha, "alpha")
        check_positive_int(self.u_hat, "u_hat")
        self.market_ = market
        return self

    def __call__(self, t, b):
        if not hasattr(self, "market_"):
            self.fit()
        out = evaluate_expert(self.alpha, self.u_hat, self.market_, t, b)
        return out[()] if isinstance(out, np.ndarray) else out


class LearnedRiskTendency(RiskTendency):
    """Wraps a trained ``RiskNet``; inputs are normalized by the episode extents."""

    kind = "learned"
    chunk_size = 65536

    def __init__(self, net=None, T=1000, B=1):
        self.net = net
        self.T = T
        self.B = B

    def __call__(self, t, b):
        t = np.asarray(t, dtype=float)
        b = np.asarray(b, dtype=float)
        t, b = np.broadcast_arrays(t, b)
        x = np.column_stack([t.ravel() / self.T, b.ravel() / max(self.B, 1)])
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], self.chunk_size):
            out[start:start + self.chunk_size] = self.net.predict(x[start:start + self.chunk_size])
        return out.reshape(t.shape)[()]


def beta_grid(tendency, T, B, t_start=1):
    """Evaluate ``tendency`` on the full grid; returns (t, b, beta) flat arrays."""
    t, b = np.meshgrid(np.arange(t_start, T + 1), np.arange(B + 1), indexing="ij")
    t, b = t.ravel(), b.ravel()
    return t, b, np.asarray(tendency(t, b), dtype=float).reshape(t.shape)


def write_beta_grid(path, tendency, T, B):
    t, b, beta = beta_grid(tendency, T, B)
    beta = beta + 0.0  # drop negative zeros
    with open(path, "w", newline="\n") as fh:
        fh.write("t,b,beta\n")
        for row in zip(t.tolist(), b.tolist(), beta.tolist()):
            fh.write("%d,%d,%r\n" % row)
