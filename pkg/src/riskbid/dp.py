"""Budget-constrained value table V(t, b) and the threshold bid rule."""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_finite, check_positive_int, check_state

_MAGIC = b"RBVT0001"


@dataclass(frozen=True)
class BidDecision:
    price: int
    threshold: Optional[int] = None


@dataclass
class ValueTable:
    """Expected cumulative value V[t, b] for t in [0, T], b in [0, B]."""

    values: np.ndarray
    r_avg: float

    @property
    def T(self):
        return self.values.shape[0] - 1

    @property
    def B(self):
        return self.values.shape[1] - 1

    def g(self, theta, t, b, deltas):
        """Marginal gain theta + V(t-1, b-delta) - V(t-1, b) for each delta in ``deltas``."""
        row = self.values[t - 1]
        return theta + row[b - np.asarray(deltas)] - row[b]

    def bid_price(self, theta, t, b):
        """Largest price whose marginal gain is still nonnegative.

        Returns b when g(b) >= 0. Otherwise binary-searches the integer A with
        g(A) >= 0 > g(A+1); when even g(0) = theta < 0 the price is 0.
        """
        theta = check_finite(theta, "theta")
        t, b = check_state(t, b, self.T, self.B)
        if t < 1:
            raise ValueError("bid_price needs t >= 1")
        row = self.values[t - 1]
        vb = row[b]
        if theta + row[0] - vb >= 0:
            return BidDecision(b)
        if theta < 0:
            return BidDecision(0, 0)
        lo, hi = 0, b  # g(lo) >= 0, g(hi) < 0
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if theta + row[b - mid] - vb >= 0:
                lo = mid
            else:
                hi = mid
        return BidDecision(lo, lo)

    def bid_prices(self, theta, t, b):
        """Vectorized ``bid_price`` over arrays of (theta, b) at a common t."""
        theta = np.asarray(theta, dtype=float)
        b = np.asarray(b, dtype=np.int64)
        theta, b = np.broadcast_arrays(theta, b)
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [1, {self.T}]")
        if b.size and (b.min() < 0 or b.max() > self.B):
            raise ValueError(f"budget outside [0, {self.B}]")
        row = self.values[t - 1]
        vb = row[b]
        full = theta + row[0] - vb >= 0
        lo = np.zeros(b.shape, dtype=np.int64)
        hi = b.copy()
        search = ~full & (theta >= 0)
        while True:
            active = search & (hi - lo > 1)
            if not active.any():
                break
            mid = (lo + hi) // 2
            ok = theta + row[b - mid] - vb >= 0
            lo = np.where(active & ok, mid, lo)
            hi = np.where(active & ~ok, mid, hi)
        return np.where(full, b, lo)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqd", self.T, self.B, self.r_avg))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path}: not a value table file")
            T, B, r_avg = struct.unpack("<qqd", fh.read(24))
            values = np.frombuffer(fh.read(), dtype="<f8")
        if values.size != (T + 1) * (B + 1):
            raise ValueError(f"{path}: truncated table ({values.size} values, expected {(T + 1) * (B + 1)})")
        return cls(values.reshape(T + 1, B + 1).astype(float), r_avg)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("t,b,value\n")
            for t, row in enumerate(self.values.tolist()):
                for b, v in enumerate(row):
                    fh.write(f"{t},{b},{v!r}\n")


def build_table(market, r_avg, T, B):
    """Run the value recursion with the average impression value ``r_avg``.

    V(t, b) = V(t-1, b) + sum_{delta <= a*} m(delta) g(delta), where
    g(delta) = r_avg + V(t-1, b-delta) - V(t-1, b) and the sum stops at the
    first negative g (delta = 0 is always included: a bid of 0 still wins
    price-0 auctions).
    """
    r_avg = check_finite(r_avg, "r_avg")
    T = check_positive_int(T, "T", allow_zero=True)
    B = check_positive_int(B, "B", allow_zero=True)
    probs = market.probs_
    d_hi = min(market.delta_max_, B)
    values = np.zeros((T + 1, B + 1))
    for t in range(1, T + 1):
        prev = values[t - 1]
        gain = probs[0] * np.full(B + 1, r_avg)
        alive = np.full(B + 1, r_avg >= 0)
        for d in range(1, d_hi + 1):
            if not alive[d:].any():
                break
            g = r_avg + prev[:B + 1 - d] - prev[d:]
            a = alive[d:] & (g >= 0)
            alive[d:] = a
            alive[:d] = False
            gain[d:] += np.where(a, probs[d] * g, 0.0)
        values[t] = prev + gain
    return ValueTable(values, r_avg)


def bid_price(table, market, theta, t, b):
    """Functional form of ``ValueTable.bid_price``; ``market`` is unused by the rule itself."""
    return table.bid_price(theta, t, b)
