"""Auction logs: CSV ingestion, synthetic benchmark generation, episode splitting."""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .ctr import BayesianLogisticRegression

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("r_mean", "r_std", "market_price", "click")
MAX_MALFORMED_FRACTION = 0.01


@dataclass(frozen=True)
class AuctionRecord:
    r_mean: float
    r_std: float
    market_price: int
    click: int


@dataclass
class AuctionLog:
    """Column arrays for a sequence of auctions."""

    r_mean: np.ndarray
    r_std: np.ndarray
    market_price: np.ndarray
    click: np.ndarray

    def __post_init__(self):
        self.r_mean = np.asarray(self.r_mean, dtype=float)
        self.r_std = np.asarray(self.r_std, dtype=float)
        self.market_price = np.asarray(self.market_price, dtype=np.int64)
        self.click = np.asarray(self.click, dtype=np.int64)
        n = self.r_mean.shape[0]
        if any(a.shape[0] != n for a in (self.r_std, self.market_price, self.click)):
            raise ValueError("log columns have different lengths")

    def __len__(self):
        return self.r_mean.shape[0]

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return AuctionRecord(float(self.r_mean[key]), float(self.r_std[key]),
                                 int(self.market_price[key]), int(self.click[key]))
        return AuctionLog(self.r_mean[key], self.r_std[key], self.market_price[key], self.click[key])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls(*(np.array([getattr(r, c) for r in records]) for c in LOG_COLUMNS))

    @classmethod
    def concat(cls, logs):
        return cls(*(np.concatenate([getattr(lg, c) for lg in logs]) for c in LOG_COLUMNS))

    @property
    def cpm(self):
        """Cost per mille: 1000 * mean market price."""
        if len(self) == 0:
            raise ValueError("CPM of an empty log is undefined")
        return 1000.0 * self.market_price.sum() / len(self)

    def episodes(self, T):
        """Consecutive non-overlapping blocks of T auctions; a trailing partial block is dropped."""
        if T < 1:
            raise ValueError("episode length T must be >= 1")
        n_ep = len(self) // T
        n = n_ep * T
        return EpisodeBatch(*(getattr(self, c)[:n].reshape(n_ep, T) for c in LOG_COLUMNS))


@dataclass
class EpisodeBatch:
    """Episodes stacked into (n_episodes, T) arrays."""

    r_mean: np.ndarray
    r_std: np.ndarray
    market_price: np.ndarray
    click: np.ndarray

    @property
    def n_episodes(self):
        return self.r_mean.shape[0]

    @property
    def T(self):
        return self.r_mean.shape[1]

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            key = slice(key, key + 1)
        return EpisodeBatch(*(getattr(self, c)[key] for c in LOG_COLUMNS))


@dataclass
class LogDataset:
    records: AuctionLog
    split: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.split <= len(self.records):
            raise ValueError(f"split {self.split} outside (0, {len(self.records)}]")

    @property
    def train(self):
        return self.records[:self.split]

    @property
    def test(self):
        return self.records[self.split:]

    @property
    def cpm_train(self):
        return self.train.cpm


def _parse_line(line):
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != 4:
        raise ValueError(f"expected 4 fields, got {len(parts)}")
    r_mean, r_std = float(parts[0]), float(parts[1])
    price, click = int(parts[2]), int(parts[3])
    if not (np.isfinite(r_mean) and 0.0 <= r_mean <= 1.0):
        raise ValueError(f"r_mean={parts[0]} outside [0, 1]")
    if not (np.isfinite(r_std) and r_std >= 0.0):
        raise ValueError(f"r_std={parts[1]} must be nonnegative")
    if price < 0:
        raise ValueError(f"market_price={price} is negative")
    if click not in (0, 1):
        raise ValueError(f"click={click} must be 0 or 1")
    return r_mean, r_std, price, click


def read_log(path):
    """Read a ``r_mean,r_std,market_price,click`` CSV into an AuctionLog.

    Malformed lines are skipped with a warning as long as they make up at most
    1% of the data lines; beyond that a ValueError names the first bad line.
    """
    rows, bad = [], []
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
        if tuple(h.strip() for h in header) != LOG_COLUMNS:
            missing = [c for c in LOG_COLUMNS if c not in header]
            raise ValueError(f"{path}: header must be {','.join(LOG_COLUMNS)}"
                             + (f" (missing {missing})" if missing else ""))
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                rows.append(_parse_line(line))
            except ValueError as exc:
                bad.append((lineno, str(exc)))
    n_lines = len(rows) + len(bad)
    if bad:
        if len(bad) > MAX_MALFORMED_FRACTION * n_lines:
            lineno, why = bad[0]
            raise ValueError(f"{path}:{lineno}: {why} ({len(bad)} of {n_lines} lines malformed)")
        logger.warning("%s: skipped %d malformed lines (first at line %d: %s)",
                       path, len(bad), bad[0][0], bad[0][1])
    if not rows:
        return AuctionLog(np.zeros(0), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64))
    cols = list(zip(*rows))
    return AuctionLog(*cols)


def write_log(path, log):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for m, s, p, c in zip(log.r_mean.tolist(), log.r_std.tolist(),
                              log.market_price.tolist(), log.click.tolist()):
            fh.write(f"{m!r},{s!r},{p},{c}\n")


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic benchmark.

    Each request draws one value per categorical field from a Zipf-like
    distribution. The defaults give a low click rate and many sparsely
    observed feature values, so predictive uncertainty is typically several
    times the pCTR. Market prices are a discretized log-normal, independent
    of the features.
    """

    n_fields: int = 8
    field_cardinality: int = 500
    zipf_exponent: float = 0.2
    n_train: int = 100_000
    n_test: int = 200_000
    true_weight_scale: float = 0.5
    base_ctr: float = 0.002
    prior_variance: float = 1.0
    price_median: float = 12.0
    price_sigma: float = 0.8
    delta_max: int = 80
    seed: int = 0

    def __post_init__(self):
        for name in ("n_fields", "field_cardinality", "n_train", "n_test", "delta_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.base_ctr < 1:
            raise ValueError("base_ctr must be in (0, 1)")

    @property
    def n_features(self):
        return 1 + self.n_fields * self.field_cardinality


@dataclass
class SyntheticData:
    dataset: LogDataset
    features: np.ndarray  # (n, n_fields) active feature indices, bias excluded
    true_weights: np.ndarray
    ctr_model: BayesianLogisticRegression


def sample_market_prices(rng, n, median, sigma, delta_max):
    prices = np.floor(rng.lognormal(np.log(median), sigma, size=n))
    return np.clip(prices, 0, delta_max).astype(np.int64)


def generate_synthetic(config=None):
    """Draw a synthetic auction log and score it with a Bayesian LR fitted on the train split."""
    config = config or SyntheticConfig()
    rng = np.random.default_rng(config.seed)
    n = config.n_train + config.n_test
    K = config.field_cardinality

    ranks = np.arange(1, K + 1, dtype=float)
    value_probs = ranks ** -config.zipf_exponent
    value_probs /= value_probs.sum()
    values = rng.choice(K, size=(n, config.n_fields), p=value_probs)
    features = 1 + np.arange(config.n_fields) * K + values

    w = rng.normal(0.0, config.true_weight_scale, size=config.n_features)
    w[0] = np.log(config.base_ctr / (1 - config.base_ctr))
    logits = w[0] + w[features].sum(axis=1)
    clicks = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)
    prices = sample_market_prices(rng, n, config.price_median, config.price_sigma, config.delta_max)

    model = BayesianLogisticRegression(config.n_features, config.prior_variance)
    model.fit(list(features[:config.n_train]), clicks[:config.n_train])
    r_mean, r_std = model.predict_moments(list(features))

    meta = {"seed": config.seed, "config": dict(config.__dict__)}
    dataset = LogDataset(AuctionLog(r_mean, r_std, prices, clicks), config.n_train, meta)
    return SyntheticData(dataset, features, w, model)


def save_dataset(directory, dataset):
    """Write ``train.csv``, ``test.csv`` and ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_log(os.path.join(directory, "train.csv"), dataset.train)
    write_log(os.path.join(directory, "test.csv"), dataset.test)
    manifest = dict(dataset.meta, n_train=dataset.split, n_test=len(dataset.records) - dataset.split,
                    cpm_train=dataset.cpm_train)
    with open(os.path.join(directory, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    """Read a directory holding ``train.csv`` and ``test.csv``."""
    train = read_log(os.path.join(directory, "train.csv"))
    test = read_log(os.path.join(directory, "test.csv"))
    if len(train) == 0:
        raise ValueError(f"{directory}: empty training split")
    meta = {}
    manifest = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest) as fh:
            meta = json.load(fh)
    return LogDataset(AuctionLog.concat([train, test]), len(train), meta)
