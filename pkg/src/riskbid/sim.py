"""Second-price auction simulation, bidding strategies and the evaluation suite."""

import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator

from .data import EpisodeBatch
from .dp import build_table
from .market import MarketModel
from .risk import ConstantRiskTendency, ExpertRiskTendency, LearnedRiskTendency, ZeroRiskTendency

logger = logging.getLogger(__name__)

STRATEGIES = ("lin", "rlb", "ekrlb", "crtrlb", "curlb", "ssrlb")
DEFAULT_C0 = (Fraction(1, 32), Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2))
ALPHA_GRID = (0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class EpisodeResult:
    clicks: int
    wins: int
    spend: int
    cumulative_value: float
    consumption_ratio: float


@dataclass
class BidderState:
    t: int
    b: int


def allocate_budget(cpm_train, T, c0):
    """B = round(CPM_train * 1e-3 * T * c0), at least 1."""
    if cpm_train <= 0 or T <= 0 or c0 <= 0:
        raise ValueError("cpm_train, T and c0 must be positive")
    return max(1, int(round(float(cpm_train) * 1e-3 * T * float(c0))))


class Strategy(BaseEstimator):
    """A bidding rule mapping (t, b, request) to an integer price."""

    name = None
    needs_table = True

    def prices(self, table, t, b, r_mean, r_std):
        raise NotImplementedError


class LinearStrategy(Strategy):
    """Price = round(b0 * r_mean), clamped to [0, b]."""

    name = "lin"
    needs_table = False

    def __init__(self, b0=1.0):
        self.b0 = b0

    def prices(self, table, t, b, r_mean, r_std):
        return np.clip(np.rint(self.b0 * np.asarray(r_mean)).astype(np.int64), 0, b)


class RiskAwareStrategy(Strategy):
    """Threshold bid on the adjusted value theta = r_mean + beta(t, b) * u.

    ``u`` is the request's r_std, or the constant ``r0`` when given.
    """

    def __init__(self, tendency=None, r0=None, name="rlb"):
        self.tendency = tendency
        self.r0 = r0
        self.name = name

    def theta(self, t, b, r_mean, r_std):
        tendency = self.tendency if self.tendency is not None else ZeroRiskTendency()
        beta = tendency(np.full(np.shape(b), t), b)
        u = r_std if self.r0 is None else self.r0
        return r_mean + beta * u

    def prices(self, table, t, b, r_mean, r_std):
        return table.bid_prices(self.theta(t, b, r_mean, r_std), t, b)


def make_strategy(name, *, b0=None, market=None, alpha=0.1, u_hat=1, beta0=0.0,
                  r0=None, net=None, T=None, B=None):
    """Build one of lin, rlb, ekrlb, ssrlb, crtrlb, curlb."""
    if name == "lin":
        if b0 is None:
            raise ValueError("lin strategy needs b0")
        return LinearStrategy(b0)
    if name == "rlb":
        return RiskAwareStrategy(ZeroRiskTendency(), name="rlb")
    if name in ("ekrlb", "curlb"):
        if market is None:
            raise ValueError(f"{name} needs a market model")
        tendency = ExpertRiskTendency(alpha, u_hat).fit(market)
        if name == "curlb":
            if r0 is None:
                raise ValueError("curlb needs a constant uncertainty r0")
            return RiskAwareStrategy(tendency, r0=r0, name="curlb")
        return RiskAwareStrategy(tendency, name="ekrlb")
    if name == "crtrlb":
        return RiskAwareStrategy(ConstantRiskTendency(beta0), name="crtrlb")
    if name == "ssrlb":
        if net is None:
            raise ValueError("ssrlb needs a trained risk network")
        return RiskAwareStrategy(LearnedRiskTendency(net, T, B), name="ssrlb")
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")


def simulate(episodes, B, price_fn, record=None):
    """Run every episode in ``episodes`` in lockstep.

    ``price_fn(t, b, step)`` returns integer prices for all episodes at the
    step with ``t`` auctions remaining; ``step`` indexes the episode columns.
    ``record``, if given, is called as ``record(t, b, step)`` before bidding.
    Returns per-episode arrays (clicks, wins, spend, value).
    """
    n, T = episodes.r_mean.shape
    b = np.full(n, int(B), dtype=np.int64)
    clicks = np.zeros(n, dtype=np.int64)
    wins = np.zeros(n, dtype=np.int64)
    value = np.zeros(n)
    for step in range(T):
        t = T - step
        if record is not None:
            record(t, b, step)
        price = np.asarray(price_fn(t, b, step), dtype=np.int64)
        if np.any(price > b) or np.any(price < 0):
            raise RuntimeError("strategy produced a price outside [0, b]")
        delta = episodes.market_price[:, step]
        won = price >= delta
        b = b - np.where(won, delta, 0)
        wins += won
        clicks += np.where(won, episodes.click[:, step], 0)
        value += np.where(won, episodes.r_mean[:, step], 0.0)
    return clicks, wins, B - b, value


def run_episodes(episodes, strategy, table, B):
    """Simulate ``strategy`` on each episode; returns a list of EpisodeResult."""
    if strategy.needs_table:
        if table is None:
            raise ValueError(f"{strategy.name} needs a value table")
        if table.T < episodes.T or table.B < B:
            raise ValueError(f"table extents (T={table.T}, B={table.B}) do not cover episode "
                             f"(T={episodes.T}, B={B})")

    def price_fn(t, b, step):
        return strategy.prices(table, t, b, episodes.r_mean[:, step], episodes.r_std[:, step])

    clicks, wins, spend, value = simulate(episodes, B, price_fn)
    return [EpisodeResult(int(c), int(w), int(s), float(v), float(s) / B if B else 0.0)
            for c, w, s, v in zip(clicks, wins, spend, value)]


def run_episode(records, strategy, table, B, T=None):
    """Simulate one episode given a sequence of AuctionRecords or an AuctionLog."""
    from .data import AuctionLog

    log = records if isinstance(records, AuctionLog) else AuctionLog.from_records(records)
    T = len(log) if T is None else T
    if len(log) < T:
        raise ValueError(f"episode needs {T} records, got {len(log)}")
    return run_episodes(log[:T].episodes(T), strategy, table, B)[0]


def total(results):
    return dict(clicks=sum(r.clicks for r in results), wins=sum(r.wins for r in results),
                spend=sum(r.spend for r in results),
                cumulative_value=float(sum(r.cumulative_value for r in results)))


def lin_grid(train, n=41, span=30.0):
    """Log-spaced b0 candidates around mean price / mean pCTR."""
    center = max(train.market_price.mean(), 1.0) / max(train.r_mean.mean(), 1e-9)
    return np.geomspace(center / span, center * span, n)


def tune_lin(train_episodes, B, grid=None):
    """b0 maximizing total training clicks; ties go to the smallest b0."""
    if train_episodes.n_episodes == 0:
        raise ValueError("tune_lin needs at least one training episode")
    grid = np.sort(np.asarray(grid if grid is not None else lin_grid(train_episodes), dtype=float))
    best, best_clicks = None, -1
    for b0 in grid:
        clicks = total(run_episodes(train_episodes, LinearStrategy(b0), None, B))["clicks"]
        if clicks > best_clicks:
            best, best_clicks = float(b0), clicks
    return best


def u_hat_candidates(train_episodes, market, B, quantiles=(0.1, 0.25, 0.5, 0.75, 0.9)):
    """Quantiles of budget richness over states visited by an even-pacing bidder."""
    T = train_episodes.T
    t = np.arange(T, 0, -1)
    b_even = np.maximum(np.rint(B * t / T).astype(np.int64), 0)
    u = market.budget_richness(t, b_even)
    cands = np.unique(np.maximum(np.rint(np.quantile(u, quantiles)), 1).astype(int))
    return [int(c) for c in cands]


def tune_expert(train_episodes, table, market, B, alphas=ALPHA_GRID, u_hats=None):
    """Grid search (alpha, u_hat) for ekRLB on training clicks; first best wins ties."""
    if u_hats is None:
        u_hats = u_hat_candidates(train_episodes, market, B)
    best, best_clicks = None, -1
    for u_hat in u_hats:
        for alpha in alphas:
            s = make_strategy("ekrlb", market=market, alpha=alpha, u_hat=u_hat)
            clicks = total(run_episodes(train_episodes, s, table, B))["clicks"]
            if clicks > best_clicks:
                best, best_clicks = (float(alpha), int(u_hat)), clicks
    return best


@dataclass
class Report:
    rows: list = field(default_factory=list)

    COLUMNS = ("strategy", "c0", "clicks", "wins", "spend", "consumption_ratio", "cumulative_value")

    def add(self, strategy, c0, results, B):
        tot = total(results)
        n = len(results)
        self.rows.append(dict(strategy=strategy, c0=Fraction(c0), **tot,
                              consumption_ratio=tot["spend"] / (B * n) if n and B else 0.0))

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                fh.write(f"{r['strategy']},{r['c0']},{r['clicks']},{r['wins']},{r['spend']},"
                         f"{r['consumption_ratio']!r},{r['cumulative_value']!r}\n")

    def get(self, strategy, c0):
        for r in self.rows:
            if r["strategy"] == strategy and r["c0"] == Fraction(c0):
                return r
        raise KeyError((strategy, c0))

    def improvements_over_lin(self):
        """Click delta of each strategy against lin at the same c0."""
        out = []
        for r in self.rows:
            if r["strategy"] == "lin":
                continue
            try:
                base = self.get("lin", r["c0"])
            except KeyError:
                continue
            out.append(dict(strategy=r["strategy"], c0=r["c0"], delta=r["clicks"] - base["clicks"]))
        return out

    def summary(self):
        lines = [f"{'strategy':<8} {'c0':>6} {'clicks':>8} {'wins':>8} {'spend':>10} {'consump':>8}"]
        for r in self.rows:
            lines.append(f"{r['strategy']:<8} {str(r['c0']):>6} {r['clicks']:>8d} {r['wins']:>8d} "
                         f"{r['spend']:>10d} {r['consumption_ratio']:>8.2%}")
        return "\n".join(lines)


@dataclass
class SuiteConfig:
    """Hyperparameters for ``evaluate_suite``; None means tune on training data."""

    T: int = 1000
    c0s: tuple = DEFAULT_C0
    b0: float = None
    alpha: float = None
    u_hat: int = None
    beta0: float = -0.1
    r0_coef: float = 0.2
    ssrl_net: object = None
    ssrl_episodes: int = 200
    seed: int = 0

    def as_dict(self):
        d = asdict(self)
        d.pop("ssrl_net")
        return d


class BiddingEnvironment:
    """Everything a strategy needs at one budget level: episodes, market, table, B."""

    def __init__(self, train_episodes, market, table, B, test_episodes=None):
        self.train_episodes = train_episodes
        self.test_episodes = test_episodes
        self.market = market
        self.table = table
        self.B = int(B)
        self.T = train_episodes.T

    @classmethod
    def from_dataset(cls, dataset, T, c0, market=None, table=None):
        train, test = dataset.train, dataset.test
        market = market or MarketModel().fit(train.market_price)
        B = allocate_budget(dataset.cpm_train, T, c0)
        if table is None:
            table = build_table(market, float(train.r_mean.mean()), T, B)
        elif table.T != T or table.B != B:
            raise ValueError(f"table has (T={table.T}, B={table.B}) but c0={c0} needs (T={T}, B={B})")
        return cls(train.episodes(T), market, table, B, test.episodes(T))


def evaluate_suite(dataset, strategies=STRATEGIES, config=None, progress=None, tables=None):
    """Run every strategy over every test episode for each budget coefficient.

    ``tables`` optionally maps c0 to a prebuilt ValueTable.
    """
    config = config or SuiteConfig()
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    train = dataset.train
    market = MarketModel().fit(train.market_price)
    r0 = config.r0_coef * float(train.r_std.mean())
    report = Report()
    for c0 in config.c0s:
        table = (tables or {}).get(Fraction(c0))
        env = BiddingEnvironment.from_dataset(dataset, config.T, c0, market, table)
        if env.test_episodes.n_episodes == 0:
            raise ValueError(f"test split has fewer than T={config.T} records")
        params = dict(market=market, beta0=config.beta0, r0=r0, T=config.T, B=env.B)
        if "lin" in strategies:
            params["b0"] = config.b0 if config.b0 is not None else tune_lin(env.train_episodes, env.B)
        if {"ekrlb", "curlb"} & set(strategies):
            if config.alpha is None or config.u_hat is None:
                alpha, u_hat = tune_expert(env.train_episodes, env.table, market, env.B)
            params["alpha"] = config.alpha if config.alpha is not None else alpha
            params["u_hat"] = config.u_hat if config.u_hat is not None else u_hat
        if "ssrlb" in strategies:
            net = config.ssrl_net
            if net is None:
                from .ssrl import SelfSupervisedRiskLearner

                learner = SelfSupervisedRiskLearner(episodes=config.ssrl_episodes,
                                                    random_state=config.seed)
                net = learner.fit(env).net_
            params["net"] = net
        for name in strategies:
            strat = make_strategy(name, **params)
            results = run_episodes(env.test_episodes, strat, env.table, env.B)
            report.add(name, c0, results, env.B)
            if progress:
                progress(report.rows[-1])
    return report
