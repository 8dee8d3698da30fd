"""Command-line entry point: ``riskbid <command> [options]``."""

import argparse
import logging
import os
import sys
from fractions import Fraction

import numpy as np

from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .dp import ValueTable, build_table
from .market import MarketModel
from .risk import ExpertRiskTendency, LearnedRiskTendency, ZeroRiskTendency, write_beta_grid
from .sim import (DEFAULT_C0, STRATEGIES, BiddingEnvironment, SuiteConfig, allocate_budget,
                  evaluate_suite)
from .ssrl import RiskNet, SelfSupervisedRiskLearner

logger = logging.getLogger("riskbid")


def _fraction(text):
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError("budget coefficient must be positive")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def _strategies(text):
    names = list(STRATEGIES) if text == "all" else [s.strip() for s in text.split(",") if s.strip()]
    for name in names:
        if name not in STRATEGIES:
            raise argparse.ArgumentTypeError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return names


def _market_and_budget(args, dataset):
    market = MarketModel().fit(dataset.train.market_price)
    B = allocate_budget(dataset.cpm_train, args.T, args.c0) if args.T > 0 else 0
    return market, B


def _load_table(path, T, B):
    table = ValueTable.load(path)
    if table.T != T or table.B != B:
        raise ValueError(f"table {path} has (T={table.T}, B={table.B}) but the run needs (T={T}, B={B})")
    return table


def cmd_synth(args):
    config = SyntheticConfig(n_fields=args.n_fields, field_cardinality=args.field_cardinality,
                             n_train=args.n_train, n_test=args.n_test, base_ctr=args.base_ctr,
                             delta_max=args.delta_max, seed=args.seed)
    data = generate_synthetic(config)
    save_dataset(args.out, data.dataset)
    print(f"wrote {len(data.dataset.train)} train / {len(data.dataset.test)} test records to {args.out} "
          f"(CPM_train={data.dataset.cpm_train:.1f})")


def cmd_build_dp(args):
    if args.market:
        market = MarketModel.from_csv(args.market)
        if args.B is None or args.r_avg is None:
            raise ValueError("--market needs --B and --r-avg")
        B, r_avg = args.B, args.r_avg
    else:
        if not args.dataset:
            raise ValueError("build-dp needs --dataset or --market")
        dataset = load_dataset(args.dataset)
        market, B = _market_and_budget(args, dataset)
        B = args.B if args.B is not None else B
        r_avg = float(dataset.train.r_mean.mean()) if args.r_avg is None else args.r_avg
    table = build_table(market, r_avg, args.T, B)
    table.save(args.out)
    if args.csv:
        table.to_csv(args.csv)
    if args.market_out:
        market.to_csv(args.market_out)
    print(f"wrote value table T={table.T} B={table.B} r_avg={r_avg:.6g} to {args.out}")


def cmd_run(args):
    dataset = load_dataset(args.dataset)
    c0s = tuple(args.c0) if args.c0 else DEFAULT_C0
    net = RiskNet.load(args.model) if args.model else None
    config = SuiteConfig(T=args.T, c0s=c0s, b0=args.b0, alpha=args.alpha, u_hat=args.u_hat,
                         beta0=args.beta0, r0_coef=args.r0_coef, ssrl_net=net,
                         ssrl_episodes=args.episodes, seed=args.seed)
    tables = None
    if args.table:
        if len(c0s) != 1:
            raise ValueError("--table can only be combined with a single --c0")
        B = allocate_budget(dataset.cpm_train, args.T, c0s[0])
        tables = {Fraction(c0s[0]): _load_table(args.table, args.T, B)}
    report = evaluate_suite(dataset, args.strategy, config,
                            progress=lambda row: logger.info("%s c0=%s clicks=%d", row["strategy"],
                                                             row["c0"], row["clicks"]),
                            tables=tables)
    report.to_csv(args.out)
    print(report.summary())


def cmd_train_ss(args):
    dataset = load_dataset(args.dataset)
    market, B = _market_and_budget(args, dataset)
    if not args.table:
        raise ValueError("train-ss needs --table (build one with build-dp)")
    table = _load_table(args.table, args.T, B)
    train = dataset.train.episodes(args.T)
    env = BiddingEnvironment(train, market, table, B)
    learner = SelfSupervisedRiskLearner(episodes=args.episodes, sigma=args.sigma,
                                        buffer_size=args.buffer_size, batch_size=args.batch_size,
                                        learning_rate=args.lr, rebuild_table=args.rebuild_table,
                                        random_state=args.seed)
    learner.fit(env, RiskNet(seed=args.seed))
    learner.net_.save(args.out)
    curve = args.curve or os.path.splitext(args.out)[0] + "_curve.csv"
    learner.write_history(curve)
    print(f"wrote risk network to {args.out} and training curve to {curve}")


def cmd_beta_grid(args):
    if args.dataset:
        dataset = load_dataset(args.dataset)
        market, B = _market_and_budget(args, dataset)
    elif args.market:
        market = MarketModel.from_csv(args.market)
        B = None
    else:
        raise ValueError("beta-grid needs --dataset or --market")
    B = args.B if args.B is not None else B
    if B is None:
        raise ValueError("beta-grid needs --B when no dataset is given")
    if args.kind == "expert":
        tendency = ExpertRiskTendency(args.alpha, args.u_hat).fit(market)
    elif args.kind == "learned":
        if not args.model:
            raise ValueError("--kind learned needs --model")
        tendency = LearnedRiskTendency(RiskNet.load(args.model), args.T, B)
    else:
        tendency = ZeroRiskTendency()
    write_beta_grid(args.out, tendency, args.T, B)
    print(f"wrote {args.kind} beta grid (T={args.T}, B={B}) to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="riskbid", description="Risk-aware budget-constrained bidding.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset_required=False, c0=True):
        p.add_argument("--dataset", required=dataset_required, help="directory with train.csv/test.csv")
        p.add_argument("--T", type=_nonneg_int, default=1000, help="auctions per episode")
        if c0:
            p.add_argument("--c0", type=_fraction, default=Fraction(1, 2), help="budget coefficient")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=_positive_int, default=SyntheticConfig.n_train)
    p.add_argument("--n-test", type=_positive_int, default=SyntheticConfig.n_test)
    p.add_argument("--n-fields", type=_positive_int, default=SyntheticConfig.n_fields)
    p.add_argument("--field-cardinality", type=_positive_int, default=SyntheticConfig.field_cardinality)
    p.add_argument("--base-ctr", type=float, default=SyntheticConfig.base_ctr)
    p.add_argument("--delta-max", type=_positive_int, default=SyntheticConfig.delta_max)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-dp", help="build and save the value table")
    common(p)
    p.add_argument("--market", help="market CSV (delta,prob) instead of a dataset")
    p.add_argument("--B", type=_nonneg_int, help="override the allocated budget")
    p.add_argument("--r-avg", type=float, help="override the average impression value")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export the table as t,b,value CSV")
    p.add_argument("--market-out", help="also write the fitted market as delta,prob CSV")
    p.set_defaults(func=cmd_build_dp)

    p = sub.add_parser("run", help="evaluate strategies on the test split")
    common(p, dataset_required=True, c0=False)
    p.add_argument("--c0", type=_fraction, action="append",
                   help="budget coefficient (repeatable; default 1/32,1/16,1/8,1/4,1/2)")
    p.add_argument("--strategy", type=_strategies, default=list(STRATEGIES),
                   help="comma-separated subset of %s, or 'all'" % ",".join(STRATEGIES))
    p.add_argument("--table", help="precomputed table (single --c0 only)")
    p.add_argument("--b0", type=float, help="lin slope (tuned on train if omitted)")
    p.add_argument("--alpha", type=float, help="expert slope (tuned with --u-hat if omitted)")
    p.add_argument("--u-hat", type=_positive_int, help="expert budget-richness threshold")
    p.add_argument("--beta0", type=float, default=-0.1, help="constant risk tendency for crtrlb")
    p.add_argument("--r0-coef", type=float, default=0.2, help="crtrlb constant uncertainty / mean train r_std")
    p.add_argument("--model", help="trained risk network for ssrlb")
    p.add_argument("--episodes", type=_nonneg_int, default=200, help="ssrlb training episodes if no --model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-ss", help="train the self-supervised risk network")
    common(p, dataset_required=True)
    p.add_argument("--table", help="value table from build-dp")
    p.add_argument("--episodes", type=_nonneg_int, default=2000)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--buffer-size", type=_positive_int, default=100_000)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--rebuild-table", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="training curve CSV (default: <out>_curve.csv)")
    p.set_defaults(func=cmd_train_ss)

    p = sub.add_parser("beta-grid", help="export beta(t, b) over the full grid")
    common(p)
    p.add_argument("--kind", choices=("expert", "learned", "zero"), default="expert")
    p.add_argument("--market", help="market CSV instead of a dataset")
    p.add_argument("--B", type=_nonneg_int)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--u-hat", type=_positive_int, default=1)
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_beta_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        args.func(args)
    except Exception as exc:  # runtime failures map to exit code 1
        if args.verbose:
            raise
        print(f"riskbid {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
