"""Risk-aware real-time bidding under a budget constraint."""

from .ctr import BayesianLogisticRegression, CtrPrediction, predictive_moments
from .data import (AuctionLog, EpisodeBatch, LogDataset, SyntheticConfig, generate_synthetic,
                   load_dataset, read_log, save_dataset, write_log)
from .dp import ValueTable, bid_price, build_table
from .market import MarketModel, fit_market
from .risk import (ConstantRiskTendency, ExpertRiskTendency, LearnedRiskTendency, ZeroRiskTendency,
                   adjust_value, cantelli_bound)
from .sim import (STRATEGIES, BiddingEnvironment, LinearStrategy, RiskAwareStrategy,
                  allocate_budget, evaluate_suite, make_strategy, run_episodes)
from .ssrl import ExperienceBuffer, RiskNet, SelfSupervisedRiskLearner, train_ssrlb

__version__ = "0.1.0"
