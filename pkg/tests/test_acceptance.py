"""Acceptance checks; each prints one PASS/FAIL line at the stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even without ``-s``).
"""

import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import expit

from oracles import (best_var_objective, evaluate_policy_layer, expectimax, finite_difference_grad,
                     max_relative_error, random_market)
from riskbid.ctr import predictive_moments, probit_mean
from riskbid.data import SyntheticConfig, generate_synthetic, save_dataset
from riskbid.dp import build_table
from riskbid.market import MarketModel
from riskbid.risk import ExpertRiskTendency, cantelli_bound
from riskbid.sim import BiddingEnvironment, make_strategy, run_episodes
from riskbid.ssrl import ExperienceBuffer, RiskNet, SelfSupervisedRiskLearner


@pytest.fixture
def report(capsys):
    def _report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return _report


def test_dp_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    instances = []
    for _ in range(250):
        probs = random_market(rng, int(rng.integers(0, 4)))
        instances.append((probs, float(rng.uniform(-0.5, 1.0)), int(rng.integers(0, 5)), int(rng.integers(0, 7))))
    start = time.perf_counter()
    worst = 0.0
    for probs, r, T, B in instances:
        got = build_table(MarketModel.from_probs(probs), r, T, B).values
        worst = max(worst, float(np.max(np.abs(got - np.array(expectimax(probs, r, T, B))))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5.0
    assert report("DP oracle equivalence", ok,
                  f"{len(instances)} instances, max |diff| = {worst:.2e} (tol 1e-12), {elapsed:.2f} s (limit 5 s)")


def _dp_policy_objective(table, probs, r_mean, r_std, lam, T, B):
    """V^a + lam V^a_std at (T, B) for the DP's own threshold policy."""
    theta = r_mean + lam * r_std
    mean = np.zeros((1, B + 1))
    std = np.zeros((1, B + 1))
    for t in range(1, T + 1):
        policy = tuple(table.bid_price(theta, t, b).price for b in range(B + 1))
        mean, std = evaluate_policy_layer(probs, policy, r_mean, r_std, mean, std)
    return float(mean[0, B] + lam * std[0, B])


def test_var_optimality_oracle(report):
    rng = np.random.default_rng(7)
    lams = (-0.5, 0.0, 0.5, 1.0)
    worst, n = 0.0, 0
    for i in range(60):
        lam = lams[i % 4]
        probs = random_market(rng, int(rng.integers(1, 3)))
        T, B = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        r_mean, r_std = float(rng.uniform(0, 0.5)), float(rng.uniform(0, 0.5))
        best = best_var_objective(probs, r_mean, r_std, lam, T, B)
        table = build_table(MarketModel.from_probs(probs), r_mean + lam * r_std, T, B)
        attained = _dp_policy_objective(table, probs, r_mean, r_std, lam, T, B)
        worst = max(worst, abs(table.values[T, B] - best), abs(attained - best))
        n += 1
    assert report("VaR optimality oracle", worst <= 1e-12,
                  f"{n} instances, lambda in {lams}, max |DP - exhaustive max| = {worst:.2e} (tol 1e-12)")


def test_expert_tendency_rules(report):
    rng = np.random.default_rng(11)
    failures = []
    for m in range(5):
        market = MarketModel.from_probs(random_market(rng, int(rng.integers(5, 80))))
        u_hat = int(rng.integers(1, market.delta_max_ + 1))
        tend = ExpertRiskTendency(float(rng.uniform(0.05, 1.0)), u_hat).fit(market)
        t, b = np.meshgrid(np.arange(1, 61), np.arange(0, 801), indexing="ij")
        beta = tend(t, b)
        u = market.budget_richness(t, b)
        if not np.all(np.sign(beta) == np.sign(u - u_hat)):
            failures.append(f"sign (market {m})")
        if not (np.all(np.diff(beta, axis=1) >= 0) and np.all(np.diff(beta, axis=0) <= 0)):
            failures.append(f"monotonicity (market {m})")
        for k in (2, 3, 10):
            if not np.array_equal(beta, tend(k * t, k * b)):
                failures.append(f"ratio k={k} (market {m})")
    assert report("Expert-tendency rules", not failures,
                  "sign, monotonicity, ratio invariance k in {2,3,10} on 5 markets x 60x801 grid"
                  + (f"; failed: {failures}" if failures else " all exact"))


def test_cantelli_monte_carlo(report):
    rng = np.random.default_rng(3)
    n = 1_000_000
    dists = {
        "normal": (lambda: rng.normal(0, 1, n), 0.0, 1.0),
        "exponential": (lambda: rng.exponential(1.0, n), 1.0, 1.0),
        "lognormal": (lambda: rng.lognormal(0, 0.75, n),
                      np.exp(0.75 ** 2 / 2), np.sqrt((np.exp(0.75 ** 2) - 1) * np.exp(0.75 ** 2))),
    }
    worst, ok = -np.inf, True
    for name, (draw, mu, sigma) in dists.items():
        x = draw()
        for lam in (0.5, 1.0, 2.0):
            p = float(np.mean(x - mu >= lam * sigma))
            se = np.sqrt(max(p * (1 - p), 1e-12) / n)
            slack = p - (cantelli_bound(lam) + 3 * se)
            worst = max(worst, slack)
            ok &= slack <= 0
    assert report("Cantelli Monte Carlo", ok,
                  f"3 distributions x lambda in (0.5, 1, 2), n=1e6, max(tail - bound - 3SE) = {worst:.4f} (must be <= 0)")


def test_mlp_gradient_check(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for seed in range(20):
        net = RiskNet(seed=seed)
        net.set_flat_weights(rng.normal(0, 0.5, size=net.flat_weights().size))
        x, y = rng.random((6, 2)), rng.uniform(-0.9, 0.9, 6)
        _, grads = net.loss_and_grads(x, y)
        flat = np.concatenate([g.ravel() for g in grads])
        w0 = net.flat_weights()

        def loss(w):
            net.set_flat_weights(w)
            return net.loss_and_grads(x, y)[0]

        fd = finite_difference_grad(loss, w0.copy(), h=1e-5)
        worst = max(worst, max_relative_error(flat, fd))
    assert report("MLP gradient check", worst < 1e-4,
                  f"20 weight settings, max relative error = {worst:.2e} (tol 1e-4, denominator floor 1e-6)")


def test_buffer_invariants(report):
    rng = np.random.default_rng(5)
    buf = ExperienceBuffer(capacity=500)
    ok, prev_min = True, -np.inf
    for _ in range(10_000):
        if rng.random() < 0.8 or not len(buf):
            k = int(rng.integers(1, 60))
            was_full = buf.full
            before = buf.min_reward
            buf.insert(rng.integers(1, 100, k), rng.integers(0, 100, k), rng.normal(0, 0.3, k), rng.normal())
            if was_full and buf.min_reward < before:
                ok = False
        else:
            buf.sample(32, rng)
        ok &= len(buf) <= buf.capacity and buf.min_reward >= prev_min
        prev_min = buf.min_reward
    assert report("Buffer invariants", ok, f"1e4 randomized operations, size <= 500 and nondecreasing minimum: {ok}")


@pytest.fixture(scope="module")
def default_env():
    data = generate_synthetic(SyntheticConfig())
    return data, BiddingEnvironment.from_dataset(data.dataset, 1000, Fraction(1, 2))


def test_degeneracy_identities(report, default_env):
    _, env = default_env
    eps = env.test_episodes[:100]
    rlb = run_episodes(eps, make_strategy("rlb"), env.table, env.B)
    ek0 = run_episodes(eps, make_strategy("ekrlb", market=env.market, alpha=0.0, u_hat=10), env.table, env.B)
    cr0 = run_episodes(eps, make_strategy("crtrlb", beta0=0.0), env.table, env.B)
    ok = [r.clicks for r in rlb] == [r.clicks for r in ek0] == [r.clicks for r in cr0]
    assert report("Degeneracy identities", ok,
                  f"100 episodes, ekRLB(alpha=0) == CRTRLB(beta0=0) == RLB click-for-click "
                  f"(total clicks {sum(r.clicks for r in rlb)})")


def test_constant_tendency_sweep(report):
    start = time.perf_counter()
    data = generate_synthetic(SyntheticConfig())
    env = BiddingEnvironment.from_dataset(data.dataset, 1000, Fraction(1, 2))
    eps = env.test_episodes
    betas = (0.0, -0.1, -0.2, -0.3, -0.4, -0.5)
    cons, clicks = [], []
    for beta0 in betas:
        res = run_episodes(eps, make_strategy("crtrlb", beta0=beta0), env.table, env.B)
        cons.append(sum(r.spend for r in res) / (env.B * len(res)))
        clicks.append(sum(r.clicks for r in res))
    elapsed = time.perf_counter() - start
    monotone = all(b <= a for a, b in zip(cons, cons[1:]))
    ok = monotone and cons[-1] < 0.05 and clicks[-1] < 0.05 * clicks[0] and elapsed < 120
    detail = ", ".join(f"{b:+.1f}: {c:.2%}/{k}" for b, c, k in zip(betas, cons, clicks))
    assert report("Constant-tendency sweep trend", ok,
                  f"{eps.n_episodes} episodes, c0=1/2, beta0 consumption/clicks [{detail}], "
                  f"monotone={monotone}, {elapsed:.0f} s (limit 120 s)")


def test_ssrlb_sanity(report, default_env):
    _, env = default_env
    learner = SelfSupervisedRiskLearner(episodes=2000, random_state=0).fit(env)
    mins = [h["buffer_min"] for h in learner.history_]
    nondecreasing = all(b >= a for a, b in zip(mins, mins[1:]))
    held_out = env.test_episodes[:200]
    rlb = run_episodes(held_out, make_strategy("rlb"), env.table, env.B)
    ss = run_episodes(held_out, make_strategy("ssrlb", net=learner.net_, T=env.T, B=env.B), env.table, env.B)
    v_rlb = np.mean([r.cumulative_value for r in rlb])
    v_ss = np.mean([r.cumulative_value for r in ss])
    ratio = v_ss / v_rlb
    clicks = (sum(r.clicks for r in ss), sum(r.clicks for r in rlb))
    t, b = np.meshgrid(np.arange(1, env.T + 1, 10), np.arange(0, env.B + 1, 40), indexing="ij")
    u_hat = int(np.median(env.market.budget_richness(t, b)))
    expert = ExpertRiskTendency(0.1, max(u_hat, 1)).fit(env.market)(t, b).ravel()
    learned = learner.tendency_(t, b).ravel()
    pearson = float(np.corrcoef(expert, learned)[0, 1])
    ok = ratio >= 0.98 and nondecreasing
    assert report("ssRLB sanity", ok,
                  f"{held_out.n_episodes} paired episodes, mean reward ssRLB/RLB = {ratio:.4f} (>= 0.98), "
                  f"buffer-min nondecreasing={nondecreasing}; clicks ssRLB {clicks[0]} vs RLB {clicks[1]}, "
                  f"learned-vs-expert grid Pearson {pearson:+.3f} (last two not gated)")


def _moment_box(seed=9, n_post=40, n_mc=1_000_000):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_post):
        mu, var = float(rng.uniform(-4, 4)), float(rng.uniform(0, 4))
        mc = expit(rng.normal(mu, np.sqrt(var), n_mc)).mean()
        out.append((mu, var, mc))
    return out


@pytest.fixture(scope="module")
def moment_box():
    return _moment_box()


def test_ctr_moment_accuracy(report, moment_box):
    err = max(abs(float(predictive_moments(mu, var)[0]) - mc) for mu, var, mc in moment_box)
    assert report("Bayesian LR moment accuracy", err < 2e-3,
                  f"library r_mean (Gauss-Hermite moments) vs Monte Carlo 1e6, 40 posteriors |mu|<=4 var<=4: "
                  f"max err {err:.2e} (tol 2e-3)")


@pytest.mark.xfail(strict=True, reason="the closed-form probit mean is off by up to ~9e-3 in this box")
def test_ctr_probit_formula_accuracy(report, moment_box):
    err = max(abs(float(probit_mean(mu, var)) - mc) for mu, var, mc in moment_box)
    assert report("Bayesian LR moment accuracy (probit closed form, informational)", err < 2e-3,
                  f"probit r_mean vs Monte Carlo: max err {err:.2e} (tol 2e-3); not used by the library")


def test_full_comparison_on_log_files(report, tmp_path):
    # logs in the ingestion format (r_mean,r_std,market_price,click), as preprocessed iPinYou data would be
    data = generate_synthetic(SyntheticConfig(n_train=60_000, n_test=60_000, seed=21))
    save_dataset(tmp_path / "logs", data.dataset)
    out = tmp_path / "report.csv"
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "riskbid", "run", "--dataset", str(tmp_path / "logs"),
                           "--strategy", "all", "--episodes", "100", "--out", str(out)],
                          capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    rows = out.read_text().splitlines()[1:] if out.exists() else []
    strategies = sorted({r.split(",")[0] for r in rows})
    ok = proc.returncode == 0 and len(rows) == 30
    assert report("Full comparison on log files", ok,
                  f"exit {proc.returncode}, {len(rows)} rows (6 strategies x 5 c0: {strategies}), {elapsed:.0f} s"
                  + (f"; stderr: {proc.stderr.strip()[-300:]}" if proc.returncode else ""))
