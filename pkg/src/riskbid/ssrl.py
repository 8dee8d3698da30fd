"""Self-supervised learning of the risk tendency from a reward-ranked experience buffer."""

import logging
import struct

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dp import build_table
from .risk import LearnedRiskTendency
from .sim import simulate

logger = logging.getLogger(__name__)

_MAGIC = b"RBNET001"


class RiskNet:
    """Fully connected tanh network 2 -> 64 -> 64 -> 1 trained with Adam.

    Hidden layers use uniform(+-1/sqrt(fan_in)) init; the output layer starts
    at zero so a fresh network outputs beta = 0 everywhere.
    """

    def __init__(self, sizes=(2, 64, 64, 1), seed=0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.sizes = tuple(sizes)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if i == n_layers - 1:
                W = np.zeros((fan_in, fan_out))
            else:
                lim = 1.0 / np.sqrt(fan_in)
                W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))
        self.reset_optimizer()

    def reset_optimizer(self):
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self):
        net = RiskNet.__new__(RiskNet)
        net.sizes, net.beta1, net.beta2, net.eps = self.sizes, self.beta1, self.beta2, self.eps
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        net.step_count = self.step_count
        net._m = [m.copy() for m in self._m]
        net._v = [v.copy() for v in self._v]
        return net

    def _forward(self, x):
        acts = [np.atleast_2d(np.asarray(x, dtype=float))]
        for W, b in zip(self.weights, self.biases):
            acts.append(np.tanh(acts[-1] @ W + b))
        return acts

    def predict(self, x):
        """Network output in (-1, 1) for each row of normalized inputs."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        for W, b in zip(self.weights, self.biases):
            h = np.tanh(h @ W + b)
        return h[:, 0]

    def loss_and_grads(self, x, target):
        """Mean squared residual and its gradient w.r.t. every parameter."""
        acts = self._forward(x)
        out = acts[-1][:, 0]
        resid = out - np.asarray(target, dtype=float)
        n = resid.size
        loss = float(np.mean(resid ** 2))
        delta = (2.0 / n) * resid[:, None] * (1.0 - acts[-1] ** 2)
        n_layers = len(self.weights)
        gW, gb = [None] * n_layers, [None] * n_layers
        for layer in range(n_layers - 1, -1, -1):
            gW[layer] = acts[layer].T @ delta
            gb[layer] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return loss, [g for pair in zip(gW, gb) for g in pair]

    def train_step(self, x, target, learning_rate=1e-3):
        """One Adam step on the mean squared loss; returns the pre-step loss."""
        loss, grads = self.loss_and_grads(x, target)
        self.step_count += 1
        k = self.step_count
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** k)
            v_hat = v / (1 - self.beta2 ** k)
            p -= learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise FloatingPointError("non-finite weights after update")
        return loss

    def flat_weights(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_weights(self, flat):
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != flat.size:
            raise ValueError(f"expected {pos} weights, got {flat.size}")

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<q", len(self.sizes)))
            fh.write(struct.pack(f"<{len(self.sizes)}q", *self.sizes))
            fh.write(np.ascontiguousarray(self.flat_weights(), dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path}: not a risk network file")
            (n,) = struct.unpack("<q", fh.read(8))
            sizes = struct.unpack(f"<{n}q", fh.read(8 * n))
            flat = np.frombuffer(fh.read(), dtype="<f8")
        net = cls(sizes)
        net.set_flat_weights(flat)
        return net


def explore(net, t, b, sigma, rng, T, B):
    """beta_hat = net(t / T, b / B) + N(0, sigma^2) noise, one draw per state."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    t, b = np.broadcast_arrays(np.atleast_1d(np.asarray(t, dtype=float)),
                               np.atleast_1d(np.asarray(b, dtype=float)))
    beta = net.predict(np.column_stack([t / T, b / max(B, 1)]))
    if sigma > 0:
        beta = beta + rng.normal(0.0, sigma, size=beta.shape)
    return beta


class ExperienceBuffer:
    """Bounded store of (t, b, beta_hat, V_episode) rows ranked by V_episode.

    An episode is admitted when its reward beats the current minimum (an empty
    buffer admits anything). Overflow evicts the lowest-reward rows, which may
    split an episode. With ``admit_when_not_full`` any episode is admitted
    while there is spare capacity.
    """

    def __init__(self, capacity=100_000, admit_when_not_full=False):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.admit_when_not_full = admit_when_not_full
        self.t = np.zeros(0, dtype=np.int64)
        self.b = np.zeros(0, dtype=np.int64)
        self.beta = np.zeros(0)
        self.reward = np.zeros(0)

    def __len__(self):
        return self.reward.size

    @property
    def full(self):
        return len(self) >= self.capacity

    @property
    def min_reward(self):
        return float(self.reward.min()) if len(self) else -np.inf

    def insert(self, t, b, beta, reward):
        """Offer one episode's experiences; returns True if they were admitted."""
        reward = float(reward)
        if not np.isfinite(reward):
            raise ValueError("episode reward must be finite")
        admit = len(self) == 0 or reward > self.min_reward or (self.admit_when_not_full and not self.full)
        if not admit:
            return False
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        self.t = np.concatenate([self.t, t])
        self.b = np.concatenate([self.b, np.atleast_1d(np.asarray(b, dtype=np.int64))])
        self.beta = np.concatenate([self.beta, np.atleast_1d(np.asarray(beta, dtype=float))])
        self.reward = np.concatenate([self.reward, np.full(t.size, reward)])
        if len(self) > self.capacity:
            # stable sort keeps older rows ahead of newer ones on reward ties
            order = np.argsort(-self.reward, kind="stable")
            keep = np.sort(order[:self.capacity])
            self.t, self.b, self.beta, self.reward = (a[keep] for a in (self.t, self.b, self.beta, self.reward))
        return True

    def sample(self, batch_size, rng):
        if not len(self):
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self), size=batch_size)
        return self.t[idx], self.b[idx], self.beta[idx]


class SelfSupervisedRiskLearner(BaseEstimator):
    """Learns beta(t, b) by imitating the explored tendencies of the best episodes.

    Parameters
    ----------
    episodes : int
        Training episodes, drawn uniformly from the environment's training split.
    sigma, sigma_final : float
        Exploration noise, decayed linearly from ``sigma`` to ``sigma_final``.
    buffer_size : int
        Buffer capacity in experiences (one per auction).
    batch_size, learning_rate : int, float
    update_period : int
        Episodes between training phases; ``train_steps`` batches per phase.
    reward : {"value", "clicks"}
        Episode reward: cumulative pCTR of won impressions, or realized clicks.
    rebuild_table : bool
        Rebuild the value table every ``rebuild_every`` phases using the mean
        risk-adjusted value of the last phase as the average impression value.
    eval_every, n_eval : int
        Greedy (noise-free) evaluation cadence and number of held-out episodes.
    """

    def __init__(self, episodes=2000, sigma=0.1, sigma_final=0.01, buffer_size=100_000,
                 batch_size=32, learning_rate=1e-3, update_period=5, train_steps=20,
                 reward="value", rebuild_table=False, rebuild_every=20, eval_every=100,
                 n_eval=5, random_state=0):
        self.episodes = episodes
        self.sigma = sigma
        self.sigma_final = sigma_final
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.update_period = update_period
        self.train_steps = train_steps
        self.reward = reward
        self.rebuild_table = rebuild_table
        self.rebuild_every = rebuild_every
        self.eval_every = eval_every
        self.n_eval = n_eval
        self.random_state = random_state

    def _validate(self):
        for name in ("batch_size", "update_period", "buffer_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.episodes < 0 or self.train_steps < 0:
            raise ValueError("episodes and train_steps must be nonnegative")
        if self.sigma < 0 or self.sigma_final < 0 or self.learning_rate <= 0:
            raise ValueError("sigma must be nonnegative and learning_rate positive")
        if self.reward not in ("value", "clicks"):
            raise ValueError("reward must be 'value' or 'clicks'")

    def _sigma_at(self, episode):
        if self.episodes <= 1:
            return float(self.sigma)
        frac = min(episode / (self.episodes - 1), 1.0)
        return float(self.sigma + (self.sigma_final - self.sigma) * frac)

    def run(self, net, episodes, table, B, sigma=0.0, rng=None, record=False):
        """Bid through ``episodes`` with beta = net + noise; returns (rewards, clicks, trace)."""
        T = episodes.T
        n = episodes.n_episodes
        trace = (np.zeros((n, T), np.int64), np.zeros((n, T)), []) if record else None
        thetas = []

        def price_fn(t, b, step):
            beta = explore(net, np.full(n, t), b, sigma, rng, T, B)
            theta = episodes.r_mean[:, step] + beta * episodes.r_std[:, step]
            if record:
                trace[0][:, step] = b
                trace[1][:, step] = beta
            thetas.append(theta.mean())
            return table.bid_prices(theta, t, b)

        clicks, wins, spend, value = simulate(episodes, B, price_fn)
        reward = clicks.astype(float) if self.reward == "clicks" else value
        self._last_mean_theta = float(np.mean(thetas)) if thetas else None
        return reward, clicks, trace

    def fit(self, env, net=None):
        """Train on ``env`` (a BiddingEnvironment); ``net`` defaults to a fresh RiskNet."""
        self._validate()
        rng = np.random.default_rng(self.random_state)
        net = net.copy() if net is not None else RiskNet(seed=self.random_state)
        buffer = ExperienceBuffer(self.buffer_size)
        train = env.train_episodes
        if train.n_episodes == 0:
            raise ValueError("environment has no training episodes")
        T, B = train.T, env.B
        table = env.table
        eval_idx = rng.choice(train.n_episodes, size=min(self.n_eval, train.n_episodes), replace=False)
        eval_eps = train[eval_idx]
        t_grid = np.arange(T, 0, -1)
        history = []
        done, phase = 0, 0
        loss = float("nan")
        while done < self.episodes:
            k = min(self.update_period, self.episodes - done)
            batch = train[rng.integers(train.n_episodes, size=k)]
            sigma = self._sigma_at(done)
            rewards, _, (b_trace, beta_trace, _) = self.run(net, batch, table, B, sigma, rng, record=True)
            for i in range(k):
                buffer.insert(t_grid, b_trace[i], beta_trace[i], rewards[i])
            done += k
            phase += 1
            if len(buffer):
                for _ in range(self.train_steps):
                    tt, bb, target = buffer.sample(self.batch_size, rng)
                    x = np.column_stack([tt / T, bb / max(B, 1)])
                    loss = net.train_step(x, target, self.learning_rate)
            if self.rebuild_table and phase % self.rebuild_every == 0 and self._last_mean_theta is not None:
                table = build_table(env.market, self._last_mean_theta, table.T, table.B)
            entry = dict(episode=done, buffer_min=buffer.min_reward if len(buffer) else float("nan"),
                         buffer_size=len(buffer), mean_reward=float(np.mean(rewards)), loss=loss,
                         greedy_reward=float("nan"))
            if self.eval_every and (done % self.eval_every < k or done == self.episodes):
                entry["greedy_reward"] = float(np.mean(self.run(net, eval_eps, table, B)[0]))
            history.append(entry)
        self.net_ = net
        self.buffer_ = buffer
        self.history_ = history
        self.table_ = table
        self.T_, self.B_ = T, B
        return self

    @property
    def tendency_(self):
        check_is_fitted(self, "net_")
        return LearnedRiskTendency(self.net_, self.T_, self.B_)

    def predict(self, X):
        """Risk tendency for an (n, 2) array of (t, b) states."""
        return self.tendency_.transform(X)

    def write_history(self, path):
        check_is_fitted(self, "history_")
        cols = ("episode", "buffer_min", "buffer_size", "mean_reward", "loss", "greedy_reward")
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for h in self.history_:
                fh.write(",".join(repr(h[c]) if isinstance(h[c], float) else str(h[c]) for c in cols) + "\n")


def train_ssrlb(env, net=None, **config):
    """Functional wrapper returning the trained RiskNet."""
    return SelfSupervisedRiskLearner(**config).fit(env, net).net_
