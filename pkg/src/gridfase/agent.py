"""Coefficient-selection agent: small numpy MLP trained by Q-learning.

The observation is the previous estimate, the previous prediction and the
fresh fast-channel values, standardized per dimension by running stats
that freeze at deployment. Actions index an 11x11 grid over the two
smoothing coefficients. Training uses experience replay, an epsilon-greedy
policy, a periodically synced target network and plain SGD on the squared
Bellman residual; gradients flow only through the chosen action's output.
"""

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumMismatch, DimensionMismatch, EmptyReplay
from .seeding import rng_for

CHECKPOINT_MAGIC = b"GFQN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ActionGrid:
    """Joint (alpha, beta) grid: index = alpha_step * per_axis + beta_step."""

    per_axis: int = 11
    step: float = 0.1

    @property
    def size(self) -> int:
        return self.per_axis**2

    def pair(self, idx: int) -> tuple:
        if not 0 <= idx < self.size:
            raise DimensionMismatch(f"action index {idx} outside grid of {self.size}")
        return ((idx // self.per_axis) * self.step, (idx % self.per_axis) * self.step)

    def index(self, alpha: float, beta: float) -> int:
        ia = int(round(alpha / self.step))
        ib = int(round(beta / self.step))
        if not (0 <= ia < self.per_axis and 0 <= ib < self.per_axis):
            raise DimensionMismatch(f"({alpha}, {beta}) off the action grid")
        return ia * self.per_axis + ib


class RunningNorm:
    """Per-dimension running mean/scale (Welford); freezes for deployment.

    Updates winsorize their input so exploration-era divergent states
    cannot inflate the scale and flatten every later observation.
    """

    UPDATE_BOUND = 10.0

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.frozen = False

    def update(self, x: np.ndarray):
        if self.frozen:
            return
        x = np.clip(x, -self.UPDATE_BOUND, self.UPDATE_BOUND)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def scale(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(np.maximum(self.m2 / (self.count - 1), 1e-12))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.count < 2:
            return x.copy()
        return (x - self.mean) / self.scale()


class QNetwork:
    """Fully connected ReLU MLP with a linear action-value head."""

    def __init__(self, obs_dim: int, hidden: tuple, n_actions: int, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.hidden = tuple(hidden)
        self.n_actions = n_actions
        sizes = [obs_dim, *hidden, n_actions]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        # zero value head: initial Q is identically 0, so the max over many
        # actions cannot bootstrap initialization noise into runaway values
        self.weights[-1][:] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(x)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def forward_cached(self, x: np.ndarray) -> tuple:
        a = np.atleast_2d(x)
        activations = [a]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
            activations.append(a)
        q = a @ self.weights[-1] + self.biases[-1]
        return q, activations

    def backward(self, activations: list, dq: np.ndarray) -> list:
        """Gradients of a scalar loss given d(loss)/d(output)."""
        grads = []
        delta = dq
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = activations[layer]
            grads.append((a_in.T @ delta, delta.sum(axis=0)))
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (a_in > 0.0)
        grads.reverse()
        return grads

    def sgd_step(self, grads: list, learning_rate: float):
        for (dw, db), w, b in zip(grads, self.weights, self.biases):
            w -= learning_rate * dw
            b -= learning_rate * db

    def clone(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.obs_dim = self.obs_dim
        other.hidden = self.hidden
        other.n_actions = self.n_actions
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    action: int
    reward: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO transition store."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data = []
        self._head = 0

    def __len__(self):
        return len(self._data)

    def push(self, tr: Transition):
        if len(self._data) < self.capacity:
            self._data.append(tr)
        else:
            self._data[self._head] = tr
            self._head = (self._head + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if not self._data:
            raise EmptyReplay("replay buffer is empty")
        picks = rng.integers(0, len(self._data), size=batch_size)
        return [self._data[k] for k in picks]


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay: float = 0.995  # per-episode multiplicative
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync: int = 200  # gradient steps between hard target syncs
    episodes: int = 1500
    warmup: int = 500  # transitions before learning starts
    hidden: tuple = (128, 128)
    obs_clip: float = 10.0  # standardized observations clip here
    max_grad_norm: float = 10.0  # global gradient-norm clip


def observe(
    x_hat_prev: np.ndarray,
    x_tilde_prev: np.ndarray,
    p_t: np.ndarray,
    normalizer: RunningNorm = None,
    clip: float = None,
) -> np.ndarray:
    """Concatenated (estimate, prediction, fast data) observation.

    With a normalizer the blocks are standardized per dimension and, when
    ``clip`` is set, bounded to [-clip, clip] so exploration-era extreme
    states cannot blow up the network.
    """
    x_hat_prev = np.asarray(x_hat_prev, dtype=float)
    x_tilde_prev = np.asarray(x_tilde_prev, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    if x_hat_prev.shape != x_tilde_prev.shape:
        raise DimensionMismatch(
            f"estimate/prediction shapes differ: {x_hat_prev.shape} vs {x_tilde_prev.shape}"
        )
    obs = np.concatenate([x_hat_prev, x_tilde_prev, p_t])
    if not np.all(np.isfinite(obs)):
        raise DimensionMismatch("observation contains non-finite entries")
    if normalizer is not None:
        if normalizer.dim != obs.size:
            raise DimensionMismatch(
                f"normalizer dim {normalizer.dim} != observation dim {obs.size}"
            )
        obs = normalizer.apply(obs)
        if clip is not None:
            obs = np.clip(obs, -clip, clip)
    return obs


def act(q: QNetwork, s: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties break to the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, q.n_actions))
    return int(np.argmax(q.forward(s)[0]))


def reward(x_tilde: np.ndarray, x_hat: np.ndarray, angle_mask: np.ndarray = None) -> float:
    """Negative squared prediction-estimate gap; zero only at equality."""
    d = np.asarray(x_tilde, dtype=float) - np.asarray(x_hat, dtype=float)
    if angle_mask is not None:
        from .estimator import wrap_angle

        d = np.where(angle_mask, wrap_angle(d), d)
    return -float(d @ d)


def bellman_target(q_target: QNetwork, tr: Transition, gamma: float) -> float:
    if tr.terminal or gamma == 0.0:
        return tr.reward
    return tr.reward + gamma * float(q_target.forward(tr.s_next)[0].max())


def train_step(q: QNetwork, q_target: QNetwork, batch: list, config: TrainConfig) -> float:
    """One SGD step on the mean squared Bellman residual of the batch."""
    if not batch:
        raise EmptyReplay("train_step needs a non-empty batch")
    s = np.stack([tr.s for tr in batch])
    actions = np.asarray([tr.action for tr in batch])
    rewards = np.asarray([tr.reward for tr in batch])
    terminal = np.asarray([tr.terminal for tr in batch])
    s_next = np.stack([tr.s_next for tr in batch])

    next_max = q_target.forward(s_next).max(axis=1)
    targets = rewards + np.where(terminal, 0.0, config.gamma * next_max)

    q_all, cache = q.forward_cached(s)
    rows = np.arange(len(batch))
    err = q_all[rows, actions] - targets
    loss = float(0.5 * np.mean(err**2))

    dq = np.zeros_like(q_all)
    dq[rows, actions] = err / len(batch)
    grads = q.backward(cache, dq)
    if config.max_grad_norm is not None:
        total = np.sqrt(sum(float((dw**2).sum() + (db**2).sum()) for dw, db in grads))
        if total > config.max_grad_norm:
            scale = config.max_grad_norm / total
            grads = [(dw * scale, db * scale) for dw, db in grads]
    q.sgd_step(grads, config.learning_rate)
    return loss


@dataclass
class TrainedAgent:
    """Deployable policy: network plus frozen observation statistics."""

    network: QNetwork
    normalizer: RunningNorm
    grid: ActionGrid
    n_state: int
    m_fast: int
    obs_clip: float = 10.0
    log: list = field(default_factory=list)  # (episode, total_reward, epsilon, loss_mean)

    def choose(self, x_hat_prev, x_tilde_prev, p_t, epsilon=0.0, rng=None) -> tuple:
        s = observe(x_hat_prev, x_tilde_prev, p_t, self.normalizer, clip=self.obs_clip)
        if epsilon > 0.0 and rng is None:
            raise DimensionMismatch("exploration needs an rng")
        idx = act(self.network, s, epsilon, rng if rng is not None else np.random.default_rng(0))
        return self.grid.pair(idx)


def train_offline(env, config: TrainConfig, seed: int) -> TrainedAgent:
    """Q-learning over the environment's refresh-window episodes.

    The env contract: ``reset(episode)`` returns the raw observation triple
    (x_hat_prev, x_tilde_prev, p_t); ``step(alpha, beta)`` applies one
    filter step and returns (triple, reward, done); ``n_state`` and
    ``m_fast`` give the block dimensions. Bit-reproducible for a fixed
    seed and deterministic env.
    """
    obs_dim = 2 * env.n_state + env.m_fast
    grid = ActionGrid()
    network = QNetwork(obs_dim, config.hidden, grid.size, rng_for(seed, "init"))
    target = network.clone()
    normalizer = RunningNorm(obs_dim)
    buffer = ReplayBuffer(config.replay_capacity)
    rng_act = rng_for(seed, "act")
    rng_batch = rng_for(seed, "batch")

    epsilon = config.epsilon_start
    grad_steps = 0
    log = []
    for episode in range(config.episodes):
        raw = env.reset(episode)
        normalizer.update(np.concatenate([np.asarray(b, dtype=float) for b in raw]))
        s = observe(*raw, normalizer, clip=config.obs_clip)
        total_reward = 0.0
        losses = []
        done = False
        while not done:
            a_idx = act(network, s, epsilon, rng_act)
            alpha, beta = grid.pair(a_idx)
            raw_next, r, done = env.step(alpha, beta)
            normalizer.update(np.concatenate([np.asarray(b, dtype=float) for b in raw_next]))
            s_next = observe(*raw_next, normalizer, clip=config.obs_clip)
            buffer.push(Transition(s, a_idx, float(r), s_next, bool(done)))
            total_reward += float(r)
            if len(buffer) >= max(config.batch_size, config.warmup):
                batch = buffer.sample(config.batch_size, rng_batch)
                losses.append(train_step(network, target, batch, config))
                grad_steps += 1
                if grad_steps % config.target_sync == 0:
                    target = network.clone()
            s = s_next
        log.append(
            (episode, total_reward, epsilon, float(np.mean(losses)) if losses else float("nan"))
        )
        epsilon = max(config.epsilon_end, epsilon * config.epsilon_decay)

    normalizer.frozen = True
    return TrainedAgent(
        network=network,
        normalizer=normalizer,
        grid=grid,
        n_state=env.n_state,
        m_fast=env.m_fast,
        obs_clip=config.obs_clip,
        log=log,
    )


# ------------------------------------------------------------- checkpoints


def save_agent(agent: TrainedAgent, path: str):
    """Versioned checkpoint: magic, version, sha256 digest, npz payload."""
    payload = io.BytesIO()
    arrays = {
        "n_state": np.asarray(agent.n_state),
        "m_fast": np.asarray(agent.m_fast),
        "hidden": np.asarray(agent.network.hidden, dtype=int),
        "grid_per_axis": np.asarray(agent.grid.per_axis),
        "grid_step": np.asarray(agent.grid.step),
        "norm_count": np.asarray(agent.normalizer.count),
        "norm_mean": agent.normalizer.mean,
        "norm_m2": agent.normalizer.m2,
        "obs_clip": np.asarray(agent.obs_clip),
    }
    for k, (w, b) in enumerate(zip(agent.network.weights, agent.network.biases)):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    np.savez(payload, **arrays)
    blob = payload.getvalue()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(hashlib.sha256(blob).digest())
        fh.write(blob)


def load_agent(path: str, expect_n_state: int = None, expect_m_fast: int = None) -> TrainedAgent:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 40 or raw[:4] != CHECKPOINT_MAGIC:
        raise ChecksumMismatch(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise ChecksumMismatch(f"{path}: unsupported checkpoint version {version}")
    digest, blob = raw[8:40], raw[40:]
    if hashlib.sha256(blob).digest() != digest:
        raise ChecksumMismatch(f"{path}: checkpoint digest mismatch (truncated or corrupt)")
    data = np.load(io.BytesIO(blob))

    n_state = int(data["n_state"])
    m_fast = int(data["m_fast"])
    if expect_n_state is not None and n_state != expect_n_state:
        raise DimensionMismatch(
            f"checkpoint built for state dim {n_state}, scenario has {expect_n_state}"
        )
    if expect_m_fast is not None and m_fast != expect_m_fast:
        raise DimensionMismatch(
            f"checkpoint built for {m_fast} fast channels, scenario has {expect_m_fast}"
        )

    grid = ActionGrid(per_axis=int(data["grid_per_axis"]), step=float(data["grid_step"]))
    hidden = tuple(int(h) for h in data["hidden"])
    obs_dim = 2 * n_state + m_fast
    network = QNetwork(obs_dim, hidden, grid.size, np.random.default_rng(0))
    layer = 0
    while f"w{layer}" in data:
        network.weights[layer] = data[f"w{layer}"]
        network.biases[layer] = data[f"b{layer}"]
        layer += 1
    normalizer = RunningNorm(obs_dim)
    normalizer.count = int(data["norm_count"])
    normalizer.mean = data["norm_mean"]
    normalizer.m2 = data["norm_m2"]
    normalizer.frozen = True
    return TrainedAgent(
        network=network,
        normalizer=normalizer,
        grid=grid,
        n_state=n_state,
        m_fast=m_fast,
        obs_clip=float(data["obs_clip"]),
    )
