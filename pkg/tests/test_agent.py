import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfase.agent import (
    ActionGrid,
    QNetwork,
    ReplayBuffer,
    RunningNorm,
    TrainConfig,
    TrainedAgent,
    Transition,
    act,
    bellman_target,
    load_agent,
    observe,
    reward,
    save_agent,
    train_step,
)
from gridfase.errors import ChecksumMismatch, DimensionMismatch, EmptyReplay
from gridfase.seeding import rng_for


def random_net(obs_dim=4, hidden=(8,), n_actions=121, seed=0):
    net = QNetwork(obs_dim, hidden, n_actions, np.random.default_rng(seed))
    # the value head starts at zero by design; fill it for gradient tests
    rng = np.random.default_rng(seed + 1)
    net.weights[-1][:] = 0.1 * rng.standard_normal(net.weights[-1].shape)
    net.biases[-1][:] = 0.1 * rng.standard_normal(net.biases[-1].shape)
    return net


# --------------------------------------------------------------- ActionGrid


def test_grid_corners():
    grid = ActionGrid()
    assert grid.size == 121
    assert grid.pair(0) == (0.0, 0.0)
    assert grid.pair(120) == (1.0, 1.0)
    alpha, beta = grid.pair(37)
    assert alpha == pytest.approx(0.3)
    assert beta == pytest.approx(0.4)


@given(st.integers(0, 120))
def test_grid_bijection(idx):
    grid = ActionGrid()
    alpha, beta = grid.pair(idx)
    assert 0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0
    assert grid.index(alpha, beta) == idx


def test_grid_bad_index():
    with pytest.raises(DimensionMismatch):
        ActionGrid().pair(121)


# ------------------------------------------------------------------ observe


def test_observe_dimension():
    obs = observe(np.zeros(2), np.ones(2), np.array([3.0]))
    assert obs.shape == (5,)
    assert np.array_equal(obs, [0, 0, 1, 1, 3])


def test_observe_rejects_mismatch():
    with pytest.raises(DimensionMismatch):
        observe(np.zeros(2), np.zeros(3), np.zeros(1))
    with pytest.raises(DimensionMismatch):
        observe(np.array([np.nan]), np.zeros(1), np.zeros(1))


def test_observe_deterministic_given_normalizer():
    norm = RunningNorm(5)
    rng = np.random.default_rng(0)
    for _ in range(50):
        norm.update(rng.standard_normal(5))
    a = observe(np.ones(2), np.zeros(2), np.ones(1), norm, clip=10.0)
    b = observe(np.ones(2), np.zeros(2), np.ones(1), norm, clip=10.0)
    assert np.array_equal(a, b)


def test_normalizer_winsorizes_updates():
    norm = RunningNorm(2)
    for _ in range(10):
        norm.update(np.array([1e9, 0.0]))
        norm.update(np.array([-1e9, 1.0]))
    assert norm.scale()[0] <= 2 * RunningNorm.UPDATE_BOUND


# ---------------------------------------------------------------------- act


def test_act_greedy_unique_max():
    net = random_net(seed=3)
    s = np.zeros(4)
    q = net.forward(s)[0]
    net.biases[-1][37] = q.max() + 1.0
    assert act(net, s, 0.0, np.random.default_rng(0)) == 37


def test_act_tie_breaks_low_index():
    net = QNetwork(4, (8,), 121, np.random.default_rng(0))
    # zero head: every action ties at 0, lowest index wins
    assert act(net, np.ones(4), 0.0, np.random.default_rng(0)) == 0
    net.biases[-1][3] = 1.0
    net.biases[-1][90] = 1.0
    assert act(net, np.ones(4), 0.0, np.random.default_rng(0)) == 3


def test_act_epsilon_one_uniform():
    net = random_net(seed=4)
    rng = np.random.default_rng(5)
    counts = np.zeros(121)
    draws = 10_000
    for _ in range(draws):
        counts[act(net, np.zeros(4), 1.0, rng)] += 1
    p = 1.0 / 121
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.abs(counts - draws * p).max() < 4 * sigma


# ------------------------------------------------------------------- reward


def test_reward_zero_at_equality():
    x = np.array([1.0, -2.0, 0.5])
    assert reward(x, x) == 0.0


def test_reward_hand_case():
    assert reward(np.array([0.1, 0.0]), np.zeros(2)) == pytest.approx(-0.01)


def test_reward_matches_brute_sum():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a, b = rng.standard_normal(6), rng.standard_normal(6)
        brute = -sum((ai - bi) ** 2 for ai, bi in zip(a, b))
        assert reward(a, b) == pytest.approx(brute, abs=1e-12)


def test_reward_wraps_angles():
    mask = np.array([False, True])
    a = np.array([0.0, np.pi - 0.01])
    b = np.array([0.0, -np.pi + 0.01])
    assert reward(a, b, mask) == pytest.approx(-(0.02**2))


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_reward_nonpositive(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    r = reward(a, b)
    assert r <= 0.0
    assert (r == 0.0) == bool(np.array_equal(a, b))


# ---------------------------------------------------------- bellman_target


def test_bellman_terminal():
    net = random_net()
    tr = Transition(np.zeros(4), 0, -1.5, np.zeros(4), True)
    assert bellman_target(net, tr, 0.9) == -1.5


def test_bellman_gamma_zero():
    net = random_net()
    tr = Transition(np.zeros(4), 0, -2.0, np.ones(4), False)
    assert bellman_target(net, tr, 0.0) == -2.0


def test_bellman_hand_case():
    net = QNetwork(4, (8,), 121, np.random.default_rng(0))
    net.biases[-1][:] = -1.0
    net.biases[-1][7] = 2.0  # max
    net.weights[-1][:] = 0.0
    net.weights[-2][:] = 0.0  # hidden contribution off
    tr = Transition(np.zeros(4), 0, -1.0, np.ones(4), False)
    assert bellman_target(net, tr, 0.9) == pytest.approx(-1.0 + 0.9 * 2.0)


# --------------------------------------------------------------- train_step


def make_batch(rng, net, n=16, match_targets=False, gamma=0.9):
    batch = []
    for _ in range(n):
        s = rng.standard_normal(net.obs_dim)
        s2 = rng.standard_normal(net.obs_dim)
        a = int(rng.integers(0, net.n_actions))
        terminal = bool(rng.random() < 0.3)
        if match_targets:
            # choose r so that Q(s,a) already equals the Bellman target
            bootstrap = 0.0 if terminal else gamma * float(net.forward(s2)[0].max())
            r = float(net.forward(s)[0][a]) - bootstrap
        else:
            r = float(-rng.random())
        batch.append(Transition(s, a, r, s2, terminal))
    return batch


def test_train_step_zero_loss_at_fixpoint():
    rng = np.random.default_rng(7)
    net = random_net(seed=8)
    target_net = net.clone()
    batch = make_batch(rng, net, match_targets=True)
    before = [w.copy() for w in net.weights]
    loss = train_step(net, target_net, batch, TrainConfig(gamma=0.9))
    assert loss == pytest.approx(0.0, abs=1e-20)
    for w0, w1 in zip(before, net.weights):
        assert np.array_equal(w0, w1)


def test_train_step_empty_batch():
    net = random_net()
    with pytest.raises(EmptyReplay):
        train_step(net, net.clone(), [], TrainConfig())


def test_gradient_matches_finite_differences():
    """Analytic loss gradient vs central differences on a 4-8-121 net."""
    rng = np.random.default_rng(9)
    net = random_net(obs_dim=4, hidden=(8,), n_actions=121, seed=10)
    target_net = random_net(obs_dim=4, hidden=(8,), n_actions=121, seed=11)
    cfg = TrainConfig(gamma=0.9, learning_rate=0.0, max_grad_norm=None)
    batch = make_batch(rng, net, n=8)

    s = np.stack([tr.s for tr in batch])
    actions = np.asarray([tr.action for tr in batch])
    rewards = np.asarray([tr.reward for tr in batch])
    terminal = np.asarray([tr.terminal for tr in batch])
    s2 = np.stack([tr.s_next for tr in batch])
    targets = rewards + np.where(terminal, 0.0, cfg.gamma * target_net.forward(s2).max(axis=1))

    def loss_at():
        q = net.forward(s)
        err = q[np.arange(len(batch)), actions] - targets
        return float(0.5 * np.mean(err**2))

    q_all, cache = net.forward_cached(s)
    err = q_all[np.arange(len(batch)), actions] - targets
    dq = np.zeros_like(q_all)
    dq[np.arange(len(batch)), actions] = err / len(batch)
    grads = net.backward(cache, dq)

    eps = 1e-6
    worst = 0.0
    for layer, (dw, db) in enumerate(grads):
        w = net.weights[layer]
        flat_idx = [(i, j) for i in range(w.shape[0]) for j in range(w.shape[1])]
        for i, j in flat_idx[:: max(1, len(flat_idx) // 60)]:
            w[i, j] += eps
            up = loss_at()
            w[i, j] -= 2 * eps
            down = loss_at()
            w[i, j] += eps
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(dw[i, j]), 1e-8)
            worst = max(worst, abs(fd - dw[i, j]) / denom)
        b = net.biases[layer]
        for i in range(0, len(b), max(1, len(b) // 30)):
            b[i] += eps
            up = loss_at()
            b[i] -= 2 * eps
            down = loss_at()
            b[i] += eps
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(db[i]), 1e-8)
            worst = max(worst, abs(fd - db[i]) / denom)
    assert worst < 1e-4


def test_repeated_steps_nonincreasing_loss():
    rng = np.random.default_rng(12)
    net = random_net(seed=13)
    target_net = net.clone()
    batch = make_batch(rng, net, n=32)
    cfg = TrainConfig(gamma=0.9, learning_rate=1e-4)
    losses = [train_step(net, target_net, batch, cfg) for _ in range(60)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


# ------------------------------------------------------------ replay buffer


def test_replay_fifo_capacity():
    buf = ReplayBuffer(capacity=5)
    for k in range(12):
        buf.push(Transition(np.array([float(k)]), 0, 0.0, np.array([0.0]), False))
        assert len(buf) <= 5
    kept = sorted(float(tr.s[0]) for tr in buf._data)
    assert kept == [7.0, 8.0, 9.0, 10.0, 11.0]


def test_replay_empty_sample():
    with pytest.raises(EmptyReplay):
        ReplayBuffer(3).sample(2, np.random.default_rng(0))


# -------------------------------------------------------------- checkpoints


def build_agent(seed=0, n_state=6, m_fast=3):
    obs_dim = 2 * n_state + m_fast
    net = QNetwork(obs_dim, (16, 16), 121, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for w in net.weights:
        w += 0.01 * rng.standard_normal(w.shape)
    norm = RunningNorm(obs_dim)
    for _ in range(20):
        norm.update(rng.standard_normal(obs_dim))
    norm.frozen = True
    return TrainedAgent(net, norm, ActionGrid(), n_state, m_fast, obs_clip=8.0)


def test_checkpoint_roundtrip(tmp_path):
    agent = build_agent()
    path = str(tmp_path / "a.ckpt")
    save_agent(agent, path)
    loaded = load_agent(path, expect_n_state=6, expect_m_fast=3)
    rng = np.random.default_rng(14)
    for _ in range(100):
        obs = rng.standard_normal(agent.network.obs_dim)
        assert np.array_equal(agent.network.forward(obs), loaded.network.forward(obs))
    assert loaded.obs_clip == agent.obs_clip
    assert np.array_equal(loaded.normalizer.mean, agent.normalizer.mean)


def test_checkpoint_dimension_mismatch(tmp_path):
    agent = build_agent()
    path = str(tmp_path / "a.ckpt")
    save_agent(agent, path)
    with pytest.raises(DimensionMismatch):
        load_agent(path, expect_n_state=9, expect_m_fast=3)


def test_checkpoint_truncated(tmp_path):
    agent = build_agent()
    path = str(tmp_path / "a.ckpt")
    save_agent(agent, path)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[: len(blob) // 2])
    with pytest.raises(ChecksumMismatch):
        load_agent(path)


def test_checkpoint_not_a_checkpoint(tmp_path):
    path = str(tmp_path / "junk.ckpt")
    open(path, "wb").write(b"hello world")
    with pytest.raises(ChecksumMismatch):
        load_agent(path)


# -------------------------------------------------- argmax affine invariance


@given(st.floats(0.1, 100.0), st.floats(-5.0, 5.0))
@settings(max_examples=50)
def test_greedy_invariant_under_affine(scale, shift):
    net = random_net(seed=15)
    s = np.linspace(-1, 1, 4)
    base = act(net, s, 0.0, np.random.default_rng(0))
    shifted = net.clone()
    shifted.weights[-1] *= scale
    shifted.biases[-1] = shifted.biases[-1] * scale + shift
    assert act(shifted, s, 0.0, np.random.default_rng(0)) == base
