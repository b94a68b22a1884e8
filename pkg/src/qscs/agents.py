"""Double-DQN, clipped-surrogate PPO and the return-weighted ensemble of both."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import math

import numpy as np

from .neural import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    backward_from_cache,
    clip_grad_norm,
    forward,
    forward_cached,
    hard_update,
)


# ---------------------------------------------------------------------------
# distributions

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softened_greedy(q_values: np.ndarray, eps: float = 0.05) -> np.ndarray:
    n = len(q_values)
    p = np.full(n, eps / n)
    p[int(np.argmax(q_values))] += 1.0 - eps
    return p


def sample_categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))


# ---------------------------------------------------------------------------
# replay

@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.a)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.s2 = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done) -> None:
        if not math.isfinite(r):
            raise ValueError("transition reward must be finite")
        i = self.pos
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])


# ---------------------------------------------------------------------------
# DQN

@dataclass
class DqnConfig:
    gamma: float = 0.95
    lr: float = 5e-4
    epsilon_start: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.995
    target_update: int = 200
    batch_size: int = 64
    memory_size: int = 10_000
    double: bool = True
    hidden: tuple = (64, 64)
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.epsilon_min <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_min <= epsilon_start <= 1")


def epsilon_after(k: int, cfg: DqnConfig) -> float:
    """Exploration rate after ``k`` completed episodes."""
    return max(cfg.epsilon_min, cfg.epsilon_start * cfg.epsilon_decay ** k)


def dqn_act(obs, eps: float, q_net: MlpParams, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if rng.random() < eps:
        return int(rng.integers(q_net.n_outputs))
    return int(np.argmax(forward(q_net, obs)))


def dqn_targets(batch: Batch, online: MlpParams, target: MlpParams, gamma: float, double: bool = True) -> np.ndarray:
    q_target = forward(target, batch.s2)
    if double:
        chosen = np.argmax(forward(online, batch.s2), axis=1)
    else:
        chosen = np.argmax(q_target, axis=1)
    boot = q_target[np.arange(len(batch)), chosen]
    return batch.r + gamma * boot * (~batch.done)


class DQNAgent:
    kind = "dqn"

    def __init__(self, obs_dim: int, n_actions: int, cfg: DqnConfig | None = None, seed: int = 0):
        self.cfg = cfg or DqnConfig()
        self.n_actions = n_actions
        ss = np.random.SeedSequence(seed)
        init_seed, act_seed, replay_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        spec = MlpSpec((obs_dim, *self.cfg.hidden, n_actions), init_seed)
        self.online = MlpParams.init(spec)
        self.target = self.online.copy()
        self.opt = AdamState(spec.n_params, lr=self.cfg.lr)
        self.buffer = ReplayBuffer(self.cfg.memory_size, obs_dim)
        self.rng = np.random.default_rng(act_seed)
        self.replay_rng = np.random.default_rng(replay_seed)
        self.learner_steps = 0
        self.episodes_done = 0
        self.epsilon = self.cfg.epsilon_start

    def act(self, obs, explore: bool = True) -> int:
        return dqn_act(obs, self.epsilon if explore else 0.0, self.online, self.rng)

    def q_values(self, obs) -> np.ndarray:
        return forward(self.online, obs)

    def remember(self, s, a, r, s2, done) -> None:
        self.buffer.push(s, a, r, s2, done)

    def learn(self) -> float | None:
        return dqn_learn(self)

    def observe(self, s, a, r, s2, done) -> None:
        self.remember(s, a, r, s2, done)
        self.learn()

    def end_episode(self, ep_return: float) -> None:
        self.episodes_done += 1
        self.epsilon = epsilon_after(self.episodes_done, self.cfg)


def dqn_learn(agent: DQNAgent) -> float | None:
    """One replay update. Returns the pre-step MSE loss, or None when the buffer is underfull."""
    cfg = agent.cfg
    if len(agent.buffer) < cfg.batch_size:
        return None
    batch = agent.buffer.sample(cfg.batch_size, agent.replay_rng)
    y = dqn_targets(batch, agent.online, agent.target, cfg.gamma, cfg.double)
    acts = forward_cached(agent.online, batch.s)
    rows = np.arange(len(batch))
    err = acts[-1][rows, batch.a] - y
    loss = float(np.mean(err ** 2))
    g_out = np.zeros_like(acts[-1])
    g_out[rows, batch.a] = 2.0 * err / len(batch)
    grad = clip_grad_norm(backward_from_cache(agent.online, acts, g_out), cfg.grad_clip)
    adam_step(agent.opt, agent.online, grad)
    agent.learner_steps += 1
    if agent.learner_steps % cfg.target_update == 0:
        hard_update(agent.target, agent.online)
    return loss


# ---------------------------------------------------------------------------
# PPO

@dataclass
class PpoConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.95
    epochs: int = 4
    minibatch: int = 25
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    lr: float = 5e-4
    hidden: tuple = (64, 64)
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")


def gae_advantages(rewards, values, dones, gamma: float, lam: float, bootstrap_value: float = 0.0,
                   normalize: bool = True):
    """Generalized advantage estimates and value targets (returns).

    ``returns`` are always computed from the raw advantages; only the
    advantages are standardized when ``normalize`` is set.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty rollout")
    adv = np.zeros(n)
    nxt_value = bootstrap_value
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * nxt_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        nxt_value = values[t]
    returns = adv + values
    if normalize:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    return adv, returns


def clipped_surrogate(ratio, adv, clip: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def surrogate_logit_grad(logits, actions, old_logp, adv, clip: float) -> np.ndarray:
    """Per-sample gradient of the clipped surrogate with respect to the logits."""
    logits = np.atleast_2d(logits)
    rows = np.arange(len(logits))
    pi = softmax(logits)
    logp = log_softmax(logits)[rows, actions]
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    # the min follows the unclipped branch only where it is the smaller one
    active = unclipped <= clipped
    onehot = np.zeros_like(pi)
    onehot[rows, actions] = 1.0
    return (active * ratio * adv)[:, None] * (onehot - pi)


@dataclass
class Rollout:
    obs: list
    actions: list
    rewards: list
    dones: list
    log_probs: list
    values: list

    @classmethod
    def empty(cls):
        return cls([], [], [], [], [], [])

    def add(self, obs, action, reward, done, log_prob, value):
        self.obs.append(obs)
        self.actions.append(action)
        self.rewards.append(reward)
        self.dones.append(done)
        self.log_probs.append(log_prob)
        self.values.append(value)

    def __len__(self):
        return len(self.actions)


def ppo_act(obs, policy_net: MlpParams, value_net: MlpParams, rng: np.random.Generator):
    logits = forward(policy_net, obs)
    p = softmax(logits)
    a = sample_categorical(p, rng)
    return a, float(log_softmax(logits)[a]), float(forward(value_net, obs)[0])


class PPOAgent:
    kind = "ppo"

    def __init__(self, obs_dim: int, n_actions: int, cfg: PpoConfig | None = None, seed: int = 0):
        self.cfg = cfg or PpoConfig()
        self.n_actions = n_actions
        ss = np.random.SeedSequence(seed)
        pol_seed, val_seed, act_seed, shuf_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
        self.policy = MlpParams.init(MlpSpec((obs_dim, *self.cfg.hidden, n_actions), pol_seed))
        # small policy head so the initial policy is close to uniform
        self.policy.weights[-1][...] *= 0.01
        self.value = MlpParams.init(MlpSpec((obs_dim, *self.cfg.hidden, 1), val_seed))
        self.policy_opt = AdamState(self.policy.spec.n_params, lr=self.cfg.lr)
        self.value_opt = AdamState(self.value.spec.n_params, lr=self.cfg.lr)
        self.rng = np.random.default_rng(act_seed)
        self.shuffle_rng = np.random.default_rng(shuf_seed)
        self.rollout = Rollout.empty()
        self.epsilon = 0.0

    def probs(self, obs) -> np.ndarray:
        return softmax(forward(self.policy, obs))

    def act(self, obs, explore: bool = True) -> int:
        if not explore:
            return int(np.argmax(forward(self.policy, obs)))
        a, logp, v = ppo_act(obs, self.policy, self.value, self.rng)
        self._pending = (logp, v)
        return a

    def log_prob_value(self, obs, action: int):
        return float(log_softmax(forward(self.policy, obs))[action]), float(forward(self.value, obs)[0])

    def observe(self, s, a, r, s2, done) -> None:
        pending = getattr(self, "_pending", None)
        logp, v = pending if pending is not None else self.log_prob_value(s, a)
        self._pending = None
        self.rollout.add(s, a, r, done, logp, v)
        self._last_next = s2

    def end_episode(self, ep_return: float) -> None:
        if len(self.rollout):
            boot = 0.0 if self.rollout.dones[-1] else float(forward(self.value, self._last_next)[0])
            ppo_update(self, self.rollout, boot)
        self.rollout = Rollout.empty()


def ppo_update(agent: PPOAgent, rollout: Rollout, bootstrap_value: float = 0.0):
    """Clipped-surrogate policy update plus value regression.

    Returns mean (policy loss, value loss, entropy) over all minibatches.
    """
    cfg = agent.cfg
    obs = np.asarray(rollout.obs, dtype=float)
    actions = np.asarray(rollout.actions, dtype=np.int64)
    old_logp = np.asarray(rollout.log_probs, dtype=float)
    adv, returns = gae_advantages(rollout.rewards, rollout.values, rollout.dones, cfg.gamma, cfg.gae_lambda,
                                  bootstrap_value)
    n = len(actions)
    stats = []
    for _ in range(cfg.epochs):
        order = agent.shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            m = len(idx)
            rows = np.arange(m)
            p_acts = forward_cached(agent.policy, obs[idx])
            logits = p_acts[-1]
            pi = softmax(logits)
            logp_all = log_softmax(logits)
            entropy = -(pi * logp_all).sum(axis=1)
            ratio = np.exp(logp_all[rows, actions[idx]] - old_logp[idx])
            surr = clipped_surrogate(ratio, adv[idx], cfg.clip)
            policy_loss = -surr.mean() - cfg.entropy_coef * entropy.mean()

            g_surr = surrogate_logit_grad(logits, actions[idx], old_logp[idx], adv[idx], cfg.clip)
            g_ent = pi * (logp_all + entropy[:, None])  # d(-H)/dlogits
            g_logits = (-g_surr + cfg.entropy_coef * g_ent) / m
            grad = clip_grad_norm(backward_from_cache(agent.policy, p_acts, g_logits), cfg.grad_clip)
            adam_step(agent.policy_opt, agent.policy, grad)

            v_acts = forward_cached(agent.value, obs[idx])
            v_err = v_acts[-1][:, 0] - returns[idx]
            value_loss = float(np.mean(v_err ** 2))
            g_v = (cfg.value_coef * 2.0 * v_err / m)[:, None]
            grad_v = clip_grad_norm(backward_from_cache(agent.value, v_acts, g_v), cfg.grad_clip)
            adam_step(agent.value_opt, agent.value, grad_v)
            stats.append((float(policy_loss), value_loss, float(entropy.mean())))
    return tuple(float(x) for x in np.mean(stats, axis=0))


# ---------------------------------------------------------------------------
# ensemble

OMEGA_MIN, OMEGA_MAX = 0.1, 0.9


class EnsembleState:
    def __init__(self, history: int = 20, omega: float = 0.5):
        self.dqn_returns = deque(maxlen=history)
        self.ppo_returns = deque(maxlen=history)
        self.omega_dqn = omega

    @property
    def omega_ppo(self) -> float:
        return 1.0 - self.omega_dqn


def ensemble_distribution(q_values, logits, omega_dqn: float, smoothing: float = 0.05) -> np.ndarray:
    return omega_dqn * softened_greedy(q_values, smoothing) + (1.0 - omega_dqn) * softmax(logits)


def ensemble_reweight(ens: EnsembleState, dqn_return: float | None, ppo_return: float | None) -> float:
    """Push the latest per-agent returns and recompute the DQN mixture weight.

    Either return may be None (that sub-agent did not act this episode).
    """
    if dqn_return is not None:
        ens.dqn_returns.append(float(dqn_return))
    if ppo_return is not None:
        ens.ppo_returns.append(float(ppo_return))
    if not ens.dqn_returns or not ens.ppo_returns:
        return ens.omega_dqn
    lo = min(min(ens.dqn_returns), min(ens.ppo_returns))
    m_dqn = np.mean(ens.dqn_returns) - lo + 1.0
    m_ppo = np.mean(ens.ppo_returns) - lo + 1.0
    ens.omega_dqn = float(np.clip(m_dqn / (m_dqn + m_ppo), OMEGA_MIN, OMEGA_MAX))
    return ens.omega_dqn


def ensemble_act(obs, dqn: DQNAgent, ppo: PPOAgent, ens: EnsembleState, rng: np.random.Generator,
                 smoothing: float = 0.05):
    """Sample from the mixture by first picking a component, then an action.

    Returns ``(action, component)`` with component ``"dqn"`` or ``"ppo"``.
    """
    if rng.random() < ens.omega_dqn:
        return sample_categorical(softened_greedy(dqn.q_values(obs), smoothing), rng), "dqn"
    return sample_categorical(ppo.probs(obs), rng), "ppo"


class EnsembleAgent:
    """DQN and PPO mixed by return-driven weights.

    DQN learns from every transition through replay; PPO updates once per
    episode on the full rollout, using its own log-probabilities of the
    executed actions as the behaviour reference.
    """

    kind = "ensemble"
    smoothing = 0.05

    def __init__(self, obs_dim: int, n_actions: int, dqn_cfg: DqnConfig | None = None,
                 ppo_cfg: PpoConfig | None = None, seed: int = 0, history: int = 20):
        ss = np.random.SeedSequence(seed)
        d_seed, p_seed, m_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        self.dqn = DQNAgent(obs_dim, n_actions, dqn_cfg, d_seed)
        self.ppo = PPOAgent(obs_dim, n_actions, ppo_cfg, p_seed)
        self.state = EnsembleState(history)
        self.rng = np.random.default_rng(m_seed)
        self.epsilon = self.smoothing
        self._credit = {"dqn": [0.0, 0], "ppo": [0.0, 0]}
        self._component = None

    @property
    def omega(self) -> float:
        return self.state.omega_dqn

    def distribution(self, obs) -> np.ndarray:
        return ensemble_distribution(self.dqn.q_values(obs), forward(self.ppo.policy, obs), self.omega,
                                     self.smoothing)

    def act(self, obs, explore: bool = True) -> int:
        if not explore:
            return int(np.argmax(self.distribution(obs)))
        a, self._component = ensemble_act(obs, self.dqn, self.ppo, self.state, self.rng, self.smoothing)
        return a

    def observe(self, s, a, r, s2, done) -> None:
        self.dqn.observe(s, a, r, s2, done)
        logp, v = self.ppo.log_prob_value(s, a)
        self.ppo.rollout.add(s, a, r, done, logp, v)
        self.ppo._last_next = s2
        if self._component is not None:
            credit = self._credit[self._component]
            credit[0] += r
            credit[1] += 1
        self._component = None

    def end_episode(self, ep_return: float) -> None:
        steps = len(self.ppo.rollout)
        per_agent = {}
        for name, (total, count) in self._credit.items():
            per_agent[name] = total / count * steps if count else None
        self.ppo.end_episode(ep_return)
        self.dqn.end_episode(ep_return)
        ensemble_reweight(self.state, per_agent["dqn"], per_agent["ppo"])
        self._credit = {"dqn": [0.0, 0], "ppo": [0.0, 0]}
