"""Advantage actor-critic agent and the ISAC environment loop.

Cases: 0 = raw CSI + direct phases, 1 = AE features + direct phases,
2 = raw CSI + beampattern actions, 3 = AE features + beampattern actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import Autoencoder, Scaler, flatten_csi
from .config import SystemConfig
from .model import (
    PHASE_LEVELS, BeamformingSolution, ChannelSet, RateReport, Side, evaluate_rates,
    quantized_phase_beamformer, reward, sample_scenario,
)
from .nn import Network, adam_for, log_softmax, mlp_specs, Adam
from .recon import ReconNet, max_gain, reconstruct

DIRECT_CASES = (0, 1)
PATTERN_CASES = (2, 3)
FEATURE_CASES = (1, 3)
LOG_2PI = math.log(2 * math.pi)


def check_case(case: int):
    if case not in (0, 1, 2, 3):
        raise ValueError(f"case must be 0..3, got {case}")


@dataclass
class PolicySpec:
    hidden: int = 128
    discount: float = 0.0
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    init_log_std: float = 0.5
    rollout_len: int = 5

    def __post_init__(self):
        if not 0 <= self.discount < 1:
            raise ValueError("discount must be in [0, 1)")
        if min(self.entropy_coef, self.value_coef, self.actor_lr, self.critic_lr) < 0:
            raise ValueError("coefficients and learning rates must be >= 0")
        if self.rollout_len < 1:
            raise ValueError("rollout_len must be >= 1")


# -- policy heads ------------------------------------------------------------


class CategoricalPolicy:
    """Independent categorical choice per slot (3-bit phase per antenna and beam)."""

    def __init__(self, n_slots: int, n_choices: int = PHASE_LEVELS):
        self.n_slots, self.n_choices = n_slots, n_choices

    @property
    def n_outputs(self) -> int:
        return self.n_slots * self.n_choices

    def params(self) -> list[np.ndarray]:
        return []

    def _logp(self, out):
        return log_softmax(out.reshape(-1, self.n_slots, self.n_choices))

    def sample(self, out, rng, greedy=False):
        logp = self._logp(out)[0]
        if greedy:
            a = np.argmax(logp, axis=1)
        else:
            # inverse-CDF sampling, one uniform per slot
            cdf = np.cumsum(np.exp(logp), axis=1)
            u = rng.uniform(size=(self.n_slots, 1)) * cdf[:, -1:]
            a = np.minimum((cdf < u).sum(axis=1), self.n_choices - 1)
        lp = float(logp[np.arange(self.n_slots), a].sum())
        return a, a, lp, float(self.entropy(out)[0])

    def log_prob(self, out, raw):
        logp = self._logp(out)
        raw = np.asarray(raw).reshape(-1, self.n_slots)
        return np.take_along_axis(logp, raw[..., None], axis=2)[..., 0].sum(axis=1)

    def entropy(self, out):
        logp = self._logp(out)
        return -np.sum(np.exp(logp) * logp, axis=(1, 2))

    def loss_grads(self, out, raw, adv, entropy_coef):
        """Actor loss ``-mean(A logpi) - c_H mean(H)`` and d/d(out)."""
        B = out.shape[0]
        logp = self._logp(out)
        p = np.exp(logp)
        raw = np.asarray(raw).reshape(B, self.n_slots)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, raw[..., None], 1.0, axis=2)
        picked = np.sum(onehot * logp, axis=(1, 2))
        h_slot = -np.sum(p * logp, axis=2, keepdims=True)
        ent = h_slot.sum(axis=(1, 2))
        loss = -np.mean(adv * picked) - entropy_coef * np.mean(ent)
        d_logpi = onehot - p
        d_ent = -p * (logp + h_slot)
        g = -(adv[:, None, None] * d_logpi) / B - entropy_coef * d_ent / B
        return float(loss), g.reshape(B, -1), []


class GaussianPolicy:
    """Diagonal Gaussian on pre-squash values, ``action = gain * sigmoid(z)``.

    The mean comes from the actor network; log-std is a free parameter
    vector shared across states.
    """

    def __init__(self, gains: np.ndarray, init_log_std: float = -0.5):
        self.gains = np.asarray(gains, dtype=float)
        self.log_std = np.full(self.gains.size, float(init_log_std))

    @property
    def n_outputs(self) -> int:
        return self.gains.size

    def params(self) -> list[np.ndarray]:
        return [self.log_std]

    def squash(self, z):
        return self.gains / (1.0 + np.exp(-z))

    def _squash_correction(self, z):
        # log |d action / d z| = log gain + log s + log(1 - s)
        return np.sum(np.log(self.gains) - np.logaddexp(0, -z) - np.logaddexp(0, z), axis=-1)

    def sample(self, out, rng, greedy=False):
        mu = out[0]
        std = np.exp(self.log_std)
        z = mu.copy() if greedy else mu + std * rng.standard_normal(mu.shape)
        lp = float(self._gauss_logp(mu[None], z[None])[0] - self._squash_correction(z))
        return self.squash(z), z, lp, float(self.entropy(out)[0])

    def _gauss_logp(self, mu, z):
        std = np.exp(self.log_std)
        return np.sum(-0.5 * ((z - mu) / std) ** 2 - self.log_std - 0.5 * LOG_2PI, axis=-1)

    def log_prob(self, out, raw):
        z = np.atleast_2d(raw)
        return self._gauss_logp(out, z) - self._squash_correction(z)

    def log_prob_action(self, out, action):
        a = np.atleast_2d(np.asarray(action, dtype=float)) / self.gains
        z = np.log(a) - np.log1p(-a)
        return self.log_prob(out, z)

    def entropy(self, out):
        # entropy of the pre-squash Gaussian
        h = np.sum(self.log_std + 0.5 * (LOG_2PI + 1.0))
        return np.full(np.atleast_2d(out).shape[0], h)

    def loss_grads(self, out, raw, adv, entropy_coef):
        B = out.shape[0]
        z = np.asarray(raw).reshape(B, -1)
        var = np.exp(2 * self.log_std)
        resid = z - out
        logpi = self._gauss_logp(out, z)
        loss = -np.mean(adv * logpi) - entropy_coef * float(self.entropy(out)[0])
        g_mu = -(adv[:, None] * resid / var) / B
        g_log_std = -np.sum(adv[:, None] * (resid ** 2 / var - 1.0), axis=0) / B - entropy_coef
        return float(loss), g_mu, [g_log_std]


# -- agent -------------------------------------------------------------------


def action_layout(config: SystemConfig) -> dict[str, int]:
    K, L = config.n_users, config.n_targets
    return {
        "phase_slots": (K + L) * config.n_tx + L * config.n_rx,
        "pattern_beams": K + 2 * L,
        "pattern_dim": (K + 2 * L) * config.angle_samples,
    }


def pattern_gains(config: SystemConfig) -> np.ndarray:
    K, L, A = config.n_users, config.n_targets, config.angle_samples
    tx = np.full((K + L) * A, max_gain(config, Side.TRANSMIT))
    rx = np.full(L * A, max_gain(config, Side.RECEIVE))
    return np.concatenate([tx, rx])


def state_dim(case: int, config: SystemConfig, feature_size: int) -> int:
    return (feature_size if case in FEATURE_CASES else config.csi_length) + 1


class Agent:
    def __init__(self, case: int, config: SystemConfig, feature_size: int, spec: PolicySpec,
                 rng: np.random.Generator):
        check_case(case)
        self.case, self.spec = case, spec
        lay = action_layout(config)
        if case in DIRECT_CASES:
            self.policy = CategoricalPolicy(lay["phase_slots"])
        else:
            self.policy = GaussianPolicy(pattern_gains(config), spec.init_log_std)
        dim = state_dim(case, config, feature_size)
        self.actor = Network(mlp_specs([dim, spec.hidden, self.policy.n_outputs]), rng)
        self.critic = Network(mlp_specs([dim, spec.hidden, 1]), rng)
        self.make_optimizers()

    def make_optimizers(self):
        self.actor_opt = adam_for(self.actor, self.spec.actor_lr)
        self.critic_opt = adam_for(self.critic, self.spec.critic_lr)
        self.policy_opt = Adam(self.policy.params(), lr=self.spec.actor_lr) if self.policy.params() else None

    @property
    def state_dim(self) -> int:
        return self.actor.in_dim

    def act(self, state, rng, greedy=False):
        """Return ``(action, raw, log_prob, entropy)``."""
        return self.policy.sample(self.actor(state), rng, greedy)

    def value(self, states) -> np.ndarray:
        return self.critic(np.atleast_2d(states))[:, 0]


def save_agent(agent: Agent, directory, meta: dict[str, str] | None = None):
    """Write ``actor.ckpt`` (log-std as an extra for Gaussian heads) and ``critic.ckpt``."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {}, case=str(agent.case))
    extra = {"log_std": agent.policy.log_std} if isinstance(agent.policy, GaussianPolicy) else None
    agent.actor.save(d / "actor.ckpt", extra=extra, meta=meta)
    agent.critic.save(d / "critic.ckpt", meta=meta)


def load_agent(directory, config: SystemConfig, feature_size: int, spec: PolicySpec) -> tuple[Agent, dict]:
    """Rebuild an agent from :func:`save_agent` output; returns ``(agent, meta)``."""
    from pathlib import Path

    from .nn import load_checkpoint

    d = Path(directory)
    actor, extra, meta = load_checkpoint(d / "actor.ckpt")
    critic, _, _ = load_checkpoint(d / "critic.ckpt")
    agent = Agent(int(meta["case"]), config, feature_size, spec, np.random.default_rng(0))
    if actor.in_dim != agent.actor.in_dim or actor.out_dim != agent.actor.out_dim:
        raise ValueError(f"{d}: actor shape does not match the configuration")
    agent.actor, agent.critic = actor, critic
    if isinstance(agent.policy, GaussianPolicy):
        agent.policy.log_std = np.array(extra["log_std"], dtype=float)
    agent.make_optimizers()
    return agent, meta


def sample_action(agent: Agent, state, rng, greedy=False):
    return agent.act(state, rng, greedy)


@dataclass
class StateBuilder:
    """Observation for a case: standardized CSI or AE feature, plus last sum rate."""

    case: int
    scaler: Scaler | None = None
    encoder: Autoencoder | None = None

    def __post_init__(self):
        check_case(self.case)
        if self.case in FEATURE_CASES and self.encoder is None:
            raise ValueError(f"case {self.case} needs a trained encoder")
        if self.case not in FEATURE_CASES and self.scaler is None:
            raise ValueError(f"case {self.case} needs CSI standardization statistics")

    def __call__(self, ch: ChannelSet, prev_rate: float) -> np.ndarray:
        return build_state(self.case, ch, self.encoder, prev_rate, self.scaler)


def build_state(case: int, ch: ChannelSet, encoder: Autoencoder | None, prev_rate: float,
                scaler: Scaler | None = None) -> np.ndarray:
    check_case(case)
    if case in FEATURE_CASES and encoder is None:
        raise ValueError(f"case {case} needs a trained encoder")
    csi = flatten_csi(ch)
    if case in FEATURE_CASES:
        obs = encoder.encode(csi)
    else:
        obs = scaler.transform(csi) if scaler is not None else csi
    return np.append(obs, prev_rate)


@dataclass
class ReconPair:
    transmit: ReconNet
    receive: ReconNet


def action_to_solution(action, case: int, recon: ReconPair | None, config: SystemConfig) -> BeamformingSolution:
    check_case(case)
    K, L, nt, nr = config.n_users, config.n_targets, config.n_tx, config.n_rx
    if case in DIRECT_CASES:
        idx = np.asarray(action)
        tx = idx[:(K + L) * nt].reshape(K + L, nt)
        rx = idx[(K + L) * nt:].reshape(L, nr)
        return quantized_phase_beamformer(tx, rx, np.full(K + L, 1.0 / (K + L)), config)
    if recon is None:
        raise ValueError(f"case {case} needs reconstruction networks")
    pats = np.asarray(action, dtype=float).reshape(K + 2 * L, config.angle_samples)
    tx_p, rx_p = pats[:K + L], pats[K + L:]
    x = reconstruct(recon.transmit, tx_p)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raw = recon.transmit.raw(tx_p)
        fallback = raw / np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-300)
        x = np.where(norms > 0, x / np.where(norms > 0, norms, 1), fallback)
    else:
        x = x / norms
    weight = tx_p.mean(axis=1)
    if weight.sum() <= 0:
        weight = np.ones(K + L)
    power = config.p_max * weight / weight.sum()
    x = x * np.sqrt(power)[:, None]
    u = reconstruct(recon.receive, rx_p)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return BeamformingSolution(w=x[:K], v=x[K:], u=u)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    raw: np.ndarray
    log_prob: float
    reward: float
    next_state: np.ndarray | None
    report: RateReport

    @property
    def done(self) -> bool:
        return self.next_state is None


@dataclass
class Environment:
    config: SystemConfig
    case: int
    states: StateBuilder
    recon: ReconPair | None = None

    def solution(self, action) -> BeamformingSolution:
        return action_to_solution(action, self.case, self.recon, self.config)


def run_episode(env: Environment, policy, episode_len: int, rng: np.random.Generator,
                on_rollout=None, rollout_len: int | None = None):
    """Roll out one episode with fresh i.i.d. channels each step.

    ``policy(state, rng)`` returns ``(action, raw, log_prob, ...)``. When
    ``on_rollout`` is given it is called with each chunk of ``rollout_len``
    transitions as soon as the chunk is complete.
    """
    transitions: list[Transition] = []
    if episode_len <= 0:
        return transitions, 0.0
    chunk = rollout_len or episode_len
    prev_rate = 0.0
    ch = sample_scenario(env.config, rng)
    state = env.states(ch, prev_rate)
    start = 0
    for t in range(episode_len):
        action, raw, logp = policy(state, rng)[:3]
        report = evaluate_rates(ch, env.solution(action), env.config)
        r = reward(report, env.config)
        prev_rate = report.sum_comm
        if t + 1 < episode_len:
            ch = sample_scenario(env.config, rng)
            next_state = env.states(ch, prev_rate)
        else:
            next_state = None
        transitions.append(Transition(state, action, raw, logp, r, next_state, report))
        state = next_state
        if on_rollout is not None and (len(transitions) - start == chunk or next_state is None):
            on_rollout(transitions[start:])
            start = len(transitions)
    return transitions, float(sum(tr.reward for tr in transitions))


def compute_advantages(critic: Network, transitions: list[Transition], discount: float):
    """TD(0) advantages ``r + gamma V(s') - V(s)`` with zero bootstrap at episode end."""
    S = np.stack([tr.state for tr in transitions])
    r = np.array([tr.reward for tr in transitions])
    nxt = [i for i, tr in enumerate(transitions) if not tr.done]
    v_next = np.zeros(len(transitions))
    if nxt:
        v_next[nxt] = critic(np.stack([transitions[i].next_state for i in nxt]))[:, 0]
    v = critic(S)[:, 0]
    return r + discount * v_next - v, v


@dataclass
class UpdateInfo:
    actor_loss: float
    critic_loss: float
    mean_advantage: float
    actor_grads: list = field(default_factory=list, repr=False)
    critic_grads: list = field(default_factory=list, repr=False)
    policy_grads: list = field(default_factory=list, repr=False)


def a2c_gradients(agent: Agent, transitions: list[Transition]) -> UpdateInfo:
    if not transitions:
        raise ValueError("a2c update needs at least one transition")
    spec = agent.spec
    S = np.stack([tr.state for tr in transitions])
    adv, _ = compute_advantages(agent.critic, transitions, spec.discount)
    # critic: semi-gradient on value_coef * mean(delta^2)
    v, c_cache = agent.critic.forward(S, train=True)
    B = len(transitions)
    critic_loss = spec.value_coef * float(np.mean(adv ** 2))
    critic_grads, _ = agent.critic.backward(c_cache, (-2.0 * spec.value_coef * adv / B)[:, None])
    out, a_cache = agent.actor.forward(S, train=True)
    raw = np.stack([np.asarray(tr.raw) for tr in transitions])
    actor_loss, g_out, policy_grads = agent.policy.loss_grads(out, raw, adv, spec.entropy_coef)
    actor_grads, _ = agent.actor.backward(a_cache, g_out)
    return UpdateInfo(actor_loss, critic_loss, float(adv.mean()), actor_grads, critic_grads, policy_grads)


def a2c_update(agent: Agent, transitions: list[Transition]) -> UpdateInfo:
    """One Adam step on actor (and log-std) and critic from a batch of transitions."""
    info = a2c_gradients(agent, transitions)
    agent.actor_opt.step(info.actor_grads)
    agent.critic_opt.step(info.critic_grads)
    if agent.policy_opt is not None:
        agent.policy_opt.step(info.policy_grads)
    return info


@dataclass
class EpisodeRow:
    episode: int
    reward_sum: float
    mean_comm_rate: float
    min_sensing_rate: float
    feasible_fraction: float
    actor_loss: float
    critic_loss: float
    wallclock_s: float


LOG_COLUMNS = ("episode", "reward_sum", "mean_comm_rate", "min_sensing_rate", "feasible_fraction",
               "actor_loss", "critic_loss", "wallclock_s")


def episode_row(i, transitions, infos, wall) -> EpisodeRow:
    if transitions:
        comm = float(np.mean([tr.report.sum_comm for tr in transitions]))
        sen = float(min(tr.report.sensing_rates.min() for tr in transitions))
        feas = float(np.mean([tr.report.feasible_sen and tr.report.feasible_com for tr in transitions]))
        total = float(sum(tr.reward for tr in transitions))
    else:
        comm = sen = feas = total = 0.0
    al = float(np.mean([x.actor_loss for x in infos])) if infos else 0.0
    cl = float(np.mean([x.critic_loss for x in infos])) if infos else 0.0
    return EpisodeRow(i, total, comm, sen, feas, al, cl, wall)


def agent_policy(agent: Agent, greedy=False):
    def policy(state, rng):
        return agent.act(state, rng, greedy)
    return policy


def random_policy(case: int, config: SystemConfig):
    """Uniform random actions: phase indices, or pattern samples in [0, max gain]."""
    lay = action_layout(config)
    gains = pattern_gains(config)

    def policy(state, rng):
        if case in DIRECT_CASES:
            a = rng.integers(0, PHASE_LEVELS, lay["phase_slots"])
        else:
            a = gains * rng.uniform(size=gains.size)
        return a, a, 0.0
    return policy


def train_agent(agent: Agent, env: Environment, episodes: int, episode_len: int,
                rng: np.random.Generator, clock=None, callback=None) -> list[EpisodeRow]:
    """Alternate rollouts and A2C updates; one log row per episode."""
    import time

    clock = clock or time.perf_counter
    rows: list[EpisodeRow] = []
    t0 = clock()
    for ep in range(episodes):
        infos: list[UpdateInfo] = []
        transitions, _ = run_episode(env, agent_policy(agent), episode_len, rng,
                                     on_rollout=lambda chunk: infos.append(a2c_update(agent, chunk)),
                                     rollout_len=agent.spec.rollout_len)
        rows.append(episode_row(ep, transitions, infos, clock() - t0))
        if callback is not None:
            callback(rows[-1])
    return rows
