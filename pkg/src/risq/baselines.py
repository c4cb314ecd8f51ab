"""Reference policies for paired-seed comparisons: random actions, direct-link
only (no RIS), a delay-blind throughput heuristic, and the learned agents in
deterministic evaluation mode."""

import numpy as np

from .channel import effective_channel
from .config import ConfigError
from .ppo import PpoN, PpoTheta, checkpoint_path, load_agents

POLICY_NAMES = ("random", "no_ris", "max_sum_rate", "max_min_rate", "proposed")


class RandomPolicy:
    """Uniform phases and uniform subcarrier owners."""

    name = "random"

    def __init__(self, rng):
        self.rng = rng

    def select(self, env, state):
        phases = self.rng.uniform(0.0, 2.0 * np.pi, env.m)
        owner = self.rng.integers(0, env.k, env.n)
        return phases, owner


class MaxSumRatePolicy:
    """Throughput heuristic: align each element's cascaded contribution with
    the direct channel of the strongest-direct-gain user (averaged over
    subcarriers), then give every subcarrier to its best-gain user."""

    name = "max_sum_rate"

    def select(self, env, state):
        freq = state.freq
        direct_gain = np.sum(np.abs(freq.direct) ** 2, axis=(1, 2))
        ref = int(np.argmax(direct_gain))
        phases = np.zeros(env.m)
        for m in range(env.m):
            overlap = np.sum(
                np.conj(freq.direct[ref]) * freq.cascaded[ref, :, m, :])
            phases[m] = -np.angle(overlap)
        phases = np.mod(phases, 2.0 * np.pi)
        h_eff = effective_channel(freq, phases)
        owner = np.argmax(np.sum(np.abs(h_eff) ** 2, axis=2), axis=0)
        return phases, owner


class WithoutRisPolicy:
    """Best-gain assignment on the direct channels; requires an M=0 system."""

    name = "no_ris"

    def select(self, env, state):
        if env.m != 0:
            raise ConfigError(
                "the no-RIS policy needs an environment with num_elements=0")
        owner = np.argmax(np.sum(np.abs(state.freq.direct) ** 2, axis=2),
                          axis=0)
        return np.zeros(0), owner


class LearnedPolicy:
    """Trained hybrid agents in deterministic (mean/argmax) action mode."""

    def __init__(self, name, theta: PpoTheta, agents: PpoN):
        self.name = name
        self.theta = theta
        self.agents = agents
        self._rng = np.random.default_rng(0)   # unused in deterministic mode

    def select(self, env, state):
        svec = env.state_vector(state)
        phases, _, _, _ = self.theta.act(svec, self._rng, deterministic=True)
        obs, critic = env.observe_agents(state, phases)
        obs_vecs = np.stack([o.vector for o in obs])
        owner, _, _ = self.agents.act(obs_vecs, critic.vector, self._rng,
                                      deterministic=True)
        return phases, owner

    @classmethod
    def from_checkpoint(cls, name, path, env, cfg):
        import os
        if not os.path.exists(path):
            raise ConfigError(f"policy '{name}' needs checkpoint {path}")
        net_rng = np.random.default_rng(0)
        theta = PpoTheta(env.state_dim, env.m, cfg.net, cfg.ppo, net_rng)
        agents = PpoN(env.obs_dim, env.critic_dim, env.n, env.k, cfg.net,
                      cfg.ppo, net_rng)
        load_agents(path, theta, agents)
        return cls(name, theta, agents)


def make_policy(name, env, cfg, seed=0, checkpoint_dir=None):
    """Instantiate a policy by its registered name."""
    if name == "random":
        return RandomPolicy(np.random.default_rng([seed, 0xA11]))
    if name == "max_sum_rate":
        return MaxSumRatePolicy()
    if name == "no_ris":
        return WithoutRisPolicy()
    if name in ("max_min_rate", "proposed"):
        if checkpoint_dir is None:
            raise ConfigError(f"policy '{name}' needs a checkpoint directory")
        stage = "stage1" if name == "max_min_rate" else "stage2"
        return LearnedPolicy.from_checkpoint(
            name, checkpoint_path(checkpoint_dir, stage), env, cfg)
    raise ConfigError(
        f"unknown policy '{name}'; expected one of {POLICY_NAMES}")
