"""PPO machinery for the hybrid allocator: generalized advantage estimation,
clipped surrogate and TD critic losses with exact gradients, the continuous
phase agent, the N per-subcarrier agents with a centralized critic, and the
two-stage transfer-learning trainer.

Stage one trains on the scaled minimum user rate; stage two reloads the phase
agent from the stage-one checkpoint and continues on the negative-backlog
reward. One episode fills the rollout buffer exactly, after which both agents
run their clipped-PPO epochs and the buffer is cleared.
"""

import os

import numpy as np
from dataclasses import dataclass, field

from .config import ConfigError, NetConfig, PpoConfig
from .nn import (
    Adam,
    CategoricalHead,
    GaussianHead,
    Mlp,
    clip_grad_norm,
    load_archive,
    phase_squash,
    save_archive,
)


# ---------------------------------------------------------------------------
# estimation and losses


def gae(rewards, values, next_values, dones, discount, gae_lambda):
    """Truncated GAE: A_t = sum_l (discount*lambda)^l * delta_{t+l}.

    delta_t = r_t + discount * V(s_{t+1}) * (1 - done_t) - V(s_t); the
    accumulation restarts after a done flag. Returns (advantages,
    advantages + values).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not (rewards.shape == values.shape == next_values.shape == dones.shape):
        raise ValueError("gae inputs must share one shape")
    adv = np.zeros_like(rewards)
    last = 0.0
    for t in range(rewards.size - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + discount * next_values[t] * nonterminal - values[t]
        last = delta + discount * gae_lambda * nonterminal * last
        adv[t] = last
    return adv, adv + values


def _surrogate_terms(logp_new, logp_old, advantages, clip_epsilon):
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    surr = np.minimum(unclipped, clipped)
    # gradient flows through the ratio whenever the unclipped branch is
    # selected or the ratio sits inside the clip interval (branches coincide)
    inside = (ratio >= 1.0 - clip_epsilon) & (ratio <= 1.0 + clip_epsilon)
    active = (unclipped <= clipped) | inside
    dlogp = np.where(active, unclipped, 0.0)
    return surr, dlogp, ratio


def clipped_loss(logp_new, logp_old, advantages, clip_epsilon, entropy,
                 entropy_coef):
    """Negated clipped surrogate plus entropy bonus (a scalar to minimize)."""
    surr, _, _ = _surrogate_terms(np.asarray(logp_new), np.asarray(logp_old),
                                  np.asarray(advantages), clip_epsilon)
    return float(-(np.mean(surr) + entropy_coef * np.mean(entropy)))


def clipped_loss_grads(logp_new, logp_old, advantages, clip_epsilon,
                       entropy, entropy_coef):
    """clipped_loss value plus d/dlogp_new and d/dentropy (per sample)."""
    logp_new = np.asarray(logp_new, dtype=float)
    batch = logp_new.size
    surr, dlogp, ratio = _surrogate_terms(
        logp_new, np.asarray(logp_old), np.asarray(advantages), clip_epsilon)
    loss = float(-(np.mean(surr) + entropy_coef * np.mean(entropy)))
    dlogp_new = -dlogp / batch
    dentropy = -entropy_coef / np.size(entropy)
    return loss, dlogp_new, dentropy, ratio


def critic_loss(values_pred, rewards, next_values, discount):
    """Mean squared TD error (r + discount * V(s') - V(s))^2."""
    target = np.asarray(rewards, dtype=float) + discount * np.asarray(
        next_values, dtype=float)
    err = target - np.asarray(values_pred, dtype=float)
    return float(np.mean(err ** 2))


def critic_loss_grads(values_pred, targets):
    err = np.asarray(values_pred, dtype=float) - np.asarray(targets, dtype=float)
    loss = float(np.mean(err ** 2))
    return loss, 2.0 * err / err.size


def _check_finite(name, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise RuntimeError(f"non-finite values in {name}; update aborted")


# ---------------------------------------------------------------------------
# rollout storage


class RolloutBuffer:
    """One episode's transitions for both agents (shared reward stream)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.clear()

    def clear(self):
        self.states = []
        self.pre_actions = []
        self.logp_theta = []
        self.values_theta = []
        self.obs = []
        self.critic_states = []
        self.actions = []
        self.logp_n = []
        self.values_n = []
        self.rewards = []
        self.dones = []
        self.bootstrap_theta = 0.0
        self.bootstrap_n = 0.0

    def __len__(self):
        return len(self.rewards)

    def add(self, state_vec, pre_action, logp_theta, value_theta, obs_vecs,
            critic_vec, actions, logp_n, value_n, reward, done):
        if len(self) >= self.capacity:
            raise RuntimeError("rollout buffer is full")
        self.states.append(state_vec)
        self.pre_actions.append(pre_action)
        self.logp_theta.append(logp_theta)
        self.values_theta.append(value_theta)
        self.obs.append(obs_vecs)
        self.critic_states.append(critic_vec)
        self.actions.append(actions)
        self.logp_n.append(logp_n)
        self.values_n.append(value_n)
        self.rewards.append(reward)
        self.dones.append(done)

    def set_bootstrap(self, value_theta, value_n):
        self.bootstrap_theta = float(value_theta)
        self.bootstrap_n = float(value_n)

    def _next_values(self, values, bootstrap):
        return np.append(values[1:], bootstrap)

    def theta_arrays(self):
        values = np.asarray(self.values_theta, dtype=float)
        return {
            "states": np.asarray(self.states, dtype=float),
            "pre_actions": np.asarray(self.pre_actions, dtype=float),
            "logp_old": np.asarray(self.logp_theta, dtype=float),
            "values": values,
            "next_values": self._next_values(values, self.bootstrap_theta),
            "rewards": np.asarray(self.rewards, dtype=float),
            "dones": np.asarray(self.dones, dtype=float),
        }

    def n_arrays(self):
        values = np.asarray(self.values_n, dtype=float)
        return {
            "obs": np.asarray(self.obs, dtype=float),
            "critic_states": np.asarray(self.critic_states, dtype=float),
            "actions": np.asarray(self.actions, dtype=int),
            "logp_old": np.asarray(self.logp_n, dtype=float),
            "values": values,
            "next_values": self._next_values(values, self.bootstrap_n),
            "rewards": np.asarray(self.rewards, dtype=float),
            "dones": np.asarray(self.dones, dtype=float),
        }


# ---------------------------------------------------------------------------
# agents


class PpoTheta:
    """Continuous agent: squashed-Gaussian phase policy plus a state critic."""

    def __init__(self, state_dim, num_elements, net: NetConfig, cfg: PpoConfig,
                 rng):
        self.actor = Mlp([state_dim] + list(net.theta_hidden) + [num_elements],
                         rng, net.activation,
                         output_scale=net.policy_output_scale)
        self.head = GaussianHead(num_elements, net.std_init,
                                 (net.std_min, net.std_max))
        self.critic = Mlp([state_dim] + list(net.critic_hidden) + [1], rng,
                          net.activation)
        self.opt_actor = Adam(self.actor.params + [self.head.log_std],
                              cfg.actor_lr)
        self.opt_critic = Adam(self.critic.params, cfg.critic_lr)

    def act(self, state_vec, rng, deterministic=False):
        """Returns (phases, pre_action, logp, value)."""
        mean, _ = self.actor.forward(state_vec)
        if deterministic:
            u = mean.copy()
        else:
            u = self.head.sample_pre_action(mean, rng)
        logp, _, _ = self.head.log_prob(mean[None, :], u[None, :])
        value, _ = self.critic.forward(state_vec)
        return phase_squash(u), u, float(logp[0]), float(value[0])

    def value(self, state_vec):
        value, _ = self.critic.forward(state_vec)
        return float(value[0])

    def state_arrays(self):
        out = self.actor.state_arrays("theta_actor")
        out.update(self.critic.state_arrays("theta_critic"))
        out["theta_log_std"] = self.head.log_std
        return out

    def load_state_arrays(self, arrays):
        self.actor.load_state_arrays(arrays, "theta_actor")
        self.critic.load_state_arrays(arrays, "theta_critic")
        log_std = arrays["theta_log_std"]
        if log_std.shape != self.head.log_std.shape:
            raise ValueError("log_std shape mismatch")
        self.head.log_std = log_std.astype(float)
        self.opt_actor = Adam(self.actor.params + [self.head.log_std],
                              self.opt_actor.lr)
        self.opt_critic = Adam(self.critic.params, self.opt_critic.lr)


class PpoN:
    """N discrete per-subcarrier agents sharing one centralized critic."""

    def __init__(self, obs_dim, critic_dim, num_agents, num_users,
                 net: NetConfig, cfg: PpoConfig, rng):
        self.num_agents = num_agents
        self.num_users = num_users
        self.shared = cfg.share_agent_weights
        count = 1 if self.shared else num_agents
        self.actors = [Mlp([obs_dim] + list(net.agent_hidden) + [num_users],
                           rng, net.activation,
                           output_scale=net.policy_output_scale)
                       for _ in range(count)]
        self.critic = Mlp([critic_dim] + list(net.critic_hidden) + [1], rng,
                          net.activation)
        self.opt_actors = [Adam(a.params, cfg.actor_lr) for a in self.actors]
        self.opt_critic = Adam(self.critic.params, cfg.critic_lr)

    def actor_for(self, agent_index):
        return self.actors[0 if self.shared else agent_index]

    def act(self, obs_vecs, critic_vec, rng, deterministic=False):
        """Returns (owner, logp per agent, centralized value)."""
        owner = np.zeros(self.num_agents, dtype=int)
        logps = np.zeros(self.num_agents)
        for n in range(self.num_agents):
            logits, _ = self.actor_for(n).forward(obs_vecs[n])
            if deterministic:
                choice = int(np.argmax(logits))
            else:
                choice = int(CategoricalHead.sample(logits[None, :], rng)[0])
            logp, _ = CategoricalHead.log_prob(logits[None, :], [choice])
            owner[n] = choice
            logps[n] = logp[0]
        value, _ = self.critic.forward(critic_vec)
        return owner, logps, float(value[0])

    def value(self, critic_vec):
        value, _ = self.critic.forward(critic_vec)
        return float(value[0])

    def state_arrays(self):
        out = {}
        for i, actor in enumerate(self.actors):
            out.update(actor.state_arrays(f"n_actor{i}"))
        out.update(self.critic.state_arrays("n_critic"))
        return out

    def load_state_arrays(self, arrays):
        for i, actor in enumerate(self.actors):
            actor.load_state_arrays(arrays, f"n_actor{i}")
        self.critic.load_state_arrays(arrays, "n_critic")
        self.opt_actors = [Adam(a.params, self.opt_actors[0].lr)
                           for a in self.actors]
        self.opt_critic = Adam(self.critic.params, self.opt_critic.lr)


# ---------------------------------------------------------------------------
# updates


def _minibatches(total, size, rng):
    order = rng.permutation(total)
    for start in range(0, total, size):
        yield order[start:start + size]


def _normalized(adv, enabled):
    if not enabled:
        return adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def update_ppo_theta(buffer: RolloutBuffer, agent: PpoTheta, cfg: PpoConfig,
                     rng):
    """Clipped-PPO epochs for the phase agent; returns update metrics."""
    data = buffer.theta_arrays()
    adv, _ = gae(data["rewards"], data["values"], data["next_values"],
                 data["dones"], cfg.discount, cfg.gae_lambda)
    adv = _normalized(adv, cfg.normalize_advantages)
    targets = data["rewards"] + cfg.discount * data["next_values"] * (
        1.0 - data["dones"])
    total = len(buffer)
    ent_coef = (cfg.entropy_coef if cfg.entropy_coef_theta is None
                else cfg.entropy_coef_theta)

    actor_losses, critic_losses = [], []
    for _ in range(cfg.update_epochs):
        for idx in _minibatches(total, cfg.minibatch_size, rng):
            states = data["states"][idx]
            mean, cache = agent.actor.forward(states)
            logp_new, dmean_unit, dls_unit = agent.head.log_prob(
                mean, data["pre_actions"][idx])
            entropy, dh_ls = agent.head.entropy()
            loss, dlogp, dent, _ = clipped_loss_grads(
                logp_new, data["logp_old"][idx], adv[idx], cfg.clip_epsilon,
                entropy, ent_coef)
            _check_finite("ppo-theta actor loss", np.array([loss]), dlogp)
            dmean = dlogp[:, None] * dmean_unit
            grads, _ = agent.actor.backward(cache, dmean)
            dlog_std = (dlogp[:, None] * dls_unit).sum(axis=0) + dent * dh_ls
            grads = grads + [dlog_std]
            grads, _ = clip_grad_norm(grads, cfg.grad_clip)
            agent.opt_actor.step(agent.actor.params + [agent.head.log_std],
                                 grads)
            agent.head.clamp()
            actor_losses.append(loss)

            pred, vcache = agent.critic.forward(states)
            closs, dpred = critic_loss_grads(pred[:, 0], targets[idx])
            _check_finite("ppo-theta critic loss", np.array([closs]), dpred)
            vgrads, _ = agent.critic.backward(vcache, dpred[:, None])
            vgrads, _ = clip_grad_norm(vgrads, cfg.grad_clip)
            agent.opt_critic.step(agent.critic.params, vgrads)
            critic_losses.append(closs)

    mean_final, _ = agent.actor.forward(data["states"])
    logp_final, _, _ = agent.head.log_prob(mean_final, data["pre_actions"])
    ratios = np.exp(logp_final - data["logp_old"])
    entropy, _ = agent.head.entropy()
    return {
        "actor_loss": float(np.mean(actor_losses)),
        "critic_loss": float(np.mean(critic_losses)),
        "entropy": float(entropy),
        "mean_ratio": float(np.mean(ratios)),
        "mean_reward": float(np.mean(data["rewards"])),
    }


def update_ppo_n(buffer: RolloutBuffer, agents: PpoN, cfg: PpoConfig, rng):
    """Per-agent clipped-PPO epochs with the shared centralized advantage."""
    data = buffer.n_arrays()
    adv, _ = gae(data["rewards"], data["values"], data["next_values"],
                 data["dones"], cfg.discount, cfg.gae_lambda)
    adv = _normalized(adv, cfg.normalize_advantages)
    critic_discount = 1.0 if cfg.ppo_n_literal_critic_target else cfg.discount
    targets = data["rewards"] + critic_discount * data["next_values"] * (
        1.0 - data["dones"])
    total = len(buffer)

    actor_losses, critic_losses, entropies = [], [], []
    for _ in range(cfg.update_epochs):
        for idx in _minibatches(total, cfg.minibatch_size, rng):
            for n in range(agents.num_agents):
                actor = agents.actor_for(n)
                logits, cache = actor.forward(data["obs"][idx, n])
                logp_new, dlogp_unit = CategoricalHead.log_prob(
                    logits, data["actions"][idx, n])
                entropy, dh = CategoricalHead.entropy(logits)
                loss, dlogp, dent, _ = clipped_loss_grads(
                    logp_new, data["logp_old"][idx, n], adv[idx],
                    cfg.clip_epsilon, entropy, cfg.entropy_coef)
                _check_finite("ppo-n actor loss", np.array([loss]), dlogp)
                dlogits = dlogp[:, None] * dlogp_unit + dent * dh
                grads, _ = actor.backward(cache, dlogits)
                grads, _ = clip_grad_norm(grads, cfg.grad_clip)
                agents.opt_actors[0 if agents.shared else n].step(
                    actor.params, grads)
                actor_losses.append(loss)
                entropies.append(float(np.mean(entropy)))

            states = data["critic_states"][idx]
            pred, vcache = agents.critic.forward(states)
            closs, dpred = critic_loss_grads(pred[:, 0], targets[idx])
            _check_finite("ppo-n critic loss", np.array([closs]), dpred)
            vgrads, _ = agents.critic.backward(vcache, dpred[:, None])
            vgrads, _ = clip_grad_norm(vgrads, cfg.grad_clip)
            agents.opt_critic.step(agents.critic.params, vgrads)
            critic_losses.append(closs)

    return {
        "actor_loss": float(np.mean(actor_losses)),
        "critic_loss": float(np.mean(critic_losses)),
        "entropy": float(np.mean(entropies)),
        "mean_reward": float(np.mean(data["rewards"])),
    }


# ---------------------------------------------------------------------------
# transfer schedule and trainer


@dataclass
class StagePlan:
    name: str
    load_checkpoint: str | None
    save_checkpoint: str

    def reward(self, record, cfg: PpoConfig) -> float:
        if self.name == "pretrain":
            return record.min_rate * cfg.rate_scale
        return record.reward * cfg.reward_scale


def transfer_schedule(stage: str) -> StagePlan:
    """Reward selector plus checkpoint actions for one training stage."""
    if stage == "pretrain":
        return StagePlan("pretrain", None, "stage1")
    if stage == "finetune":
        return StagePlan("finetune", "stage1", "stage2")
    raise ConfigError(f"unknown training stage '{stage}'")


def checkpoint_path(directory, name):
    return os.path.join(directory, f"{name}.npz")


def save_agents(path, theta: PpoTheta, agents: PpoN, manifest):
    arrays = theta.state_arrays()
    arrays.update(agents.state_arrays())
    save_archive(path, arrays, manifest)


def load_agents(path, theta: PpoTheta, agents: PpoN):
    arrays, manifest = load_archive(path)
    theta.load_state_arrays(arrays)
    agents.load_state_arrays(arrays)
    return manifest


class Trainer:
    """Runs the two-stage schedule on one environment instance."""

    def __init__(self, env, cfg, checkpoint_dir):
        from .env import RisOfdmEnv   # type only; avoids an import cycle

        self.env = env
        self.cfg = cfg
        self.checkpoint_dir = checkpoint_dir
        os.makedirs(checkpoint_dir, exist_ok=True)
        root = np.random.SeedSequence([cfg.seed, 0x5EED])
        action_ss, update_ss, net_ss = root.spawn(3)
        self.action_rng = np.random.default_rng(action_ss)
        self.update_rng = np.random.default_rng(update_ss)
        net_rng = np.random.default_rng(net_ss)
        self.theta = PpoTheta(env.state_dim, env.m, cfg.net, cfg.ppo, net_rng)
        self.agents = PpoN(env.obs_dim, env.critic_dim, env.n, env.k,
                           cfg.net, cfg.ppo, net_rng)
        self.buffer = RolloutBuffer(cfg.ppo.buffer_capacity)
        self.history = []
        self._episode_counter = 0

    def run_episode(self, plan: StagePlan, collect=True):
        """One full episode; returns its metrics row (and fills the buffer)."""
        seed = int(np.random.SeedSequence(
            [self.cfg.seed, self._episode_counter]).generate_state(1)[0])
        self._episode_counter += 1
        state = self.env.reset(seed)
        slots = self.cfg.scenario.episode_slots
        raw_return = 0.0
        min_rate_sum = 0.0
        for _ in range(slots):
            svec = self.env.state_vector(state)
            phases, u, logp_t, value_t = self.theta.act(svec, self.action_rng)
            obs, critic = self.env.observe_agents(state, phases)
            obs_vecs = np.stack([o.vector for o in obs])
            owner, logps_n, value_n = self.agents.act(
                obs_vecs, critic.vector, self.action_rng)
            reward_raw, state, record = self.env.step(phases, owner)
            raw_return += reward_raw
            min_rate_sum += record.min_rate
            if collect:
                self.buffer.add(svec, u, logp_t, value_t, obs_vecs,
                                critic.vector, owner, logps_n, value_n,
                                plan.reward(record, self.cfg.ppo), False)
        if collect:
            svec = self.env.state_vector(state)
            mean, _ = self.theta.actor.forward(svec)
            obs, critic = self.env.observe_agents(state, phase_squash(mean))
            self.buffer.set_bootstrap(self.theta.value(svec),
                                      self.agents.value(critic.vector))
        stats = self.env.ledger.delay_stats(self.cfg.traffic.slot_seconds)
        return {
            "return": raw_return,
            "min_rate_return": min_rate_sum,
            "mean_delay_ms": stats.avg_delay_ms,
            "jitter_ms": stats.jitter_ms,
            "episode_seed": seed,
        }

    def train_stage(self, stage: str, episodes: int):
        plan = transfer_schedule(stage)
        if plan.load_checkpoint is not None:
            path = checkpoint_path(self.checkpoint_dir, plan.load_checkpoint)
            if not os.path.exists(path):
                raise ConfigError(
                    f"stage '{stage}' needs checkpoint {path}; run the "
                    "pretrain stage first")
            arrays, _ = load_archive(path)
            self.theta.load_state_arrays(arrays)
        for episode in range(episodes):
            row = self.run_episode(plan)
            metrics_t = update_ppo_theta(self.buffer, self.theta,
                                         self.cfg.ppo, self.update_rng)
            metrics_n = update_ppo_n(self.buffer, self.agents, self.cfg.ppo,
                                     self.update_rng)
            self.buffer.clear()
            row.update({
                "stage": stage,
                "episode": episode,
                "actor_loss_theta": metrics_t["actor_loss"],
                "critic_loss_theta": metrics_t["critic_loss"],
                "entropy_theta": metrics_t["entropy"],
                "mean_ratio_theta": metrics_t["mean_ratio"],
                "actor_loss_n": metrics_n["actor_loss"],
                "critic_loss_n": metrics_n["critic_loss"],
                "entropy_n": metrics_n["entropy"],
            })
            self.history.append(row)
        path = checkpoint_path(self.checkpoint_dir, plan.save_checkpoint)
        save_agents(path, self.theta, self.agents, manifest={
            "stage": stage,
            "episodes": episodes,
            "state_dim": self.env.state_dim,
            "obs_dim": self.env.obs_dim,
            "critic_dim": self.env.critic_dim,
            "num_elements": self.env.m,
            "num_subcarriers": self.env.n,
            "num_users": self.env.k,
            "seed": self.cfg.seed,
        })
        return path

    def train(self):
        """Full schedule: pretrain on min-rate, reload, finetune on backlog."""
        self.train_stage("pretrain", self.cfg.ppo.pretrain_episodes)
        self.train_stage("finetune", self.cfg.ppo.episodes)
        return self.history
