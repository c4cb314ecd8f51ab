import numpy as np
import pytest

from risq.channel import effective_channel
from risq.config import RunConfig, desk_preset, from_dict, paper_preset, to_dict
from risq.env import EpisodeFinishedError, RisOfdmEnv


def small_cfg(**kw):
    cfg = desk_preset()
    cfg.scenario.episode_slots = kw.pop("episode_slots", 50)
    for key, value in kw.items():
        node = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            node = getattr(node, p)
        setattr(node, leaf, value)
    return from_dict(to_dict(cfg))


def random_actions(env, rng):
    phases = rng.uniform(0, 2 * np.pi, env.m)
    owner = rng.integers(0, env.k, env.n)
    return phases, owner


class TestReset:
    def test_seed_determinism(self):
        cfg = small_cfg()
        a = RisOfdmEnv(cfg).reset(seed=5)
        b = RisOfdmEnv(cfg).reset(seed=5)
        assert np.array_equal(a.freq.direct, b.freq.direct)
        assert np.array_equal(a.freq.cascaded, b.freq.cascaded)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.arrivals, b.arrivals)

    def test_backlog_equals_first_arrivals(self):
        state = RisOfdmEnv(small_cfg()).reset(seed=1)
        assert np.array_equal(state.q, state.arrivals)

    def test_paper_scale_state_length(self):
        cfg = paper_preset()
        env = RisOfdmEnv(cfg)
        assert env.state_dim == 2 * 3 * 16 * 4 * (64 + 1) + 2 * 3 == 24966
        state = env.reset(seed=0)
        assert env.state_vector(state).size == env.state_dim


class TestStep:
    def test_saturation_limit_reward_is_minus_arrivals(self):
        cfg = small_cfg(**{"phy.p_max_dbm": 80.0,
                           "traffic.lambda_per_slot": 0.3})
        env = RisOfdmEnv(cfg)
        env.reset(seed=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            reward, state, rec = env.step(*random_actions(env, rng))
            assert reward == -rec.arrivals.sum()
            assert np.array_equal(state.q, rec.arrivals)

    def test_no_service_limit(self):
        cfg = small_cfg(**{"phy.p_max_dbm": -400.0})
        env = RisOfdmEnv(cfg)
        state = env.reset(seed=3)
        q_prev = state.q.copy()
        rewards = []
        rng = np.random.default_rng(1)
        for _ in range(20):
            reward, state, rec = env.step(*random_actions(env, rng))
            assert np.array_equal(state.q, q_prev + rec.arrivals)
            q_prev = state.q.copy()
            rewards.append(reward)
        diffs = np.diff(rewards)
        assert np.all(diffs <= 0)
        assert np.any(diffs < 0)

    def test_reward_matches_trace_replay(self):
        env = RisOfdmEnv(small_cfg())
        env.reset(seed=4)
        rng = np.random.default_rng(2)
        rewards = [env.step(*random_actions(env, rng))[0] for _ in range(50)]
        replay = [-rec.q.sum() for rec in env.trace]
        assert rewards == replay

    def test_power_budget_every_slot(self):
        env = RisOfdmEnv(small_cfg())
        env.reset(seed=5)
        rng = np.random.default_rng(3)
        for _ in range(50):
            env.step(*random_actions(env, rng))
        p_max = env.cfg.phy.p_max_w
        for rec in env.trace:
            assert rec.power.sum() <= p_max + 1e-9
            assert np.all(rec.power >= 0)

    def test_step_after_episode_end_raises(self):
        env = RisOfdmEnv(small_cfg(episode_slots=3))
        env.reset(seed=6)
        rng = np.random.default_rng(4)
        for _ in range(3):
            env.step(*random_actions(env, rng))
        with pytest.raises(EpisodeFinishedError):
            env.step(*random_actions(env, rng))

    def test_episode_return_equals_backlog_integral(self):
        env = RisOfdmEnv(small_cfg())
        env.reset(seed=7)
        rng = np.random.default_rng(5)
        total = sum(env.step(*random_actions(env, rng))[0] for _ in range(50))
        assert total == -sum(rec.q.sum() for rec in env.trace)


class TestBurstInjection:
    def test_burst_adds_exact_packet_count(self):
        cfg = small_cfg()
        cfg.scenario.burst_injections = [[10, 1, 37]]
        env = RisOfdmEnv(cfg)
        env.reset(seed=8)
        rng = np.random.default_rng(6)

        plain = RisOfdmEnv(small_cfg())
        plain.reset(seed=8)
        rng2 = np.random.default_rng(6)
        for _ in range(20):
            env.step(*random_actions(env, rng))
            plain.step(*random_actions(plain, rng2))
        burst_arrivals = env.trace[9].arrivals
        plain_arrivals = plain.trace[9].arrivals
        assert burst_arrivals[1] - plain_arrivals[1] == 37
        assert burst_arrivals[0] == plain_arrivals[0]
        assert (env.ledger.total_arrivals.sum()
                == plain.ledger.total_arrivals.sum() + 37)


class TestStateFeatures:
    def test_flatten_round_trip(self):
        env = RisOfdmEnv(small_cfg())
        state = env.reset(seed=9)
        vec = env.state_vector(state)
        d, c, q, arrivals = env.unflatten_state(vec)
        assert np.max(np.abs(d - state.freq.direct)) < 1e-9
        assert np.max(np.abs(c - state.freq.cascaded)) < 1e-9
        assert np.allclose(q, state.q, atol=1e-9)
        assert np.allclose(arrivals, state.arrivals, atol=1e-9)

    def test_observation_consistency_with_critic(self):
        env = RisOfdmEnv(small_cfg())
        state = env.reset(seed=10)
        phases = np.random.default_rng(7).uniform(0, 2 * np.pi, env.m)
        obs, critic = env.observe_agents(state, phases)
        assert len(obs) == env.n
        for o in obs:
            assert np.array_equal(o.h_eff_rows,
                                  critic.h_eff[:, o.subcarrier, :])
            assert o.vector.size == env.obs_dim
        assert critic.vector.size == env.critic_dim

    def test_observation_matches_recomposed_channel(self):
        env = RisOfdmEnv(small_cfg())
        state = env.reset(seed=11)
        phases = np.random.default_rng(8).uniform(0, 2 * np.pi, env.m)
        obs, critic = env.observe_agents(state, phases)
        h = effective_channel(state.freq, phases)
        assert np.max(np.abs(critic.h_eff - h)) < 1e-12
        for o in obs:
            block = o.vector[:2 * env.k * env.nt]
            rows = h[:, o.subcarrier, :] * env.scale_direct
            want = np.concatenate([rows.real.ravel(), rows.imag.ravel()])
            assert np.max(np.abs(block - want)) < 1e-12

    def test_m_zero_observations_are_direct_only(self):
        cfg = small_cfg(**{"system.num_elements": 0})
        env = RisOfdmEnv(cfg)
        state = env.reset(seed=12)
        obs, critic = env.observe_agents(state, np.zeros(0))
        assert np.array_equal(critic.h_eff, state.freq.direct)
        assert env.state_dim == 2 * env.k * env.n * env.nt + 2 * env.k


class TestPairedStreams:
    def test_direct_and_arrivals_shared_across_m(self):
        base = small_cfg()
        no_ris = small_cfg(**{"system.num_elements": 0})
        env_a = RisOfdmEnv(base)
        env_b = RisOfdmEnv(no_ris)
        sa = env_a.reset(seed=13)
        sb = env_b.reset(seed=13)
        assert np.array_equal(sa.freq.direct, sb.freq.direct)
        assert np.array_equal(sa.arrivals, sb.arrivals)
        rng_a = np.random.default_rng(9)
        rng_b = np.random.default_rng(9)
        for _ in range(10):
            _, sa, ra = env_a.step(*random_actions(env_a, rng_a))
            _, sb, rb = env_b.step(*random_actions(env_b, rng_b))
            assert np.array_equal(sa.freq.direct, sb.freq.direct)
            assert np.array_equal(ra.arrivals, rb.arrivals)


class TestLambdaGap:
    def test_gap_offsets_applied(self):
        cfg = small_cfg()
        cfg.scenario.lambda_gap = [0.5, -0.5]
        env = RisOfdmEnv(cfg)
        base = np.broadcast_to(cfg.traffic.lambda_per_slot, (2,))
        assert np.allclose(env.traffic_cfg.lambda_per_slot,
                           base + np.array([0.5, -0.5]))

    def test_negative_rate_rejected(self):
        cfg = small_cfg()
        cfg.scenario.lambda_gap = [0.0, -100.0]
        with pytest.raises(ValueError):
            RisOfdmEnv(cfg)
