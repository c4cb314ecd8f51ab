"""Slot-level MDP for the downlink: states assemble CSI plus queue features,
actions are (phase vector, subcarrier ownership), and the reward is the
negative total backlog after the slot's service and arrivals.

Per slot the ordering is: transmit with the current channel (MRT +
water-filling over the chosen owners), deliver up to the backlog, admit the
slot's arrivals (plus any configured burst), compute the reward, then redraw
the channel for the next slot.
"""

import numpy as np
from dataclasses import dataclass

from . import channel as ch
from . import traffic as tr
from .config import RunConfig
from .phy import Assignment, evaluate_link


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass
class GlobalState:
    """Decision-time state: frequency channels plus queue features."""

    freq: ch.FrequencyChannel
    q: np.ndarray
    arrivals: np.ndarray
    slot: int


@dataclass
class AgentObservation:
    """One subcarrier's view: effective rows for all users plus q and
    arrivals, pre-scaled into the shared feature vector."""

    subcarrier: int
    h_eff_rows: np.ndarray        # (K, Nt) complex
    vector: np.ndarray


@dataclass
class CriticState:
    """Centralized-critic input: all effective channels plus queue features."""

    h_eff: np.ndarray             # (K, N, Nt) complex
    vector: np.ndarray


@dataclass
class SlotRecord:
    slot: int
    rates: np.ndarray             # (K,) bit/s
    delivered: np.ndarray         # (K,)
    q: np.ndarray                 # (K,) backlog after service + arrivals
    arrivals: np.ndarray          # (K,)
    power: np.ndarray             # (N,) W
    owner: np.ndarray             # (N,)
    phases: np.ndarray            # (M,)
    reward: float
    min_rate: float


class RisOfdmEnv:
    """One rollout worker's environment instance; single-owner mutable."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.k = cfg.system.num_users
        self.nt = cfg.system.num_antennas
        self.m = cfg.system.num_elements
        self.n = cfg.system.num_subcarriers
        if self.n < cfg.fading.tap_span:
            raise ValueError("num_subcarriers must cover the tap span")

        lam = np.broadcast_to(
            np.atleast_1d(np.asarray(cfg.traffic.lambda_per_slot, dtype=float)),
            (self.k,)).copy()
        if cfg.scenario.lambda_gap is not None:
            gap = np.asarray(cfg.scenario.lambda_gap, dtype=float)
            if gap.size != self.k:
                raise ValueError("lambda_gap length must equal num_users")
            lam = lam + gap
            if np.any(lam < 0):
                raise ValueError("lambda_gap drives an arrival rate negative")
        self.traffic_cfg = tr.TrafficConfig(
            lambda_per_slot=lam, packet_bits=cfg.traffic.packet_bits,
            slot_seconds=cfg.traffic.slot_seconds)

        self._bursts = {}
        for slot, user, count in cfg.scenario.burst_injections:
            key = int(slot)
            self._bursts.setdefault(key, np.zeros(self.k, dtype=int))
            self._bursts[key][int(user)] += int(count)

        g = cfg.geometry
        self.bs_position = np.array([0.0, 0.0])
        self.ris_position = np.array([g.d2_m, g.d1_m])
        center_radius = 0.5 * (g.inner_radius_m + g.outer_radius_m)
        toward_bs = self.bs_position - self.ris_position
        center = self.ris_position + center_radius * toward_bs / np.linalg.norm(toward_bs)
        beta_direct = ch.path_loss(np.linalg.norm(center - self.bs_position),
                                   cfg.fading.xi_direct, cfg.fading)
        self.scale_direct = 1.0 / np.sqrt(beta_direct)
        if self.m > 0:
            beta_br = ch.path_loss(np.linalg.norm(self.ris_position),
                                   cfg.fading.xi_bs_ris, cfg.fading)
            beta_ru = ch.path_loss(center_radius, cfg.fading.xi_ris_user,
                                   cfg.fading)
            self.scale_cascaded = 1.0 / np.sqrt(beta_br * beta_ru)
        else:
            self.scale_cascaded = 1.0
        self.q_scale = cfg.q_scale

        self.ledger = None
        self.trace = []
        self._slot = 0
        self._freq = None
        self._geom = None

    # -- dimensions ------------------------------------------------------

    @property
    def state_dim(self) -> int:
        return 2 * self.k * self.n * self.nt * (self.m + 1) + 2 * self.k

    @property
    def obs_dim(self) -> int:
        return 2 * self.k * self.nt + 2 * self.k

    @property
    def critic_dim(self) -> int:
        return 2 * self.k * self.n * self.nt + 2 * self.k

    # -- episode control --------------------------------------------------

    def reset(self, seed) -> GlobalState:
        ss = np.random.SeedSequence(seed)
        kids = ss.spawn(4)
        self._rng_direct = np.random.default_rng(kids[0])
        self._rng_ris = np.random.default_rng(kids[1])
        self._rng_traffic = np.random.default_rng(kids[2])
        self._rng_positions = np.random.default_rng(kids[3])

        self._sample_geometry()
        self._sample_channel(slot_index=1)
        self.ledger = tr.PacketLedger(self.k)
        first = tr.sample_arrivals(self.traffic_cfg, self._rng_traffic)
        self.ledger.add_arrivals(first, slot=0)
        self.trace = []
        self._slot = 0
        self._last_arrivals = first
        return self._make_state()

    def step(self, phases, owner):
        """Apply one slot's hybrid action; returns (reward, state, record)."""
        if self.ledger is None:
            raise RuntimeError("call reset() before step()")
        if self._slot >= self.cfg.scenario.episode_slots:
            raise EpisodeFinishedError(
                f"episode of {self.cfg.scenario.episode_slots} slots is over")
        slot = self._slot + 1
        phases = ch.canonicalize_phases(phases)
        assign = Assignment(owner, self.k)
        lq, alloc = evaluate_link(
            self._freq, phases, assign, self.cfg.phy.noise_power_w,
            self.cfg.phy.p_max_w, self.cfg.phy.subcarrier_bandwidth_hz)
        can_deliver = tr.deliverable(lq.rate_per_user, self.traffic_cfg)

        arrivals = tr.sample_arrivals(self.traffic_cfg, self._rng_traffic)
        if slot in self._bursts:
            arrivals = arrivals + self._bursts[slot]
        delivered = self.ledger.step(can_deliver, arrivals, slot)
        reward = -float(self.ledger.q.sum())

        record = SlotRecord(
            slot=slot, rates=lq.rate_per_user.copy(), delivered=delivered,
            q=self.ledger.q.copy(), arrivals=arrivals.copy(), power=alloc.p,
            owner=assign.owner.copy(), phases=phases, reward=reward,
            min_rate=float(lq.rate_per_user.min()))
        self.trace.append(record)

        self._slot = slot
        self._last_arrivals = arrivals
        if self.cfg.scenario.positions_mode == "per_step":
            self._sample_geometry()
        self._sample_channel(slot_index=slot + 1)
        return reward, self._make_state(), record

    # -- feature construction ----------------------------------------------

    def state_vector(self, state: GlobalState) -> np.ndarray:
        d = state.freq.direct * self.scale_direct
        c = state.freq.cascaded * self.scale_cascaded
        return np.concatenate([
            d.real.ravel(), d.imag.ravel(),
            c.real.ravel(), c.imag.ravel(),
            state.q * self.q_scale, state.arrivals * self.q_scale,
        ])

    def unflatten_state(self, vec):
        """Invert state_vector: recover (direct, cascaded, q, arrivals)."""
        nd = self.k * self.n * self.nt
        nc = nd * self.m
        d = (vec[:nd] + 1j * vec[nd:2 * nd]).reshape(self.k, self.n, self.nt)
        c = (vec[2 * nd:2 * nd + nc] + 1j * vec[2 * nd + nc:2 * nd + 2 * nc])
        c = c.reshape(self.k, self.n, self.m, self.nt)
        rest = vec[2 * nd + 2 * nc:]
        q = rest[:self.k] / self.q_scale
        arrivals = rest[self.k:] / self.q_scale
        return (d / self.scale_direct, c / self.scale_cascaded, q, arrivals)

    def observe_agents(self, state: GlobalState, phases):
        """Per-subcarrier observations plus the centralized-critic state for
        the already-chosen phase vector."""
        phases = ch.canonicalize_phases(phases)
        h_eff = ch.effective_channel(state.freq, phases)
        queue_feats = np.concatenate([state.q * self.q_scale,
                                      state.arrivals * self.q_scale])
        scaled = h_eff * self.scale_direct
        observations = []
        for n in range(self.n):
            rows = scaled[:, n, :]
            vec = np.concatenate([rows.real.ravel(), rows.imag.ravel(),
                                  queue_feats])
            observations.append(AgentObservation(
                subcarrier=n, h_eff_rows=h_eff[:, n, :], vector=vec))
        critic_vec = np.concatenate([scaled.real.ravel(), scaled.imag.ravel(),
                                     queue_feats])
        return observations, CriticState(h_eff=h_eff, vector=critic_vec)

    # -- internals ----------------------------------------------------------

    def _sample_geometry(self):
        g = self.cfg.geometry
        users = ch.sample_user_positions(
            self.k, g.inner_radius_m, g.outer_radius_m, g.sector_deg,
            self.ris_position, self.bs_position, self._rng_positions)
        self._geom = ch.LinkGeometry(
            self.bs_position, self.ris_position, users, g.d1_m, g.d2_m,
            g.inner_radius_m, g.outer_radius_m)

    def _sample_channel(self, slot_index):
        real = ch.sample_channel(self._geom, self.cfg.fading, self.nt, self.m,
                                 self._rng_direct, slot_index=slot_index,
                                 rng_ris=self._rng_ris)
        self._freq = ch.to_frequency(real, self.n)

    def _make_state(self) -> GlobalState:
        return GlobalState(freq=self._freq, q=self.ledger.q.copy(),
                           arrivals=np.asarray(self._last_arrivals).copy(),
                           slot=self._slot)
