"""Stochastic packet traffic: Poisson arrivals into per-user FCFS buffers,
slot-wise service bounded by the backlog, and exact per-packet delay and
jitter statistics."""

import numpy as np
from dataclasses import dataclass, field


@dataclass
class TrafficConfig:
    """Arrival and framing parameters.

    lambda_per_slot is the mean number of packets arriving per slot for each
    user (the product of the per-second rate and the slot length).
    """

    lambda_per_slot: np.ndarray
    packet_bits: int = 512
    slot_seconds: float = 1e-3

    def __post_init__(self):
        self.lambda_per_slot = np.atleast_1d(
            np.asarray(self.lambda_per_slot, dtype=float))
        if np.any(self.lambda_per_slot < 0):
            raise ValueError("arrival rates must be nonnegative")
        if self.packet_bits <= 0:
            raise ValueError("packet_bits must be positive")
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be positive")

    @property
    def num_users(self) -> int:
        return self.lambda_per_slot.size


@dataclass
class PacketRecord:
    arrival_slot: int
    departure_slot: int | None = None

    @property
    def delivered(self) -> bool:
        return self.departure_slot is not None


@dataclass
class DelayStats:
    """Eq.-style delay summary: user-mean of per-user packet-mean delays and
    user-mean of per-user population standard deviations (jitter)."""

    avg_delay_ms: float
    jitter_ms: float
    per_user_mean_ms: np.ndarray
    per_user_jitter_ms: np.ndarray
    users_without_deliveries: np.ndarray   # bool flags, excluded from means


def sample_arrivals(cfg: TrafficConfig, rng) -> np.ndarray:
    """Independent Poisson draws, one per user."""
    return rng.poisson(cfg.lambda_per_slot)


def deliverable(rate_bps, cfg: TrafficConfig):
    """Packets transmissible in one slot: floor(T * R / packet_bits)."""
    rate_bps = np.asarray(rate_bps, dtype=float)
    if np.any(rate_bps < 0):
        raise ValueError("rates must be nonnegative")
    return np.floor(cfg.slot_seconds * rate_bps / cfg.packet_bits).astype(int)


class PacketLedger:
    """Per-user FCFS packet records plus the backlog vector.

    Arrivals appended during slot t are servable from slot t+1 onward because
    service within `step` precedes the same slot's arrivals, so every
    delivered packet has delay of at least one slot.
    """

    def __init__(self, num_users: int):
        self.num_users = num_users
        self.records = [[] for _ in range(num_users)]
        self.q = np.zeros(num_users, dtype=int)
        self._next_pending = [0] * num_users
        self._last_slot = None
        self.total_arrivals = np.zeros(num_users, dtype=int)
        self.total_departures = np.zeros(num_users, dtype=int)

    def add_arrivals(self, arrivals, slot: int):
        arrivals = np.asarray(arrivals, dtype=int)
        for k in range(self.num_users):
            self.records[k].extend(
                PacketRecord(slot) for _ in range(arrivals[k]))
        self.q += arrivals
        self.total_arrivals += arrivals

    def step(self, deliverable_counts, arrivals, slot: int) -> np.ndarray:
        """Serve then admit for one slot; returns delivered counts.

        Delivers min(deliverable, backlog) oldest pending packets per user,
        stamping their departure slot, then appends the slot's arrivals.
        """
        if self._last_slot is not None and slot <= self._last_slot:
            raise ValueError("slot index must be strictly increasing")
        deliverable_counts = np.asarray(deliverable_counts, dtype=int)
        arrivals = np.asarray(arrivals, dtype=int)
        delivered = np.minimum(deliverable_counts, self.q)
        for k in range(self.num_users):
            start = self._next_pending[k]
            for rec in self.records[k][start:start + delivered[k]]:
                rec.departure_slot = slot
            self._next_pending[k] = start + int(delivered[k])
        self.q -= delivered
        self.total_departures += delivered
        self.add_arrivals(arrivals, slot)
        self._last_slot = slot
        return delivered

    def delivered_delay_slots(self, user: int) -> np.ndarray:
        return np.array([r.departure_slot - r.arrival_slot
                         for r in self.records[user] if r.delivered],
                        dtype=int)

    def delay_stats(self, slot_seconds: float) -> DelayStats:
        ms = slot_seconds * 1e3
        means = np.full(self.num_users, np.nan)
        jitters = np.full(self.num_users, np.nan)
        missing = np.zeros(self.num_users, dtype=bool)
        for k in range(self.num_users):
            delays = self.delivered_delay_slots(k) * ms
            if delays.size == 0:
                missing[k] = True
                continue
            means[k] = np.mean(delays)
            jitters[k] = np.std(delays)
        if missing.all():
            avg = float("nan")
            jit = float("nan")
        else:
            avg = float(np.mean(means[~missing]))
            jit = float(np.mean(jitters[~missing]))
        return DelayStats(avg_delay_ms=avg, jitter_ms=jit,
                          per_user_mean_ms=means, per_user_jitter_ms=jitters,
                          users_without_deliveries=missing)
