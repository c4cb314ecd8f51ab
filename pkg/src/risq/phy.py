"""Active beamforming and rate computation: MRT directions, water-filling
power allocation over owned subcarriers, per-user achievable rates."""

import numpy as np
from dataclasses import dataclass, field

from .channel import FrequencyChannel, effective_channel

BUDGET_TOL = 1e-9


class DegenerateChannelError(ValueError):
    """Raised when a channel vector has no usable energy."""


@dataclass
class Assignment:
    """Per-subcarrier ownership: owner[n] is the single user of subcarrier n.

    Encoding each subcarrier as one user index makes the at-most-one-user
    constraint hold by construction.
    """

    owner: np.ndarray
    num_users: int

    def __post_init__(self):
        self.owner = np.asarray(self.owner, dtype=int)
        if self.owner.ndim != 1:
            raise ValueError("owner must be a 1-D index vector")
        if self.owner.size and (self.owner.min() < 0
                                or self.owner.max() >= self.num_users):
            raise ValueError("owner indices must lie in [0, num_users)")

    @property
    def num_subcarriers(self) -> int:
        return self.owner.size


@dataclass
class PowerAllocation:
    """Water-filling result: per-subcarrier powers and the multiplier tau."""

    p: np.ndarray                 # (N,) W
    tau: float                    # 1/W; water level is 1/tau

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.p < -BUDGET_TOL):
            raise ValueError("negative power")


@dataclass
class LinkQuality:
    """Per-slot link metrics for a fixed assignment."""

    c: np.ndarray                 # (N,) normalized gains |h|^2 / sigma^2
    gamma: np.ndarray             # (N,) per-subcarrier SNRs
    rate_per_user: np.ndarray     # (K,) bit/s


def mrt_direction(h_row: np.ndarray) -> np.ndarray:
    """Unit-norm maximum-ratio beamformer h^H / ||h|| for one channel row."""
    h_row = np.asarray(h_row)
    norm = np.linalg.norm(h_row)
    if norm == 0.0:
        raise DegenerateChannelError("zero channel vector has no MRT direction")
    return np.conj(h_row) / norm


def waterfill(c: np.ndarray, p_max: float, max_iter: int = 200,
              residual_tol: float = 1e-12) -> PowerAllocation:
    """Water-filling p_n = (1/tau - 1/c_n)^+ with total power p_max.

    tau is found by bisection on the water level w = 1/tau, for which the
    spent budget sum_n (w - 1/c_n)^+ is monotone increasing; zero-gain
    subcarriers receive zero power.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("gains must be nonnegative")
    if p_max <= 0:
        raise ValueError("power budget must be positive")
    if not np.any(c > 0):
        raise DegenerateChannelError("no subcarrier with positive gain")

    with np.errstate(divide="ignore"):
        inv_c = np.where(c > 0, 1.0 / c, np.inf)

    def spent(w):
        return np.maximum(w - inv_c, 0.0).sum()

    lo = inv_c.min()              # spent == 0
    hi = lo + p_max               # spent >= p_max
    w = hi
    for _ in range(max_iter):
        w = 0.5 * (lo + hi)
        residual = spent(w) - p_max
        if abs(residual) < residual_tol:
            break
        if residual > 0:
            hi = w
        else:
            lo = w
    p = np.maximum(w - inv_c, 0.0)
    return PowerAllocation(p=p, tau=1.0 / w)


def evaluate_link(freq: FrequencyChannel, phases: np.ndarray,
                  assign: Assignment, noise_power_w: float, p_max_w: float,
                  subcarrier_bandwidth_hz: float):
    """Rates under MRT + water-filling for one slot and a fixed assignment.

    Per subcarrier the owner's effective row gives the normalized gain
    c_n = ||h_eff||^2 / sigma^2 (MRT attains this); power then water-fills
    over the gains, gamma_n = p_n c_n, and each user's rate sums its owned
    subcarriers' capacities. Degenerate channels (and a zero budget)
    yield zero-rate subcarriers rather than an error.

    Returns (LinkQuality, PowerAllocation).
    """
    h_eff = effective_channel(freq, phases)
    n = freq.num_subcarriers
    if assign.num_subcarriers != n:
        raise ValueError("assignment length does not match subcarrier count")
    rows = h_eff[assign.owner, np.arange(n), :]
    c = np.sum(np.abs(rows) ** 2, axis=1) / noise_power_w

    if p_max_w > 0 and np.any(c > 0):
        alloc = waterfill(c, p_max_w)
    else:
        alloc = PowerAllocation(p=np.zeros(n), tau=np.inf)
    gamma = alloc.p * c

    rate_per_user = np.zeros(freq.num_users)
    per_sc = subcarrier_bandwidth_hz * np.log2(1.0 + gamma)
    np.add.at(rate_per_user, assign.owner, per_sc)
    return LinkQuality(c=c, gamma=gamma, rate_per_user=rate_per_user), alloc
