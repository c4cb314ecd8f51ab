"""Multi-tap fading channel generation for a RIS-assisted MISO-OFDM downlink.

Three links are modelled per slot: the direct BS-user link (Rayleigh), the
BS-RIS link and the RIS-user links (both Rician with a deterministic
line-of-sight first tap). The cascaded BS-RIS-user channel is the tap-domain
convolution of the two hops, and the per-subcarrier frequency response is the
DFT of the tap sequences.
"""

import numpy as np
from dataclasses import dataclass

TWO_PI = 2.0 * np.pi


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def canonicalize_phases(theta: np.ndarray) -> np.ndarray:
    """Wrap phase shifts into [0, 2*pi)."""
    return np.mod(np.asarray(theta, dtype=float), TWO_PI)


@dataclass
class FadingConfig:
    """Large- and small-scale fading parameters shared by all three links."""

    beta0_db: float = -30.0       # reference path gain at d0
    d0_m: float = 1.0
    xi_direct: float = 3.8
    xi_bs_ris: float = 2.2
    xi_ris_user: float = 2.4
    k_br_db: float = 4.0          # Rician factor, BS-RIS
    k_ru_db: float = 5.0          # Rician factor, RIS-user
    l0: int = 4                   # taps, direct link
    l1: int = 2                   # taps, BS-RIS
    l2: int = 3                   # taps, RIS-user
    n_cp: int = 4                 # cyclic prefix length (samples)

    def __post_init__(self):
        if min(self.l0, self.l1, self.l2) < 1:
            raise ValueError("tap counts l0, l1, l2 must be >= 1")
        if self.n_cp < self.tap_span:
            raise ValueError(
                f"n_cp={self.n_cp} must cover the tap span {self.tap_span}")
        if not (np.isfinite(self.k_br_db) and np.isfinite(self.k_ru_db)):
            raise ValueError("Rician factors must be finite")

    @property
    def tap_span(self) -> int:
        """Maximum delay spread: max(l0, l1 + l2 - 1)."""
        return max(self.l0, self.l1 + self.l2 - 1)


@dataclass
class LinkGeometry:
    """Node placement for one drop: BS, RIS and K user positions (2D, m)."""

    bs_position: np.ndarray
    ris_position: np.ndarray
    user_positions: np.ndarray    # (K, 2)
    d1_m: float                   # BS-RIS vertical offset
    d2_m: float                   # BS-RIS horizontal offset
    inner_radius_m: float         # user annulus around the RIS
    outer_radius_m: float

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float)
        self.ris_position = np.asarray(self.ris_position, dtype=float)
        self.user_positions = np.atleast_2d(
            np.asarray(self.user_positions, dtype=float))
        if self.d1_m <= 0 or self.d2_m <= 0:
            raise ValueError("BS-RIS offsets must be positive")
        if not 0 < self.inner_radius_m <= self.outer_radius_m:
            raise ValueError("annulus radii must satisfy 0 < inner <= outer")
        radii = np.linalg.norm(self.user_positions - self.ris_position, axis=1)
        if np.any(radii < self.inner_radius_m - 1e-9) or np.any(
                radii > self.outer_radius_m + 1e-9):
            raise ValueError("user positions fall outside the annulus")

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    def bs_user_distances(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.bs_position, axis=1)

    def bs_ris_distance(self) -> float:
        return float(np.linalg.norm(self.ris_position - self.bs_position))

    def ris_user_distances(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions - self.ris_position, axis=1)


def sample_user_positions(num_users, inner_radius_m, outer_radius_m,
                          sector_deg, center, toward, rng):
    """Draw positions uniformly over an annular sector around `center`.

    The sector is centred on the direction from `center` toward `toward`
    (area-uniform radial density).
    """
    center = np.asarray(center, dtype=float)
    toward = np.asarray(toward, dtype=float)
    base = np.arctan2(toward[1] - center[1], toward[0] - center[0])
    half = np.deg2rad(sector_deg) / 2.0
    angles = rng.uniform(base - half, base + half, size=num_users)
    radii = np.sqrt(rng.uniform(inner_radius_m ** 2, outer_radius_m ** 2,
                                size=num_users))
    return center + np.stack([radii * np.cos(angles),
                              radii * np.sin(angles)], axis=1)


@dataclass
class ChannelRealization:
    """Time-domain tap tensors for one slot."""

    direct_taps: np.ndarray       # (l0, K, Nt) complex
    bs_ris_taps: np.ndarray       # (l1, M, Nt) complex
    ris_user_taps: np.ndarray     # (l2, K, M) complex
    slot_index: int = 0

    def __post_init__(self):
        for name in ("direct_taps", "bs_ris_taps", "ris_user_taps"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def num_users(self) -> int:
        return self.direct_taps.shape[1]

    @property
    def num_elements(self) -> int:
        return self.bs_ris_taps.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.direct_taps.shape[2]

    @property
    def tap_span(self) -> int:
        l0 = self.direct_taps.shape[0]
        l1 = self.bs_ris_taps.shape[0]
        l2 = self.ris_user_taps.shape[0]
        return max(l0, l1 + l2 - 1)


@dataclass
class FrequencyChannel:
    """Per-subcarrier responses derived from one ChannelRealization."""

    direct: np.ndarray            # (K, N, Nt) complex
    cascaded: np.ndarray          # (K, N, M, Nt) complex

    @property
    def num_users(self) -> int:
        return self.direct.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self.direct.shape[1]

    @property
    def num_elements(self) -> int:
        return self.cascaded.shape[2]

    @property
    def num_antennas(self) -> int:
        return self.direct.shape[2]


def path_loss(d, xi, cfg: FadingConfig):
    """Linear power gain beta0 * (d / d0)^(-xi) at distance d (m)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return db_to_linear(cfg.beta0_db) * (d / cfg.d0_m) ** (-xi)


def steering_vector(n: int, angle_rad: float) -> np.ndarray:
    """Half-wavelength ULA steering vector of length n."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle_rad))


def _cn(rng, shape, power_per_entry):
    """Circularly-symmetric complex Gaussian entries of given per-entry power."""
    scale = np.sqrt(power_per_entry / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _rician_split(total_power, k_linear, num_taps):
    """LoS tap power and per-tap NLoS power; single-tap links go all-LoS."""
    if num_taps == 1:
        return total_power, 0.0
    p_los = total_power * k_linear / (1.0 + k_linear)
    p_nlos_tap = total_power / (1.0 + k_linear) / (num_taps - 1)
    return p_los, p_nlos_tap


def sample_channel(geom: LinkGeometry, cfg: FadingConfig, num_antennas: int,
                   num_elements: int, rng, slot_index: int = 0,
                   rng_ris=None) -> ChannelRealization:
    """Draw one slot's tap tensors for all three links.

    Direct taps are zero-mean complex Gaussian with the link path loss spread
    uniformly over l0 taps. RIS-link tap 0 is a deterministic steering-vector
    LoS component; the remaining taps are Gaussian, with LoS/NLoS power ratio
    equal to the configured Rician factor and per-entry total power equal to
    the link path loss. `rng_ris`, when given, is a separate stream for the
    RIS-side links so that M=0 and M>0 runs share identical direct draws.
    """
    if rng_ris is None:
        rng_ris = rng
    k = geom.num_users

    beta_d = path_loss(geom.bs_user_distances(), cfg.xi_direct, cfg)
    direct = _cn(rng, (cfg.l0, k, num_antennas), 1.0)
    direct *= np.sqrt(beta_d / cfg.l0)[None, :, None]

    if num_elements == 0:
        g = np.zeros((cfg.l1, 0, num_antennas), dtype=complex)
        r = np.zeros((cfg.l2, k, 0), dtype=complex)
        return ChannelRealization(direct, g, r, slot_index)

    # BS -> RIS
    beta_br = path_loss(geom.bs_ris_distance(), cfg.xi_bs_ris, cfg)
    p_los, p_nlos = _rician_split(beta_br, db_to_linear(cfg.k_br_db), cfg.l1)
    delta = geom.ris_position - geom.bs_position
    aod_bs = np.arctan2(delta[1], delta[0])
    aoa_ris = np.arctan2(-delta[1], -delta[0])
    los_br = np.outer(steering_vector(num_elements, aoa_ris),
                      steering_vector(num_antennas, aod_bs))
    g = np.empty((cfg.l1, num_elements, num_antennas), dtype=complex)
    g[0] = np.sqrt(p_los) * los_br
    if cfg.l1 > 1:
        g[1:] = _cn(rng_ris, (cfg.l1 - 1, num_elements, num_antennas), p_nlos)

    # RIS -> users
    beta_ru = path_loss(geom.ris_user_distances(), cfg.xi_ris_user, cfg)
    k_ru = db_to_linear(cfg.k_ru_db)
    r = np.empty((cfg.l2, k, num_elements), dtype=complex)
    for u in range(k):
        p_los_u, p_nlos_u = _rician_split(beta_ru[u], k_ru, cfg.l2)
        delta_u = geom.user_positions[u] - geom.ris_position
        aod_ris = np.arctan2(delta_u[1], delta_u[0])
        r[0, u] = np.sqrt(p_los_u) * steering_vector(num_elements, aod_ris)
        if cfg.l2 > 1:
            r[1:, u] = _cn(rng_ris, (cfg.l2 - 1, num_elements), p_nlos_u)

    return ChannelRealization(direct, g, r, slot_index)


def compose_cascaded_taps(real: ChannelRealization) -> np.ndarray:
    """Tap-domain convolution of the two RIS hops.

    Output tap l is sum_i diag(r_i) G_(l-i) with G zero outside its span;
    shape (l1 + l2 - 1, K, M, Nt).
    """
    g = real.bs_ris_taps
    r = real.ris_user_taps
    l1, m, nt = g.shape
    l2, k, _ = r.shape
    out = np.zeros((l1 + l2 - 1, k, m, nt), dtype=complex)
    for i in range(l2):
        out[i:i + l1] += r[i][None, :, :, None] * g[:, None, :, :]
    return out


def to_frequency(real: ChannelRealization, num_subcarriers: int) -> FrequencyChannel:
    """DFT of the direct and composed cascaded taps over N subcarriers."""
    if num_subcarriers < real.tap_span:
        raise ValueError(
            f"N={num_subcarriers} is smaller than the tap span {real.tap_span}")
    direct = np.fft.fft(real.direct_taps, n=num_subcarriers, axis=0)
    direct = np.transpose(direct, (1, 0, 2))
    cascaded_taps = compose_cascaded_taps(real)
    cascaded = np.fft.fft(cascaded_taps, n=num_subcarriers, axis=0)
    cascaded = np.transpose(cascaded, (1, 0, 2, 3))
    return FrequencyChannel(direct=direct, cascaded=cascaded)


def effective_channel(freq: FrequencyChannel, phases: np.ndarray) -> np.ndarray:
    """Phase-combined channel rows: direct + sum_m e^{j theta_m} cascaded_m.

    Returns a (K, N, Nt) complex tensor. An empty phase vector (M=0)
    degenerates to the direct channel.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.shape[0] != freq.num_elements:
        raise ValueError(
            f"expected {freq.num_elements} phases, got {phases.shape[0]}")
    if phases.size == 0:
        return freq.direct.copy()
    reflect = np.exp(1j * phases)
    return freq.direct + np.einsum("m,knma->kna", reflect, freq.cascaded)
