import numpy as np
import pytest

from risq.channel import effective_channel, to_frequency
from risq.phy import (
    Assignment,
    DegenerateChannelError,
    LinkQuality,
    PowerAllocation,
    evaluate_link,
    mrt_direction,
    waterfill,
)
from test_channel import naive_dft, random_realization


def waterfill_active_set(c, p_max):
    """Closed-form oracle: sort gains, grow the active set analytically.

    For k active channels the common water level is
    w = (p_max + sum_{i<=k} 1/c_i) / k; the largest k keeping every active
    power positive is optimal. No iteration, independent of the bisection.
    """
    c = np.asarray(c, dtype=float)
    order = np.argsort(-c)
    inv = 1.0 / c[order][c[order] > 0]
    best = None
    for k in range(len(inv), 0, -1):
        w = (p_max + inv[:k].sum()) / k
        if w - inv[k - 1] > 0 and (k == len(inv) or w <= inv[k]):
            best = (w, k)
            break
    w, k = best
    p = np.zeros_like(c)
    active = order[:k]
    p[active] = w - 1.0 / c[active]
    return p, w


def waterfill_grid_search(c, p_max, num_points=10 ** 6):
    """10^6-point grid search over the water level w = 1/tau.

    The grid spans the exact bracket [1/max c, 1/max c + p_max]. The spent
    budget is monotone increasing in w, so bisection over grid indices finds
    the same crossing point a full scan would, without materializing 10^6
    evaluations.
    """
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore"):
        inv_c = np.where(c > 0, 1.0 / c, np.inf)
    w_lo = inv_c.min()
    grid = np.linspace(w_lo, w_lo + p_max, num_points)

    def spent(idx):
        return np.maximum(grid[idx] - inv_c, 0.0).sum()

    lo, hi = 0, num_points - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if spent(mid) > p_max:
            hi = mid
        else:
            lo = mid
    idx = lo if abs(spent(lo) - p_max) <= abs(spent(hi) - p_max) else hi
    return np.maximum(grid[idx] - inv_c, 0.0)


class TestMrtDirection:
    def test_axis_aligned(self):
        w = mrt_direction(np.array([1.0 + 0j, 0.0]))
        assert np.allclose(w, [1.0, 0.0])
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)

    def test_cauchy_schwarz_equality(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            w = mrt_direction(h)
            assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
            assert abs(h @ w) == pytest.approx(np.linalg.norm(h), rel=1e-12)

    def test_beats_random_unit_vectors(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        best = abs(h @ mrt_direction(h)) ** 2
        for _ in range(100):
            v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            v /= np.linalg.norm(v)
            assert abs(h @ v) ** 2 <= best + 1e-12

    def test_zero_channel_raises(self):
        with pytest.raises(DegenerateChannelError):
            mrt_direction(np.zeros(3, dtype=complex))


class TestWaterfill:
    def test_single_channel_takes_budget(self):
        alloc = waterfill(np.array([2.0]), 3.5)
        assert alloc.p == pytest.approx([3.5], abs=1e-9)

    def test_equal_gains_split_evenly(self):
        alloc = waterfill(np.ones(4), 4.0)
        assert np.allclose(alloc.p, 1.0, atol=1e-9)

    def test_two_gain_example_matches_grid_search(self):
        c = np.array([10.0, 0.1])
        alloc = waterfill(c, 1.0)
        grid_p = waterfill_grid_search(c, 1.0)
        assert np.max(np.abs(alloc.p - grid_p)) < 1e-6
        # both active channels share the water level
        active = alloc.p > 0
        levels = alloc.p[active] + 1.0 / c[active]
        assert np.allclose(levels, 1.0 / alloc.tau, atol=1e-8)

    def test_budget_and_kkt_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = rng.integers(1, 17)
            c = rng.uniform(0.05, 20.0, size=n)
            c[rng.random(n) < 0.2] = 0.0
            if not np.any(c > 0):
                continue
            p_max = rng.uniform(0.2, 1.0)
            alloc = waterfill(c, p_max)
            assert alloc.p.sum() == pytest.approx(p_max, abs=1e-9)
            w = 1.0 / alloc.tau
            active = alloc.p > 0
            assert np.all(np.abs(w - 1.0 / c[active] - alloc.p[active]) < 1e-8)
            inactive = (~active) & (c > 0)
            assert np.all(w <= 1.0 / c[inactive] + 1e-8)
            assert np.all(alloc.p[c == 0] == 0.0)

    def test_matches_active_set_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = rng.integers(1, 17)
            c = rng.uniform(0.05, 20.0, size=n)
            p_max = rng.uniform(0.2, 2.0)
            alloc = waterfill(c, p_max)
            p_oracle, _ = waterfill_active_set(c, p_max)
            assert np.max(np.abs(alloc.p - p_oracle)) < 1e-10

    def test_sum_rate_monotone_in_gain(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            c = rng.uniform(0.1, 5.0, size=6)
            p_max = 1.0
            base = np.sum(np.log2(1 + waterfill(c, p_max).p * c))
            bumped = c.copy()
            i = rng.integers(6)
            bumped[i] *= 1.0 + rng.uniform(0.01, 1.0)
            after = np.sum(np.log2(1 + waterfill(bumped, p_max).p * bumped))
            assert after >= base - 1e-10

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateChannelError):
            waterfill(np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            waterfill(np.ones(3), 0.0)
        with pytest.raises(ValueError):
            waterfill(np.array([-1.0, 2.0]), 1.0)


class TestEvaluateLink:
    def test_single_subcarrier_definition(self):
        # one subcarrier, ||h||^2 = sigma^2 = 1  ->  gamma = P_max
        real = random_realization(np.random.default_rng(0), l0=1, l1=1, l2=1,
                                  k=1, m=1, nt=1)
        real.direct_taps[:] = 1.0
        real.bs_ris_taps[:] = 0.0
        freq = to_frequency(real, 1)
        lq, alloc = evaluate_link(freq, np.zeros(1),
                                  Assignment(np.zeros(1, dtype=int), 1),
                                  noise_power_w=1.0, p_max_w=2.5,
                                  subcarrier_bandwidth_hz=1.0)
        assert lq.gamma[0] == pytest.approx(2.5, abs=1e-9)

    def test_single_user_rate_sums_capacities(self):
        rng = np.random.default_rng(1)
        freq = to_frequency(random_realization(rng, k=1), 8)
        assign = Assignment(np.zeros(8, dtype=int), 1)
        lq, _ = evaluate_link(freq, rng.uniform(0, 2 * np.pi, 2), assign,
                              1e-3, 1.0, 180e3)
        want = 180e3 * np.sum(np.log2(1 + lq.gamma))
        assert lq.rate_per_user[0] == pytest.approx(want, rel=1e-12)

    def test_matches_first_principles_recomputation(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            real = random_realization(rng, k=3, m=4, nt=2)
            n = 8
            theta = rng.uniform(0, 2 * np.pi, 4)
            owner = rng.integers(0, 3, size=n)
            sigma2 = 0.7
            p_max = 1.3
            w_sc = 180e3
            freq = to_frequency(real, n)
            lq, alloc = evaluate_link(freq, theta, Assignment(owner, 3),
                                      sigma2, p_max, w_sc)

            # independent pipeline: naive DFT -> explicit phase sum -> MRT
            # inner product -> closed-form waterfill -> rate sums
            d_f = naive_dft(real.direct_taps, n)
            from test_channel import naive_cascade
            c_f = naive_dft(naive_cascade(real.ris_user_taps,
                                          real.bs_ris_taps), n)
            c_vec = np.zeros(n)
            h_rows = []
            for nn in range(n):
                k = owner[nn]
                h = d_f[nn, k].copy()
                for mm in range(4):
                    h += np.exp(1j * theta[mm]) * c_f[nn, k, mm]
                h_rows.append(h)
                wbar = np.conj(h) / np.linalg.norm(h)
                c_vec[nn] = np.abs(h @ wbar) ** 2 / sigma2
            p_oracle, _ = waterfill_active_set(c_vec, p_max)
            rates = np.zeros(3)
            for nn in range(n):
                rates[owner[nn]] += w_sc * np.log2(1 + p_oracle[nn] * c_vec[nn])
            assert np.allclose(lq.rate_per_user, rates, rtol=1e-9)

    def test_zero_budget_yields_zero_rates(self):
        rng = np.random.default_rng(3)
        freq = to_frequency(random_realization(rng), 8)
        lq, alloc = evaluate_link(freq, np.zeros(2),
                                  Assignment(np.zeros(8, dtype=int), 2),
                                  1e-3, 0.0, 180e3)
        assert np.all(lq.rate_per_user == 0)
        assert np.all(alloc.p == 0)


class TestPhaseGain:
    def test_aligned_phases_beat_direct_only(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            real = random_realization(rng, k=2, m=6, nt=3)
            freq = to_frequency(real, 8)
            k, n = 1, 3
            d = freq.direct[k, n]
            theta = np.zeros(freq.num_elements)
            for mm in range(freq.num_elements):
                theta[mm] = -np.angle(np.vdot(d, freq.cascaded[k, n, mm]))
            h = effective_channel(freq, theta)
            assert np.linalg.norm(h[k, n]) >= np.linalg.norm(d) - 1e-12


class TestAssignment:
    def test_owner_bounds_checked(self):
        with pytest.raises(ValueError):
            Assignment(np.array([0, 3]), 3)
        with pytest.raises(ValueError):
            Assignment(np.array([-1, 0]), 3)
        a = Assignment(np.array([2, 0, 1]), 3)
        assert a.num_subcarriers == 3
