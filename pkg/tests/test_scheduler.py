import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zfbf_lab.channel import ChannelMatrix, draw_channel_matrix, projection_residual_sq
from zfbf_lab.errors import ConfigError, DomainError
from zfbf_lab.mathkit import RngStream
from zfbf_lab.scheduler import (
    CutoffValue,
    greedy_select,
    rate_one_user,
    rate_two_users,
    realization_power_rate,
    waterfill_power,
)

positive = st.floats(min_value=1e-3, max_value=1e3)


class TestWaterfill:
    def test_examples(self):
        assert waterfill_power(0.5, 1.0) == pytest.approx(1.0)
        assert waterfill_power(0.5, 3.0) == 0.0

    def test_boundary(self):
        # water level exactly at the inverse gain allocates nothing
        assert waterfill_power(0.25, 4.0) == 0.0
        assert waterfill_power(1.0 / 3.7, 3.7) == pytest.approx(0.0, abs=1e-15)

    @given(mu=positive, g=positive)
    @settings(max_examples=200, deadline=None)
    def test_formula(self, mu, g):
        assert waterfill_power(mu, g) == max(0.0, 1.0 / mu - g)

    def test_domain(self):
        with pytest.raises(DomainError):
            waterfill_power(0.0, 1.0)
        with pytest.raises(DomainError):
            waterfill_power(1.0, 0.0)


class TestRates:
    def test_one_user_values(self):
        assert rate_one_user(1.0, 0.5) == pytest.approx(math.log(2))
        assert rate_one_user(4.0, 0.5) == pytest.approx(math.log(8))

    @given(mu=st.floats(min_value=1e-2, max_value=10), ratio=st.floats(min_value=1.001, max_value=1e3))
    @settings(max_examples=200, deadline=None)
    def test_one_user_consistency(self, mu, ratio):
        # log(1 + P1 gamma1) with P1 = 1/mu - 1/gamma1 equals log(gamma1/mu)
        gamma1 = mu * ratio
        p1 = 1.0 / mu - 1.0 / gamma1
        assert rate_one_user(gamma1, mu) == pytest.approx(
            math.log1p(p1 * gamma1), rel=1e-12
        )

    def test_one_user_domain(self):
        with pytest.raises(DomainError):
            rate_one_user(0.5, 0.5)

    def test_two_user_values(self):
        mu = 0.3
        assert rate_two_users(5.0, 5.0, 2 * mu, mu) == pytest.approx(2 * math.log(2))
        assert rate_two_users(4.0, 1.0, 1.0, 0.5) == pytest.approx(math.log(16))

    @given(
        mu=st.floats(min_value=1e-2, max_value=2.0),
        b2x=st.floats(min_value=1.001, max_value=50),
        g2x=st.floats(min_value=1.0, max_value=50),
        g1x=st.floats(min_value=1.0, max_value=50),
    )
    @settings(max_examples=200, deadline=None)
    def test_two_user_is_sum_of_per_user_logs(self, mu, b2x, g2x, g1x):
        beta2 = mu * b2x
        gamma2 = beta2 * g2x
        gamma1 = gamma2 * g1x
        beta1 = gamma1 * beta2 / gamma2
        got = rate_two_users(gamma1, gamma2, beta2, mu)
        assert got == pytest.approx(
            math.log(beta1 / mu) + math.log(beta2 / mu), rel=1e-12
        )

    def test_two_user_domain(self):
        with pytest.raises(DomainError):
            rate_two_users(4.0, 1.0, 0.2, 0.5)  # beta2 <= mu
        with pytest.raises(DomainError):
            rate_two_users(1.0, 2.0, 1.0, 0.5)  # ordering violated


def brute_force_schedule(h: ChannelMatrix, mu: float):
    """Exhaustive reference: best 1- or 2-user subset with the first user
    pinned to the largest norm, two-user candidates accepted only when
    the residual gain clears the cutoff and beats the one-user rate."""
    e = h.entries
    norms = [float(np.vdot(row, row).real) for row in e]
    k1 = int(np.argmax(norms))
    g1 = norms[k1]
    if g1 <= mu:
        return (), 0.0, ()
    rate1 = math.log(g1 / mu)
    best = ((k1,), rate1, (1.0 / mu - 1.0 / g1,))
    best_rate2 = -np.inf
    for k in range(h.k_users):
        if k == k1:
            continue
        beta_k = projection_residual_sq(e[k], [e[k1]])
        beta_1k = projection_residual_sq(e[k1], [e[k]])
        if beta_k <= mu:
            continue
        rate2 = math.log(g1 * beta_k * beta_k / (norms[k] * mu * mu))
        if rate2 > rate1 and rate2 > best_rate2:
            best_rate2 = rate2
            powers = (1.0 / mu - 1.0 / beta_1k, 1.0 / mu - 1.0 / beta_k)
            best = ((k1, k), rate2, powers)
    return best


class TestGreedySelect:
    def test_orthogonal_worked_example(self):
        h = ChannelMatrix.from_entries([[2.0, 0.0], [0.0, 1.0]])
        out = greedy_select(h, 0.5)
        assert out.scheduled == (0, 1)
        assert out.gamma1 == pytest.approx(4.0)
        assert out.gamma2 == pytest.approx(1.0)
        assert out.beta2 == pytest.approx(1.0)
        assert out.beta1 == pytest.approx(4.0)
        assert out.rate == pytest.approx(math.log(16))
        assert out.powers[0] == pytest.approx(1.75)
        assert out.powers[1] == pytest.approx(1.0)

    def test_cutoff_clips_everything(self):
        h = ChannelMatrix.from_entries([[0.1, 0.0], [0.0, 0.2]])
        out = greedy_select(h, 10.0)
        assert out.scheduled == ()
        assert out.rate == 0.0
        assert out.powers == ()
        assert out.gamma1 <= 10.0

    def test_single_user_branch(self):
        # second user nearly parallel: residual below cutoff
        h = ChannelMatrix.from_entries([[2.0, 0.0], [1.0, 0.05]])
        out = greedy_select(h, 0.5)
        assert out.scheduled == (0,)
        assert out.rate == pytest.approx(math.log(4.0 / 0.5))
        assert out.powers == (pytest.approx(2.0 - 0.25),)

    def test_matches_brute_force(self):
        mu = 0.45
        for t in range(300):
            h = draw_channel_matrix(3, 2, RngStream(606, t))
            got = greedy_select(h, mu)
            sched, rate, powers = brute_force_schedule(h, mu)
            assert got.scheduled == sched
            assert got.rate == pytest.approx(rate, rel=1e-10)
            for a, b in zip(got.powers, powers):
                assert a == pytest.approx(b, rel=1e-8)

    def test_support_ordering_every_trial(self):
        for t in range(200):
            h = draw_channel_matrix(4, 3, RngStream(911, t))
            out = greedy_select(h, 0.6)
            assert out.gamma1 >= out.gamma2 >= out.beta2 >= 0.0
            assert out.beta1 == pytest.approx(
                out.gamma1 * out.beta2 / out.gamma2, rel=1e-12
            )

    def test_order_statistics_conditions(self):
        # the two greedy dominance conditions hold for every candidate
        for t in range(200):
            h = draw_channel_matrix(5, 2, RngStream(404, t))
            out = greedy_select(h, 0.5)
            e = h.entries
            norms = np.sum(np.abs(e) ** 2, axis=1)
            k1 = int(np.argmax(norms))
            score2 = out.beta2**2 / out.gamma2
            for k in range(5):
                assert out.gamma1 >= norms[k] - 1e-12 * norms[k]
                if k == k1:
                    continue
                z_k = projection_residual_sq(e[k], [e[k1]])
                assert score2 >= z_k**2 / norms[k] - 1e-10 * max(score2, 1.0)

    def test_two_user_powers_strictly_positive(self):
        count = 0
        for t in range(200):
            h = draw_channel_matrix(4, 2, RngStream(55, t))
            out = greedy_select(h, 0.4)
            if len(out.scheduled) == 2:
                count += 1
                assert out.beta1 >= out.beta2 > 0.4
                assert all(p > 0 for p in out.powers)
                assert out.rate > math.log(out.gamma1 / 0.4)
        assert count > 50  # two-user scheduling is the common case here

    def test_phase_and_permutation_invariance(self):
        h = draw_channel_matrix(4, 3, RngStream(77, 0))
        out = greedy_select(h, 0.5)
        # global unit-modulus rotation of every row
        phases = np.exp(1j * np.linspace(0.3, 2.8, 4))[:, None]
        rotated = ChannelMatrix.from_entries(h.entries * phases)
        out_rot = greedy_select(rotated, 0.5)
        assert out_rot.scheduled == out.scheduled
        assert out_rot.rate == pytest.approx(out.rate, rel=1e-12)
        # permutation of user indices
        perm = [2, 0, 3, 1]
        permuted = ChannelMatrix.from_entries(h.entries[perm])
        out_perm = greedy_select(permuted, 0.5)
        assert [perm[i] for i in out_perm.scheduled] == list(out.scheduled)
        assert out_perm.rate == pytest.approx(out.rate, rel=1e-12)

    def test_cutoff_value_config_check(self):
        h = draw_channel_matrix(4, 2, RngStream(1, 0))
        wrong = CutoffValue(mu=0.5, provenance="empirical", config=(8, 2, 1.0))
        with pytest.raises(ConfigError):
            greedy_select(h, wrong)

    def test_cutoff_value_validation(self):
        with pytest.raises(DomainError):
            CutoffValue(mu=0.0, provenance="analytic")
        with pytest.raises(DomainError):
            CutoffValue(mu=1.0, provenance="guessy")


class TestRealizationPowerRate:
    def test_matches_scalar_path(self):
        mu = 0.5
        g1s, g2s, b2s, rates, powers = [], [], [], [], []
        for t in range(300):
            h = draw_channel_matrix(3, 2, RngStream(313, t))
            out = greedy_select(h, mu)
            g1s.append(out.gamma1)
            g2s.append(out.gamma2)
            b2s.append(out.beta2)
            rates.append(out.rate)
            powers.append(sum(out.powers))
        power, rate, size = realization_power_rate(
            np.array(g1s), np.array(g2s), np.array(b2s), mu
        )
        assert np.allclose(rate, rates, rtol=1e-10, atol=1e-12)
        assert np.allclose(power, powers, rtol=1e-8, atol=1e-12)
