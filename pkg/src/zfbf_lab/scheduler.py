"""Greedy two-user selection with water-filling under a fixed cutoff.

The first user maximizes the squared channel norm.  The second is the
remaining candidate maximizing residual^2 / norm^2, which orders
candidates exactly like the two-user sum rate; the cutoff tests are
applied only after selection, so the selected gain triple
(gamma1, gamma2, beta2) does not depend on the cutoff.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix, build_beamformers, lq_decompose
from .errors import ConfigError, DomainError

_P_MATCH_RTOL = 1e-9


@dataclass(frozen=True)
class CutoffValue:
    """Water-filling cutoff mu solved for one (K, M, P) configuration."""

    mu: float
    provenance: str  # "analytic" or "empirical"
    config: tuple[int, int, float] | None = None  # (k_users, m_antennas, p_avg)

    def __post_init__(self):
        if not (self.mu > 0):
            raise DomainError(f"cutoff must be positive, got {self.mu}")
        if self.provenance not in ("analytic", "empirical"):
            raise DomainError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class ScheduleOutcome:
    """One realization's schedule, gains, powers and sum rate (nats).

    The gain triple is recorded even when fewer than two users end up
    with positive power; it is a function of the channel alone.
    """

    scheduled: tuple[int, ...]
    gamma1: float
    gamma2: float
    beta2: float
    beta1: float
    powers: tuple[float, ...]
    rate: float


def mu_value(mu, k_users: int | None = None, m_antennas: int | None = None) -> float:
    """Unwrap a CutoffValue (validating its configuration) or a raw float."""
    if isinstance(mu, CutoffValue):
        if mu.config is not None and k_users is not None:
            ck, cm, _ = mu.config
            if (ck, cm) != (k_users, m_antennas):
                raise ConfigError(
                    f"cutoff solved for (K={ck}, M={cm}) used with "
                    f"(K={k_users}, M={m_antennas})"
                )
        return mu.mu
    muv = float(mu)
    if not (muv > 0):
        raise DomainError(f"cutoff must be positive, got {muv}")
    return muv


def waterfill_power(mu: float, g_norm_sq: float) -> float:
    """Allocated power max(0, 1/mu - g_norm_sq) for inverse gain g_norm_sq."""
    if not (mu > 0) or not (g_norm_sq > 0):
        raise DomainError("waterfill_power needs mu > 0 and g_norm_sq > 0")
    return max(0.0, 1.0 / mu - g_norm_sq)


def rate_one_user(gamma1: float, mu: float) -> float:
    """Single-user rate log(gamma1 / mu) in nats; requires gamma1 > mu > 0."""
    if not (mu > 0) or not (gamma1 > mu):
        raise DomainError(f"need gamma1 > mu > 0, got gamma1={gamma1}, mu={mu}")
    return math.log(gamma1 / mu)


def rate_two_users(gamma1: float, gamma2: float, beta2: float, mu: float) -> float:
    """Two-user sum rate log(gamma1 beta2^2 / (gamma2 mu^2)) in nats.

    Equals log(beta1/mu) + log(beta2/mu) with beta1 = gamma1 beta2 / gamma2.
    """
    if not (mu > 0) or not (beta2 > mu):
        raise DomainError(f"need beta2 > mu > 0, got beta2={beta2}, mu={mu}")
    if not (gamma1 >= gamma2 >= beta2):
        raise DomainError("gain ordering gamma1 >= gamma2 >= beta2 violated")
    return math.log(gamma1 * beta2 * beta2 / (gamma2 * mu * mu))


def gain_triple(h: ChannelMatrix) -> tuple[int, int, float, float, float]:
    """Greedy selection indices and gains (k1, k2, gamma1, gamma2, beta2).

    Cutoff-free: k1 = argmax ||h_k||^2, k2 = argmax residual^2/norm^2 over
    the rest (ties broken by lowest index).
    """
    e = h.entries
    v = np.sum(e.real**2 + e.imag**2, axis=1)
    k1 = int(np.argmax(v))
    g1 = float(v[k1])
    cross = np.abs(e @ e[k1].conj()) ** 2
    z = np.maximum(v - cross / g1, 0.0)
    score = z * z / v
    score[k1] = -1.0
    k2 = int(np.argmax(score))
    return k1, k2, g1, float(v[k2]), float(z[k2])


def greedy_select(h: ChannelMatrix, mu) -> ScheduleOutcome:
    """Run the greedy selection and water-filling for one realization.

    Schedules two users when the second user's residual gain exceeds the
    cutoff and the two-user rate strictly beats the single-user rate;
    the two-user beamformer is rebuilt from the two active rows only.
    """
    muv = mu_value(mu, h.k_users, h.m_antennas)
    k1, k2, g1, g2, b2 = gain_triple(h)
    b1 = g1 * b2 / g2 if g2 > 0 else 0.0
    if g1 <= muv:
        return ScheduleOutcome((), g1, g2, b2, b1, (), 0.0)
    rate1 = rate_one_user(g1, muv)
    if b2 > muv:
        rate2 = rate_two_users(g1, g2, b2, muv)
        if rate2 > rate1:
            factors = lq_decompose(h.entries[[k1, k2]])
            bf = build_beamformers(factors)
            powers = tuple(waterfill_power(muv, g) for g in bf.g_norms_sq)
            return ScheduleOutcome((k1, k2), g1, g2, b2, b1, powers, rate2)
    return ScheduleOutcome((k1,), g1, g2, b2, b1, (1.0 / muv - 1.0 / g1,), rate1)


def realization_power_rate(
    gamma1: np.ndarray, gamma2: np.ndarray, beta2: np.ndarray, mu: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized per-trial total power, rate (nats) and schedule size.

    Operates on gain-triple arrays; this is the fast path used by the
    Monte Carlo engine and is equivalent to greedy_select trial by trial.
    """
    n = gamma1.shape[0]
    power = np.zeros(n)
    rate = np.zeros(n)
    two = (beta2 > mu) & (beta2 * beta2 > mu * gamma2)
    one = ~two & (gamma1 > mu)
    i2 = np.nonzero(two)[0]
    i1 = np.nonzero(one)[0]
    if i2.size:
        b2 = beta2[i2]
        beta1 = gamma1[i2] * b2 / gamma2[i2]
        power[i2] = 2.0 / mu - 1.0 / beta1 - 1.0 / b2
        rate[i2] = np.log(gamma1[i2] * b2 * b2 / (gamma2[i2] * mu * mu))
    if i1.size:
        power[i1] = 1.0 / mu - 1.0 / gamma1[i1]
        rate[i1] = np.log(gamma1[i1] / mu)
    size = np.zeros(n, dtype=np.int64)
    size[i1] = 1
    size[i2] = 2
    return power, rate, size
