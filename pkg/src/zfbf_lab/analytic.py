"""Closed-form gain statistics and the cutoff integral equation.

The joint density of the selected triple (gamma1, gamma2, beta2) is

    K(K-1) (M-1)/Gamma(M)^2 * e^{-(g1+g2)} g1^{M-1} b2^{M-2} * mass^{K-2}

where ``mass`` is the probability that one of the K-2 losing users'
(norm^2, residual^2) pair is dominated by the selected pair on both
greedy criteria.  Averaging the allocated power over the one- and
two-user scheduling regions and equating to the power budget yields the
cutoff; swapping the power weight for the rate weight yields the
average sum rate.  All triple integrals are nested one-dimensional
Gauss-Kronrod quadratures (innermost gamma2) with per-level tolerances.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import BracketingError, ConfigError, DomainError, NonConvergenceError
from .mathkit import (
    IntegrationSpec,
    find_root,
    gamma_fn,
    gk_panels,
    upper_incomplete_gamma,
)
from .scheduler import CutoffValue

_ROOT_RTOL = 1e-6
_MAX_PANELS = 16


@dataclass(frozen=True)
class PdfParams:
    """User count and antenna count the gain statistics are evaluated for."""

    k_users: int
    m_antennas: int

    def __post_init__(self):
        if self.k_users < 2 or self.m_antennas < 2:
            raise DomainError("need k_users >= 2 and m_antennas >= 2")


@dataclass(frozen=True)
class GainTriple:
    """Squared subchannel gains of one realization's selected pair."""

    gamma1: float
    gamma2: float
    beta2: float

    def __post_init__(self):
        for name, val in (
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("beta2", self.beta2),
        ):
            if not (val >= 0 and math.isfinite(val)):
                raise DomainError(f"{name} must be finite and nonnegative")


def unordered_pdf(v, z, m: int):
    """Joint density z^{M-2} e^{-v} / Gamma(M-1) of a random user's
    (norm^2, residual^2) pair on v >= z >= 0; zero outside."""
    if m < 2:
        raise DomainError("need m >= 2")
    va = np.asarray(v, dtype=float)
    za = np.asarray(z, dtype=float)
    inside = (za >= 0) & (va >= za)
    zp = np.ones_like(za) if m == 2 else np.where(inside, za, 0.0) ** (m - 2)
    out = np.where(inside, zp * np.exp(-va) / gamma_fn(m - 1), 0.0)
    if np.ndim(v) == 0 and np.ndim(z) == 0:
        return float(out)
    return out


def _dominated_mass_grid(gamma1, b, m: int):
    """Vectorized dominated-pair probability for ratio arrays b = beta2^2/gamma2.

    mass = [Gamma(M) - Gamma(M,b) + b^{(M-1)/2} (Gamma((M+1)/2,b)
            - Gamma((M+1)/2,gamma1))] / Gamma(M), clipped to [0, 1].

    ``gamma1`` keeps its own (possibly unbroadcast) shape; only the
    b-dependent factors are evaluated on the full tensor, with the
    exponential shared between the two incomplete gamma orders.
    """
    gm = gamma_fn(m)
    b = np.asarray(b, dtype=float)
    exp_b = np.exp(-b)
    # Gamma(m, b), integer order, shares exp_b
    term = np.ones_like(b)
    acc = np.ones_like(b)
    for j in range(1, m):
        term = term * b / j
        acc = acc + term
    gu_m_b = math.factorial(m - 1) * exp_b * acc
    half = (m + 1) / 2.0
    gu_half_g1 = upper_incomplete_gamma(half, gamma1)
    if m % 2 == 0:
        # half-integer order via the erfc seed and upward recurrence
        root = np.sqrt(b)
        gu_half_b = math.sqrt(math.pi) * erfc(root)
        p = root * exp_b
        cur = 0.5
        for _ in range(m // 2):
            gu_half_b = cur * gu_half_b + p
            p = p * b
            cur += 1.0
        bpow = root ** (m - 1)
    else:
        order = (m + 1) // 2
        t2 = np.ones_like(b)
        a2 = np.ones_like(b)
        for j in range(1, order):
            t2 = t2 * b / j
            a2 = a2 + t2
        gu_half_b = math.factorial(order - 1) * exp_b * a2
        bpow = b ** ((m - 1) // 2)
    br = gm - gu_m_b + bpow * (gu_half_b - gu_half_g1)
    return np.clip(br / gm, 0.0, 1.0)


def dominated_user_mass(gamma1: float, gamma2: float, beta2: float, m: int) -> float:
    """Probability that a random (norm^2, residual^2) pair loses to the
    selected triple on both greedy criteria.

    Integrates the unordered pair density over
    {z <= v <= gamma1} cap {z^2/v <= beta2^2/gamma2} in closed form.
    """
    if m < 2:
        raise DomainError("need m >= 2")
    if not (gamma1 >= gamma2 >= beta2 >= 0):
        raise DomainError(
            f"support ordering gamma1 >= gamma2 >= beta2 >= 0 violated: "
            f"({gamma1}, {gamma2}, {beta2})"
        )
    if beta2 == 0.0:
        return 0.0
    b = beta2 * beta2 / gamma2
    return float(_dominated_mass_grid(np.float64(gamma1), np.float64(b), m))


def joint_pdf_grid(params: PdfParams, gamma1, gamma2, beta2) -> np.ndarray:
    """Vectorized joint density of the selected triple; zero off-support.

    Arguments broadcast against each other; factors that depend on a
    single variable are evaluated at that variable's own shape so that
    quadrature tensors do not pay for gamma1-only special functions.
    """
    k, m = params.k_users, params.m_antennas
    g1 = np.maximum(np.asarray(gamma1, dtype=float), 0.0)
    g2 = np.maximum(np.asarray(gamma2, dtype=float), 1e-300)
    b2 = np.maximum(np.asarray(beta2, dtype=float), 0.0)
    const = k * (k - 1) * (m - 1) / gamma_fn(m) ** 2
    x_fac = const * np.exp(-g1) * g1 ** (m - 1)
    y_fac = 1.0 if m == 2 else b2 ** (m - 2)
    core = np.exp(-g2)
    if k > 2:
        core = core * _dominated_mass_grid(g1, b2 * b2 / g2, m) ** (k - 2)
    out = x_fac * y_fac * core
    inside = (
        (np.asarray(beta2) >= 0)
        & (np.asarray(gamma2) >= np.asarray(beta2))
        & (np.asarray(gamma1) >= np.asarray(gamma2))
    )
    return np.where(inside, out, 0.0)


def joint_pdf(params: PdfParams, t: GainTriple) -> float:
    """Joint density of (gamma1, gamma2, beta2) at one point (zero outside
    the support gamma1 >= gamma2 >= beta2 >= 0)."""
    return float(joint_pdf_grid(params, t.gamma1, t.gamma2, t.beta2))


def _tail_point(lower: float, degree: float, log_scale: float, threshold: float) -> float:
    """Smallest T >= lower with e^{-T} T^degree e^{log_scale} <= threshold."""
    t = max(lower, 1.0) + 30.0
    target = log_scale - math.log(threshold)
    for _ in range(8):
        t = target + degree * math.log(max(t, 1.0))
    return max(t, lower + 1.0)


def _nested_triple_quad(
    integrand,
    outer_lo: float,
    outer_hi: float,
    mid_limits,
    inner_limits,
    spec: IntegrationSpec,
    mid_ratio: float = 1.0,
    inner_ratio: float = 2.0,
) -> float:
    """Nested adaptive quadrature: outer variable subdivided adaptively,
    middle and inner levels refined by panel doubling until their embedded
    Gauss/Kronrod error estimates meet the per-level tolerance budget
    (inner 1e-2, middle 1e-1 of the outer relative tolerance).

    ``integrand(x, y, z)`` must broadcast over a (15, n_mid, n_inner)
    tensor; ``mid_limits(x)`` and ``inner_limits(x, y)`` return (lo, hi)
    arrays.  Degenerate ranges contribute zero.  The grading ratios
    concentrate panels near the lower limit of a level whose integrand
    decays exponentially from there.
    """
    if outer_hi <= outer_lo:
        return 0.0
    rel_mid = spec.rel_tol * 1e-1
    rel_inner = spec.rel_tol * 1e-2

    def start_count(span: float, ratio: float) -> int:
        # pick panel counts so the finest panel spans <= ~2.5 units,
        # enough for a GK15 panel to resolve an e^{-x} envelope
        if span <= 0:
            return 1
        if ratio == 1.0:
            return min(_MAX_PANELS, max(2, math.ceil(span / 2.5)))
        return min(_MAX_PANELS, max(2, math.ceil(math.log2(span / 2.5 + 1.0))))

    def eval_interval(a: float, b: float) -> tuple[float, float]:
        x, wxk, wxg = gk_panels(np.float64(a), np.float64(b), 1)
        mlo, mhi = mid_limits(x)
        n_mid = start_count(float(np.max(mhi - mlo, initial=0.0)), mid_ratio)
        n_inner_start = None
        while True:
            y, wyk, wyg = gk_panels(mlo, mhi, n_mid, mid_ratio)
            ilo, ihi = inner_limits(x[:, None], y)
            if n_inner_start is None:
                span = float(np.max(ihi - ilo, initial=0.0))
                n_inner_start = start_count(span, inner_ratio)
            n_inner = n_inner_start
            while True:
                z, wzk, wzg = gk_panels(ilo, ihi, n_inner, inner_ratio)
                f = integrand(x[:, None, None], y[..., None], z)
                inner_k = np.einsum("xyz,xyz->xy", f, wzk)
                inner_g = np.einsum("xyz,xyz->xy", f, wzg)
                # error propagated through the mid-level weights, so lanes
                # with negligible contribution cannot force refinement
                err_prop = float(
                    np.max(np.einsum("xy,xy->x", np.abs(inner_k - inner_g), np.abs(wyk)))
                )
                scale = float(
                    np.max(np.einsum("xy,xy->x", np.abs(inner_k), np.abs(wyk)))
                )
                if (
                    err_prop <= max(rel_inner * scale, spec.abs_tol * 1e-2)
                    or n_inner >= _MAX_PANELS
                ):
                    break
                n_inner *= 2
            n_inner_start = n_inner
            mid_k = np.einsum("xy,xy->x", inner_k, wyk)
            mid_g = np.einsum("xy,xy->x", inner_k, wyg)
            mid_err = float(np.abs(mid_k - mid_g) @ np.abs(wxk))
            mid_scale = float(np.abs(mid_k) @ np.abs(wxk))
            if (
                mid_err <= max(rel_mid * mid_scale, spec.abs_tol * 1e-1)
                or n_mid >= _MAX_PANELS
            ):
                break
            n_mid *= 2
        val = float(wxk @ mid_k)
        err = abs(val - float(wxg @ mid_k))
        return val, err

    # geometric seed: fine near the lower edge where the integrand peaks
    edges = [outer_lo]
    step = min(1.0, (outer_hi - outer_lo) / 8.0)
    while edges[-1] + step < outer_hi:
        edges.append(edges[-1] + step)
        step *= 2.0
    edges.append(outer_hi)
    intervals = []
    total = 0.0
    total_err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = eval_interval(a, b)
        intervals.append((e, a, b, v))
        total += v
        total_err += e
    n_sub = len(intervals)
    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if n_sub >= spec.max_subdivisions:
            raise NonConvergenceError(
                f"nested quadrature stalled after {n_sub} subdivisions",
                best_estimate=total,
                error_bound=total_err,
            )
        intervals.sort(key=lambda t: t[0])
        e, a, b, v = intervals.pop()
        total -= v
        total_err -= e
        mid = 0.5 * (a + b)
        for seg in ((a, mid), (mid, b)):
            vv, ee = eval_interval(*seg)
            intervals.append((ee, seg[0], seg[1], vv))
            total += vv
            total_err += ee
        n_sub += 1
    return total


def pdf_normalization(params: PdfParams, spec: IntegrationSpec | None = None) -> float:
    """Total mass of the joint density over its support (should be 1)."""
    spec = spec or IntegrationSpec(rel_tol=1e-8)
    m = params.m_antennas
    hi = _tail_point(
        0.0, m + 1, math.log(params.k_users * (params.k_users - 1)), 1e-16
    )

    def mid_limits(g1):
        return np.zeros_like(g1), g1

    def inner_limits(g1, g2):
        lo = np.zeros(np.broadcast_shapes(g1.shape, g2.shape))
        return lo, np.broadcast_to(g2, lo.shape)

    # nesting order (gamma1, gamma2, beta2): beta2 innermost
    def integrand(g1, g2, b2):
        return joint_pdf_grid(params, g1, g2, b2)

    return _nested_triple_quad(
        integrand, 0.0, hi, mid_limits, inner_limits, spec,
        mid_ratio=2.0, inner_ratio=1.0,
    )


# ----- scheduling regions of the cutoff equation ------------------------
#
# With the support ordering implicit, exactly one of four regions holds
# for every realization with gamma1 > mu:
#   A: one user,  beta2 in [mu, sqrt(mu g1)], gamma2 in [beta2^2/mu, g1]
#   B: one user,  beta2 in [0, mu],           gamma2 in [beta2, g1]
#   C: two users, beta2 in [mu, sqrt(mu g1)], gamma2 in [beta2, beta2^2/mu]
#   D: two users, beta2 in [sqrt(mu g1), g1], gamma2 in [beta2, g1]


def _regions(mu: float):
    sqrt_mu = math.sqrt(mu)

    def a_mid(g1):
        return np.full_like(g1, mu), sqrt_mu * np.sqrt(g1)

    def a_inner(g1, b2):
        return b2 * b2 / mu, np.broadcast_to(g1, b2.shape).copy()

    def b_mid(g1):
        return np.zeros_like(g1), np.full_like(g1, mu)

    def bd_inner(g1, b2):
        return b2, np.broadcast_to(g1, b2.shape).copy()

    def c_inner(g1, b2):
        return b2, b2 * b2 / mu

    def d_mid(g1):
        return sqrt_mu * np.sqrt(g1), g1

    return (
        ("one", a_mid, a_inner, 2.0, 2.0),
        ("one", b_mid, bd_inner, 1.0, 2.0),
        ("two", a_mid, c_inner, 1.0, 2.0),
        ("two", d_mid, bd_inner, 2.0, 2.0),
    )


def region_indicators(mu: float, gamma1, gamma2, beta2) -> np.ndarray:
    """Boolean (4, n) membership of support triples in regions A, B, C, D."""
    g1 = np.asarray(gamma1, dtype=float)
    g2 = np.asarray(gamma2, dtype=float)
    b2 = np.asarray(beta2, dtype=float)
    root = np.sqrt(mu * g1)
    a = (b2 >= mu) & (b2 <= root) & (g2 >= b2 * b2 / mu)
    b = b2 <= mu
    c = (b2 >= mu) & (b2 <= root) & (g2 <= b2 * b2 / mu)
    d = b2 >= root
    return np.stack([a, b, c, d])


def scheduling_region_integral(
    params: PdfParams,
    mu: float,
    weight: str,
    spec: IntegrationSpec | None = None,
) -> float:
    """Average allocated power ("power") or sum rate ("rate", nats) under
    the greedy schedule at cutoff mu, as the four-region triple integral
    of the weighted joint density (gamma2 innermost, then beta2, then
    gamma1 on [mu, infinity))."""
    if weight not in ("power", "rate"):
        raise DomainError(f"weight must be 'power' or 'rate', got {weight!r}")
    if not (mu > 0):
        raise DomainError(f"mu must be positive, got {mu}")
    spec = spec or IntegrationSpec(rel_tol=1e-8)
    k, m = params.k_users, params.m_antennas
    w_scale = 2.0 / mu if weight == "power" else 1.0
    hi = _tail_point(
        mu, m + 1, math.log(k * (k - 1) * max(w_scale, 1.0)), 1e-16
    )

    if weight == "power":

        def w_one(g1, g2, b2):
            return 1.0 / mu - 1.0 / g1

        def w_two(g1, g2, b2):
            return 2.0 / mu - (g1 + g2) / (g1 * b2)

    else:

        def w_one(g1, g2, b2):
            return np.log(g1 / mu)

        def w_two(g1, g2, b2):
            return np.log(g1 * b2 * b2 / (g2 * mu * mu))

    total = 0.0
    for kind, mid_limits, inner_limits, mid_ratio, inner_ratio in _regions(mu):
        wfun = w_one if kind == "one" else w_two

        def integrand(g1, b2, g2, wfun=wfun):
            return wfun(g1, g2, b2) * joint_pdf_grid(params, g1, g2, b2)

        total += _nested_triple_quad(
            integrand, mu, hi, mid_limits, inner_limits, spec,
            mid_ratio=mid_ratio, inner_ratio=inner_ratio,
        )
    return total


def solve_cutoff(
    params: PdfParams,
    p_avg: float,
    spec: IntegrationSpec | None = None,
    bracket: tuple[float, float] | None = None,
) -> CutoffValue:
    """Cutoff mu at which the average allocated power equals p_avg.

    The average power is strictly decreasing in mu, so the root is
    unique; the bracket [1e-6, hi] is expanded by doubling until the
    sign changes.  An optional warm-start bracket (as from a neighboring
    configuration) is expanded the same way if it does not straddle.
    """
    if not (p_avg > 0):
        raise DomainError(f"p_avg must be positive, got {p_avg}")
    spec = spec or IntegrationSpec(rel_tol=1e-8)
    loose = IntegrationSpec(
        rel_tol=max(spec.rel_tol, 1e-4),
        abs_tol=max(spec.abs_tol, 1e-7),
        tail_cut=spec.tail_cut,
        max_subdivisions=spec.max_subdivisions,
    )

    def objective(mu: float, s: IntegrationSpec) -> float:
        return scheduling_region_integral(params, mu, "power", s) - p_avg

    # phase 1: bracket and coarsely locate the root at loose tolerance
    if bracket is not None:
        lo, hi = bracket
    else:
        # two saturated users give E[power] ~ 2/mu - O(1); start near there
        guess = 2.0 / (p_avg + 2.0)
        lo, hi = 0.25 * guess, 4.0 * guess
    f_lo = objective(lo, loose)
    while f_lo < 0 and lo > 1e-14:
        lo *= 0.25
        f_lo = objective(lo, loose)
    f_hi = objective(hi, loose)
    doublings = 0
    while f_hi > 0:
        if doublings >= 40:
            raise ConfigError(
                f"could not bracket the cutoff for p_avg={p_avg}; "
                "power budget outside the representable range"
            )
        hi *= 2.0
        f_hi = objective(hi, loose)
        doublings += 1
    if f_lo < 0:
        raise ConfigError(
            f"could not bracket the cutoff for p_avg={p_avg} from below"
        )
    try:
        coarse = find_root(
            lambda m: objective(m, loose), lo, hi, rel_tol=1e-4, f_lo=f_lo, f_hi=f_hi
        )
        # phase 2: polish at full tolerance inside a narrow bracket
        plo, phi = 0.98 * coarse, 1.02 * coarse
        f_plo = objective(plo, spec)
        while f_plo < 0 and plo > lo:
            plo = max(lo, 0.9 * plo)
            f_plo = objective(plo, spec)
        f_phi = objective(phi, spec)
        while f_phi > 0 and phi < hi:
            phi = min(hi, 1.1 * phi)
            f_phi = objective(phi, spec)
        root = find_root(
            lambda m: objective(m, spec),
            plo,
            phi,
            rel_tol=_ROOT_RTOL,
            f_lo=f_plo,
            f_hi=f_phi,
        )
    except BracketingError as exc:
        raise ConfigError(str(exc)) from exc
    return CutoffValue(
        mu=root,
        provenance="analytic",
        config=(params.k_users, params.m_antennas, p_avg),
    )


def expected_sum_rate(
    params: PdfParams, p_avg: float, spec: IntegrationSpec | None = None
) -> float:
    """Average sum rate in nats at the analytically solved cutoff."""
    cutoff = solve_cutoff(params, p_avg, spec)
    return scheduling_region_integral(params, cutoff.mu, "rate", spec)
