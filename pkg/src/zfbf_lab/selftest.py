"""Fast end-to-end self-checks behind the `selftest` CLI subcommand.

A reduced-size version of the acceptance checks: special-function
identities, factorization invariants, a worked scheduling example, the
gain-law normalization, and an analytic-versus-empirical cutoff
cross-check.  Runs in well under a minute.
"""

import math
from dataclasses import dataclass

import numpy as np

from .analytic import PdfParams, pdf_normalization, scheduling_region_integral, solve_cutoff
from .channel import ChannelMatrix, build_beamformers, draw_channel_matrix, lq_decompose
from .harness import RunConfig, empirical_cutoff, run_monte_carlo
from .mathkit import IntegrationSpec, RngStream, gamma_fn, integrate_1d, upper_incomplete_gamma
from .scheduler import greedy_select


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_gamma() -> CheckResult:
    worst = 0.0
    for twice_s in range(1, 13):
        s = twice_s / 2.0
        worst = max(worst, abs(upper_incomplete_gamma(s, 0.0) - gamma_fn(s)) / gamma_fn(s))
        for x in (0.1, 1.0, 5.0, 20.0):
            lhs = upper_incomplete_gamma(s + 1, x)
            rhs = s * upper_incomplete_gamma(s, x) + x**s * math.exp(-x)
            worst = max(worst, abs(lhs - rhs) / lhs)
    return CheckResult("gamma-identities", worst < 1e-12, f"max rel residual {worst:.2e}")


def _check_quadrature() -> CheckResult:
    spec = IntegrationSpec()
    e1 = abs(integrate_1d(lambda x: np.exp(-x), 0.0, np.inf, spec) - 1.0)
    e2 = abs(integrate_1d(lambda t: t**2 * np.exp(-t), 2.0, np.inf, spec) - 10.0 * math.exp(-2.0))
    ok = e1 < 1e-9 and e2 < 1e-9
    return CheckResult("quadrature-closed-forms", ok, f"errors {e1:.1e}, {e2:.1e}")


def _check_determinism() -> CheckResult:
    cfg = RunConfig(k_users=3, m_antennas=2, p_avg_db=5.0, trials=4096, seed=123)
    a = run_monte_carlo(cfg, 0.4)
    b = run_monte_carlo(cfg, 0.4)
    ok = a == b
    return CheckResult("determinism", ok, "identical stats on replay" if ok else "mismatch")


def _check_factorization() -> CheckResult:
    worst = 0.0
    for t in range(200):
        h = draw_channel_matrix(4, 3, RngStream(77, t))
        f = lq_decompose(h.entries[:3])
        worst = max(worst, np.linalg.norm(h.entries[:3] - f.l @ f.q) / np.linalg.norm(h.entries[:3]))
        worst = max(worst, np.linalg.norm(f.q @ f.q.conj().T - np.eye(3)))
        bf = build_beamformers(f)
        worst = max(worst, float(np.max(np.abs(np.abs(np.linalg.norm(bf.w, axis=0)) - 1.0))))
    return CheckResult("lq-beamformers", worst < 1e-10, f"max residual {worst:.2e}")


def _check_worked_example() -> CheckResult:
    h = ChannelMatrix.from_entries([[2.0, 0.0], [0.0, 1.0]])
    out = greedy_select(h, 0.5)
    ok = (
        out.scheduled == (0, 1)
        and abs(out.rate - math.log(16.0)) < 1e-12
        and abs(out.powers[0] - 1.75) < 1e-9
        and abs(out.powers[1] - 1.0) < 1e-9
    )
    return CheckResult("worked-example", ok, f"rate {out.rate:.6f}, powers {out.powers}")


def _check_normalization() -> CheckResult:
    val = pdf_normalization(PdfParams(2, 2))
    return CheckResult("gain-law-normalization", abs(val - 1.0) < 1e-3, f"integral {val:.6f}")


def _check_cutoff_crosscheck() -> CheckResult:
    p_avg = 10 ** 0.5
    ana = solve_cutoff(PdfParams(4, 2), p_avg)
    cfg = RunConfig(k_users=4, m_antennas=2, p_avg_db=5.0, trials=150_000, seed=99)
    emp = empirical_cutoff(cfg)
    rel = abs(ana.mu - emp.mu) / ana.mu
    return CheckResult("cutoff-crosscheck", rel < 0.025, f"analytic {ana.mu:.5f} empirical {emp.mu:.5f} rel {rel:.2%}")


def _check_power_closure() -> CheckResult:
    p_avg = 10 ** 0.5
    ana = solve_cutoff(PdfParams(4, 2), p_avg)
    stats = run_monte_carlo(
        RunConfig(k_users=4, m_antennas=2, p_avg_db=5.0, trials=200_000, seed=5), ana
    )
    rel = abs(stats.mean_power - p_avg) / p_avg
    return CheckResult("power-closure", rel < 0.02, f"mean power {stats.mean_power:.5f} vs {p_avg:.5f} rel {rel:.2%}")


ALL_CHECKS = (
    _check_gamma,
    _check_quadrature,
    _check_determinism,
    _check_factorization,
    _check_worked_example,
    _check_normalization,
    _check_cutoff_crosscheck,
    _check_power_closure,
)


def run_selftest(checks=ALL_CHECKS) -> list[CheckResult]:
    results = []
    for check in checks:
        try:
            results.append(check())
        except Exception as exc:  # fail loud but keep going
            results.append(CheckResult(check.__name__, False, f"raised {exc!r}"))
    return results
