import io
import json
import math

import numpy as np
import pytest

from zfbf_lab.analytic import PdfParams
from zfbf_lab.channel import ChannelMatrix
from zfbf_lab.errors import ConfigError
from zfbf_lab.harness import (
    BATCH_TRIALS,
    RunConfig,
    bisect_cutoff_on_triples,
    cutoff_sweep,
    draw_gain_triples,
    draw_gain_triples_batch,
    emit_plot_script,
    empirical_cutoff,
    expected_bin_masses,
    gain_triples_from_channels,
    histogram_upper_edge,
    pdf_validate,
    run_monte_carlo,
    sum_rate_sweep,
    sweep_to_csv,
    sweep_to_json,
)
from zfbf_lab.mathkit import RngStream, complex_gaussian_from_uniform, gamma_fn, upper_incomplete_gamma
from zfbf_lab.scheduler import CutoffValue, greedy_select

ANALYTIC_MU_4_2_5DB = 0.4214875  # solve_cutoff(PdfParams(4, 2), 10**0.5)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(1, 2, 5.0)
        with pytest.raises(ConfigError):
            RunConfig(2, 2, 5.0, trials=0)
        with pytest.raises(ConfigError):
            RunConfig(2, 2, 5.0, scheme="dirty")
        with pytest.raises(ConfigError):
            RunConfig(2, 2, 5.0, rate_unit="bels")
        with pytest.raises(ConfigError):
            RunConfig(2, 2, 5.0, output="xml")
        with pytest.raises(ConfigError):
            RunConfig(2, 2, 5.0, workers=0)

    def test_db_conversion(self):
        assert RunConfig(2, 2, 5.0).p_avg == pytest.approx(10**0.5)
        assert RunConfig(2, 2, 0.0).p_avg == 1.0


class TestDeterminism:
    def test_replay_identical(self):
        cfg = RunConfig(3, 2, 5.0, trials=10_000, seed=12)
        a = run_monte_carlo(cfg, 0.4)
        b = run_monte_carlo(cfg, 0.4)
        assert a == b

    def test_single_trial_replay(self):
        cfg = RunConfig(2, 2, 5.0, trials=1, seed=5)
        a = run_monte_carlo(cfg, 0.4)
        b = run_monte_carlo(cfg, 0.4)
        assert a == b

    def test_worker_count_invariance(self):
        base = RunConfig(3, 2, 5.0, trials=3 * BATCH_TRIALS + 17, seed=9)
        two = RunConfig(3, 2, 5.0, trials=3 * BATCH_TRIALS + 17, seed=9, workers=2)
        a = run_monte_carlo(base, 0.5, hist_bins=8)
        b = run_monte_carlo(two, 0.5, hist_bins=8)
        assert a.mean_rate == b.mean_rate
        assert a.mean_power == b.mean_power
        assert a.schedule_size_freq == b.schedule_size_freq
        assert np.array_equal(a.histogram.counts, b.histogram.counts)


class TestBatchEngine:
    def test_matches_per_trial_scheduler(self):
        stream = RngStream(88, 0)
        n = 1500
        u = stream.generator().random((n, 4, 3, 2))
        h = complex_gaussian_from_uniform(u)
        g1, g2, b2 = gain_triples_from_channels(h)
        batch = draw_gain_triples_batch(4, 3, n, stream)
        assert np.array_equal(g1, batch[0])
        for t in range(0, n, 7):
            out = greedy_select(ChannelMatrix.from_entries(h[t]), 0.5)
            assert out.gamma1 == pytest.approx(g1[t], rel=1e-12)
            assert out.gamma2 == pytest.approx(g2[t], rel=1e-12)
            assert out.beta2 == pytest.approx(b2[t], rel=1e-9, abs=1e-12)

    def test_draw_split_matches_single_batch(self):
        small = draw_gain_triples(3, 2, 100, RngStream(13, 0))
        direct = draw_gain_triples_batch(3, 2, 100, RngStream(13, 0))
        for a, b in zip(small, direct):
            assert np.array_equal(a, b)


class TestEmptyScheduleProbability:
    def test_matches_order_statistics(self):
        # Pr[no user] = Pr[max norm <= mu] = (1 - Gamma(M, mu)/Gamma(M))^K
        k, m, mu = 2, 2, 2.0
        cfg = RunConfig(k, m, 5.0, trials=400_000, seed=21)
        stats = run_monte_carlo(cfg, mu)
        expect = (1.0 - upper_incomplete_gamma(m, mu) / gamma_fn(m)) ** k
        assert stats.schedule_size_freq[0] == pytest.approx(expect, abs=0.005)


class TestEmpiricalCutoff:
    def test_trials_precondition(self):
        with pytest.raises(ConfigError):
            empirical_cutoff(RunConfig(4, 2, 5.0, trials=50_000))

    def test_close_to_analytic_reference(self):
        cut = empirical_cutoff(RunConfig(4, 2, 5.0, trials=300_000, seed=33))
        assert cut.mu == pytest.approx(ANALYTIC_MU_4_2_5DB, rel=0.015)
        assert cut.provenance == "empirical"

    def test_cutoff_config_guard(self):
        cfg = RunConfig(2, 2, 5.0, trials=1000, seed=1)
        wrong_km = CutoffValue(0.4, "analytic", config=(4, 2, 10**0.5))
        with pytest.raises(ConfigError):
            run_monte_carlo(cfg, wrong_km)
        wrong_p = CutoffValue(0.4, "analytic", config=(2, 2, 99.0))
        with pytest.raises(ConfigError):
            run_monte_carlo(cfg, wrong_p)

    def test_bisection_hits_budget(self):
        triples = draw_gain_triples(4, 2, 200_000, RngStream(77, 0))
        p_avg = 10**0.5
        mu = bisect_cutoff_on_triples(triples, p_avg)
        from zfbf_lab.scheduler import realization_power_rate

        power = realization_power_rate(*triples, mu)[0].mean()
        assert power == pytest.approx(p_avg, rel=0.006)


@pytest.fixture(scope="module")
def small_sweep():
    return sum_rate_sweep(
        [2], 5.0, range(2, 5), trials=60_000, seed=14, include_analytic=False
    )


class TestSweeps:

    def test_row_count_and_schema(self, small_sweep):
        # |grid| x |emitted scheme/source combinations|
        assert len(small_sweep.rows) == 3 * 2
        for row in small_sweep.rows:
            assert row.scheme in ("zfbf", "zfdp")
            assert row.source == "simulated"
            assert row.trials == 60_000

    def test_power_budget_satisfied(self, small_sweep):
        p_avg = 10**0.5
        for row in small_sweep.rows:
            assert row.mean_power <= 1.02 * p_avg

    def test_rate_nondecreasing_in_k(self, small_sweep):
        for scheme in ("zfbf", "zfdp"):
            rates = [r.mean_rate for r in small_sweep.rows if r.scheme == scheme]
            assert all(a <= b + 1e-9 for a, b in zip(rates, rates[1:]))

    def test_zfdp_rate_at_least_zfbf(self, small_sweep):
        by_k = {}
        for r in small_sweep.rows:
            by_k.setdefault(r.k_users, {})[r.scheme] = r.mean_rate
        for k, rates in by_k.items():
            assert rates["zfdp"] >= rates["zfbf"] * 0.99

    def test_cutoff_sweep_shape(self):
        res = cutoff_sweep([2], [0.0, 5.0], range(2, 5), trials=60_000, seed=15)
        assert len(res.rows) == 2 * 3 * 2
        for p_db in (0.0, 5.0):
            for scheme in ("zfbf", "zfdp"):
                mus = [
                    r.mu
                    for r in res.rows
                    if r.scheme == scheme and r.p_avg_db == p_db
                ]
                inv = [1.0 / m for m in mus]
                assert all(a >= b - 1e-9 for a, b in zip(inv, inv[1:]))
        # cutoff larger when the budget is smaller
        for scheme in ("zfbf", "zfdp"):
            for k in (2, 3, 4):
                mu0 = [r.mu for r in res.rows if r.scheme == scheme and r.p_avg_db == 0.0 and r.k_users == k]
                mu5 = [r.mu for r in res.rows if r.scheme == scheme and r.p_avg_db == 5.0 and r.k_users == k]
                assert mu0[0] > mu5[0]


@pytest.fixture(scope="module")
def sweep():
    return sum_rate_sweep(
        [2], 5.0, range(2, 4), trials=20_000, seed=16, include_analytic=False
    )


class TestEmission:

    def test_csv_format(self, sweep):
        text = sweep_to_csv(sweep)
        lines = text.strip().split("\n")
        assert lines[0].startswith("k_users,m_antennas,p_avg_db,mu,mean_rate")
        assert len(lines) == 1 + len(sweep.rows)
        assert "\r" not in text
        # 12 significant digits on floats
        mu_field = lines[1].split(",")[3]
        assert len(mu_field.replace(".", "").replace("-", "").lstrip("0")) >= 11

    def test_csv_unit_conversion_is_exact(self, sweep):
        nats = sweep_to_csv(sweep, rate_unit="nats").strip().split("\n")[1:]
        bits = sweep_to_csv(sweep, rate_unit="bits").strip().split("\n")[1:]
        for ln, lb in zip(nats, bits):
            rate_n = float(ln.split(",")[4])
            rate_b = float(lb.split(",")[4])
            assert rate_b == pytest.approx(rate_n / math.log(2), rel=1e-11)

    def test_json_roundtrip(self, sweep):
        text = sweep_to_json(sweep, {"seed": 16}, rate_unit="nats")
        doc = json.loads(text)
        assert doc["version"]
        assert doc["config"]["seed"] == 16
        assert len(doc["rows"]) == len(sweep.rows)

    def test_byte_identical_replay(self):
        a = sum_rate_sweep([2], 5.0, [2], trials=8192, seed=17, include_analytic=False)
        b = sum_rate_sweep([2], 5.0, [2], trials=8192, seed=17, include_analytic=False)
        assert sweep_to_csv(a) == sweep_to_csv(b)

    def test_plot_script_compiles(self, tmp_path):
        csv_path = tmp_path / "sweep.csv"
        script_path = tmp_path / "sweep_plot.py"
        csv_path.write_text("stub\n")
        emit_plot_script("rate", str(csv_path), str(script_path))
        source = script_path.read_text()
        compile(source, str(script_path), "exec")
        assert "matplotlib" in source
        emit_plot_script("inverse-cutoff", str(csv_path), str(script_path))
        compile(script_path.read_text(), str(script_path), "exec")


class TestPdfValidate:
    def test_histogram_respects_support(self):
        cfg = RunConfig(3, 2, 5.0, trials=50_000, seed=18)
        stats = run_monte_carlo(cfg, 0.5, hist_bins=10)
        counts = stats.histogram.counts
        n = counts.shape[0]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if j > i or k > j:
                        assert counts[i, j, k] == 0

    def test_masses_sum_near_one(self):
        edges = np.linspace(0.0, histogram_upper_edge(3, 2), 21)
        masses = expected_bin_masses(PdfParams(3, 2), edges, refine=5)
        assert masses.sum() == pytest.approx(1.0, abs=0.01)

    def test_smoke_small(self):
        report = pdf_validate(
            k=2, m=2, p_db=5.0, trials=200_000, bins=15, seed=19, mu=0.4
        )
        assert report.tv_distance < 0.05
        assert report.hist.total_trials == 200_000
