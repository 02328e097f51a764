"""Monte Carlo engine, empirical cutoffs, figure sweeps and data emission.

Trials are drawn in fixed-size batches, one counter-based substream per
batch, so results are bitwise reproducible for a given (seed, trials)
no matter how many workers run.  Per-trial scheduling reduces to the
cutoff-free gain triple (gamma1, gamma2, beta2); every statistic at a
given cutoff is a vectorized function of the stored triples, which also
makes the common-random-numbers cutoff bisection exact.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .analytic import (
    PdfParams,
    joint_pdf_grid,
    scheduling_region_integral,
    solve_cutoff,
)
from .errors import ConfigError, DomainError
from .mathkit import (
    IntegrationSpec,
    RngStream,
    complex_gaussian_from_uniform,
    find_root,
    gamma_fn,
    upper_incomplete_gamma,
)
from .scheduler import CutoffValue, mu_value, realization_power_rate
from .zfdp import bisect_cutoff_on_gains, diag_gain_sequences, power_rate_from_gains

BATCH_TRIALS = 1 << 15
# disjoint substream namespaces per purpose
_STREAM_RUN = 0
_STREAM_EMPIRICAL = 1 << 32
_STREAM_SWEEP = 2 << 32

_SCHEMES = ("zfbf", "zfdp")
_UNITS = ("nats", "bits")
_FORMATS = ("csv", "json")

CSV_COLUMNS = (
    "k_users",
    "m_antennas",
    "p_avg_db",
    "mu",
    "mean_rate",
    "mean_power",
    "scheme",
    "source",
    "trials",
    "stderr_rate",
)


def db_to_linear(p_db: float) -> float:
    return 10.0 ** (p_db / 10.0)


@dataclass(frozen=True)
class RunConfig:
    """One simulation run: system size, budget, trials and bookkeeping."""

    k_users: int
    m_antennas: int
    p_avg_db: float
    trials: int = 1_000_000
    seed: int = 0
    scheme: str = "zfbf"
    rate_unit: str = "nats"
    output: str = "csv"
    workers: int = 1

    def __post_init__(self):
        if self.k_users < 2 or self.m_antennas < 2:
            raise ConfigError("need k_users >= 2 and m_antennas >= 2")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"scheme must be one of {_SCHEMES}")
        if self.rate_unit not in _UNITS:
            raise ConfigError(f"rate_unit must be one of {_UNITS}")
        if self.output not in _FORMATS:
            raise ConfigError(f"output must be one of {_FORMATS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def p_avg(self) -> float:
        return db_to_linear(self.p_avg_db)


@dataclass(frozen=True)
class HistogramGrid:
    """Triple-gain histogram on a common [0, hi] grid per axis."""

    edges: tuple[np.ndarray, np.ndarray, np.ndarray]
    counts: np.ndarray
    total_trials: int
    empty_schedule_count: int

    @property
    def overflow(self) -> int:
        return self.total_trials - int(self.counts.sum())


@dataclass(frozen=True)
class MonteCarloStats:
    """Aggregates of one Monte Carlo run (rates in nats)."""

    trials: int
    mu: float
    mean_rate: float
    mean_power: float
    stderr_rate: float
    schedule_size_freq: tuple[float, float, float]
    histogram: HistogramGrid | None = None


@dataclass(frozen=True)
class SweepRow:
    k_users: int
    m_antennas: int
    p_avg_db: float
    mu: float
    mean_rate: float
    mean_power: float
    scheme: str
    source: str  # "analytic" or "simulated"
    trials: int
    stderr_rate: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]


def _batch_sizes(trials: int) -> list[int]:
    sizes = [BATCH_TRIALS] * (trials // BATCH_TRIALS)
    if trials % BATCH_TRIALS:
        sizes.append(trials % BATCH_TRIALS)
    return sizes


def draw_gain_triples_batch(
    k: int, m: int, n: int, stream: RngStream
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gain triples for one batch of n trials drawn from one substream."""
    u = stream.generator().random((n, k, m, 2))
    h = complex_gaussian_from_uniform(u)
    return gain_triples_from_channels(h)


def gain_triples_from_channels(
    h: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized greedy selection over a (trials, K, M) channel tensor."""
    n = h.shape[0]
    v = np.sum(h.real**2 + h.imag**2, axis=2)
    rows = np.arange(n)
    k1 = np.argmax(v, axis=1)
    g1 = v[rows, k1]
    h1 = h[rows, k1]
    cross = np.abs(np.einsum("nkm,nm->nk", h, h1.conj())) ** 2
    z = np.maximum(v - cross / g1[:, None], 0.0)
    score = z * z / v
    score[rows, k1] = -1.0
    k2 = np.argmax(score, axis=1)
    return g1, v[rows, k2], z[rows, k2]


def _mc_batch(args) -> tuple:
    (k, m, seed, stream_id, n, mu, nbins, hist_hi) = args
    g1, g2, b2 = draw_gain_triples_batch(k, m, n, RngStream(seed, stream_id))
    power, rate, size = realization_power_rate(g1, g2, b2, mu)
    counts = np.bincount(size, minlength=3)
    hist = None
    if nbins:
        edges = np.linspace(0.0, hist_hi, nbins + 1)
        hist, _ = np.histogramdd(
            np.stack([g1, g2, b2], axis=1), bins=(edges, edges, edges)
        )
        hist = hist.astype(np.int64)
    return (
        n,
        float(rate.sum()),
        float(np.dot(rate, rate)),
        float(power.sum()),
        counts,
        hist,
    )


def run_monte_carlo(
    config: RunConfig,
    mu,
    hist_bins: int = 0,
    hist_hi: float | None = None,
) -> MonteCarloStats:
    """Average rate/power and schedule-size frequencies at a fixed cutoff.

    Deterministic for fixed (seed, trials) independent of ``workers``:
    batches own disjoint substreams and are reduced in batch order.
    """
    muv = mu_value(mu, config.k_users, config.m_antennas)
    if isinstance(mu, CutoffValue) and mu.config is not None:
        if abs(mu.config[2] - config.p_avg) > 1e-9 * max(config.p_avg, 1.0):
            raise ConfigError(
                f"cutoff solved for P={mu.config[2]} used with P={config.p_avg}"
            )
    if hist_bins and hist_hi is None:
        hist_hi = histogram_upper_edge(config.k_users, config.m_antennas)
    tasks = [
        (
            config.k_users,
            config.m_antennas,
            config.seed,
            _STREAM_RUN + i,
            n,
            muv,
            hist_bins,
            hist_hi,
        )
        for i, n in enumerate(_batch_sizes(config.trials))
    ]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_mc_batch, tasks, chunksize=1))
    else:
        results = [_mc_batch(t) for t in tasks]

    total = 0
    rate_sum = 0.0
    rate_sq_sum = 0.0
    power_sum = 0.0
    size_counts = np.zeros(3, dtype=np.int64)
    hist_counts = None
    for n, rs, rss, ps, sc, hist in results:
        total += n
        rate_sum += rs
        rate_sq_sum += rss
        power_sum += ps
        size_counts += sc
        if hist is not None:
            hist_counts = hist if hist_counts is None else hist_counts + hist
    mean_rate = rate_sum / total
    var = max(rate_sq_sum / total - mean_rate**2, 0.0)
    stderr = math.sqrt(var / total) if total > 1 else 0.0
    histogram = None
    if hist_counts is not None:
        edges = np.linspace(0.0, hist_hi, hist_bins + 1)
        histogram = HistogramGrid(
            edges=(edges, edges, edges),
            counts=hist_counts,
            total_trials=total,
            empty_schedule_count=int(size_counts[0]),
        )
    return MonteCarloStats(
        trials=total,
        mu=muv,
        mean_rate=mean_rate,
        mean_power=power_sum / total,
        stderr_rate=stderr,
        schedule_size_freq=tuple(size_counts / total),
        histogram=histogram,
    )


def draw_gain_triples(
    k: int, m: int, trials: int, base: RngStream
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gain triples for `trials` draws (batched substreams off ``base``)."""
    parts = []
    for i, n in enumerate(_batch_sizes(trials)):
        parts.append(draw_gain_triples_batch(k, m, n, base.substream(i)))
    g1 = np.concatenate([p[0] for p in parts])
    g2 = np.concatenate([p[1] for p in parts])
    b2 = np.concatenate([p[2] for p in parts])
    return g1, g2, b2


def bisect_cutoff_on_triples(
    triples: tuple[np.ndarray, np.ndarray, np.ndarray],
    p_avg: float,
    power_rtol: float = 0.005,
) -> float:
    """Common-random-numbers bisection of the cutoff on stored triples."""
    g1, g2, b2 = triples

    def mean_power(mu: float) -> float:
        return float(realization_power_rate(g1, g2, b2, mu)[0].mean())

    lo, hi = 1e-6, 1.0
    while mean_power(hi) > p_avg:
        hi *= 2.0
        if hi > 1e9:
            raise ConfigError("empirical cutoff failed to bracket from above")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p = mean_power(mid)
        if abs(p - p_avg) <= power_rtol * p_avg:
            return mid
        if p > p_avg:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def empirical_cutoff(config: RunConfig) -> CutoffValue:
    """Cutoff matching the Monte Carlo mean scheduled power to the budget.

    Draws config.trials realizations once and bisects on the stored
    triples (common random numbers), so the objective is monotone
    trial by trial.
    """
    if config.trials < 10**5:
        raise ConfigError(
            f"need trials >= 1e5 for a stable empirical cutoff, got {config.trials}"
        )
    triples = draw_gain_triples(
        config.k_users,
        config.m_antennas,
        config.trials,
        RngStream(config.seed, _STREAM_EMPIRICAL),
    )
    mu = bisect_cutoff_on_triples(triples, config.p_avg)
    return CutoffValue(
        mu=mu,
        provenance="empirical",
        config=(config.k_users, config.m_antennas, config.p_avg),
    )


# ----- figure sweeps ------------------------------------------------------


def _sim_row(k, m, p_db, mu, triples, scheme) -> SweepRow:
    g1, g2, b2 = triples
    power, rate, _ = realization_power_rate(g1, g2, b2, mu)
    n = g1.shape[0]
    mean_rate = float(rate.mean())
    stderr = float(rate.std() / math.sqrt(n))
    return SweepRow(
        k_users=k,
        m_antennas=m,
        p_avg_db=p_db,
        mu=mu,
        mean_rate=mean_rate,
        mean_power=float(power.mean()),
        scheme=scheme,
        source="simulated",
        trials=n,
        stderr_rate=stderr,
    )


def _zfdp_row(k, m, p_db, mu, gains) -> SweepRow:
    power, rate = power_rate_from_gains(gains, mu)
    n = gains.shape[0]
    return SweepRow(
        k_users=k,
        m_antennas=m,
        p_avg_db=p_db,
        mu=mu,
        mean_rate=float(rate.mean()),
        mean_power=float(power.mean()),
        scheme="zfdp",
        source="simulated",
        trials=n,
        stderr_rate=float(rate.std() / math.sqrt(n)),
    )


def _sweep_draws(m: int, k_list: list[int], trials: int, seed: int):
    """Per-K triples and dirty-paper gain sequences from nested user sets.

    One channel tensor is drawn at max(k_list) users and each K uses its
    first K rows, coupling the draws across K (smooth curves in K).
    """
    k_max = max(k_list)
    triples = {k: [] for k in k_list}
    gains = {k: [] for k in k_list}
    base = RngStream(seed, _STREAM_SWEEP)
    for i, n in enumerate(_batch_sizes(trials)):
        u = base.substream(i).generator().random((n, k_max, m, 2))
        h = complex_gaussian_from_uniform(u)
        for k in k_list:
            triples[k].append(gain_triples_from_channels(h[:, :k, :]))
            gains[k].append(diag_gain_sequences(h[:, :k, :]))
    out_t = {
        k: tuple(np.concatenate([p[i] for p in parts]) for i in range(3))
        for k, parts in triples.items()
    }
    out_g = {k: np.concatenate(parts, axis=0) for k, parts in gains.items()}
    return out_t, out_g


def sum_rate_sweep(
    m_list,
    p_db: float,
    k_list,
    trials: int,
    seed: int,
    include_analytic: bool = True,
    spec: IntegrationSpec | None = None,
) -> SweepResult:
    """Mean sum rate versus user count for both schemes at one budget.

    Emits, per (K, M): an analytic and a simulated row for the greedy
    two-user scheme (sharing the analytically solved cutoff) and a
    simulated row for the dirty-paper benchmark at its empirical cutoff.
    With include_analytic=False the two-user cutoff is solved empirically
    from the same draws instead.
    """
    p_avg = db_to_linear(p_db)
    rows: list[SweepRow] = []
    k_list = sorted(set(int(k) for k in k_list))
    for m in m_list:
        triples, gains = _sweep_draws(m, k_list, trials, seed)
        bracket = None
        for k in k_list:
            if include_analytic:
                params = PdfParams(k, m)
                cutoff = solve_cutoff(params, p_avg, spec, bracket=bracket)
                bracket = (0.9 * cutoff.mu, 1.2 * cutoff.mu)
                a_rate = scheduling_region_integral(params, cutoff.mu, "rate", spec)
                a_power = scheduling_region_integral(params, cutoff.mu, "power", spec)
                rows.append(
                    SweepRow(
                        k_users=k,
                        m_antennas=m,
                        p_avg_db=p_db,
                        mu=cutoff.mu,
                        mean_rate=a_rate,
                        mean_power=a_power,
                        scheme="zfbf",
                        source="analytic",
                        trials=0,
                        stderr_rate=0.0,
                    )
                )
                mu_bf = cutoff.mu
            else:
                mu_bf = bisect_cutoff_on_triples(triples[k], p_avg)
            rows.append(_sim_row(k, m, p_db, mu_bf, triples[k], "zfbf"))
            mu_dp = bisect_cutoff_on_gains(gains[k], p_avg)
            rows.append(_zfdp_row(k, m, p_db, mu_dp, gains[k]))
    return SweepResult(tuple(rows))


def cutoff_sweep(
    m_list,
    p_db_list,
    k_list,
    trials: int,
    seed: int,
    analytic_zfbf: bool = False,
    spec: IntegrationSpec | None = None,
) -> SweepResult:
    """Cutoff (and rate/power at it) versus user count for both schemes.

    Cutoffs are empirical by default (common random numbers shared
    across K and budgets); analytic_zfbf=True solves the two-user
    scheme's cutoff from the gain law instead.
    """
    rows: list[SweepRow] = []
    k_list = sorted(set(int(k) for k in k_list))
    for m in m_list:
        triples, gains = _sweep_draws(m, k_list, trials, seed)
        for p_db in p_db_list:
            p_avg = db_to_linear(p_db)
            bracket = None
            for k in k_list:
                if analytic_zfbf:
                    cutoff = solve_cutoff(PdfParams(k, m), p_avg, spec, bracket=bracket)
                    bracket = (0.9 * cutoff.mu, 1.2 * cutoff.mu)
                    mu_bf = cutoff.mu
                    source = "analytic"
                else:
                    mu_bf = bisect_cutoff_on_triples(triples[k], p_avg)
                    source = "simulated"
                row = _sim_row(k, m, p_db, mu_bf, triples[k], "zfbf")
                rows.append(SweepRow(**{**asdict(row), "source": source}))
                mu_dp = bisect_cutoff_on_gains(gains[k], p_avg)
                rows.append(_zfdp_row(k, m, p_db, mu_dp, gains[k]))
    return SweepResult(tuple(rows))


# ----- gain-law validation ------------------------------------------------


@dataclass(frozen=True)
class PdfCheckReport:
    """Histogram-versus-density comparison for the selected gain triple."""

    tv_distance: float
    hist: HistogramGrid
    expected_masses: np.ndarray
    residuals: np.ndarray  # empirical minus expected, per bin
    overflow_empirical: float
    overflow_expected: float


def histogram_upper_edge(k: int, m: int, mass_out: float = 5e-4) -> float:
    """Grid edge so the largest norm exceeds it with probability mass_out."""
    target = mass_out / k

    def f(x):
        return upper_incomplete_gamma(m, x) / gamma_fn(m) - target

    return find_root(f, 1.0, 200.0, rel_tol=1e-10)


def expected_bin_masses(
    params: PdfParams, edges: np.ndarray, refine: int = 5
) -> np.ndarray:
    """Density mass per histogram bin by a refined midpoint rule.

    Each bin is split refine-fold per axis.  Because all three axes
    share one grid, the support boundaries gamma1 = gamma2 and
    gamma2 = beta2 run exactly along sub-cell diagonals, putting those
    midpoints on the boundary; such cells are weighted by their exact
    inside fraction (1/2 per binding diagonal, 1/6 on the triple
    diagonal) instead of full volume.
    """
    nbins = len(edges) - 1
    width = edges[1] - edges[0]
    sub = width / refine
    n_fine = nbins * refine
    mids = edges[0] + sub * (np.arange(n_fine) + 0.5)
    g1, g2, b2 = np.meshgrid(mids, mids, mids, indexing="ij")
    pdf = joint_pdf_grid(params, g1, g2, b2) * sub**3
    idx = np.arange(n_fine)
    eq_12 = idx[:, None, None] == idx[None, :, None]
    eq_23 = idx[None, :, None] == idx[None, None, :]
    frac = np.where(eq_12, 0.5, 1.0) * np.where(eq_23, 0.5, 1.0)
    frac = np.where(eq_12 & eq_23, 1.0 / 6.0, frac)
    fine = (pdf * frac).reshape(nbins, refine, nbins, refine, nbins, refine)
    return fine.sum(axis=(1, 3, 5))


def pdf_validate(
    k: int,
    m: int,
    p_db: float,
    trials: int,
    bins: int,
    seed: int,
    mu=None,
    workers: int = 1,
    refine: int = 5,
) -> PdfCheckReport:
    """Total-variation distance between the simulated gain-triple
    histogram and the closed-form density's bin masses."""
    params = PdfParams(k, m)
    if mu is None:
        mu = solve_cutoff(params, db_to_linear(p_db))
    config = RunConfig(
        k_users=k,
        m_antennas=m,
        p_avg_db=p_db,
        trials=trials,
        seed=seed,
        workers=workers,
    )
    stats = run_monte_carlo(config, mu, hist_bins=bins)
    hist = stats.histogram
    masses = expected_bin_masses(params, hist.edges[0], refine=refine)
    emp = hist.counts / hist.total_trials
    over_emp = hist.overflow / hist.total_trials
    over_exp = max(0.0, 1.0 - float(masses.sum()))
    tv = 0.5 * (float(np.abs(emp - masses).sum()) + abs(over_emp - over_exp))
    return PdfCheckReport(
        tv_distance=tv,
        hist=hist,
        expected_masses=masses,
        residuals=emp - masses,
        overflow_empirical=over_emp,
        overflow_expected=over_exp,
    )


# ----- emission -----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def sweep_to_csv(result: SweepResult, rate_unit: str = "nats") -> str:
    """Render sweep rows as CSV (12 significant digits, LF endings)."""
    scale = 1.0 if rate_unit == "nats" else 1.0 / math.log(2.0)
    lines = [",".join(CSV_COLUMNS)]
    for r in result.rows:
        vals = (
            r.k_users,
            r.m_antennas,
            r.p_avg_db,
            r.mu,
            r.mean_rate * scale,
            r.mean_power,
            r.scheme,
            r.source,
            r.trials,
            r.stderr_rate * scale,
        )
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def sweep_to_json(result: SweepResult, config: dict, rate_unit: str = "nats") -> str:
    scale = 1.0 if rate_unit == "nats" else 1.0 / math.log(2.0)
    rows = []
    for r in result.rows:
        d = asdict(r)
        d["mean_rate"] *= scale
        d["stderr_rate"] *= scale
        rows.append(d)
    return json.dumps(
        {"config": config, "rows": rows, "version": __version__}, indent=2
    )


def write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


_PLOT_TEMPLATE = """\
#!/usr/bin/env python3
\"\"\"Plot {what} from {csv_name} (generated alongside the data).\"\"\"
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = []
with open({csv_name!r}) as fh:
    for row in csv.DictReader(fh):
        rows.append(row)

series = defaultdict(list)
for r in rows:
    key = (r["m_antennas"], r["p_avg_db"], r["scheme"], r["source"])
    series[key].append((int(r["k_users"]), float(r[{ycol!r}])))

plt.figure(figsize=(7, 5))
for (m, p_db, scheme, source), pts in sorted(series.items()):
    pts.sort()
    xs = [p[0] for p in pts]
    ys = [{ymap} for p in pts]
    style = "--" if source == "analytic" else "-"
    plt.plot(xs, ys, style, marker="o", markersize=3,
             label=f"{{scheme}}/{{source}} M={{m}} P={{p_db}} dB")
plt.xlabel("number of users K")
plt.ylabel({ylabel!r})
plt.grid(True, alpha=0.4)
plt.legend(fontsize=8)
plt.tight_layout()
plt.savefig({png_name!r}, dpi=150)
print("wrote", {png_name!r})
"""


def emit_plot_script(kind: str, csv_path: str, script_path: str) -> None:
    """Write a standalone matplotlib script that plots the sweep CSV."""
    import os

    csv_name = os.path.basename(csv_path)
    png_name = os.path.splitext(csv_name)[0] + ".png"
    if kind == "rate":
        text = _PLOT_TEMPLATE.format(
            what="mean sum rate vs K",
            csv_name=csv_name,
            ycol="mean_rate",
            ymap="p[1]",
            ylabel="mean sum rate",
            png_name=png_name,
        )
    elif kind == "inverse-cutoff":
        text = _PLOT_TEMPLATE.format(
            what="inverse cutoff vs K",
            csv_name=csv_name,
            ycol="mu",
            ymap="1.0 / p[1]",
            ylabel="1 / cutoff",
            png_name=png_name,
        )
    else:
        raise DomainError(f"unknown plot kind {kind!r}")
    write_text(script_path, text)
