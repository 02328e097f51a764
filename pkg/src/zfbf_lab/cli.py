"""Command-line interface.

Subcommands: cutoff, simulate, sumrate-analytic, pdf-check, fig1, fig2,
selftest.  A flat key=value config file can seed any flag; explicit
flags win.  Exit codes: 0 success, 2 configuration error, 3 numerical
non-convergence, 4 self-test failure.
"""

import argparse
import json
import math
import sys

from . import __version__
from .analytic import PdfParams, scheduling_region_integral, solve_cutoff
from .errors import ConfigError, NonConvergenceError, ZfbfLabError
from .harness import (
    RunConfig,
    cutoff_sweep,
    db_to_linear,
    emit_plot_script,
    empirical_cutoff,
    pdf_validate,
    run_monte_carlo,
    sum_rate_sweep,
    sweep_to_csv,
    sweep_to_json,
    write_text,
)
from .mathkit import RngStream
from .selftest import run_selftest
from .zfdp import zfdp_empirical_cutoff

_DEFAULTS = {
    "users": 4,
    "antennas": 2,
    "power_db": 5.0,
    "trials": 1_000_000,
    "seed": 0,
    "scheme": "zfbf",
    "unit": "nats",
    "format": "csv",
    "workers": 1,
    "out": None,
    "method": "analytic",
    "bins": 20,
    "users_range": "2:8",
    "antennas_list": "2,4",
    "power_db_list": "0,5",
}

_INT_KEYS = {"users", "antennas", "trials", "seed", "workers", "bins"}
_FLOAT_KEYS = {"power_db"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file supplying flag defaults")
    p.add_argument("--users", "-K", type=int, help="number of users K")
    p.add_argument("--antennas", "-M", type=int, help="number of transmit antennas M")
    p.add_argument("--power-db", type=float, dest="power_db", help="average power budget in dB")
    p.add_argument("--trials", type=int, help="Monte Carlo trials")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--scheme", choices=("zfbf", "zfdp"), help="transmission scheme")
    p.add_argument("--unit", choices=("nats", "bits"), help="rate unit for outputs")
    p.add_argument("--format", choices=("csv", "json"), help="output format")
    p.add_argument("--workers", type=int, help="parallel workers")
    p.add_argument("--out", help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="zfbf-lab",
        description="Greedy zero-forcing beamforming laboratory",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cutoff", help="solve the water-filling cutoff")
    _add_common(p)
    p.add_argument("--method", choices=("analytic", "empirical"), help="cutoff solver")

    p = sub.add_parser("simulate", help="Monte Carlo run at the solved cutoff")
    _add_common(p)

    p = sub.add_parser("sumrate-analytic", help="average sum rate from the gain law")
    _add_common(p)

    p = sub.add_parser("pdf-check", help="histogram vs closed-form gain density")
    _add_common(p)
    p.add_argument("--bins", type=int, help="histogram bins per axis")

    p = sub.add_parser("fig1", help="sum-rate sweep over K for both schemes")
    _add_common(p)
    p.add_argument("--users-range", dest="users_range", help="K range lo:hi (inclusive)")
    p.add_argument("--antennas-list", dest="antennas_list", help="comma list of M values")
    p.add_argument("--no-analytic", action="store_true", help="skip analytic rows")
    p.add_argument("--plot-script", dest="plot_script", help="also emit a plot script here")

    p = sub.add_parser("fig2", help="cutoff sweep over K for both schemes")
    _add_common(p)
    p.add_argument("--users-range", dest="users_range", help="K range lo:hi (inclusive)")
    p.add_argument("--antennas-list", dest="antennas_list", help="comma list of M values")
    p.add_argument("--power-db-list", dest="power_db_list", help="comma list of P values in dB")
    p.add_argument("--analytic-zfbf", action="store_true", help="solve ZFBF cutoffs analytically")
    p.add_argument("--plot-script", dest="plot_script", help="also emit a plot script here")

    p = sub.add_parser("selftest", help="run the built-in verification checks")
    _add_common(p)
    return ap


def _load_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _resolve(args: argparse.Namespace) -> dict:
    """Merge CLI flags over config-file values over built-in defaults."""
    file_vals = _load_config_file(args.config) if getattr(args, "config", None) else {}
    opts = {}
    for key, default in _DEFAULTS.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            opts[key] = cli_val
            continue
        if key in file_vals:
            raw = file_vals[key]
            if key in _INT_KEYS:
                opts[key] = int(raw)
            elif key in _FLOAT_KEYS:
                opts[key] = float(raw)
            else:
                opts[key] = raw
            continue
        opts[key] = default
    return opts


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_range(text: str) -> list[int]:
    if ":" in text:
        lo, _, hi = text.partition(":")
        return list(range(int(lo), int(hi) + 1))
    return _parse_int_list(text)


def _rate_scale(unit: str) -> float:
    return 1.0 if unit == "nats" else 1.0 / math.log(2.0)


def _emit(opts: dict, payload: dict, columns: list[str]) -> None:
    if opts["format"] == "json":
        text = json.dumps(
            {"config": {k: opts[k] for k in sorted(opts) if k != "out"},
             "results": payload,
             "version": __version__},
            indent=2,
        ) + "\n"
    else:
        header = ",".join(columns)
        row = ",".join(
            format(payload[c], ".12g") if isinstance(payload[c], float) else str(payload[c])
            for c in columns
        )
        text = header + "\n" + row + "\n"
    if opts["out"]:
        write_text(opts["out"], text)
    else:
        sys.stdout.write(text)


def _cmd_cutoff(opts: dict) -> int:
    k, m, p_db = opts["users"], opts["antennas"], opts["power_db"]
    p_avg = db_to_linear(p_db)
    if opts["method"] == "analytic":
        if opts["scheme"] == "zfdp":
            raise ConfigError("no analytic cutoff for the dirty-paper benchmark")
        cut = solve_cutoff(PdfParams(k, m), p_avg)
        trials = 0
    elif opts["scheme"] == "zfdp":
        cut = zfdp_empirical_cutoff(k, m, p_avg, opts["trials"], RngStream(opts["seed"], 3 << 32))
        trials = opts["trials"]
    else:
        cfg = RunConfig(k, m, p_db, trials=opts["trials"], seed=opts["seed"], scheme=opts["scheme"])
        cut = empirical_cutoff(cfg)
        trials = opts["trials"]
    payload = {
        "k_users": k,
        "m_antennas": m,
        "p_avg_db": p_db,
        "scheme": opts["scheme"],
        "mu": cut.mu,
        "inverse_mu": 1.0 / cut.mu,
        "provenance": cut.provenance,
        "trials": trials,
    }
    _emit(opts, payload, list(payload))
    return 0


def _cmd_simulate(opts: dict) -> int:
    k, m, p_db = opts["users"], opts["antennas"], opts["power_db"]
    cfg = RunConfig(
        k, m, p_db,
        trials=opts["trials"], seed=opts["seed"], scheme=opts["scheme"],
        rate_unit=opts["unit"], output=opts["format"], workers=opts["workers"],
    )
    scale = _rate_scale(opts["unit"])
    if opts["scheme"] == "zfdp":
        from .zfdp import draw_gain_sequences, power_rate_from_gains

        cut = zfdp_empirical_cutoff(k, m, cfg.p_avg, max(opts["trials"], 10**5),
                                    RngStream(opts["seed"], 3 << 32))
        gains = draw_gain_sequences(k, m, opts["trials"], RngStream(opts["seed"], 0))
        power, rate = power_rate_from_gains(gains, cut.mu)
        payload = {
            "k_users": k, "m_antennas": m, "p_avg_db": p_db, "scheme": "zfdp",
            "mu": cut.mu, "mean_rate": float(rate.mean()) * scale,
            "mean_power": float(power.mean()),
            "stderr_rate": float(rate.std() / math.sqrt(len(rate))) * scale,
            "trials": opts["trials"], "rate_unit": opts["unit"],
        }
    else:
        cut = solve_cutoff(PdfParams(k, m), cfg.p_avg)
        stats = run_monte_carlo(cfg, cut)
        payload = {
            "k_users": k, "m_antennas": m, "p_avg_db": p_db, "scheme": "zfbf",
            "mu": cut.mu, "mean_rate": stats.mean_rate * scale,
            "mean_power": stats.mean_power,
            "stderr_rate": stats.stderr_rate * scale,
            "frac_no_user": stats.schedule_size_freq[0],
            "frac_one_user": stats.schedule_size_freq[1],
            "frac_two_users": stats.schedule_size_freq[2],
            "trials": opts["trials"], "rate_unit": opts["unit"],
        }
    _emit(opts, payload, list(payload))
    return 0


def _cmd_sumrate_analytic(opts: dict) -> int:
    k, m, p_db = opts["users"], opts["antennas"], opts["power_db"]
    p_avg = db_to_linear(p_db)
    params = PdfParams(k, m)
    cut = solve_cutoff(params, p_avg)
    rate = scheduling_region_integral(params, cut.mu, "rate")
    scale = _rate_scale(opts["unit"])
    payload = {
        "k_users": k, "m_antennas": m, "p_avg_db": p_db,
        "mu": cut.mu, "mean_rate": rate * scale, "rate_unit": opts["unit"],
    }
    _emit(opts, payload, list(payload))
    return 0


def _cmd_pdf_check(opts: dict) -> int:
    report = pdf_validate(
        k=opts["users"], m=opts["antennas"], p_db=opts["power_db"],
        trials=opts["trials"], bins=opts["bins"], seed=opts["seed"],
        workers=opts["workers"],
    )
    payload = {
        "k_users": opts["users"], "m_antennas": opts["antennas"],
        "p_avg_db": opts["power_db"], "trials": opts["trials"],
        "bins": opts["bins"], "tv_distance": report.tv_distance,
        "overflow_empirical": report.overflow_empirical,
        "overflow_expected": report.overflow_expected,
        "max_abs_residual": float(abs(report.residuals).max()),
    }
    _emit(opts, payload, list(payload))
    return 0


def _sweep_out(opts: dict, result, kind: str, plot_script: str | None) -> None:
    if opts["format"] == "json":
        text = sweep_to_json(result, {k: opts[k] for k in sorted(opts) if k != "out"},
                             rate_unit=opts["unit"])
    else:
        text = sweep_to_csv(result, rate_unit=opts["unit"])
    if opts["out"]:
        write_text(opts["out"], text)
        if plot_script:
            emit_plot_script(kind, opts["out"], plot_script)
    else:
        sys.stdout.write(text)


def _cmd_fig1(opts: dict, args) -> int:
    k_list = _parse_range(opts["users_range"])
    m_list = _parse_int_list(opts["antennas_list"])
    result = sum_rate_sweep(
        m_list, opts["power_db"], k_list, opts["trials"], opts["seed"],
        include_analytic=not args.no_analytic,
    )
    _sweep_out(opts, result, "rate", getattr(args, "plot_script", None))
    return 0


def _cmd_fig2(opts: dict, args) -> int:
    k_list = _parse_range(opts["users_range"])
    m_list = _parse_int_list(opts["antennas_list"])
    p_list = _parse_float_list(opts["power_db_list"])
    result = cutoff_sweep(
        m_list, p_list, k_list, opts["trials"], opts["seed"],
        analytic_zfbf=args.analytic_zfbf,
    )
    _sweep_out(opts, result, "inverse-cutoff", getattr(args, "plot_script", None))
    return 0


def _cmd_selftest(opts: dict) -> int:
    results = run_selftest()
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"selftest {status}: {r.name} — {r.detail}")
        failed += 0 if r.passed else 1
    print(f"selftest: {len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 4


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        if args.command == "cutoff":
            return _cmd_cutoff(opts)
        if args.command == "simulate":
            return _cmd_simulate(opts)
        if args.command == "sumrate-analytic":
            return _cmd_sumrate_analytic(opts)
        if args.command == "pdf-check":
            return _cmd_pdf_check(opts)
        if args.command == "fig1":
            return _cmd_fig1(opts, args)
        if args.command == "fig2":
            return _cmd_fig2(opts, args)
        if args.command == "selftest":
            return _cmd_selftest(opts)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(
            f"error: {exc} (best estimate {exc.best_estimate}, bound {exc.error_bound})",
            file=sys.stderr,
        )
        return 3
    except ZfbfLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
