"""Command-line front end.

Usage::

    blipsum SUBCOMMAND CONFIG [--set section.key=value ...] [--out PATH]
            [--summary PATH] [--echo]

Each run writes its CSV (and optional JSON summary), then prints a one-line
summary. Failures print ``error: category=<name>: <message>`` on stderr,
remove any partial outputs and exit with 2 (configuration or domain),
3 (convergence) or 4 (resources).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import oracles
from .bath import build_kernel_table
from .config import RunConfig, dump_config, parse_config, with_engine
from .engine import transition_probability, transition_probability_niba
from .drive import bias_at, g_integral, w1_work
from .errors import BlipsumError, ConfigError
from .report import series_summary, write_compare_csv, write_json, write_rows, write_series_csv

SUBCOMMANDS = ("kernels", "transition", "niba", "oracle-compare", "work-stats", "tpm")


@dataclasses.dataclass
class Outcome:
    """What a subcommand reports back: the summary line fields and JSON body."""

    max_p: float
    max_error: float
    summary: dict
    extra: str = ""


def _free_case(cfg: RunConfig) -> bool:
    return cfg.bath.alpha == 0 and cfg.system.epsilon0 == 0 and cfg.drive.kind == "none"


def _run_kernels(cfg: RunConfig, csv_path: Path, outputs: list) -> Outcome:
    table = build_kernel_table(cfg.bath, cfg.tau_max, cfg.kernel.tolerance)
    outputs.append(csv_path)
    table.to_csv(csv_path)
    summary = {"points": table.tau_grid.size, "tau_max": table.tau_max, "all_zero": table.is_zero}
    return Outcome(float(np.max(table.s_values)), cfg.kernel.tolerance, summary,
                   f"points={table.tau_grid.size}")


def _run_series(cfg: RunConfig, csv_path: Path, outputs: list, niba: bool) -> Outcome:
    table = build_kernel_table(cfg.bath, cfg.tau_max, cfg.kernel.tolerance)
    if niba:
        engine = with_engine(cfg, niba=True, zero_lambda=True, nearest_sojourn_only=True).engine
        result = transition_probability_niba(cfg.system, table, cfg.drive, engine)
    else:
        result = transition_probability(cfg.system, table, cfg.drive, cfg.engine)
    outputs.append(csv_path)
    write_series_csv(result, csv_path)
    summary = series_summary(result)
    extra = "" if result.converged else "nonconverged"
    if _free_case(cfg):
        exact = np.sin(0.5 * cfg.system.delta * result.times) ** 2
        dev = float(np.max(np.abs(result.p_values - exact)))
        summary["free_tunneling_max_deviation"] = dev
        extra = f"free-tunneling dev={dev:.3e} {extra}".strip()
    err = float(np.max(result.truncation_estimate + 3.0 * result.mc_stderr))
    return Outcome(float(np.max(result.p_values)), err, summary, extra)


def _run_compare(cfg: RunConfig, csv_path: Path, outputs: list) -> Outcome:
    times = cfg.engine.times
    if cfg.bath.alpha == 0:
        oracle_name = "tls-ode"
        table = build_kernel_table(cfg.bath, cfg.tau_max, cfg.kernel.tolerance)
        p_oracle = oracles.tls_ode_probability(cfg.system, cfg.drive, times)
    elif cfg.fewmode.modes > 0:
        oracle_name = f"few-mode({cfg.fewmode.modes})"
        modes = oracles.FewModeBath.discretize(cfg.bath, cfg.fewmode.modes, cfg.fewmode.fock_cutoff)
        # the series sees exactly the discretized bath so the comparison is like for like
        table = modes.kernel_table(cfg.tau_max, cfg.kernel.tolerance)
        p_oracle = oracles.few_mode_exact_probability(
            cfg.system, modes, cfg.drive, times,
            tolerance=cfg.fewmode.tolerance,
            thermal_samples=cfg.fewmode.thermal_samples,
            seed=cfg.engine.seed,
        )
    else:
        raise ConfigError("oracle-compare with alpha > 0 needs fewmode.modes >= 1")
    result = transition_probability(cfg.system, table, cfg.drive, cfg.engine)
    outputs.append(csv_path)
    write_compare_csv(times, result.p_values, p_oracle, csv_path, result.mc_stderr, result.truncation_estimate)
    dev = np.abs(result.p_values - p_oracle)
    max_dev = float(np.max(dev))
    summary = {
        "oracle": oracle_name,
        "times": times,
        "deviation": dev,
        "max_deviation": max_dev,
        "tolerance": cfg.compare.tolerance,
        "within_tolerance": max_dev <= cfg.compare.tolerance,
        "series": series_summary(result),
    }
    verdict = "ok" if max_dev <= cfg.compare.tolerance else "EXCEEDS"
    return Outcome(float(np.max(result.p_values)), max_dev, summary,
                   f"oracle={oracle_name} max dev={max_dev:.3e} {verdict}")


def _run_work(cfg: RunConfig, csv_path: Path, outputs: list) -> Outcome:
    times = cfg.engine.times
    eps = np.asarray(bias_at(cfg.drive, times), dtype=float)
    g = np.asarray(g_integral(cfg.drive, times), dtype=float)
    w_plus = np.asarray(w1_work(cfg.drive, 1, times), dtype=float)
    w_minus = np.asarray(w1_work(cfg.drive, -1, times), dtype=float)
    w_tpm = np.array([oracles.tpm_mean_work(cfg.system, cfg.drive, t) for t in times])
    outputs.append(csv_path)
    write_rows(csv_path, ["t", "eps_d", "g", "w1_plus", "w1_minus", "tpm_mean_work"],
               zip(times, eps, g, w_plus, w_minus, w_tpm))
    summary = {"times": times, "max_abs_eps_d": float(np.max(np.abs(eps))), "tpm_mean_work": w_tpm}
    return Outcome(math.nan, 0.0, summary, f"max |W1|={float(np.max(np.abs(w_plus))):.3e}")


def _run_tpm(cfg: RunConfig, csv_path: Path, outputs: list) -> Outcome:
    tau = cfg.tpm.tau
    nus = np.linspace(-cfg.tpm.nu_max, cfg.tpm.nu_max, cfg.tpm.nu_points)
    chi = oracles.tpm_characteristic_function(cfg.system, cfg.drive, nus, tau)
    support, probs = oracles.tpm_work_distribution(cfg.system, cfg.drive, tau)
    recon = oracles.reconstruct_work_distribution(chi, nus, support)
    outputs.append(csv_path)
    write_rows(csv_path, ["nu", "chi_re", "chi_im"], zip(nus, chi.real, chi.imag))
    dist_path = csv_path.with_name(csv_path.stem + "_distribution.csv")
    outputs.append(dist_path)
    write_rows(dist_path, ["W", "probability", "reconstructed"], zip(support, probs, recon))
    err = float(np.max(np.abs(recon - probs)))
    summary = {
        "tau": tau,
        "support": support,
        "probabilities": probs,
        "reconstructed": recon,
        "mean_work": oracles.tpm_mean_work(cfg.system, cfg.drive, tau),
        "chi_at_zero": complex(oracles.tpm_characteristic_function(cfg.system, cfg.drive, 0.0, tau)).real,
        "distribution_csv": str(dist_path),
    }
    return Outcome(float(np.max(probs)), err, summary, f"support={support.size} values")


RUNNERS = {
    "kernels": _run_kernels,
    "transition": lambda c, p, o: _run_series(c, p, o, niba=False),
    "niba": lambda c, p, o: _run_series(c, p, o, niba=True),
    "oracle-compare": _run_compare,
    "work-stats": _run_work,
    "tpm": _run_tpm,
}


def run(subcommand: str, cfg: RunConfig, *, csv_path=None, summary_path=None, out=None) -> int:
    """Execute one subcommand; returns the process exit status.

    Outputs written before a failure are removed.
    """
    if subcommand not in RUNNERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    csv_path = Path(csv_path or cfg.output.csv or f"{subcommand}.csv")
    summary_path = summary_path or cfg.output.summary or None
    outputs: list = []
    start = time.perf_counter()
    try:
        if cfg.output.dump:
            outputs.append(Path(cfg.output.dump))
            Path(cfg.output.dump).write_text(dump_config(cfg))
        outcome = RUNNERS[subcommand](cfg, csv_path, outputs)
        wall = time.perf_counter() - start
        if summary_path:
            outputs.append(Path(summary_path))
            write_json({"subcommand": subcommand, "wall_time": wall, "csv": str(csv_path), **outcome.summary},
                       summary_path)
    except (BlipsumError, MemoryError, OSError) as exc:
        for path in outputs:
            Path(path).unlink(missing_ok=True)
        if isinstance(exc, BlipsumError):
            category, code = exc.category, exc.exit_code
        elif isinstance(exc, MemoryError):
            category, code = "resource", 4
        else:
            # an unwritable output path is a configuration problem
            category, code = "config", 2
        print(f"error: category={category}: {exc}", file=sys.stderr)
        return code
    max_p = "n/a" if math.isnan(outcome.max_p) else f"{outcome.max_p:.6g}"
    line = f"{subcommand}: max p={max_p} max err={outcome.max_error:.3e} wall={wall:.2f}s"
    if outcome.extra:
        line += f" {outcome.extra}"
    print(line, file=out or sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blipsum", description="Blip/sojourn series for the driven spin-boson model.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("config", help="configuration file ('-' reads stdin)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--out", help="main CSV path (default: output.csv or <subcommand>.csv)")
    parser.add_argument("--summary", help="JSON summary path")
    parser.add_argument("--echo", action="store_true", help="print the normalized configuration first")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config == "-":
            text, base = sys.stdin.read(), "."
        else:
            text, base = Path(args.config).read_text(), os.path.dirname(os.path.abspath(args.config))
        cfg = parse_config(text, overrides=args.overrides, base_dir=base)
    except OSError as exc:
        print(f"error: category=config: {exc}", file=sys.stderr)
        return 2
    except BlipsumError as exc:
        print(f"error: category={exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.echo:
        print(dump_config(cfg), end="")
    return run(args.subcommand, cfg, csv_path=args.out, summary_path=args.summary)


if __name__ == "__main__":
    sys.exit(main())
