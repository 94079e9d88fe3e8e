"""Command-line surface tying simulation, data, estimation and bounds together.

Every command writes its outputs plus a ``manifest.json`` recording the
parameters, seed, input digests and produced files, so a run can be
reproduced exactly. Exit codes: 0 success, 2 usage/validation error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .auction_sim import (
    SimConfig,
    run_grid,
    scatter_data,
    write_scatter_csv,
    write_summary_csv,
    write_summary_json,
)
from .econometrics import (
    DiDSpec,
    did_estimate,
    estimate_from_json,
    robust_grid,
    write_estimate_json,
    write_robust_csv,
)
from .errors import DomainError, NumericError, PanelParseError, PanelValidationError
from .panel_data import (
    default_calibration,
    load_contracts,
    save_contracts,
    synthesize_panel,
    welfare_sample,
)
from .policy_bounds import (
    counterfactual_gap,
    expenditure_bounds,
    welfare_report,
    write_expenditure_json,
    write_gap_csv,
    write_gap_summary_json,
    write_welfare_csv,
)

OUTPUT_DIR_ENV = "BUNDLEPROC_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's outputs."""

    command: str
    parameters: dict
    seed: int | None
    version: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    duration_seconds: float = 0.0

    def write(self, out_dir: Path) -> None:
        path = out_dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(
                {
                    "command": self.command,
                    "parameters": self.parameters,
                    "seed": self.seed,
                    "version": self.version,
                    "inputs": self.inputs,
                    "outputs": sorted(self.outputs),
                    "duration_seconds": self.duration_seconds,
                },
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(args, command: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        base = os.environ.get(OUTPUT_DIR_ENV, ".")
        out = Path(base) / f"bundleproc_{command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_list(raw: str) -> list[float]:
    return [float(tok) for tok in raw.split(",") if tok.strip()]


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok.strip()]


def _g_grid(raw: str) -> list[float]:
    """Parse start:stop:step (inclusive of stop, within float slack)."""
    parts = raw.split(":")
    if len(parts) != 3:
        raise DomainError(f"--g-grid expects start:stop:step, got {raw!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise DomainError(f"invalid g grid {raw!r}")
    count = int(round((stop - start) / step)) + 1
    grid = [start + i * step for i in range(count)]
    return [g for g in grid if g <= stop + 1e-9]


def cmd_simulate(args) -> int:
    n_values = _int_list(args.n)
    gamma_values = _float_list(args.gamma)
    if not n_values or not gamma_values:
        raise DomainError("need at least one bidder count and one synergy value")
    base = SimConfig(
        n_bidders=n_values[0], gamma=gamma_values[0], replications=args.reps,
        seed=args.seed, mean=args.mean, lower=args.lower, upper=args.upper,
        exact_bids=args.exact,
    )
    for n in n_values:
        if n < 2:
            raise DomainError(f"need at least 2 bidders, got {n}")
    for g in gamma_values:
        if not 0 <= g <= 2 * args.lower:
            raise DomainError(
                f"synergy {g} outside [0, {2 * args.lower}] for lower bound {args.lower}"
            )
    if not args.lower < args.mean < args.upper:
        raise DomainError("cost mean must lie strictly inside the support")

    out = _out_dir(args, "simulate")
    manifest = RunManifest(
        command="simulate",
        parameters={
            "n": n_values, "gamma": gamma_values, "reps": args.reps,
            "mean": args.mean, "lower": args.lower, "upper": args.upper,
            "threads": args.threads, "scatter": args.scatter, "exact": args.exact,
        },
        seed=args.seed,
        version=__version__,
    )
    t0 = time.perf_counter()
    summary = run_grid(base, n_values, gamma_values, threads=args.threads)
    write_summary_csv(summary, out / "summary.csv")
    write_summary_json(summary, out / "summary.json")
    manifest.outputs += ["summary.csv", "summary.json"]
    if args.scatter:
        for n in n_values:
            for g in gamma_values:
                cell = SimConfig(
                    n_bidders=n, gamma=g, replications=args.reps, seed=args.seed,
                    mean=args.mean, lower=args.lower, upper=args.upper,
                    exact_bids=args.exact,
                )
                name = f"scatter_n{n}_g{g:g}.csv"
                write_scatter_csv(scatter_data(cell), out / name)
                manifest.outputs.append(name)
    manifest.duration_seconds = time.perf_counter() - t0
    manifest.write(out)
    print(f"wrote {len(manifest.outputs)} files to {out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    out = _out_dir(args, "gen_data")
    cal = default_calibration()
    category_effects = None
    if args.effect_category in ("A", "D"):
        category_effects = {
            args.effect_category: (args.price_effect, args.mbps_effect)
        }
    t0 = time.perf_counter()
    panel = synthesize_panel(
        cal, args.participants, args.controls, args.price_effect,
        args.mbps_effect, args.seed, category_effects=category_effects,
        relative_noise_sd=args.noise_sd,
    )
    save_contracts(panel, out / "panel.csv")
    manifest = RunManifest(
        command="gen-data",
        parameters={
            "participants": args.participants, "controls": args.controls,
            "price_effect": args.price_effect, "mbps_effect": args.mbps_effect,
            "effect_category": args.effect_category, "noise_sd": args.noise_sd,
            "calibration": cal.label,
        },
        seed=args.seed,
        version=__version__,
        outputs=["panel.csv"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote panel.csv ({len(panel)} records) to {out}")
    return EXIT_OK


def cmd_did(args) -> int:
    out = _out_dir(args, "did")
    t0 = time.perf_counter()
    panel = load_contracts(args.input, price_percentile=args.price_percentile)
    spec = DiDSpec(
        outcome=args.outcome,
        include_n_isps=args.n_isps,
        fixed_effects=tuple(args.fe.split(",")) if args.fe else (),
        sample_filter=args.sample,
    )
    est = did_estimate(panel, spec, se_type=args.se,
                       suppress_constant=args.group_levels)
    write_estimate_json(est, out / "estimate.json")
    manifest = RunManifest(
        command="did",
        parameters={
            "outcome": args.outcome, "sample": args.sample, "n_isps": args.n_isps,
            "fe": args.fe, "se": args.se, "group_levels": args.group_levels,
            "price_percentile": args.price_percentile,
        },
        seed=None,
        version=__version__,
        inputs={str(args.input): _sha256(args.input)},
        outputs=["estimate.json"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(
        f"interaction estimate {est.beta_did:.4f} (se {est.se_did:.4f}, "
        f"n={est.n_obs}) -> {out / 'estimate.json'}"
    )
    return EXIT_OK


def cmd_robust(args) -> int:
    out = _out_dir(args, "robust")
    t0 = time.perf_counter()
    try:
        with open(args.estimate) as fh:
            est = estimate_from_json(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DomainError(f"unreadable estimate file {args.estimate}: {exc!r}") from exc
    grid = _g_grid(args.g_grid)
    bounds = robust_grid(est, grid)
    write_robust_csv(bounds, out / "robust_bounds.csv")
    manifest = RunManifest(
        command="robust",
        parameters={"g_grid": args.g_grid},
        seed=None,
        version=__version__,
        inputs={str(args.estimate): _sha256(args.estimate)},
        outputs=["robust_bounds.csv"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote {len(bounds)} rows to {out / 'robust_bounds.csv'}")
    return EXIT_OK


def _sample_filter(panel, sample: str):
    if sample == "category_A":
        return panel.filter(lambda r: r.category == "A")
    if sample == "category_D":
        return panel.filter(lambda r: r.category == "D")
    return panel


def cmd_expenditure(args) -> int:
    out = _out_dir(args, "expenditure")
    t0 = time.perf_counter()
    panel = load_contracts(args.input)
    subsample = _sample_filter(panel.participants(), args.sample)
    bounds = expenditure_bounds(
        subsample, args.beta_price, args.beta_mbps,
        monthly_inputs=not args.annual_inputs,
    )
    write_expenditure_json(bounds, out / "expenditure.json")
    manifest = RunManifest(
        command="expenditure",
        parameters={
            "beta_price": args.beta_price, "beta_mbps": args.beta_mbps,
            "sample": args.sample, "annual_inputs": args.annual_inputs,
        },
        seed=None,
        version=__version__,
        inputs={str(args.input): _sha256(args.input)},
        outputs=["expenditure.json"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(
        f"savings bounds [{bounds.lower:,.0f}, {bounds.upper:,.0f}] vs subsidy "
        f"{bounds.subsidy:,.0f} -> {out / 'expenditure.json'}"
    )
    return EXIT_OK


def cmd_welfare(args) -> int:
    out = _out_dir(args, "welfare")
    t0 = time.perf_counter()
    panel = load_contracts(args.input)
    screened, diagnostics = welfare_sample(panel, with_diagnostics=True)
    bounds = welfare_report(
        screened, args.mode, beta_price=args.beta_price, beta_mbps=args.beta_mbps
    )
    write_welfare_csv(bounds, out / "welfare_bounds.csv")
    with open(out / "filter_diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest(
        command="welfare",
        parameters={
            "mode": args.mode, "beta_price": args.beta_price,
            "beta_mbps": args.beta_mbps,
        },
        seed=None,
        version=__version__,
        inputs={str(args.input): _sha256(args.input)},
        outputs=["welfare_bounds.csv", "filter_diagnostics.json"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    print(f"wrote bounds for {len(bounds)} schools to {out / 'welfare_bounds.csv'}")
    return EXIT_OK


def _load_schedule(path) -> dict[str, dict[float, float]]:
    schedules: dict[str, dict[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"region", "bandwidth_mbps", "price_per_mbps"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise PanelParseError(
                f"line 1: schedule needs columns {sorted(required)}"
            )
        for i, row in enumerate(reader, start=2):
            try:
                schedules.setdefault(row["region"], {})[
                    float(row["bandwidth_mbps"])
                ] = float(row["price_per_mbps"])
            except ValueError as exc:
                raise PanelParseError(f"line {i}: {exc}") from exc
    return schedules


def cmd_gap(args) -> int:
    out = _out_dir(args, "gap")
    t0 = time.perf_counter()
    panel = load_contracts(args.input)
    nonparticipants = panel.filter(lambda r: not r.participant)
    report = counterfactual_gap(
        _sample_filter(nonparticipants, args.sample), _load_schedule(args.schedule)
    )
    write_gap_csv(report, out / "gaps.csv")
    write_gap_summary_json(report, out / "gap_summary.json")
    manifest = RunManifest(
        command="gap",
        parameters={"sample": args.sample},
        seed=None,
        version=__version__,
        inputs={
            str(args.input): _sha256(args.input),
            str(args.schedule): _sha256(args.schedule),
        },
        outputs=["gaps.csv", "gap_summary.json"],
        duration_seconds=time.perf_counter() - t0,
    )
    manifest.write(out)
    s = report.summary()
    print(
        f"{s['n_positive']} schools above the winning tariff "
        f"(mean gap {s['mean_positive_gap'] or 0:.2f}), "
        f"{s['n_nonpositive']} at or below, {s['n_skipped']} skipped"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bundleproc",
        description="Bundled vs. school-by-school procurement: simulation and "
                    "empirical pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the paired-format auction grid")
    p.add_argument("--n", default="2,3,5,10", help="comma-separated bidder counts")
    p.add_argument("--gamma", default="4,8,12,16", help="comma-separated synergies")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean", type=float, default=40.0)
    p.add_argument("--lower", type=float, default=10.0)
    p.add_argument("--upper", type=float, default=100.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--scatter", action="store_true",
                   help="also write per-cell scatter CSVs")
    p.add_argument("--exact", action="store_true",
                   help="force exact quadrature instead of bid tables")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("gen-data", help="generate a calibrated synthetic panel")
    p.add_argument("--participants", type=int, default=145)
    p.add_argument("--controls", type=int, default=465)
    p.add_argument("--price-effect", type=float, default=0.0)
    p.add_argument("--mbps-effect", type=float, default=0.0)
    p.add_argument("--effect-category", choices=["all", "A", "D"], default="all",
                   help="restrict the injected effects to one service category")
    p.add_argument("--noise-sd", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("did", help="estimate the two-period specification")
    p.add_argument("--input", required=True)
    p.add_argument("--outcome", choices=["price", "bandwidth"], default="price")
    p.add_argument("--sample", choices=["all", "category_A", "category_D"],
                   default="all")
    p.add_argument("--n-isps", action="store_true", help="control for ISP count")
    p.add_argument("--fe", default="",
                   help="comma-separated fixed effects "
                        "(school_type,isp,region,service_type)")
    p.add_argument("--se", choices=["classical", "hc1"], default="classical")
    p.add_argument("--group-levels", action="store_true",
                   help="report group levels instead of a constant")
    p.add_argument("--price-percentile", type=float, default=None,
                   help="drop records priced above this percentile")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_did)

    p = sub.add_parser("robust", help="trend-violation bounds over a g grid")
    p.add_argument("--estimate", required=True, help="estimate.json from `did`")
    p.add_argument("--g-grid", default="0:2.5:0.1", help="start:stop:step")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_robust)

    p = sub.add_parser("expenditure", help="aggregate savings bounds")
    p.add_argument("--input", required=True)
    p.add_argument("--beta-price", type=float, required=True)
    p.add_argument("--beta-mbps", type=float, required=True)
    p.add_argument("--sample", choices=["all", "category_A", "category_D"],
                   default="category_D")
    p.add_argument("--annual-inputs", action="store_true",
                   help="inputs are already annual; skip the x12 annualization")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_expenditure)

    p = sub.add_parser("welfare", help="per-school welfare bounds")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["observed", "counterfactual"],
                   default="observed")
    p.add_argument("--beta-price", type=float, default=None)
    p.add_argument("--beta-mbps", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_welfare)

    p = sub.add_parser("gap", help="actual vs. winning-tariff price gaps")
    p.add_argument("--input", required=True)
    p.add_argument("--schedule", required=True,
                   help="CSV with region,bandwidth_mbps,price_per_mbps")
    p.add_argument("--sample", choices=["all", "category_A", "category_D"],
                   default="category_D")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_gap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (DomainError, PanelParseError, PanelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
