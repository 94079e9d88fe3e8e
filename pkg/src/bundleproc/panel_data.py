"""Contract-panel data model, CSV ingestion, and synthetic panel generation.

The underlying school-contract micro-data are proprietary, so the package
works against this schema and ships a generator calibrated to published
group-level summary statistics. Price is monthly dollars per Mbps; bandwidth
is download Mbps.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, PanelParseError, PanelValidationError

REGIONS = ("Central", "Northeast", "Northwest", "South")
CATEGORIES = ("A", "D")
TRANSPORTS = ("fiber", "coaxial", "other")
YEARS = (2014, 2015)
SUBSIDY_RANGE = (0.2, 0.9)

CSV_COLUMNS = (
    "school_id", "year", "participant", "price_per_mbps", "bandwidth_mbps",
    "isp", "region", "category", "transport", "n_isps", "school_type",
    "subsidy_rate",
)

REGION_WINNERS = {
    "Central": "Lightpath",
    "Northeast": "Sunesys",
    "Northwest": "Sunesys",
    "South": "Comcast",
}

_ISP_POOL = (
    "Comcast", "Lightpath", "Verizon", "Cablevision", "XO", "PenTeleData",
    "NetCarrier", "CenturyLink",
)


@dataclass(frozen=True)
class ContractRecord:
    """One school-year broadband contract."""

    school_id: str
    year: int
    participant: bool
    price: float
    bandwidth: float
    isp: str
    region: str
    category: str
    transport: str
    n_isps: int
    school_type: str
    subsidy_rate: float | None = None

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise PanelValidationError([(0, p) for p in problems])

    def problems(self) -> list[str]:
        out = []
        if not self.school_id:
            out.append("empty school_id")
        if self.year not in YEARS:
            out.append(f"year {self.year} not in {YEARS}")
        if not self.price > 0:
            out.append(f"price {self.price} must be positive")
        if not self.bandwidth > 0:
            out.append(f"bandwidth {self.bandwidth} must be positive")
        if self.region not in REGIONS:
            out.append(f"unknown region {self.region!r}")
        if self.category not in CATEGORIES:
            out.append(f"unknown category {self.category!r}")
        if self.transport not in TRANSPORTS:
            out.append(f"unknown transport {self.transport!r}")
        if self.n_isps < 0 or int(self.n_isps) != self.n_isps:
            out.append(f"n_isps {self.n_isps} must be a nonnegative integer")
        if self.subsidy_rate is not None and not (
            SUBSIDY_RANGE[0] <= self.subsidy_rate <= SUBSIDY_RANGE[1]
        ):
            out.append(
                f"subsidy_rate {self.subsidy_rate} outside {SUBSIDY_RANGE}"
            )
        return out


@dataclass(frozen=True)
class ContractPanel:
    """Immutable collection of contract records with provenance."""

    records: tuple[ContractRecord, ...]
    provenance: str = "loaded"

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: dict[tuple[str, int], int] = {}
        participant_by_school: dict[str, bool] = {}
        problems: list[tuple[int, str]] = []
        for i, rec in enumerate(self.records, start=1):
            key = (rec.school_id, rec.year)
            if key in seen:
                problems.append(
                    (i, f"duplicate (school_id, year) {key} first seen at row {seen[key]}")
                )
            seen[key] = i
            prior = participant_by_school.get(rec.school_id)
            if prior is not None and prior != rec.participant:
                problems.append(
                    (i, f"school {rec.school_id} switches participant status across years")
                )
            participant_by_school[rec.school_id] = rec.participant
        if problems:
            raise PanelValidationError(problems)

    def __len__(self) -> int:
        return len(self.records)

    def filter(self, predicate: Callable[[ContractRecord], bool]) -> "ContractPanel":
        return ContractPanel(
            records=tuple(r for r in self.records if predicate(r)),
            provenance=self.provenance,
        )

    def year(self, year: int) -> "ContractPanel":
        return self.filter(lambda r: r.year == year)

    def participants(self) -> "ContractPanel":
        return self.filter(lambda r: r.participant)

    def by_school(self) -> dict[str, dict[int, ContractRecord]]:
        out: dict[str, dict[int, ContractRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.school_id, {})[rec.year] = rec
        return out


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"cannot parse boolean {raw!r}")


def load_contracts(
    source,
    *,
    column_map: Mapping[str, str] | None = None,
    price_percentile: float | None = None,
    provenance: str = "loaded",
) -> ContractPanel:
    """Parse and validate a contract CSV.

    ``column_map`` maps canonical column names to the file's headers when
    they differ. ``price_percentile`` drops records whose price exceeds that
    percentile of the loaded price distribution (e.g. 95).
    """
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        fh = io.StringIO(text)
    else:
        fh = open(source, newline="")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelParseError("line 1: empty file, header row required")
        colmap = dict(column_map or {})
        positions = {}
        for canonical in CSV_COLUMNS:
            name = colmap.get(canonical, canonical)
            if name not in header:
                raise PanelParseError(f"line 1: missing required column {name!r}")
            positions[canonical] = header.index(name)

        records: list[ContractRecord] = []
        diagnostics: list[tuple[int, str]] = []
        for row_idx, row in enumerate(reader, start=1):
            line_no = row_idx + 1
            if len(row) != len(header):
                raise PanelParseError(
                    f"line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            get = lambda c: row[positions[c]].strip()
            try:
                raw_subsidy = get("subsidy_rate")
                rec = ContractRecord(
                    school_id=get("school_id"),
                    year=int(get("year")),
                    participant=_parse_bool(get("participant")),
                    price=float(get("price_per_mbps")),
                    bandwidth=float(get("bandwidth_mbps")),
                    isp=get("isp"),
                    region=get("region"),
                    category=get("category"),
                    transport=get("transport"),
                    n_isps=int(get("n_isps")),
                    school_type=get("school_type"),
                    subsidy_rate=float(raw_subsidy) if raw_subsidy else None,
                )
            except PanelValidationError as exc:
                diagnostics.extend((row_idx, msg) for _, msg in exc.diagnostics)
                continue
            except ValueError as exc:
                raise PanelParseError(f"line {line_no}: {exc}") from exc
            records.append(rec)
        if diagnostics:
            raise PanelValidationError(diagnostics)

    panel = ContractPanel(records=tuple(records), provenance=provenance)
    if price_percentile is not None:
        prices = np.array([r.price for r in panel.records])
        cutoff = float(np.percentile(prices, price_percentile))
        panel = panel.filter(lambda r: r.price <= cutoff)
    return panel


def save_contracts(panel: ContractPanel, path) -> None:
    """Write a panel in the canonical CSV schema (lossless for floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in panel.records:
            writer.writerow([
                r.school_id, r.year, "true" if r.participant else "false",
                repr(r.price), repr(r.bandwidth), r.isp, r.region, r.category,
                r.transport, r.n_isps, r.school_type,
                "" if r.subsidy_rate is None else repr(r.subsidy_rate),
            ])


def panel_to_json(panel: ContractPanel) -> dict:
    return {
        "provenance": panel.provenance,
        "records": [
            {
                "school_id": r.school_id,
                "year": r.year,
                "participant": r.participant,
                "price_per_mbps": r.price,
                "bandwidth_mbps": r.bandwidth,
                "isp": r.isp,
                "region": r.region,
                "category": r.category,
                "transport": r.transport,
                "n_isps": r.n_isps,
                "school_type": r.school_type,
                "subsidy_rate": r.subsidy_rate,
            }
            for r in panel.records
        ],
    }


@dataclass(frozen=True)
class GroupStats:
    """Moments and shares for one (participant, year) cell."""

    price_mean: float
    price_sd: float
    bandwidth_mean: float
    bandwidth_sd: float
    n_isps_mean: float
    n_isps_sd: float
    fiber_share: float
    coaxial_share: float
    other_share: float
    category_d_share: float

    def __post_init__(self) -> None:
        shares = (self.fiber_share, self.coaxial_share, self.other_share)
        if any(s < 0 or s > 1 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise DomainError(f"transport shares {shares} must lie in [0,1] and sum to 1")
        if not 0 <= self.category_d_share <= 1:
            raise DomainError(f"category-D share {self.category_d_share} outside [0,1]")
        for name in ("price_sd", "bandwidth_sd", "n_isps_sd"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class Calibration:
    """Generator targets: per-group moments plus school-level shares."""

    cells: Mapping[tuple[bool, int], GroupStats]
    n_participants: int
    n_controls: int
    school_type_shares: Mapping[str, float] = field(
        default_factory=lambda: {"public": 0.80, "charter": 0.10, "private": 0.10}
    )
    region_shares: Mapping[str, float] = field(
        default_factory=lambda: {
            "Northeast": 176 / 563, "Central": 159 / 563,
            "South": 184 / 563, "Northwest": 44 / 563,
        }
    )
    label: str = "custom"

    def __post_init__(self) -> None:
        for group in (True, False):
            for year in YEARS:
                if (group, year) not in self.cells:
                    raise DomainError(f"calibration missing cell {(group, year)}")
        for shares, what in ((self.school_type_shares, "school_type"),
                             (self.region_shares, "region")):
            total = sum(shares.values())
            if abs(total - 1.0) > 1e-9 or any(v < 0 for v in shares.values()):
                raise DomainError(f"{what} shares must be nonnegative and sum to 1")


def default_calibration() -> Calibration:
    """Calibration matched to the 2014/15 New Jersey school broadband survey."""
    return Calibration(
        cells={
            (True, 2014): GroupStats(16.57, 15.66, 288.52, 388.27, 6.18, 2.65,
                                     0.76, 0.23, 0.01, 0.75),
            (True, 2015): GroupStats(6.40, 4.05, 1280.76, 2424.02, 5.90, 2.68,
                                     0.97, 0.03, 0.00, 0.79),
            (False, 2014): GroupStats(16.58, 16.53, 274.81, 909.53, 6.02, 2.80,
                                      0.67, 0.30, 0.03, 0.61),
            (False, 2015): GroupStats(12.95, 13.67, 384.83, 919.37, 5.98, 2.75,
                                      0.74, 0.25, 0.01, 0.63),
        },
        n_participants=145,
        n_controls=465,
        label="nj-broadband-2014-15",
    )


def _lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    if mean <= 0 or sd <= 0:
        raise DomainError(
            f"log-normal moment matching needs positive mean and SD, got ({mean}, {sd})"
        )
    sigma2 = np.log1p((sd / mean) ** 2)
    mu = np.log(mean) - 0.5 * sigma2
    return mu, float(np.sqrt(sigma2))


def _choice(rng: np.random.Generator, shares: Mapping[str, float], size: int) -> np.ndarray:
    labels = sorted(shares)
    probs = np.array([shares[k] for k in labels], dtype=float)
    probs = probs / probs.sum()
    return rng.choice(np.array(labels, dtype=object), size=size, p=probs)


def synthesize_panel(
    cal: Calibration,
    n_participants: int,
    n_controls: int,
    injected_price_effect: float,
    injected_mbps_effect: float,
    seed: int,
    *,
    category_effects: Mapping[str, tuple[float, float]] | None = None,
    relative_noise_sd: float = 0.15,
) -> ContractPanel:
    """Generate a two-year school panel from group-level calibration.

    2014 prices and bandwidths are log-normal draws matched to each group's
    moments. 2015 outcomes apply the control group's multiplicative trend to
    every school, then scale participants' 2015 records so the group-level
    outcome shifts by the injected effects (keeping draws positive).
    ``category_effects`` restricts or overrides the injection per category.
    """
    if n_participants < 1 or n_controls < 1:
        raise DomainError("group sizes must be positive")
    rng = np.random.default_rng(seed)

    ctrl14 = cal.cells[(False, 2014)]
    ctrl15 = cal.cells[(False, 2015)]
    price_trend = ctrl15.price_mean / ctrl14.price_mean
    bw_trend = ctrl15.bandwidth_mean / ctrl14.bandwidth_mean
    noise_sigma = float(np.sqrt(np.log1p(relative_noise_sd**2)))

    def noise(size: int) -> np.ndarray:
        if relative_noise_sd == 0:
            return np.ones(size)
        return rng.lognormal(-0.5 * noise_sigma**2, noise_sigma, size)

    records: list[ContractRecord] = []
    for participant, size, prefix in ((True, n_participants, "P"),
                                      (False, n_controls, "C")):
        stats14 = cal.cells[(participant, 2014)]
        stats15 = cal.cells[(participant, 2015)]

        mu_p, sg_p = _lognormal_params(stats14.price_mean, stats14.price_sd)
        mu_b, sg_b = _lognormal_params(stats14.bandwidth_mean, stats14.bandwidth_sd)
        p0 = rng.lognormal(mu_p, sg_p, size)
        q0 = rng.lognormal(mu_b, sg_b, size)

        region = _choice(rng, cal.region_shares, size)
        school_type = _choice(rng, cal.school_type_shares, size)
        category = np.where(rng.random(size) < stats14.category_d_share, "D", "A")
        isp = rng.choice(np.array(_ISP_POOL, dtype=object), size=size)
        n_isps = np.clip(
            np.rint(rng.normal(stats14.n_isps_mean, stats14.n_isps_sd, size)), 0, None
        ).astype(int)
        rho = rng.uniform(*SUBSIDY_RANGE, size)

        transport14 = _choice(
            rng,
            {"fiber": stats14.fiber_share, "coaxial": stats14.coaxial_share,
             "other": stats14.other_share},
            size,
        )
        # 2015 transport: schools only ever upgrade toward fiber, at the rate
        # implied by the group's fiber-share increase.
        f14, f15 = stats14.fiber_share, stats15.fiber_share
        upgrade_p = max(0.0, (f15 - f14) / (1.0 - f14)) if f14 < 1.0 else 0.0
        upgrades = rng.random(size) < upgrade_p
        transport15 = np.where(
            (transport14 != "fiber") & upgrades, "fiber", transport14
        )

        price_factor = np.ones(size)
        bw_factor = np.ones(size)
        if participant:
            for cat in CATEGORIES:
                if category_effects is not None:
                    eff_p, eff_b = category_effects.get(cat, (0.0, 0.0))
                else:
                    eff_p, eff_b = injected_price_effect, injected_mbps_effect
                base_p = stats14.price_mean * price_trend
                base_b = stats14.bandwidth_mean * bw_trend
                fac_p = 1.0 + eff_p / base_p
                fac_b = 1.0 + eff_b / base_b
                if fac_p <= 0 or fac_b <= 0:
                    raise DomainError(
                        "injected effect exceeds the counterfactual group mean; "
                        "draws would be nonpositive"
                    )
                mask = category == cat
                price_factor[mask] = fac_p
                bw_factor[mask] = fac_b

        p1 = p0 * price_trend * price_factor * noise(size)
        q1 = q0 * bw_trend * bw_factor * noise(size)

        for i in range(size):
            school_id = f"{prefix}{i:04d}"
            isp15 = REGION_WINNERS[str(region[i])] if participant else str(isp[i])
            common = dict(
                school_id=school_id,
                participant=participant,
                region=str(region[i]),
                category=str(category[i]),
                n_isps=int(n_isps[i]),
                school_type=str(school_type[i]),
                subsidy_rate=float(rho[i]),
            )
            records.append(ContractRecord(
                year=2014, price=float(p0[i]), bandwidth=float(q0[i]),
                isp=str(isp[i]), transport=str(transport14[i]), **common,
            ))
            records.append(ContractRecord(
                year=2015, price=float(p1[i]), bandwidth=float(q1[i]),
                isp=isp15, transport=str(transport15[i]), **common,
            ))

    return ContractPanel(
        records=tuple(records),
        provenance=f"synthetic(seed={seed}, calibration={cal.label})",
    )


def welfare_sample(panel: ContractPanel, *, with_diagnostics: bool = False):
    """Restrict to schools usable for two-point welfare bounds.

    Keeps schools observed in both years with the same transport, buying the
    dedicated enterprise service (category D) in both years, whose
    price/quantity moves are consistent with downward-sloping demand and not
    completely unchanged.
    """
    by_school = panel.by_school()
    counts = {
        "missing_year": 0, "transport_change": 0, "not_category_d": 0,
        "demand_inconsistent": 0, "unchanged": 0, "kept": 0,
    }
    keep: set[str] = set()
    for school_id, years in by_school.items():
        if 2014 not in years or 2015 not in years:
            counts["missing_year"] += 1
            continue
        r0, r1 = years[2014], years[2015]
        if r0.transport != r1.transport:
            counts["transport_change"] += 1
            continue
        if r0.category != "D" or r1.category != "D":
            counts["not_category_d"] += 1
            continue
        dp = r1.price - r0.price
        dq = r1.bandwidth - r0.bandwidth
        if dp == 0 and dq == 0:
            counts["unchanged"] += 1
            continue
        if dp * dq > 0:
            counts["demand_inconsistent"] += 1
            continue
        counts["kept"] += 1
        keep.add(school_id)
    filtered = panel.filter(lambda r: r.school_id in keep)
    if with_diagnostics:
        return filtered, counts
    return filtered


def expenditure_calibrated_panel(
    beta_price: float,
    beta_mbps: float,
    lower_target: float,
    upper_target: float,
    subsidy_target: float,
    *,
    n_schools: int = 109,
    seed: int = 0,
    annual_targets: bool = True,
) -> ContractPanel:
    """Participant panel whose 2014 aggregates hit given expenditure targets.

    Draws a dispersed panel, then rescales subsidy rates, bandwidths and
    prices so that sum((1-rho)), sum(Q0*(1-rho)) and sum(Q0*P0*rho) match the
    targets implied by the bounds formulas. Targets are annual dollars by
    default (divided by 12 to get the monthly panel scale).
    """
    if beta_price >= 0 or beta_mbps <= 0:
        raise DomainError("expects a negative price effect and positive bandwidth effect")
    if not lower_target < upper_target:
        raise DomainError("need lower_target < upper_target")
    scale = 12.0 if annual_targets else 1.0
    s_one_minus_rho = (upper_target - lower_target) / (scale * -beta_price * beta_mbps)
    s_q_one_minus_rho = lower_target / (scale * -beta_price)
    s_qp_rho = subsidy_target / scale

    mean_rho = 1.0 - s_one_minus_rho / n_schools
    if not SUBSIDY_RANGE[0] < mean_rho < SUBSIDY_RANGE[1]:
        raise DomainError(
            f"targets imply mean subsidy rate {mean_rho:.3f} outside {SUBSIDY_RANGE}"
        )

    rng = np.random.default_rng(seed)
    rho_raw = rng.uniform(*SUBSIDY_RANGE, n_schools)
    spread = rho_raw - rho_raw.mean()
    room = min(SUBSIDY_RANGE[1] - mean_rho, mean_rho - SUBSIDY_RANGE[0])
    shrink = min(1.0, 0.95 * room / max(np.abs(spread).max(), 1e-12))
    rho = mean_rho + spread * shrink

    q_raw = rng.lognormal(*_lognormal_params(300.0, 300.0), n_schools)
    q0 = q_raw * (s_q_one_minus_rho / float(np.sum(q_raw * (1.0 - rho))))

    p_raw = rng.lognormal(*_lognormal_params(15.0, 10.0), n_schools)
    p0 = p_raw * (s_qp_rho / float(np.sum(q0 * p_raw * rho)))

    region = _choice(rng, default_calibration().region_shares, n_schools)
    records = [
        ContractRecord(
            school_id=f"E{i:04d}", year=2014, participant=True,
            price=float(p0[i]), bandwidth=float(q0[i]),
            isp=str(REGION_WINNERS[str(region[i])]), region=str(region[i]),
            category="D", transport="fiber", n_isps=6, school_type="public",
            subsidy_rate=float(rho[i]),
        )
        for i in range(n_schools)
    ]
    return ContractPanel(
        records=tuple(records),
        provenance=f"synthetic(seed={seed}, calibration=expenditure-targets)",
    )
