"""Paired-draw Monte Carlo engine comparing the two procurement formats.

Each replication draws one cost matrix and prices it under both formats:
school-by-school (each school awarded to its lowest bid) and pure bundling
(single award to the lowest bundle bid). Draws are counter-based so any
replication is reproducible in isolation and aggregation is independent of
thread count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import make_truncated_exponential
from .equilibrium import BidTable, MarketConfig, bundled_bid, decentralized_bid
from .errors import DomainError

DEFAULT_CHUNK = 8192


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell: market primitives plus run controls."""

    n_bidders: int
    gamma: float
    replications: int
    seed: int
    mean: float = 40.0
    lower: float = 10.0
    upper: float = 100.0
    exact_bids: bool = False
    table_points: int = 1024

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise DomainError(f"need at least 1 replication, got {self.replications}")


@dataclass(frozen=True, eq=False)
class AuctionOutcome:
    """Costs, bids, winners and payments for one replication (both formats)."""

    costs: np.ndarray          # (n_bidders, 2)
    pre_bids: np.ndarray       # (n_bidders, 2)
    pre_total_bids: np.ndarray  # (n_bidders,)
    pre_payment: float
    post_bids: np.ndarray      # (n_bidders,)
    post_payment: float
    pre_winners: np.ndarray    # (2,) bidder indices
    post_winner: int


@dataclass(frozen=True)
class CellStats:
    """Per-cell averages over bidders and replications."""

    n_bidders: int
    gamma: float
    replications: int
    avg_total_bid_pre: float
    avg_total_bid_post: float
    avg_payment_pre: float
    avg_payment_post: float
    frac_below_diag_bids: float
    frac_below_diag_payments: float
    avg_bundle_cost: float


@dataclass(frozen=True)
class SimulationSummary:
    """Grid of cell statistics keyed by (n_bidders, gamma)."""

    seed: int
    replications: int
    cells: tuple[CellStats, ...]

    def cell(self, n_bidders: int, gamma: float) -> CellStats:
        for c in self.cells:
            if c.n_bidders == n_bidders and c.gamma == gamma:
                return c
        raise KeyError(f"no cell ({n_bidders}, {gamma})")

    def to_rows(self) -> list[dict]:
        return [
            {
                "n": c.n_bidders,
                "gamma": c.gamma,
                "avg_total_bid_pre": c.avg_total_bid_pre,
                "avg_total_bid_post": c.avg_total_bid_post,
                "avg_payment_pre": c.avg_payment_pre,
                "avg_payment_post": c.avg_payment_post,
                "frac_below_diag_bids": c.frac_below_diag_bids,
                "frac_below_diag_payments": c.frac_below_diag_payments,
                "avg_bundle_cost": c.avg_bundle_cost,
                "replications": c.replications,
            }
            for c in self.cells
        ]


@dataclass(frozen=True, eq=False)
class ScatterData:
    """Per-draw comparison points for diagonal plots.

    ``bid_pre_total``/``bid_post`` have one entry per (replication, bidder);
    ``payment_pre``/``payment_post`` one per replication.
    """

    n_bidders: int
    gamma: float
    bid_pre_total: np.ndarray
    bid_post: np.ndarray
    payment_pre: np.ndarray
    payment_post: np.ndarray

    @property
    def frac_bids_below_diagonal(self) -> float:
        return float(np.mean(self.bid_post < self.bid_pre_total))

    @property
    def frac_payments_below_diagonal(self) -> float:
        return float(np.mean(self.payment_post < self.payment_pre))


class _CellEngine:
    """Immutable per-cell machinery: cost laws, markup tables, RNG keying."""

    def __init__(self, n_bidders: int, gamma: float, mean: float, lower: float,
                 upper: float, table_points: int):
        self.n_bidders = n_bidders
        self.gamma = gamma
        self.dist = make_truncated_exponential(mean, lower, upper)
        self.market = MarketConfig.build(n_bidders, gamma, self.dist)
        self.table = BidTable.build(self.market, n_points=table_points)
        self.uniforms_per_rep = 2 * n_bidders
        # Philox blocks hold 4 outputs; pad each replication to a block edge
        # so chunked and single-replication draws are bit-identical.
        self.padded = -(-self.uniforms_per_rep // 4) * 4

    def key(self, seed: int) -> np.ndarray:
        packed = struct.pack(
            "<qddddd", self.n_bidders, self.gamma, self.dist.lower,
            self.dist.upper, self.dist.mean(), 0.0,
        )
        word = int.from_bytes(hashlib.sha256(packed).digest()[:8], "little")
        return np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(word)],
                        dtype=np.uint64)

    def uniforms(self, seed: int, start_rep: int, count: int) -> np.ndarray:
        counter = start_rep * (self.padded // 4)
        gen = np.random.Generator(
            np.random.Philox(key=self.key(seed), counter=[counter, 0, 0, 0])
        )
        u = gen.random((count, self.padded))[:, : self.uniforms_per_rep]
        return u.reshape(count, self.n_bidders, 2)

    def price(self, costs: np.ndarray, exact: bool) -> dict[str, np.ndarray]:
        """Bid both formats for a (reps, n, 2) cost block."""
        n = self.n_bidders
        if exact:
            markup = np.array(
                [decentralized_bid(self.market, c, self.dist.upper) - c
                 for c in costs.ravel()]
            ).reshape(costs.shape)
            phi = costs.sum(axis=2) - self.gamma
            post = np.array(
                [bundled_bid(self.market, p) for p in phi.ravel()]
            ).reshape(phi.shape)
        else:
            markup = self.table.standalone_markup(costs)
            phi = costs.sum(axis=2) - self.gamma
            post = phi + self.table.bundle_markup(phi)
        discount = self.gamma * np.asarray(
            self.dist.survival(costs[:, :, ::-1])
        ) ** (n - 1)
        pre = costs + markup - discount
        return {
            "pre_bids": pre,
            "pre_total": pre.sum(axis=2),
            "pre_payment": pre.min(axis=1).sum(axis=1),
            "phi": phi,
            "post_bids": post,
            "post_payment": post.min(axis=1),
        }


@lru_cache(maxsize=64)
def _engine(n_bidders: int, gamma: float, mean: float, lower: float, upper: float,
            table_points: int) -> _CellEngine:
    return _CellEngine(n_bidders, gamma, mean, lower, upper, table_points)


def _engine_for(config: SimConfig) -> _CellEngine:
    return _engine(config.n_bidders, config.gamma, config.mean, config.lower,
                   config.upper, config.table_points)


def run_auction(config: SimConfig, replication_index: int) -> AuctionOutcome:
    """Run a single replication, reproducible from (seed, index) alone."""
    if not 0 <= replication_index < config.replications:
        raise DomainError(
            f"replication index {replication_index} outside [0, {config.replications})"
        )
    eng = _engine_for(config)
    costs = eng.dist.quantile(eng.uniforms(config.seed, replication_index, 1))
    priced = eng.price(costs, config.exact_bids)
    pre_bids = priced["pre_bids"][0]
    post_bids = priced["post_bids"][0]
    return AuctionOutcome(
        costs=costs[0],
        pre_bids=pre_bids,
        pre_total_bids=priced["pre_total"][0],
        pre_payment=float(priced["pre_payment"][0]),
        post_bids=post_bids,
        post_payment=float(priced["post_payment"][0]),
        pre_winners=pre_bids.argmin(axis=0),
        post_winner=int(post_bids.argmin()),
    )


def _chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(chunk, total - s)) for s in range(0, total, chunk)]


def _cell_chunk_sums(eng: _CellEngine, config: SimConfig, start: int, count: int) -> dict:
    costs = eng.dist.quantile(eng.uniforms(config.seed, start, count))
    p = eng.price(costs, config.exact_bids)
    return {
        "sum_pre_total": float(np.sum(p["pre_total"])),
        "sum_post_bids": float(np.sum(p["post_bids"])),
        "sum_pre_payment": float(np.sum(p["pre_payment"])),
        "sum_post_payment": float(np.sum(p["post_payment"])),
        "sum_phi": float(np.sum(p["phi"])),
        "n_below_bids": int(np.sum(p["post_bids"] < p["pre_total"])),
        "n_below_payments": int(np.sum(p["post_payment"] < p["pre_payment"])),
    }


def _run_cell(config: SimConfig, *, threads: int = 1, chunk: int = DEFAULT_CHUNK,
              pool: ThreadPoolExecutor | None = None) -> CellStats:
    eng = _engine_for(config)
    ranges = _chunk_ranges(config.replications, chunk)
    if pool is not None and len(ranges) > 1:
        partials = list(pool.map(
            lambda r: _cell_chunk_sums(eng, config, r[0], r[1]), ranges
        ))
    else:
        partials = [_cell_chunk_sums(eng, config, s, c) for s, c in ranges]

    # Fixed reduction order: chunk partials are summed in index order, so the
    # result is bitwise identical for any worker count.
    totals = {k: 0.0 for k in partials[0]}
    for part in partials:
        for k, v in part.items():
            totals[k] += v

    reps = config.replications
    n_bids = reps * config.n_bidders
    return CellStats(
        n_bidders=config.n_bidders,
        gamma=config.gamma,
        replications=reps,
        avg_total_bid_pre=totals["sum_pre_total"] / n_bids,
        avg_total_bid_post=totals["sum_post_bids"] / n_bids,
        avg_payment_pre=totals["sum_pre_payment"] / reps,
        avg_payment_post=totals["sum_post_payment"] / reps,
        frac_below_diag_bids=totals["n_below_bids"] / n_bids,
        frac_below_diag_payments=totals["n_below_payments"] / reps,
        avg_bundle_cost=totals["sum_phi"] / n_bids,
    )


def run_grid(base: SimConfig, n_values, gamma_values, *, threads: int = 1,
             chunk: int = DEFAULT_CHUNK) -> SimulationSummary:
    """Run every (n, gamma) cell with cell-independent streams."""
    configs = [
        SimConfig(
            n_bidders=int(n), gamma=float(g), replications=base.replications,
            seed=base.seed, mean=base.mean, lower=base.lower, upper=base.upper,
            exact_bids=base.exact_bids, table_points=base.table_points,
        )
        for n in n_values
        for g in gamma_values
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = tuple(_run_cell(c, chunk=chunk, pool=pool) for c in configs)
    else:
        cells = tuple(_run_cell(c, chunk=chunk) for c in configs)
    return SimulationSummary(seed=base.seed, replications=base.replications, cells=cells)


def scatter_data(config: SimConfig, *, chunk: int = DEFAULT_CHUNK) -> ScatterData:
    """Per-draw (school-by-school, bundled) comparison points for one cell."""
    eng = _engine_for(config)
    bid_pre, bid_post, pay_pre, pay_post = [], [], [], []
    for start, count in _chunk_ranges(config.replications, chunk):
        costs = eng.dist.quantile(eng.uniforms(config.seed, start, count))
        p = eng.price(costs, config.exact_bids)
        bid_pre.append(p["pre_total"].ravel())
        bid_post.append(p["post_bids"].ravel())
        pay_pre.append(p["pre_payment"])
        pay_post.append(p["post_payment"])
    return ScatterData(
        n_bidders=config.n_bidders,
        gamma=config.gamma,
        bid_pre_total=np.concatenate(bid_pre),
        bid_post=np.concatenate(bid_post),
        payment_pre=np.concatenate(pay_pre),
        payment_post=np.concatenate(pay_post),
    )


def bundle_cost_mean(config: SimConfig, replications: int | None = None) -> float:
    """Average bundled cost over (replication, bidder) draws.

    Uses the engine's own draw pipeline; ``replications`` overrides the
    configured count when a tighter Monte Carlo error is needed.
    """
    eng = _engine_for(config)
    reps = config.replications if replications is None else replications
    total = 0.0
    count = 0
    for start, n in _chunk_ranges(reps, DEFAULT_CHUNK):
        costs = eng.dist.quantile(eng.uniforms(config.seed, start, n))
        total += float(np.sum(costs.sum(axis=2) - config.gamma))
        count += n * config.n_bidders
    return total / count


def write_summary_csv(summary: SimulationSummary, path) -> None:
    rows = summary.to_rows()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})


def write_summary_json(summary: SimulationSummary, path) -> None:
    payload = {
        "seed": summary.seed,
        "replications": summary.replications,
        "cells": summary.to_rows(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_scatter_csv(data: ScatterData, path) -> None:
    n = data.n_bidders
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replication", "bidder", "pre_total_bid", "post_bid",
             "pre_payment", "post_payment"]
        )
        for i in range(data.payment_pre.size):
            for b in range(n):
                writer.writerow([
                    i, b,
                    repr(float(data.bid_pre_total[i * n + b])),
                    repr(float(data.bid_post[i * n + b])),
                    repr(float(data.payment_pre[i])),
                    repr(float(data.payment_post[i])),
                ])
