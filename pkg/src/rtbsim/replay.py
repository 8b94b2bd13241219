"""Offline auction replay under a budget.

Simulation walks the time-ordered impression cases once.  Before each case
the budget is checked: once spend reaches it, every remaining bid is zero.
Otherwise the strategy's bid wins iff it is strictly above both the logged
paying price and the floor price; a win pays the logged price and credits
the case's click/conversion flags.  The KPI score of a run is
clicks + N * conversions with N the campaign's conversion weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bidding, kernels
from .bidding import CampaignSpec, Strategy, needs_pctr
from .logdata import AuctionCase

__all__ = [
    "STANDARD_FRACTIONS",
    "FractionOutOfRange",
    "UnsortedInput",
    "MissingCtrModel",
    "ReplayData",
    "ReplayTrace",
    "ReplayResult",
    "make_budget",
    "simulate",
    "StrategyEntry",
    "CampaignRun",
    "ExperimentTables",
    "run_experiment",
    "write_trace",
]

STANDARD_FRACTIONS = (Fraction(1, 32), Fraction(1, 8), Fraction(1, 2))


class FractionOutOfRange(ValueError):
    pass


class UnsortedInput(ValueError):
    pass


class MissingCtrModel(ValueError):
    pass


@dataclass
class ReplayData:
    """Column view of time-sorted auction cases for fast repeated replay."""

    paying: np.ndarray
    floor: np.ndarray
    clicked: np.ndarray
    converted: np.ndarray

    def __len__(self) -> int:
        return len(self.paying)

    @classmethod
    def from_cases(cls, cases: Sequence[AuctionCase]) -> "ReplayData":
        ts = [c.timestamp for c in cases]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise UnsortedInput("cases must be sorted by ascending timestamp")
        return cls(
            paying=np.array([c.paying_price for c in cases], dtype=np.int64),
            floor=np.array([c.floor_price for c in cases], dtype=np.int64),
            clicked=np.array([c.clicked for c in cases], dtype=bool),
            converted=np.array([c.converted for c in cases], dtype=bool),
        )

    @property
    def total_cost_milli(self) -> int:
        return int(self.paying.sum())


def make_budget(cases, fraction) -> int:
    """floor(fraction * total logged cost), in milli-fen.

    Fractions above 1 are rejected: with more budget than the log's total
    cost the constraint is vacuous and the replay degenerates.
    """
    frac = Fraction(fraction) if not isinstance(fraction, Fraction) else fraction
    if frac <= 0 or frac > 1:
        raise FractionOutOfRange(f"budget fraction must be in (0, 1], got {fraction}")
    data = cases if isinstance(cases, ReplayData) else ReplayData.from_cases(cases)
    if len(data) == 0:
        raise ValueError("cannot size a budget from zero cases")
    return int(frac * data.total_cost_milli)


@dataclass
class ReplayTrace:
    """Per-case log of a run: bid, win flag, running spend after the case."""

    bids: np.ndarray
    win: np.ndarray
    spent_after: np.ndarray


@dataclass
class ReplayResult:
    wins: int
    clicks: int
    convs: int
    cost_milli: int
    score: float
    bids_submitted: int
    exhausted_at: int | None
    unclicked_convs: int = 0  # conversions credited on cases with no click
    trace: ReplayTrace | None = None

    @property
    def cost_fen(self) -> float:
        return self.cost_milli / 1000.0


def simulate(
    cases,
    strategy: Strategy,
    budget: int,
    campaign: CampaignSpec | None = None,
    ctr_model=None,
    pctr: np.ndarray | None = None,
    keep_trace: bool = False,
) -> ReplayResult:
    """Replay one strategy against the logged prices under a budget.

    ``cases`` is a time-sorted case sequence or a prebuilt
    :class:`ReplayData`.  Strategies that price on pCTR need either a
    ``pctr`` array aligned with the cases or a scorer object exposing
    ``score_cases`` (only usable when raw cases are given).
    """
    campaign = campaign or CampaignSpec(advertiser_id=0, n_weight=0)
    if isinstance(cases, ReplayData):
        data = cases
        raw_cases = None
    else:
        raw_cases = cases
        data = ReplayData.from_cases(cases)
    n = len(data)

    if needs_pctr(strategy) and pctr is None:
        if ctr_model is None:
            raise MissingCtrModel(f"{strategy.name} bidding requires a CTR model or pctr array")
        if raw_cases is None:
            raise MissingCtrModel("scoring from a model needs raw cases, not ReplayData")
        pctr = ctr_model.score_cases(raw_cases)

    bids = bidding.bid_vector(strategy, n, pctr=pctr)
    win_u8, spent, exhausted = kernels.win_scan(bids, data.paying, data.floor, np.int64(budget))
    win = win_u8.astype(bool)

    wins = int(win.sum())
    clicks = int((win & data.clicked).sum())
    convs = int((win & data.converted).sum())
    unclicked = int((win & data.converted & ~data.clicked).sum())
    exhausted_at = None if exhausted < 0 else int(exhausted)
    trace = None
    if keep_trace:
        pay_won = np.where(win, data.paying, 0)
        trace = ReplayTrace(bids=bids, win=win, spent_after=np.cumsum(pay_won))
    return ReplayResult(
        wins=wins,
        clicks=clicks,
        convs=convs,
        cost_milli=int(spent),
        score=float(clicks + campaign.n_weight * convs),
        bids_submitted=n if exhausted_at is None else exhausted_at,
        exhausted_at=exhausted_at,
        unclicked_convs=unclicked,
        trace=trace,
    )


def write_trace(trace: ReplayTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("case_index,bid,win,spent\n")
        for i in range(len(trace.bids)):
            f.write(f"{i},{trace.bids[i]},{int(trace.win[i])},{trace.spent_after[i]}\n")


# ---------------------------------------------------------------------------
# Cross-product experiment: campaigns x strategies x budget fractions.
# ---------------------------------------------------------------------------

@dataclass
class StrategyEntry:
    """A labelled strategy column; the strategy may depend on the fraction
    (e.g. re-tuned per budget), in which case pass a callable."""

    label: str
    strategy: Strategy | Callable[[Fraction], Strategy]
    pctr: np.ndarray | None = None

    def resolve(self, fraction: Fraction) -> Strategy:
        return self.strategy(fraction) if callable(self.strategy) else self.strategy


@dataclass
class CampaignRun:
    campaign: CampaignSpec
    test: ReplayData
    entries: list[StrategyEntry]


@dataclass
class Table:
    """One metric at one budget fraction, rows per campaign plus totals."""

    title: str
    columns: list[str]
    rows: list[tuple[str, list]] = field(default_factory=list)

    def to_csv(self) -> str:
        out = ["campaign," + ",".join(self.columns)]
        for name, values in self.rows:
            out.append(name + "," + ",".join(str(v) for v in values))
        return "\n".join(out) + "\n"

    def to_markdown(self) -> str:
        head = "| campaign | " + " | ".join(self.columns) + " |"
        sep = "|" + "---|" * (len(self.columns) + 1)
        lines = [f"**{self.title}**", "", head, sep]
        for name, values in self.rows:
            lines.append("| " + name + " | " + " | ".join(str(v) for v in values) + " |")
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentTables:
    # keyed by (metric, fraction) with metric in {"clicks", "convs", "score"}
    tables: dict[tuple[str, Fraction], Table]

    def get(self, metric: str, fraction) -> Table:
        return self.tables[(metric, Fraction(fraction))]

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for (metric, frac), table in self.tables.items():
            stem = f"table_{metric}_{frac.numerator}_{frac.denominator}"
            csv_path = directory / f"{stem}.csv"
            csv_path.write_text(table.to_csv(), encoding="utf-8")
            md_path = directory / f"{stem}.md"
            md_path.write_text(table.to_markdown(), encoding="utf-8")
            written += [csv_path, md_path]
        return written


def run_experiment(
    runs: Sequence[CampaignRun],
    fractions: Sequence = STANDARD_FRACTIONS,
) -> ExperimentTables:
    """Simulate every (campaign, strategy, fraction) cell independently.

    Emits one table per metric per fraction with one row per campaign,
    per-season subtotal rows for seasons present, and a grand-total row
    equal to the column sums.
    """
    if not runs:
        raise ValueError("no campaigns to run")
    fractions = [Fraction(f) if not isinstance(f, Fraction) else f for f in fractions]
    labels = [e.label for e in runs[0].entries]
    for run in runs:
        if [e.label for e in run.entries] != labels:
            raise ValueError("all campaigns must share the same strategy labels")

    tables: dict[tuple[str, Fraction], Table] = {}
    for frac in fractions:
        per_metric: dict[str, list[tuple[str, list]]] = {"clicks": [], "convs": [], "score": []}
        season_sums: dict[int | None, dict[str, list[float]]] = {}
        totals = {m: [0.0] * len(labels) for m in ("clicks", "convs", "score")}
        for run in runs:
            budget = make_budget(run.test, frac)
            values = {"clicks": [], "convs": [], "score": []}
            for entry in run.entries:
                strategy = entry.resolve(frac)
                res = simulate(run.test, strategy, budget, run.campaign, pctr=entry.pctr)
                values["clicks"].append(res.clicks)
                values["convs"].append(res.convs)
                values["score"].append(res.score)
            season = run.campaign.season
            if season not in season_sums:
                season_sums[season] = {m: [0.0] * len(labels) for m in ("clicks", "convs", "score")}
            for m in ("clicks", "convs", "score"):
                per_metric[m].append((str(run.campaign.advertiser_id), values[m]))
                for j, v in enumerate(values[m]):
                    season_sums[season][m][j] += v
                    totals[m][j] += v
        for m in ("clicks", "convs", "score"):
            rows = list(per_metric[m])
            for s in sorted(k for k in season_sums if k is not None):
                rows.append((f"S{s}", _as_ints(season_sums[s][m])))
            rows.append(("Total", _as_ints(totals[m])))
            tables[(m, frac)] = Table(
                title=f"{m} at budget {frac}", columns=list(labels), rows=rows,
            )
    return ExperimentTables(tables)


def _as_ints(values: list[float]) -> list:
    return [int(v) if float(v).is_integer() else v for v in values]
