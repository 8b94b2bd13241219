"""Campaign-level summaries and per-feature metric breakdowns.

Money figures are fen throughout: cost = sum(paying) / 1000, CPM is cost
per thousand impressions, eCPC is cost per click.  Ratios with an empty
denominator come back absent (None), never NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .features import BROWSER_LABELS, OS_LABELS, WEEKDAYS, derive_fields
from .logdata import SLOT_FORMATS, SLOT_VISIBILITIES, AuctionCase

__all__ = [
    "CampaignSummary",
    "FeatureBreakdown",
    "BreakdownRow",
    "FEATURE_KEYS",
    "METRICS",
    "UnknownFeatureKey",
    "campaign_summary",
    "feature_breakdown",
    "write_breakdown_csv",
    "write_summary_csv",
    "write_summary_markdown",
]

FEATURE_KEYS = (
    "weekday", "hour", "os", "browser", "region",
    "slot_size", "visibility", "format", "exchange", "user_tag",
)
METRICS = ("ctr", "market_price", "ecpc")


class UnknownFeatureKey(ValueError):
    pass


@dataclass(frozen=True)
class CampaignSummary:
    bids: int
    imps: int
    clicks: int
    convs: int
    cost_fen: float
    win_ratio: float | None
    ctr: float | None
    cvr: float | None
    cpm_fen: float | None
    ecpc_fen: float | None

    @classmethod
    def from_tallies(cls, bids: int, imps: int, clicks: int, convs: int, cost_fen: float) -> "CampaignSummary":
        return cls(
            bids=bids,
            imps=imps,
            clicks=clicks,
            convs=convs,
            cost_fen=cost_fen,
            win_ratio=imps / bids if bids > 0 else None,
            ctr=clicks / imps if imps > 0 else None,
            cvr=convs / clicks if clicks > 0 else None,
            cpm_fen=1000.0 * cost_fen / imps if imps > 0 else None,
            ecpc_fen=cost_fen / clicks if clicks > 0 else None,
        )


def campaign_summary(bid_count: int, cases: Sequence[AuctionCase]) -> CampaignSummary:
    """Summary over joined cases; bid_count 0 means win ratio unknown."""
    imps = len(cases)
    clicks = sum(1 for c in cases if c.clicked)
    convs = sum(1 for c in cases if c.converted)
    cost_milli = sum(c.paying_price for c in cases)
    return CampaignSummary.from_tallies(bid_count, imps, clicks, convs, cost_milli / 1000.0)


@dataclass(frozen=True)
class BreakdownRow:
    label: str
    n: int
    mean: float | None
    se: float | None
    raw_label: str | None = None  # original tag id for re-indexed user_tag rows


@dataclass
class FeatureBreakdown:
    feature_key: str
    metric: str
    rows: list[BreakdownRow]


def _group_labels(case: AuctionCase, key: str) -> list[str]:
    rec = case.record
    if key == "region":
        return [str(rec.region)]
    if key == "exchange":
        return [str(rec.ad_exchange)]
    if key == "slot_size":
        return [f"{rec.slot_width}×{rec.slot_height}"]
    if key == "visibility":
        return [rec.slot_visibility]
    if key == "format":
        return [rec.slot_format]
    if key == "user_tag":
        return [str(t) for t in set(rec.user_tags)]
    d = derive_fields(rec)
    if key == "weekday":
        return [d.weekday]
    if key == "hour":
        return [str(d.hour)]
    if key == "os":
        return [d.os]
    if key == "browser":
        return [d.browser]
    raise UnknownFeatureKey(f"unknown feature key {key!r}")


def _sort_key(key: str):
    if key in ("hour", "region", "exchange", "user_tag"):
        return lambda label: int(label)
    if key == "weekday":
        order = {w: i for i, w in enumerate(WEEKDAYS)}
        return lambda label: order.get(label, len(order))
    if key == "os":
        order = {w: i for i, w in enumerate(OS_LABELS)}
        return lambda label: order.get(label, len(order))
    if key == "browser":
        order = {w: i for i, w in enumerate(BROWSER_LABELS)}
        return lambda label: order.get(label, len(order))
    if key == "visibility":
        order = {w: i for i, w in enumerate(SLOT_VISIBILITIES)}
        return lambda label: (order.get(label, len(order)), label)
    if key == "format":
        order = {w: i for i, w in enumerate(SLOT_FORMATS)}
        return lambda label: (order.get(label, len(order)), label)
    if key == "slot_size":
        return lambda label: tuple(int(p) for p in label.split("×"))
    return lambda label: label


def feature_breakdown(cases: Sequence[AuctionCase], key: str, metric: str) -> FeatureBreakdown:
    """Per-group (n, mean, standard error) of the chosen metric.

    CTR uses the Bernoulli standard error sqrt(m(1-m)/n); market price uses
    the sample standard error; eCPC groups without a click are reported
    absent.  A case with k tags contributes to k tag groups, and tag groups
    are re-indexed 1..K by descending frequency (original id kept in
    raw_label).
    """
    if key not in FEATURE_KEYS:
        raise UnknownFeatureKey(f"unknown feature key {key!r}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if not cases:
        raise ValueError("breakdown needs at least one case")

    acc: dict[str, list] = {}  # label -> [n, clicks, sum_price, sum_price_sq]
    for case in cases:
        price = case.paying_price
        for label in _group_labels(case, key):
            a = acc.setdefault(label, [0, 0, 0, 0])
            a[0] += 1
            a[1] += 1 if case.clicked else 0
            a[2] += price
            a[3] += price * price

    rows: list[BreakdownRow] = []
    for label, (n, clicks, s, s2) in acc.items():
        if metric == "ctr":
            mean = clicks / n
            se = math.sqrt(mean * (1.0 - mean) / n)
        elif metric == "market_price":
            mean = s / n
            var = (s2 - s * s / n) / (n - 1) if n > 1 else 0.0
            se = math.sqrt(max(var, 0.0) / n)
        else:  # ecpc
            if clicks == 0:
                mean, se = None, None
            else:
                mean, se = (s / 1000.0) / clicks, None
        rows.append(BreakdownRow(label, n, mean, se))

    if key == "user_tag":
        rows.sort(key=lambda r: (-r.n, int(r.label)))
        rows = [
            BreakdownRow(str(rank), r.n, r.mean, r.se, raw_label=r.label)
            for rank, r in enumerate(rows, start=1)
        ]
    else:
        rows.sort(key=lambda r, k=_sort_key(key): k(r.label))
    return FeatureBreakdown(key, metric, rows)


def _fmt(value, none="") -> str:
    return none if value is None else repr(value)


def write_breakdown_csv(breakdown: FeatureBreakdown, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("label,n,mean,se,raw_label\n")
        for r in breakdown.rows:
            f.write(f"{r.label},{r.n},{_fmt(r.mean)},{_fmt(r.se)},{r.raw_label or ''}\n")


SUMMARY_COLUMNS = ("bids", "imps", "clicks", "convs", "cost_fen",
                   "win_ratio", "ctr", "cvr", "cpm_fen", "ecpc_fen")


def write_summary_csv(rows: list[tuple[str, CampaignSummary]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("campaign," + ",".join(SUMMARY_COLUMNS) + "\n")
        for name, s in rows:
            f.write(name + "," + ",".join(_fmt(getattr(s, c)) for c in SUMMARY_COLUMNS) + "\n")


def _pct(value, digits) -> str:
    return "-" if value is None else f"{100.0 * value:.{digits}f}%"


def write_summary_markdown(rows: list[tuple[str, CampaignSummary]], path) -> None:
    lines = [
        "| Adv. | Bids | Imps | Clicks | Convs | Cost | Win Ratio | CTR | CVR | CPM | eCPC |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for name, s in rows:
        lines.append(
            f"| {name} | {s.bids:,} | {s.imps:,} | {s.clicks:,} | {s.convs:,} "
            f"| {s.cost_fen:,.0f} | {_pct(s.win_ratio, 2)} | {_pct(s.ctr, 3)} "
            f"| {_pct(s.cvr, 3)} "
            f"| {'-' if s.cpm_fen is None else f'{s.cpm_fen:.2f}'} "
            f"| {'-' if s.ecpc_fen is None else f'{s.ecpc_fen:.2f}'} |"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
