"""Bid/impression/click/conversion log schema, parsing, and event joining.

The on-disk format is tab-separated text, one record per line, UTF-8,
optionally gzipped.  Event logs (impressions, clicks, conversions) carry 24
columns; bid logs omit the three event-only columns (log type, paying
price, key page URL) and keep the relative order of the rest, giving 21.

All price columns are integers under the CPM convention: the logged value
is the price of one thousand impressions expressed in Chinese fen, so the
cost of a single impression in fen is ``paying_price / 1000``.  Derived
money figures elsewhere in the package (cost, CPM, eCPC) are plain fen.
"""

from __future__ import annotations

import enum
import gzip
import io
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Iterable, Iterator

__all__ = [
    "MoneyMilli",
    "LogType",
    "LogRecord",
    "AuctionCase",
    "LogSchema",
    "EVENT_LOG",
    "BID_LOG",
    "LogParseError",
    "ColumnCountMismatch",
    "FieldParseError",
    "TimestampFormatError",
    "SchemaMismatch",
    "JoinIssue",
    "parse_record",
    "serialize_record",
    "load_log",
    "join_events",
    "schema_by_name",
]

NULL_SENTINELS = {"", "null"}
TIMESTAMP_DIGITS = 17

# Non-negative integer price in the CPM log convention: fen per thousand
# impressions. Divide a sum of these by 1000 to get fen.
MoneyMilli = int


class LogType(enum.Enum):
    """Row type of an event log.  Bid rows carry no type code."""

    BID = "bid"
    IMPRESSION = "impression"
    CLICK = "click"
    CONVERSION = "conversion"

    @property
    def code(self) -> int | None:
        return _TYPE_TO_CODE.get(self)

    @classmethod
    def from_code(cls, code: int) -> "LogType":
        try:
            return _CODE_TO_TYPE[code]
        except KeyError:
            raise ValueError(f"unknown log type code {code!r}") from None


_TYPE_TO_CODE = {LogType.IMPRESSION: 1, LogType.CLICK: 2, LogType.CONVERSION: 3}
_CODE_TO_TYPE = {v: k for k, v in _TYPE_TO_CODE.items()}


class LogParseError(ValueError):
    """Base class for per-line parse failures."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class ColumnCountMismatch(LogParseError):
    def __init__(self, expected: int, got: int, line_no: int | None = None):
        super().__init__(f"expected {expected} tab-separated columns, got {got}", line_no)
        self.expected = expected
        self.got = got


class FieldParseError(LogParseError):
    def __init__(self, column: int, reason: str, line_no: int | None = None):
        super().__init__(f"column {column}: {reason}", line_no)
        self.column = column
        self.reason = reason


class TimestampFormatError(FieldParseError):
    def __init__(self, raw: str, line_no: int | None = None):
        super().__init__(2, f"timestamp {raw!r} is not yyyyMMddHHmmssSSS", line_no)
        self.raw = raw


class SchemaMismatch(ValueError):
    """Record carries event-only fields a bid-log schema must drop."""


# Column order of the full event-log line.  Bid logs drop the entries
# marked event-only below.
EVENT_COLUMNS = (
    "bid_id",
    "timestamp",
    "log_type",
    "ipinyou_id",
    "user_agent",
    "ip",
    "region",
    "city",
    "ad_exchange",
    "domain",
    "url",
    "anonymous_url_id",
    "slot_id",
    "slot_width",
    "slot_height",
    "slot_visibility",
    "slot_format",
    "slot_floor_price",
    "creative_id",
    "bid_price",
    "paying_price",
    "key_page_url",
    "advertiser_id",
    "user_tags",
)

EVENT_ONLY_COLUMNS = ("log_type", "paying_price", "key_page_url")

BID_COLUMNS = tuple(c for c in EVENT_COLUMNS if c not in EVENT_ONLY_COLUMNS)

_INT_COLUMNS = {
    "region",
    "city",
    "ad_exchange",
    "slot_width",
    "slot_height",
    "advertiser_id",
}
_MONEY_COLUMNS = {"slot_floor_price", "bid_price", "paying_price"}

SLOT_VISIBILITIES = (
    "FirstView", "SecondView", "ThirdView", "FourthView", "FifthView",
    "SixthView", "SeventhView", "EighthView", "NinthView", "TenthView", "Na",
)
SLOT_FORMATS = ("Fixed", "Pop", "Background", "Float", "Na")


@dataclass(frozen=True)
class LogSchema:
    """A column ordering: ``event`` (24 columns) or ``bid`` (21 columns)."""

    variant: str
    columns: tuple[str, ...]

    @property
    def column_count(self) -> int:
        return len(self.columns)


EVENT_LOG = LogSchema("event", EVENT_COLUMNS)
BID_LOG = LogSchema("bid", BID_COLUMNS)


def schema_by_name(name: str) -> LogSchema:
    if name == "event":
        return EVENT_LOG
    if name == "bid":
        return BID_LOG
    raise ValueError(f"unknown schema {name!r} (expected 'event' or 'bid')")


@dataclass(frozen=True, slots=True)
class LogRecord:
    """One parsed log row.  Prices are :data:`MoneyMilli` integers."""

    bid_id: str
    timestamp: datetime
    log_type: LogType | None
    ipinyou_id: str
    user_agent: str
    ip: str
    region: int
    city: int
    ad_exchange: int
    domain: str
    url: str
    anonymous_url_id: str | None
    slot_id: str
    slot_width: int
    slot_height: int
    slot_visibility: str
    slot_format: str
    slot_floor_price: MoneyMilli
    creative_id: str
    bid_price: MoneyMilli
    paying_price: MoneyMilli | None
    key_page_url: str | None
    advertiser_id: int
    user_tags: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class AuctionCase:
    """An impression joined with its deduplicated click/conversion outcome."""

    record: LogRecord
    clicked: bool
    converted: bool

    @property
    def bid_id(self) -> str:
        return self.record.bid_id

    @property
    def timestamp(self) -> datetime:
        return self.record.timestamp

    @property
    def paying_price(self) -> int:
        p = self.record.paying_price
        return 0 if p is None else p

    @property
    def floor_price(self) -> int:
        return self.record.slot_floor_price


def _is_null(raw: str) -> bool:
    return raw.lower() in NULL_SENTINELS


def _parse_timestamp(raw: str, line_no: int | None) -> datetime:
    if len(raw) != TIMESTAMP_DIGITS or not raw.isdigit():
        raise TimestampFormatError(raw, line_no)
    try:
        return datetime(
            int(raw[0:4]), int(raw[4:6]), int(raw[6:8]),
            int(raw[8:10]), int(raw[10:12]), int(raw[12:14]),
            int(raw[14:17]) * 1000,
        )
    except ValueError:
        raise TimestampFormatError(raw, line_no) from None


def format_timestamp(ts: datetime) -> str:
    return (
        f"{ts.year:04d}{ts.month:02d}{ts.day:02d}"
        f"{ts.hour:02d}{ts.minute:02d}{ts.second:02d}"
        f"{ts.microsecond // 1000:03d}"
    )


def _parse_tags(raw: str) -> tuple[int, ...]:
    if _is_null(raw):
        return ()
    try:
        return tuple(int(t) for t in raw.split(","))
    except ValueError:
        raise ValueError(f"bad tag list {raw!r}") from None


def parse_record(line: str, schema: LogSchema, line_no: int | None = None) -> LogRecord:
    """Parse one tab-separated line into a record.

    ``"Null"`` (any case) and the empty string map to absent optionals.
    Any malformed numeric field or wrong column count raises instead of
    producing a partial record.
    """
    parts = line.split("\t")
    if len(parts) != schema.column_count:
        raise ColumnCountMismatch(schema.column_count, len(parts), line_no)

    values: dict[str, object] = {
        "log_type": None,
        "paying_price": None,
        "key_page_url": None,
    }
    for col_idx, (name, raw) in enumerate(zip(schema.columns, parts), start=1):
        if name == "timestamp":
            values[name] = _parse_timestamp(raw, line_no)
        elif name == "log_type":
            try:
                values[name] = LogType.from_code(int(raw))
            except ValueError as exc:
                raise FieldParseError(col_idx, str(exc), line_no) from None
        elif name in _INT_COLUMNS:
            try:
                values[name] = int(raw)
            except ValueError:
                raise FieldParseError(col_idx, f"expected integer, got {raw!r}", line_no) from None
        elif name in _MONEY_COLUMNS:
            try:
                price = int(raw)
            except ValueError:
                raise FieldParseError(col_idx, f"expected integer price, got {raw!r}", line_no) from None
            if price < 0:
                raise FieldParseError(col_idx, f"negative price {price}", line_no)
            values[name] = price
        elif name == "user_tags":
            try:
                values[name] = _parse_tags(raw)
            except ValueError as exc:
                raise FieldParseError(col_idx, str(exc), line_no) from None
        elif name in ("anonymous_url_id", "key_page_url"):
            values[name] = None if _is_null(raw) else raw
        else:
            values[name] = raw
    return LogRecord(**values)  # type: ignore[arg-type]


def serialize_record(record: LogRecord, schema: LogSchema, strict: bool = False) -> str:
    """Render a record back to its tab-separated line form.

    Bit-exact inverse of :func:`parse_record` on canonically-written lines.
    With a bid schema, event-only fields are dropped; ``strict=True`` turns
    that drop into a :class:`SchemaMismatch` error.
    """
    if schema.variant == "bid" and strict:
        present = [
            c for c in EVENT_ONLY_COLUMNS
            if getattr(record, c) is not None
        ]
        if present:
            raise SchemaMismatch(
                f"bid schema drops event-only fields set on record: {', '.join(present)}"
            )
    parts = []
    for name in schema.columns:
        value = getattr(record, name)
        if name == "timestamp":
            parts.append(format_timestamp(value))
        elif name == "log_type":
            parts.append("Null" if value is None else str(value.code))
        elif name == "user_tags":
            parts.append(",".join(str(t) for t in value) if value else "null")
        elif value is None:
            parts.append("Null")
        else:
            parts.append(str(value))
    return "\t".join(parts)


def _open_maybe_gzip(path) -> io.TextIOBase:
    f = open(path, "rb")
    magic = f.read(3)
    f.seek(0)
    if magic[:2] == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.GzipFile(fileobj=f), encoding="utf-8")
    if magic == b"BZh":
        import bz2

        return io.TextIOWrapper(bz2.BZ2File(f), encoding="utf-8")
    return io.TextIOWrapper(f, encoding="utf-8")


def load_log(
    path,
    schema: LogSchema,
    strict: bool = True,
    error_sink: list | None = None,
) -> Iterator[LogRecord]:
    """Stream records from a (possibly gzipped) log file.

    Records are yielded in file order without materializing the file.  In
    strict mode the first bad line raises, with the 1-based line number
    attached; otherwise bad lines are appended to ``error_sink`` (when
    given) and skipped.
    """
    with _open_maybe_gzip(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            try:
                yield parse_record(line, schema, line_no)
            except LogParseError as exc:
                if strict:
                    raise
                if error_sink is not None:
                    error_sink.append(exc)


@dataclass(frozen=True)
class JoinIssue:
    """Non-fatal anomaly found while joining event streams."""

    kind: str  # orphan_click | orphan_conversion | duplicate_impression | price_invariant
    bid_id: str


def join_events(
    impressions: Iterable[LogRecord],
    clicks: Iterable[LogRecord],
    conversions: Iterable[LogRecord],
    issue_sink: list[JoinIssue] | None = None,
) -> list[AuctionCase]:
    """Join impressions with click/conversion events on bid_id.

    One case per unique impression; duplicate impression ids keep the first
    occurrence, repeated click/conversion rows count once, and events with
    no matching impression are reported as orphans rather than failing.
    Output is sorted by ascending timestamp with bid_id as the tie-break.
    """
    def report(kind: str, bid_id: str) -> None:
        if issue_sink is not None:
            issue_sink.append(JoinIssue(kind, bid_id))

    by_id: dict[str, LogRecord] = {}
    for rec in impressions:
        if rec.bid_id in by_id:
            report("duplicate_impression", rec.bid_id)
            continue
        if rec.paying_price is None or rec.bid_price <= rec.paying_price:
            report("price_invariant", rec.bid_id)
        by_id[rec.bid_id] = rec

    clicked: set[str] = set()
    for rec in clicks:
        if rec.bid_id in by_id:
            clicked.add(rec.bid_id)
        else:
            report("orphan_click", rec.bid_id)
    converted: set[str] = set()
    for rec in conversions:
        if rec.bid_id in by_id:
            converted.add(rec.bid_id)
        else:
            report("orphan_conversion", rec.bid_id)

    cases = [
        AuctionCase(rec, rec.bid_id in clicked, rec.bid_id in converted)
        for rec in by_id.values()
    ]
    cases.sort(key=lambda c: (c.record.timestamp, c.record.bid_id))
    return cases


def as_event(record: LogRecord, log_type: LogType) -> LogRecord:
    """Copy of the record with the given event type code."""
    return replace(record, log_type=log_type)
