"""Model inputs from log records.

Two encodings are produced: sparse binary one-hot vectors (for the linear
CTR model) and dense frequency/CTR category encodings (for the boosted
trees).  Index 0 of the one-hot space is reserved for the bias and never
appears in a vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .logdata import AuctionCase, LogRecord

__all__ = [
    "DerivedFields",
    "Vocabulary",
    "CategoryEncodings",
    "SparseBatch",
    "EmptyTrainingSet",
    "ManifestMismatch",
    "derive_fields",
    "classify_user_agent",
    "floor_price_bucket",
    "build_vocabulary",
    "binarize",
    "binarize_cases",
    "build_encodings",
    "densify",
    "densify_cases",
    "feature_manifest",
    "encoding_split",
]

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
OS_LABELS = ("windows", "mac", "ios", "android", "linux", "other")
BROWSER_LABELS = ("chrome", "ie", "firefox", "safari", "opera", "maxthon", "sogou", "theworld", "other")

# Ordered, case-insensitive substring rules; first match wins.  android must
# precede linux (android UAs contain "linux") and ios must precede mac
# (iPhone UAs contain "mac os x").
_OS_RULES = (
    ("android", ("android",)),
    ("ios", ("iphone", "ipad", "ipod")),
    ("windows", ("windows",)),
    ("mac", ("mac os", "macintosh")),
    ("linux", ("linux", "x11")),
)
_BROWSER_RULES = (
    ("maxthon", ("maxthon",)),
    ("sogou", ("sogou", "metasr")),
    ("theworld", ("theworld", "the world")),
    ("opera", ("opera", "opr/")),
    ("ie", ("msie", "trident")),
    ("firefox", ("firefox",)),
    ("chrome", ("chrome",)),
    ("safari", ("safari",)),
)

FLOOR_BUCKETS = ("0", "[1,10]", "[11,50]", "[51,100]", "[101,+inf)")

# Fields contributing one-hot features, in canonical order.  Identifier-like
# and price/label columns are deliberately absent.
VOCAB_FIELDS = (
    "weekday", "hour", "os", "browser", "region", "city", "ad_exchange",
    "domain", "slot_id", "slot_width", "slot_height", "slot_visibility",
    "slot_format", "floor_bucket", "creative_id", "tag",
)

# Dense manifest for the tree model: (frequency, ctr) per categorical
# field, one aggregate ctr over the case's tags, then raw continuous values.
GBRT_CATEGORICAL_FIELDS = (
    "weekday", "os", "browser", "region", "city", "ad_exchange",
    "domain", "slot_id", "slot_visibility", "slot_format", "creative_id",
)
GBRT_CONTINUOUS_FIELDS = ("slot_width", "slot_height", "slot_floor_price", "hour")


class EmptyTrainingSet(ValueError):
    pass


class ManifestMismatch(ValueError):
    pass


def classify_user_agent(user_agent: str) -> tuple[str, str]:
    """(os, browser) labels from ordered substring matching; unknown -> other."""
    ua = user_agent.lower()
    os_label = "other"
    for label, needles in _OS_RULES:
        if any(nd in ua for nd in needles):
            os_label = label
            break
    browser = "other"
    for label, needles in _BROWSER_RULES:
        if any(nd in ua for nd in needles):
            browser = label
            break
    return os_label, browser


def floor_price_bucket(price: int) -> str:
    if price <= 0:
        return FLOOR_BUCKETS[0]
    if price <= 10:
        return FLOOR_BUCKETS[1]
    if price <= 50:
        return FLOOR_BUCKETS[2]
    if price <= 100:
        return FLOOR_BUCKETS[3]
    return FLOOR_BUCKETS[4]


@dataclass(frozen=True, slots=True)
class DerivedFields:
    weekday: str
    hour: int
    os: str
    browser: str
    floor_bucket: str


def derive_fields(record: LogRecord) -> DerivedFields:
    os_label, browser = classify_user_agent(record.user_agent)
    return DerivedFields(
        weekday=WEEKDAYS[record.timestamp.weekday()],
        hour=record.timestamp.hour,
        os=os_label,
        browser=browser,
        floor_bucket=floor_price_bucket(record.slot_floor_price),
    )


def _field_values(record: LogRecord) -> list[tuple[str, str]]:
    """(field, value) pairs feeding the vocabulary, tags expanded."""
    d = derive_fields(record)
    pairs = [
        ("weekday", d.weekday),
        ("hour", str(d.hour)),
        ("os", d.os),
        ("browser", d.browser),
        ("region", str(record.region)),
        ("city", str(record.city)),
        ("ad_exchange", str(record.ad_exchange)),
        ("domain", record.domain),
        ("slot_id", record.slot_id),
        ("slot_width", str(record.slot_width)),
        ("slot_height", str(record.slot_height)),
        ("slot_visibility", record.slot_visibility),
        ("slot_format", record.slot_format),
        ("floor_bucket", d.floor_bucket),
        ("creative_id", record.creative_id),
    ]
    for tag in record.user_tags:
        pairs.append(("tag", str(tag)))
    return pairs


class Vocabulary:
    """Injective (field, value) -> index map; index 0 is the bias."""

    def __init__(self, index: dict[tuple[str, str], int]):
        self.index = index
        self.dimension = len(index) + 1

    def lookup(self, field: str, value: str) -> int | None:
        return self.index.get((field, value))

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.index == other.index

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("#rtbsim-vocab v1\n")
            f.write(f"dimension\t{self.dimension}\n")
            for (field, value), idx in sorted(self.index.items(), key=lambda kv: kv[1]):
                f.write(f"{idx}\t{field}\t{value}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        index: dict[tuple[str, str], int] = {}
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if header != "#rtbsim-vocab v1":
                raise ValueError(f"unsupported vocabulary file header {header!r}")
            f.readline()  # dimension line, re-derived from entries
            for line in f:
                idx, field, value = line.rstrip("\n").split("\t", 2)
                index[(field, value)] = int(idx)
        return cls(index)


def build_vocabulary(train: Iterable[AuctionCase]) -> Vocabulary:
    """First-seen value order over the canonical field order, one pass."""
    index: dict[tuple[str, str], int] = {}
    next_idx = 1
    empty = True
    for case in train:
        empty = False
        for key in _field_values(case.record):
            if key not in index:
                index[key] = next_idx
                next_idx += 1
    if empty:
        raise EmptyTrainingSet("cannot build a vocabulary from zero cases")
    return Vocabulary(index)


def binarize(record: LogRecord, vocab: Vocabulary) -> np.ndarray:
    """Sorted active one-hot indices (bias excluded, implicit index 0).

    Out-of-vocabulary values contribute nothing, so a fully unseen record
    yields an empty vector.
    """
    found = {
        idx for key in _field_values(record)
        if (idx := vocab.index.get(key)) is not None
    }
    return np.array(sorted(found), dtype=np.int32)


@dataclass
class SparseBatch:
    """CSR container for one-hot rows plus 0/1 labels."""

    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    dimension: int

    def __len__(self) -> int:
        return len(self.indptr) - 1

    @classmethod
    def from_vectors(cls, vectors: Sequence[np.ndarray], labels: Sequence[float], dimension: int) -> "SparseBatch":
        lengths = np.fromiter((len(v) for v in vectors), dtype=np.int64, count=len(vectors))
        indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = (
            np.concatenate(vectors).astype(np.int32)
            if len(vectors) else np.empty(0, dtype=np.int32)
        )
        return cls(indptr, indices, np.asarray(labels, dtype=np.float64), dimension)


def binarize_cases(cases: Sequence[AuctionCase], vocab: Vocabulary) -> SparseBatch:
    vectors = [binarize(c.record, vocab) for c in cases]
    labels = [1.0 if c.clicked else 0.0 for c in cases]
    return SparseBatch.from_vectors(vectors, labels, vocab.dimension)


# Pseudo-observation mass used when smoothing parameters are left implicit:
# alpha + beta = 20 at the subset's global CTR.
SMOOTHING_PSEUDO_COUNT = 20.0


class CategoryEncodings:
    """Per-(field, value) frequency and smoothed empirical CTR.

    Tag values carry CTR only.  Unseen values fall back to (0, prior).
    """

    def __init__(
        self,
        freq: dict[tuple[str, str], int],
        ctr: dict[tuple[str, str], float],
        prior: float,
        alpha: float,
        beta: float,
    ):
        self.freq = freq
        self.ctr = ctr
        self.prior = prior
        self.alpha = alpha
        self.beta = beta

    def lookup(self, field: str, value: str) -> tuple[int, float]:
        key = (field, value)
        return self.freq.get(key, 0), self.ctr.get(key, self.prior)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("#rtbsim-encodings v1\n")
            f.write(f"prior\t{self.prior!r}\talpha\t{self.alpha!r}\tbeta\t{self.beta!r}\n")
            for (field, value) in sorted(self.ctr):
                n = self.freq.get((field, value), 0)
                f.write(f"{field}\t{value}\t{n}\t{self.ctr[(field, value)]!r}\n")

    @classmethod
    def load(cls, path) -> "CategoryEncodings":
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if header != "#rtbsim-encodings v1":
                raise ValueError(f"unsupported encodings file header {header!r}")
            meta = f.readline().rstrip("\n").split("\t")
            prior, alpha, beta = float(meta[1]), float(meta[3]), float(meta[5])
            freq: dict[tuple[str, str], int] = {}
            ctr: dict[tuple[str, str], float] = {}
            for line in f:
                field, value, n, c = line.rstrip("\n").split("\t")
                if field != "tag":
                    freq[(field, value)] = int(n)
                ctr[(field, value)] = float(c)
        return cls(freq, ctr, prior, alpha, beta)


def build_encodings(
    train_subset: Sequence[AuctionCase],
    alpha: float | None = None,
    beta: float | None = None,
) -> CategoryEncodings:
    """Fit frequency/CTR encodings on a training subset.

    With alpha/beta omitted, smoothing pulls toward the subset's global CTR
    with 20 pseudo-observations; explicit (alpha, beta) are used verbatim,
    so alpha = beta = 0 gives raw per-category CTRs.
    """
    if not train_subset:
        raise EmptyTrainingSet("cannot fit encodings on zero cases")
    counts: dict[tuple[str, str], int] = {}
    clicks: dict[tuple[str, str], int] = {}
    total = 0
    total_clicks = 0
    for case in train_subset:
        total += 1
        is_click = 1 if case.clicked else 0
        total_clicks += is_click
        for key in _field_values(case.record):
            counts[key] = counts.get(key, 0) + 1
            if is_click:
                clicks[key] = clicks.get(key, 0) + 1
    prior = total_clicks / total
    if alpha is None or beta is None:
        alpha = SMOOTHING_PSEUDO_COUNT * prior
        beta = SMOOTHING_PSEUDO_COUNT * (1.0 - prior)
    denom_add = alpha + beta
    freq: dict[tuple[str, str], int] = {}
    ctr: dict[tuple[str, str], float] = {}
    for key, n in counts.items():
        k = clicks.get(key, 0)
        ctr[key] = (k + alpha) / (n + denom_add) if (n + denom_add) > 0 else prior
        if key[0] != "tag":
            freq[key] = n
    return CategoryEncodings(freq, ctr, prior, alpha, beta)


def feature_manifest() -> tuple[str, ...]:
    names: list[str] = []
    for f in GBRT_CATEGORICAL_FIELDS:
        names.append(f"{f}_freq")
        names.append(f"{f}_ctr")
    names.append("tag_ctr")
    names.extend(GBRT_CONTINUOUS_FIELDS)
    return tuple(names)


DEFAULT_MANIFEST = feature_manifest()


def densify(
    record: LogRecord,
    encodings: CategoryEncodings,
    manifest: tuple[str, ...] = DEFAULT_MANIFEST,
) -> np.ndarray:
    """Fixed-length dense vector in manifest order."""
    if manifest != DEFAULT_MANIFEST:
        unknown = set(manifest) - set(DEFAULT_MANIFEST)
        if unknown:
            raise ManifestMismatch(f"unknown manifest entries: {sorted(unknown)}")
    d = derive_fields(record)
    by_field = {
        "weekday": d.weekday,
        "os": d.os,
        "browser": d.browser,
        "region": str(record.region),
        "city": str(record.city),
        "ad_exchange": str(record.ad_exchange),
        "domain": record.domain,
        "slot_id": record.slot_id,
        "slot_visibility": record.slot_visibility,
        "slot_format": record.slot_format,
        "creative_id": record.creative_id,
    }
    continuous = {
        "slot_width": float(record.slot_width),
        "slot_height": float(record.slot_height),
        "slot_floor_price": float(record.slot_floor_price),
        "hour": float(d.hour),
    }
    out = np.empty(len(manifest), dtype=np.float64)
    for i, name in enumerate(manifest):
        if name == "tag_ctr":
            if record.user_tags:
                ctrs = [encodings.lookup("tag", str(t))[1] for t in record.user_tags]
                out[i] = sum(ctrs) / len(ctrs)
            else:
                out[i] = encodings.prior
        elif name in continuous:
            out[i] = continuous[name]
        elif name.endswith("_freq"):
            out[i] = float(encodings.lookup(name[:-5], by_field[name[:-5]])[0])
        else:
            out[i] = encodings.lookup(name[:-4], by_field[name[:-4]])[1]
    return out


def densify_cases(
    cases: Sequence[AuctionCase],
    encodings: CategoryEncodings,
    manifest: tuple[str, ...] = DEFAULT_MANIFEST,
) -> tuple[np.ndarray, np.ndarray]:
    """(matrix, labels) for a batch of cases."""
    x = np.empty((len(cases), len(manifest)), dtype=np.float64)
    y = np.empty(len(cases), dtype=np.float64)
    for i, case in enumerate(cases):
        x[i] = densify(case.record, encodings, manifest)
        y[i] = 1.0 if case.clicked else 0.0
    return x, y


def encoding_split(
    cases: Sequence[AuctionCase],
    mode: str = "time",
    seed: int = 0,
) -> list[AuctionCase]:
    """Half of the training cases reserved for fitting encodings.

    ``time`` takes the first half in time order, keeping the encoded period
    disjoint from the fitted one; ``random`` takes a seeded random half.
    """
    half = max(1, len(cases) // 2)
    if mode == "time":
        return list(cases[:half])
    if mode == "random":
        rng = np.random.Generator(np.random.PCG64(seed))
        picked = rng.permutation(len(cases))[:half]
        return [cases[i] for i in sorted(picked)]
    raise ValueError(f"unknown encoding split mode {mode!r}")
