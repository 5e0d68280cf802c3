"""Catalog and interaction-log ingestion, calendar decomposition, sessions and splits.

Both input formats are tab-separated UTF-8 text without a header row:

* catalog: ``item_id  category  subcategory  title  snippet``
* interactions: ``user_id  item_id  unix_ts  kind  value  session_id`` where
  ``kind`` is ``rating`` or ``click`` and ``value`` is empty for clicks.

Malformed lines never abort a parse. They are counted in an :class:`ErrorTally`
and skipped.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

GRANULARITIES = ("year", "month", "day_of_week", "hour", "minute", "second")
DEFAULT_SESSION_GAP = 1800
DEFAULT_RATING_SCALE = (1.0, 5.0)

_TOKEN_RE = re.compile(r"[^\W_]+")


class DataError(ValueError):
    """Raised when input data cannot be used at all (as opposed to a bad line)."""


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class NewsItem:
    item_id: str
    category: str
    subcategory: str = ""
    title_tokens: tuple[str, ...] = ()
    snippet_tokens: tuple[str, ...] = ()

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.title_tokens + self.snippet_tokens


@dataclass(frozen=True)
class Interaction:
    """One user-item event.

    ``rating`` is the explicit rating value, or ``None`` for an implicit click.
    """

    user_id: str
    item_id: str
    timestamp: int
    rating: Optional[float] = None
    session_id: Optional[str] = None
    label: Optional[str] = None

    @property
    def is_click(self) -> bool:
        return self.rating is None


@dataclass(frozen=True)
class TimeDecomposition:
    year: int
    month: int
    day_of_week: int
    hour: int
    minute: int
    second: int

    def bin(self, granularity: str) -> int:
        return getattr(self, granularity)


@dataclass
class Session:
    user_id: str
    interactions: list[Interaction]
    session_id: Optional[str] = None
    impression_items: Optional[frozenset[str]] = None

    @property
    def start(self) -> int:
        return self.interactions[0].timestamp

    @property
    def end(self) -> int:
        return self.interactions[-1].timestamp

    @property
    def key(self) -> str:
        if self.session_id is not None:
            return f"{self.user_id}/{self.session_id}"
        return f"{self.user_id}@{self.start}"

    def clicked(self) -> set[str]:
        return {x.item_id for x in self.interactions}


@dataclass
class ErrorTally:
    bad_lines: int = 0
    unknown_items: int = 0
    duplicates: int = 0
    messages: list[str] = field(default_factory=list)

    def bad(self, lineno: int, reason: str) -> None:
        self.bad_lines += 1
        self.messages.append(f"line {lineno}: {reason}")

    def merge(self, other: "ErrorTally") -> "ErrorTally":
        return ErrorTally(
            self.bad_lines + other.bad_lines,
            self.unknown_items + other.unknown_items,
            self.duplicates + other.duplicates,
            self.messages + other.messages,
        )

    def to_dict(self) -> dict:
        return {"bad_lines": self.bad_lines, "unknown_items": self.unknown_items}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class Dataset:
    catalog: dict[str, NewsItem]
    interactions: list[Interaction]
    rating_scale: tuple[float, float] = DEFAULT_RATING_SCALE
    tally: ErrorTally = field(default_factory=ErrorTally)


def _lines(stream: Iterable[str], header: bool):
    for lineno, line in enumerate(stream, start=1):
        if header and lineno == 1:
            continue
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        yield lineno, line


def parse_catalog(stream: Iterable[str], header: bool = False,
                  tally: Optional[ErrorTally] = None) -> tuple[dict[str, NewsItem], ErrorTally]:
    """Parse a catalog TSV into ``{item_id: NewsItem}``.

    Duplicate ids keep the last occurrence and increment ``tally.duplicates``.
    """
    tally = tally if tally is not None else ErrorTally()
    catalog: dict[str, NewsItem] = {}
    for lineno, line in _lines(stream, header):
        cols = line.split("\t")
        if len(cols) != 5:
            tally.bad(lineno, f"expected 5 columns, got {len(cols)}")
            continue
        item_id, category, subcategory, title, snippet = (c.strip() for c in cols)
        if not item_id:
            tally.bad(lineno, "empty item_id")
            continue
        if not category:
            tally.bad(lineno, "empty category")
            continue
        if item_id in catalog:
            tally.duplicates += 1
        catalog[item_id] = NewsItem(item_id, category, subcategory,
                                    tuple(tokenize(title)), tuple(tokenize(snippet)))
    if tally.duplicates:
        logger.warning("catalog: %d duplicate item ids (last occurrence kept)", tally.duplicates)
    return catalog, tally


def parse_interactions(stream: Iterable[str], rating_scale=DEFAULT_RATING_SCALE,
                       header: bool = False,
                       tally: Optional[ErrorTally] = None) -> tuple[list[Interaction], ErrorTally]:
    """Parse an interaction TSV, validating ratings against ``rating_scale``."""
    tally = tally if tally is not None else ErrorTally()
    lo, hi = rating_scale
    out: list[Interaction] = []
    for lineno, line in _lines(stream, header):
        cols = line.split("\t")
        if len(cols) == 5:
            cols.append("")
        if len(cols) != 6:
            tally.bad(lineno, f"expected 6 columns, got {len(cols)}")
            continue
        user_id, item_id, ts_raw, kind, value, session_id = (c.strip() for c in cols)
        if not user_id or not item_id:
            tally.bad(lineno, "empty user_id or item_id")
            continue
        try:
            ts = int(ts_raw)
        except ValueError:
            tally.bad(lineno, f"non-integer timestamp {ts_raw!r}")
            continue
        if ts < 0:
            tally.bad(lineno, "negative timestamp")
            continue
        if kind == "rating":
            try:
                rating = float(value)
            except ValueError:
                tally.bad(lineno, f"bad rating value {value!r}")
                continue
            if not (lo <= rating <= hi):
                tally.bad(lineno, f"rating {rating} outside [{lo}, {hi}]")
                continue
        elif kind == "click":
            rating = None
        else:
            tally.bad(lineno, f"unknown kind {kind!r}")
            continue
        out.append(Interaction(user_id, item_id, ts, rating, session_id or None))
    return out, tally


def load_dataset(catalog_path, interactions_path, rating_scale=DEFAULT_RATING_SCALE,
                 header: bool = False) -> Dataset:
    """Read both TSV files. Interactions with unknown items are kept but counted."""
    with open(catalog_path, encoding="utf-8") as fh:
        catalog, tally = parse_catalog(fh, header=header)
    with open(interactions_path, encoding="utf-8") as fh:
        interactions, tally = parse_interactions(fh, rating_scale, header=header, tally=tally)
    tally.unknown_items = sum(1 for x in interactions if x.item_id not in catalog)
    return Dataset(catalog, interactions, tuple(rating_scale), tally)


def write_catalog(catalog: dict[str, NewsItem], fh) -> None:
    for item in catalog.values():
        fh.write("\t".join([item.item_id, item.category, item.subcategory,
                            " ".join(item.title_tokens), " ".join(item.snippet_tokens)]) + "\n")


def format_interaction(x: Interaction) -> str:
    if x.rating is None:
        kind, value = "click", ""
    else:
        kind, value = "rating", repr(float(x.rating))
    return "\t".join([x.user_id, x.item_id, str(x.timestamp), kind, value, x.session_id or ""])


def write_interactions(interactions: Iterable[Interaction], fh) -> None:
    for x in interactions:
        fh.write(format_interaction(x) + "\n")


def decompose_timestamp(timestamp: int) -> TimeDecomposition:
    """Split a Unix timestamp (UTC) into year, month, day-of-week, hour, minute, second.

    Day-of-week counts from Monday = 0.
    """
    if timestamp < 0:
        raise ValueError("timestamp must be non-negative")
    d = datetime.fromtimestamp(int(timestamp), tz=timezone.utc)
    return TimeDecomposition(d.year, d.month, d.weekday(), d.hour, d.minute, d.second)


def decompose_many(timestamps) -> dict[str, np.ndarray]:
    """Vectorised :func:`decompose_timestamp`; returns one int array per granularity."""
    ts = np.asarray(timestamps, dtype=np.int64)
    as_dt = ts.astype("datetime64[s]")
    months = as_dt.astype("datetime64[M]").astype(np.int64)
    days = ts // 86400
    secs = ts % 86400
    return {
        "year": months // 12 + 1970,
        "month": months % 12 + 1,
        "day_of_week": (days + 3) % 7,
        "hour": secs // 3600,
        "minute": (secs // 60) % 60,
        "second": secs % 60,
    }


def sentiment_to_rating(sentiment: float) -> float:
    """Map a sentiment score in [-1, 1] affinely onto the 1-5 rating scale."""
    s = float(sentiment)
    if not math.isfinite(s):
        raise ValueError(f"sentiment must be finite, got {sentiment!r}")
    s = min(1.0, max(-1.0, s))
    return min(5.0, max(1.0, 3.0 + 2.0 * s))


def sessionize(interactions: Iterable[Interaction],
               session_gap_seconds: float = DEFAULT_SESSION_GAP) -> list[Session]:
    """Group interactions into per-user sessions.

    Interactions that carry a ``session_id`` are grouped by ``(user, session_id)``.
    The rest are sorted by time per user and cut wherever consecutive events are
    more than ``session_gap_seconds`` apart. Sorting is stable, so ties keep
    their input order.
    """
    if session_gap_seconds <= 0:
        raise ValueError("session_gap_seconds must be positive")
    by_id: dict[tuple[str, str], list[Interaction]] = defaultdict(list)
    loose: dict[str, list[Interaction]] = defaultdict(list)
    for x in interactions:
        if x.session_id:
            by_id[(x.user_id, x.session_id)].append(x)
        else:
            loose[x.user_id].append(x)

    sessions = [Session(u, sorted(xs, key=lambda x: x.timestamp), sid)
                for (u, sid), xs in by_id.items()]
    for user, xs in loose.items():
        xs = sorted(xs, key=lambda x: x.timestamp)
        current = [xs[0]]
        for prev, x in zip(xs, xs[1:]):
            if x.timestamp - prev.timestamp > session_gap_seconds:
                sessions.append(Session(user, current))
                current = []
            current.append(x)
        sessions.append(Session(user, current))
    sessions.sort(key=lambda s: (s.user_id, s.start, s.session_id or ""))
    return sessions


def split_timestamp_for(timestamps, train_fraction: float) -> int:
    """Timestamp at which :func:`time_based_split` cuts.

    The smallest ``t`` with ``P(ts <= t) >= train_fraction``. When that would put
    everything into train, the cut moves down to the largest timestamp below the
    maximum so the test side is never empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    ts = np.asarray(timestamps, dtype=np.int64)
    if ts.size < 2:
        raise DataError("need at least 2 interactions to split")
    values, counts = np.unique(ts, return_counts=True)
    if values.size == 1:
        raise DataError("all timestamps are equal; cannot split by time")
    frac = np.cumsum(counts) / ts.size
    k = int(np.argmax(frac >= train_fraction))
    k = min(k, values.size - 2)
    return int(values[k])


def time_based_split(interactions: list[Interaction], train_fraction: float = 0.8):
    """Return ``(train, test, split_timestamp)``; train is ``ts <= split``, test ``ts > split``."""
    cut = split_timestamp_for([x.timestamp for x in interactions], train_fraction)
    train = [x for x in interactions if x.timestamp <= cut]
    test = [x for x in interactions if x.timestamp > cut]
    return train, test, cut


def validation_split(train: list[Interaction], fraction: float = 0.1):
    """Carve the last ``fraction`` of the train window (by time) off as a validation slice."""
    return time_based_split(train, 1.0 - fraction)


def profile_time_series(interactions: Iterable[Interaction]) -> dict:
    """Interaction counts per hour-of-day, day-of-week and calendar month (``YYYY-MM``)."""
    ts = np.array([x.timestamp for x in interactions], dtype=np.int64)
    parts = decompose_many(ts)
    hour = np.bincount(parts["hour"], minlength=24) if ts.size else np.zeros(24, int)
    dow = np.bincount(parts["day_of_week"], minlength=7) if ts.size else np.zeros(7, int)
    months: dict[str, int] = {}
    for y, m in sorted(zip(parts["year"].tolist(), parts["month"].tolist())):
        key = f"{y:04d}-{m:02d}"
        months[key] = months.get(key, 0) + 1
    return {
        "total": int(ts.size),
        "hour": [int(c) for c in hour],
        "day_of_week": [int(c) for c in dow],
        "month": months,
    }
