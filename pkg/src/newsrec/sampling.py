"""Implicit-feedback labelling and in-session negative sampling."""

from __future__ import annotations

import bisect
import hashlib
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Interaction, Session

logger = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"
DEFAULT_NEGATIVES_PER_POSITIVE = 4
FALLBACK_WINDOW_SECONDS = 24 * 3600


@dataclass(frozen=True)
class LabeledPair:
    user_id: str
    item_id: str
    timestamp: int
    label: str
    weight: float = 1.0
    session: Optional[str] = None

    @property
    def target(self) -> float:
        return 1.0 if self.label == POSITIVE else 0.0


@dataclass
class SamplingStats:
    sessions: int = 0
    empty_pools: int = 0
    small_pools: int = 0


def derive_seed(global_seed: int, key) -> int:
    """Stable 63-bit seed from ``(global_seed, key)``; independent of Python's hash salt."""
    digest = hashlib.blake2b(f"{global_seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def label_implicit(sessions: Iterable[Session], dedup: bool = False) -> list[LabeledPair]:
    """One positive pair per interaction; with ``dedup`` repeated items in a session collapse."""
    out = []
    for s in sessions:
        seen = set()
        for x in s.interactions:
            if dedup and x.item_id in seen:
                continue
            seen.add(x.item_id)
            out.append(LabeledPair(x.user_id, x.item_id, x.timestamp, POSITIVE, session=s.key))
    return out


class ActivityWindow:
    """Answers "which items saw any activity in ``[t0, t1]``" for the fallback pool."""

    def __init__(self, interactions: Iterable[Interaction]):
        events = sorted((x.timestamp, x.item_id) for x in interactions)
        self._ts = [t for t, _ in events]
        self._items = [i for _, i in events]

    def items_between(self, t0: int, t1: int) -> set[str]:
        lo = bisect.bisect_left(self._ts, t0)
        hi = bisect.bisect_right(self._ts, t1)
        return set(self._items[lo:hi])


def candidate_pool(session: Session, window: Optional[ActivityWindow] = None) -> list[str]:
    """Unclicked items available to the session, sorted for reproducible draws.

    Uses the session's impression list when present; otherwise every item with
    activity in the 24 hours before the session through its end.
    """
    clicked = session.clicked()
    if session.impression_items is not None:
        pool = set(session.impression_items)
    elif window is not None:
        pool = window.items_between(session.start - FALLBACK_WINDOW_SECONDS, session.end)
    else:
        pool = set()
    return sorted(pool - clicked)


def sample_negatives(session: Session, negatives_per_positive: int = DEFAULT_NEGATIVES_PER_POSITIVE,
                     rng_seed: int = 0, window: Optional[ActivityWindow] = None,
                     positives: Optional[Sequence[LabeledPair]] = None,
                     stats: Optional[SamplingStats] = None) -> list[LabeledPair]:
    """Draw unclicked items from the session as negatives.

    For every positive, ``negatives_per_positive`` items are drawn uniformly
    without replacement from the pool, or with replacement when the pool is
    too small. Each negative inherits its positive's timestamp.
    """
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    if positives is None:
        positives = label_implicit([session])
    pool = candidate_pool(session, window)
    if stats is not None:
        stats.sessions += 1
    if not pool:
        if stats is not None:
            stats.empty_pools += 1
        logger.debug("session %s has an empty negative pool", session.key)
        return []
    replace = len(pool) < negatives_per_positive
    if replace and stats is not None:
        stats.small_pools += 1
    rng = np.random.default_rng(rng_seed)
    out = []
    for pos in positives:
        for j in rng.choice(len(pool), size=negatives_per_positive, replace=replace):
            out.append(LabeledPair(pos.user_id, pool[j], pos.timestamp, NEGATIVE, session=session.key))
    return out


def sample_all(sessions: Sequence[Session], negatives_per_positive: int = DEFAULT_NEGATIVES_PER_POSITIVE,
               seed: int = 0, window: Optional[ActivityWindow] = None,
               dedup: bool = False) -> tuple[list[LabeledPair], SamplingStats]:
    """Positives plus negatives for every session, each session seeded from its own key."""
    stats = SamplingStats()
    out: list[LabeledPair] = []
    for s in sessions:
        pos = label_implicit([s], dedup=dedup)
        out.extend(pos)
        out.extend(sample_negatives(s, negatives_per_positive, derive_seed(seed, s.key),
                                    window, pos, stats))
    if stats.empty_pools:
        logger.warning("%d of %d sessions had no negative candidates", stats.empty_pools, stats.sessions)
    return out, stats


def write_pairs(pairs: Iterable[LabeledPair], fh) -> None:
    for p in pairs:
        fh.write(f"{p.user_id}\t{p.item_id}\t{p.timestamp}\t{p.label}\n")
