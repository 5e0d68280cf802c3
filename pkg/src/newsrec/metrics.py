"""Accuracy and diversity measures for ranked recommendation lists.

Accuracy: RMSE, precision@k, recall@k, F1@k. Diversity: intra-list diversity
(mean pairwise ``1 - cosine`` over item side-information vectors) and novelty
(share of the list the user has not seen). ``composite_tradeoff`` blends the two
families into one score.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

DEFAULT_KS = (10, 20, 50)
DEFAULT_W = 0.5
RELEVANCE_THRESHOLD = 3.5
CANDIDATE_POLICIES = ("unseen", "all", "test")


@dataclass(frozen=True)
class RankedList:
    user_id: str
    items: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise ValueError("items and scores differ in length")
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate item in ranked list")

    def __len__(self):
        return len(self.items)

    def top(self, k: int) -> tuple[str, ...]:
        return self.items[:k]


Ranked = Union[RankedList, Sequence[str]]


def _ids(ranked: Ranked) -> Sequence[str]:
    return ranked.items if isinstance(ranked, RankedList) else ranked


def rank_top_k(user: str, items: Sequence[str], scores, k: Optional[int] = None) -> RankedList:
    """Sort by descending score, breaking ties by ascending item id."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(items) == 0:
        return RankedList(user, (), ())
    order = np.lexsort((np.asarray(items, dtype=str), -scores))
    if k is not None:
        order = order[:k]
    return RankedList(user, tuple(items[j] for j in order), tuple(float(scores[j]) for j in order))


def rmse(pairs: Iterable[tuple[float, float]]) -> float:
    """Root mean squared difference over ``(predicted, actual)`` pairs."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rmse of an empty list")
    if not np.all(np.isfinite(arr)):
        raise ValueError("rmse inputs must be finite")
    d = arr[:, 0] - arr[:, 1]
    return float(np.sqrt(np.mean(d * d)))


def hits_at_k(ranked: Ranked, relevant, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for i in _ids(ranked)[:k] if i in relevant)


def precision_at_k(ranked: Ranked, relevant, k: int) -> float:
    """Hits in the top ``k`` over ``k``; short lists count as padded with misses."""
    return hits_at_k(ranked, relevant, k) / k


def recall_at_k(ranked: Ranked, relevant, k: int) -> Optional[float]:
    """Hits in the top ``k`` over ``|relevant|``; ``None`` when nothing is relevant."""
    if not relevant:
        return None
    return hits_at_k(ranked, relevant, k) / len(relevant)


def f1_at_k(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


class ItemFeatures:
    """Side-information vectors: one-hot category, one-hot subcategory, token counts.

    Each block is L2-normalised separately before the blocks are concatenated,
    so a long snippet cannot outweigh the taxonomy.
    """

    def __init__(self, catalog: Mapping):
        self.index = {item_id: n for n, item_id in enumerate(catalog)}
        cats = sorted({it.category for it in catalog.values() if it.category})
        subs = sorted({f"{it.category}/{it.subcategory}" for it in catalog.values() if it.subcategory})
        vocab = sorted({t for it in catalog.values() for t in it.tokens})
        cat_ix = {c: n for n, c in enumerate(cats)}
        sub_ix = {s: n + len(cats) for n, s in enumerate(subs)}
        tok_ix = {t: n + len(cats) + len(subs) for n, t in enumerate(vocab)}
        self.dim = len(cats) + len(subs) + len(vocab)

        rows, cols, vals = [], [], []
        for n, it in enumerate(catalog.values()):
            if it.category:
                rows.append(n); cols.append(cat_ix[it.category]); vals.append(1.0)
            if it.subcategory:
                rows.append(n); cols.append(sub_ix[f"{it.category}/{it.subcategory}"]); vals.append(1.0)
            counts: dict[str, int] = defaultdict(int)
            for t in it.tokens:
                counts[t] += 1
            norm = math.sqrt(sum(c * c for c in counts.values()))
            for t in sorted(counts):
                rows.append(n); cols.append(tok_ix[t]); vals.append(counts[t] / norm)
        # one extra all-zero row stands in for items missing from the catalog
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.index) + 1, max(self.dim, 1)))
        self.norms = np.sqrt(np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel())

    def rows_for(self, items: Sequence[str]) -> np.ndarray:
        missing = len(self.index)
        return np.array([self.index.get(i, missing) for i in items], dtype=np.int64)

    def vector(self, item: str) -> np.ndarray:
        return self.matrix[self.rows_for([item])[0]].toarray().ravel()

    def missing(self, items: Iterable[str]) -> int:
        return sum(1 for i in items if i not in self.index)

    def dissimilarity_matrix(self, items: Sequence[str]) -> np.ndarray:
        rows = self.rows_for(items)
        sub = self.matrix[rows]
        gram = (sub @ sub.T).toarray()
        norms = self.norms[rows]
        denom = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(denom > 0, gram / np.where(denom > 0, denom, 1.0), 0.0)
        return 1.0 - np.clip(cos, 0.0, 1.0)


def intra_list_diversity(ranked: Ranked, features: ItemFeatures) -> float:
    """Mean ``1 - cosine`` over all unordered pairs of the list; 0 for fewer than 2 items.

    Items absent from the catalog get a zero vector and so are maximally dissimilar
    to everything.
    """
    items = list(_ids(ranked))
    n = len(items)
    if n < 2:
        return 0.0
    d = features.dissimilarity_matrix(items)
    iu = np.triu_indices(n, k=1)
    return float(d[iu].sum() / len(iu[0]))


def novelty_score(ranked: Ranked, user_history) -> float:
    """Fraction of the list not present in ``user_history``."""
    items = _ids(ranked)
    if not items:
        raise ValueError("novelty of an empty list")
    return sum(1 for i in items if i not in user_history) / len(items)


def composite_tradeoff(f1: float, diversity: float, novelty: float, w: float = DEFAULT_W) -> float:
    """``w * f1 + (1 - w) * (diversity + novelty) / 2``."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    return w * f1 + (1.0 - w) * (diversity + novelty) / 2.0


# -- whole-run evaluation ------------------------------------------------

@dataclass
class EvaluationReport:
    rmse: Optional[float]
    k_values: list[int]
    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    diversity: dict[int, float]
    novelty: dict[int, float]
    composite: dict[int, float]
    w: float
    counts: dict[str, int]
    candidate_policy: str = "unseen"
    per_user: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def keyed(d):
            return {str(k): d[k] for k in self.k_values}

        return {
            "rmse": self.rmse,
            "precision": keyed(self.precision),
            "recall": keyed(self.recall),
            "f1": keyed(self.f1),
            "diversity": keyed(self.diversity),
            "novelty": keyed(self.novelty),
            "composite": keyed(self.composite),
            "k_values": list(self.k_values),
            "w": self.w,
            "counts": dict(sorted(self.counts.items())),
            "candidate_policy": self.candidate_policy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write_per_user_csv(self, path) -> None:
        fields = ["user_id", "k", "precision", "recall", "f1", "diversity", "novelty"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for row in self.per_user:
                writer.writerow({f: row[f] for f in fields})


def relevance_judgments(test, threshold: float = RELEVANCE_THRESHOLD,
                        count_clicks: bool = True) -> dict[str, set[str]]:
    """Items each user responded to positively in the test window."""
    rel: dict[str, set[str]] = defaultdict(set)
    for x in test:
        if (x.rating is None and count_clicks) or (x.rating is not None and x.rating >= threshold):
            rel[x.user_id].add(x.item_id)
    return dict(rel)


def evaluate_run(model, train, test, catalog: Mapping, ks: Sequence[int] = DEFAULT_KS,
                 w: float = DEFAULT_W, candidates: str = "unseen",
                 rated_examples: Optional[Sequence] = None,
                 relevance_threshold: float = RELEVANCE_THRESHOLD, count_clicks: bool = True,
                 features: Optional[ItemFeatures] = None,
                 extra_counts: Optional[Mapping[str, int]] = None) -> EvaluationReport:
    """Score ``model`` on the test window.

    ``model`` needs ``score_items(user, items, timestamp)``; when it also has
    ``supports_rating`` set and ``rated_examples`` (``Example`` tuples) are given,
    RMSE is computed from ``model.predict_many``. Users without training history
    are skipped as cold-start, users without relevant test items are skipped for
    the ranking metrics. Per-user values are macro-averaged in user-id order.
    """
    if candidates not in CANDIDATE_POLICIES:
        raise ValueError(f"candidates must be one of {CANDIDATE_POLICIES}")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive")
    features = features or ItemFeatures(catalog)
    kmax = ks[-1]

    history: dict[str, set[str]] = defaultdict(set)
    for x in train:
        history[x.user_id].add(x.item_id)
    relevant = relevance_judgments(test, relevance_threshold, count_clicks)
    first_ts: dict[str, int] = {}
    test_items: dict[str, list[str]] = defaultdict(list)
    for x in test:
        first_ts[x.user_id] = min(first_ts.get(x.user_id, x.timestamp), x.timestamp)
        if x.item_id not in test_items[x.user_id]:
            test_items[x.user_id].append(x.item_id)

    catalog_items = list(catalog)
    counts = {"test_users": len(first_ts), "evaluated_users": 0, "skipped_cold_start": 0,
              "no_relevant": 0, "no_candidates": 0, "missing_features": 0}
    per_user: list[dict] = []
    sums = {name: {k: [] for k in ks} for name in ("precision", "recall", "f1", "diversity", "novelty")}

    for user in sorted(first_ts):
        if user not in history:
            counts["skipped_cold_start"] += 1
            continue
        rel = relevant.get(user, set())
        if not rel:
            counts["no_relevant"] += 1
            continue
        seen = history[user]
        if candidates == "unseen":
            cand = [i for i in catalog_items if i not in seen]
        elif candidates == "all":
            cand = catalog_items
        else:
            cand = test_items[user]
        if not cand:
            counts["no_candidates"] += 1
            continue
        ranked = rank_top_k(user, cand, model.score_items(user, cand, first_ts[user]), kmax)
        counts["evaluated_users"] += 1
        counts["missing_features"] += features.missing(ranked.items)
        for k in ks:
            top = ranked.items[:k]
            p = precision_at_k(top, rel, k)
            r = recall_at_k(top, rel, k)
            row = {"user_id": user, "k": k, "precision": p, "recall": r, "f1": f1_at_k(p, r),
                   "diversity": intra_list_diversity(top, features),
                   "novelty": novelty_score(top, seen)}
            per_user.append(row)
            for name in sums:
                sums[name][k].append(row[name])

    if counts["evaluated_users"] == 0:
        raise ValueError("no evaluable users in the test window")
    means = {name: {k: float(sum(v[k]) / len(v[k])) for k in ks} for name, v in sums.items()}
    composite = {k: composite_tradeoff(means["f1"][k], means["diversity"][k], means["novelty"][k], w)
                 for k in ks}

    err = None
    if getattr(model, "supports_rating", False) and rated_examples:
        preds = model.predict_many([e.user_id for e in rated_examples],
                                   [e.item_id for e in rated_examples],
                                   [e.timestamp for e in rated_examples])
        err = rmse(zip(preds.tolist(), [e.value for e in rated_examples]))
        counts["rated_examples"] = len(rated_examples)
    if extra_counts:
        counts.update(extra_counts)
    return EvaluationReport(err, ks, means["precision"], means["recall"], means["f1"],
                            means["diversity"], means["novelty"], composite, w, counts,
                            candidates, per_user)
