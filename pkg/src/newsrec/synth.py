"""Planted-signal news datasets written in the ingestion TSV formats.

A rating is built additively::

    base + b_u + b_i + cat_offset + sub_offset + affinity[u, cat]
         + latent p_u . q_i + hour_offset + dow_offset + noise

and clipped to the rating scale. Which items a user consumes is driven by item
popularity (a power law over a random popularity rank) and, optionally, by the
same user-category affinity, so preference shows up in clicks as well as ratings.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .corpus import Interaction, NewsItem, decompose_many

DEFAULT_START = 1572566400  # 2019-11-01T00:00:00Z


@dataclass
class SynthSpec:
    n_users: int = 500
    n_items: int = 2000
    n_interactions: int = 50000
    n_categories: int = 8
    subcategories_per_category: int = 3
    start_ts: int = DEFAULT_START
    days: int = 60
    base_rating: float = 3.0
    user_bias_sd: float = 0.0
    item_bias_sd: float = 0.0
    hour_offset: float = 0.0
    offset_hours: tuple[int, ...] = (19,)
    dow_offset: float = 0.0
    offset_days: tuple[int, ...] = (5, 6)
    category_offset_sd: float = 0.0
    subcategory_offset_sd: float = 0.0
    affinity_sd: float = 0.0
    # log-odds weight of affinity when choosing which items a user consumes
    choice_strength: float = 0.0
    popularity_exponent: float = 0.0
    # item bias shift per standard deviation of log-popularity
    popularity_quality: float = 0.0
    latent_rank: int = 0
    latent_sd: float = 0.0
    noise_sd: float = 0.5
    explicit_fraction: float = 1.0
    item_lifetime_days: Optional[float] = None
    mean_session_size: float = 5.0
    rating_scale: tuple[float, float] = (1.0, 5.0)
    clip: bool = True
    title_words: int = 5
    snippet_words: int = 12
    words_per_category: int = 40
    shared_words: int = 60

    def __post_init__(self):
        self.offset_hours = tuple(int(h) for h in self.offset_hours)
        self.offset_days = tuple(int(d) for d in self.offset_days)
        self.rating_scale = (float(self.rating_scale[0]), float(self.rating_scale[1]))


@dataclass
class SynthData:
    catalog: dict[str, NewsItem]
    interactions: list
    truth: dict = field(repr=False)


def _gumbel_top(rng, logw: np.ndarray, k: int) -> np.ndarray:
    keys = logw + rng.gumbel(size=logw.size)
    k = min(k, int(np.isfinite(logw).sum()))
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.argpartition(-keys, k - 1)[:k]


def generate(spec: SynthSpec, seed: int = 0) -> SynthData:
    """Build the catalog, interaction list and ground-truth parameters in memory."""

    rng = np.random.default_rng(seed)
    U, I, C, S = spec.n_users, spec.n_items, spec.n_categories, spec.subcategories_per_category
    span = spec.days * 86400

    # catalog, ordered by publication time
    cat = rng.integers(0, C, size=I)
    sub = rng.integers(0, S, size=I)
    if spec.item_lifetime_days is None:
        publish = np.full(I, spec.start_ts, dtype=np.int64)
    else:
        lead = int(spec.item_lifetime_days * 86400)
        publish = np.sort(rng.integers(spec.start_ts - lead, spec.start_ts + span, size=I))
    catalog: dict[str, NewsItem] = {}
    for i in range(I):
        c = int(cat[i])
        own = [f"c{c}w{j}" for j in rng.integers(0, spec.words_per_category, size=spec.title_words)]
        snip = [f"w{j}" if rng.random() < 0.5 else f"c{c}w{j % spec.words_per_category}"
                for j in rng.integers(0, spec.shared_words, size=spec.snippet_words)]
        catalog[f"N{i}"] = NewsItem(f"N{i}", f"cat{c}", f"cat{c}sub{int(sub[i])}", tuple(own), tuple(snip))

    # planted parameters
    pop_rank = rng.permutation(I)
    pop_w = (pop_rank + 1.0) ** (-spec.popularity_exponent)
    logpop = np.log(pop_w)
    z_pop = (logpop - logpop.mean()) / logpop.std() if logpop.std() > 0 else np.zeros(I)
    b_u = rng.normal(0, spec.user_bias_sd, size=U)
    b_i = rng.normal(0, spec.item_bias_sd, size=I) + spec.popularity_quality * z_pop
    cat_off = rng.normal(0, spec.category_offset_sd, size=C)
    sub_off = rng.normal(0, spec.subcategory_offset_sd, size=(C, S))
    aff = rng.normal(0, spec.affinity_sd, size=(U, C))
    r = spec.latent_rank
    P = rng.normal(0, spec.latent_sd / math.sqrt(r), size=(U, r)) if r else np.zeros((U, 0))
    Qm = rng.normal(0, 1.0, size=(I, r)) if r else np.zeros((I, 0))
    hour_off = np.zeros(24)
    hour_off[list(spec.offset_hours)] = spec.hour_offset
    dow_off = np.zeros(7)
    dow_off[list(spec.offset_days)] = spec.dow_offset

    per_user = rng.multinomial(spec.n_interactions, np.full(U, 1.0 / U))
    rows = []
    for u in range(U):
        remaining = int(min(per_user[u], I))
        consumed = np.zeros(I, dtype=bool)
        choice_logw = np.log(pop_w) + spec.choice_strength * aff[u, cat]
        k_sess = 0
        while remaining > 0:
            size = int(min(remaining, 1 + rng.poisson(spec.mean_session_size - 1)))
            t = int(spec.start_ts + rng.integers(0, span))
            if spec.item_lifetime_days is None:
                lo, hi = 0, I
            else:
                lo = int(np.searchsorted(publish, t - spec.item_lifetime_days * 86400))
                hi = int(np.searchsorted(publish, t, side="right"))
            logw = choice_logw[lo:hi].copy()
            logw[consumed[lo:hi]] = -np.inf
            picks = _gumbel_top(rng, logw, size) + lo
            if picks.size == 0:
                remaining -= size
                continue
            gaps = np.cumsum(np.concatenate([[0], rng.integers(30, 600, size=picks.size - 1)]))
            for i, dt in zip(picks.tolist(), gaps.tolist()):
                consumed[i] = True
                rows.append((u, i, t + dt, f"s{u}_{k_sess}"))
            remaining -= picks.size
            k_sess += 1

    uu = np.array([x[0] for x in rows], dtype=np.int64)
    ii = np.array([x[1] for x in rows], dtype=np.int64)
    ts = np.array([x[2] for x in rows], dtype=np.int64)
    parts = decompose_many(ts)
    base = (spec.base_rating + b_u[uu] + b_i[ii] + cat_off[cat[ii]] + sub_off[cat[ii], sub[ii]]
            + aff[uu, cat[ii]] + np.einsum("nf,nf->n", P[uu], Qm[ii]))
    rating = base + hour_off[parts["hour"]] + dow_off[parts["day_of_week"]]
    if spec.noise_sd > 0:
        rating = rating + rng.normal(0, spec.noise_sd, size=len(rows))
    if spec.clip:
        rating = np.clip(rating, *spec.rating_scale)
    explicit = rng.random(len(rows)) < spec.explicit_fraction

    order = np.lexsort((ii, uu, ts))
    interactions = [
        Interaction(f"u{uu[n]}", f"N{ii[n]}", int(ts[n]),
                    float(rating[n]) if explicit[n] else None, rows[n][3])
        for n in order.tolist()
    ]
    truth = {
        "spec": asdict(spec),
        "seed": seed,
        "hour_offsets": hour_off.tolist(),
        "dow_offsets": dow_off.tolist(),
        "category_offsets": {f"cat{c}": float(cat_off[c]) for c in range(C)},
        "user_bias": b_u.tolist(),
        "item_bias": b_i.tolist(),
        "affinity": aff.tolist(),
        "popularity_weight": pop_w.tolist(),
        "publish_ts": publish.tolist(),
    }
    return SynthData(catalog, interactions, truth)


def generate_synthetic(spec: SynthSpec, seed: int, out_dir) -> dict[str, str]:
    """Write ``catalog.tsv``, ``interactions.tsv`` and ``truth.json`` into ``out_dir``."""
    from .corpus import write_catalog, write_interactions

    data = generate(spec, seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("catalog.tsv", "interactions.tsv", "truth.json")}
    with open(paths["catalog.tsv"], "w", encoding="utf-8", newline="\n") as fh:
        write_catalog(data.catalog, fh)
    with open(paths["interactions.tsv"], "w", encoding="utf-8", newline="\n") as fh:
        write_interactions(data.interactions, fh)
    with open(paths["truth.json"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data.truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
