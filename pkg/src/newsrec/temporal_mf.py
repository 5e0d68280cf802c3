"""Matrix factorization with time-unit and taxonomy baseline predictors.

The predicted rating of user ``u`` for item ``i`` at time ``t`` is::

    mu + b_u + b_i + sum_g c_g[bin_g(t)] + d_cat[cat(i)] + d_sub[sub(i)] + p_u . q_i

where ``g`` runs over the enabled calendar granularities. All terms are fit
jointly by stochastic gradient descent on squared error with an L2 penalty.
A time-decayed popularity ranker is included as a non-personalised comparator.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from numba import njit

from .corpus import GRANULARITIES, Interaction, NewsItem, decompose_many
from .metrics import RankedList, rank_top_k

logger = logging.getLogger(__name__)

BIN_SIZES = {"month": 12, "day_of_week": 7, "hour": 24, "minute": 60, "second": 60}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_finite_loss: float):
        super().__init__(f"training diverged at epoch {epoch} "
                         f"(last finite loss {last_finite_loss!r}); lower the learning rate")
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


class Example(NamedTuple):
    """A training or test target: ``value`` is a rating or a 1.0/0.0 implicit label."""

    user_id: str
    item_id: str
    timestamp: int
    value: float


def examples_from_interactions(interactions: Iterable[Interaction]) -> list[Example]:
    """Explicit ratings only; clicks are skipped."""
    return [Example(x.user_id, x.item_id, x.timestamp, float(x.rating))
            for x in interactions if x.rating is not None]


def examples_from_pairs(pairs) -> list[Example]:
    return [Example(p.user_id, p.item_id, p.timestamp, p.target) for p in pairs]


@dataclass
class MfConfig:
    n_factors: int = 32
    learning_rate: float = 0.005
    l2_reg: float = 0.02
    epochs: int = 20
    granularities: tuple[str, ...] = ()
    use_category: bool = False
    use_subcategory: bool = False
    rng_seed: int = 0
    init_scale: float = 0.1
    # None disables clamping (implicit 1.0/0.0 targets)
    rating_scale: Optional[tuple[float, float]] = (1.0, 5.0)
    reshuffle: bool = True

    def __post_init__(self):
        self.granularities = tuple(self.granularities)
        unknown = set(self.granularities) - set(GRANULARITIES)
        if unknown:
            raise ValueError(f"unknown granularities: {sorted(unknown)}")
        if self.n_factors < 0 or self.epochs < 1:
            raise ValueError("n_factors must be >= 0 and epochs >= 1")
        if not (self.learning_rate > 0 and self.l2_reg >= 0 and self.init_scale > 0):
            raise ValueError("need learning_rate > 0, l2_reg >= 0, init_scale > 0")
        for v in (self.learning_rate, self.l2_reg, self.init_scale):
            if not math.isfinite(v):
                raise ValueError("numeric config values must be finite")
        if self.rating_scale is not None:
            self.rating_scale = (float(self.rating_scale[0]), float(self.rating_scale[1]))


def _subcategory_key(item: NewsItem) -> Optional[str]:
    return f"{item.category}/{item.subcategory}" if item.subcategory else None


@dataclass
class MfModel:
    config: MfConfig
    mu: float
    users: dict[str, int]
    items: dict[str, int]
    user_bias: np.ndarray
    item_bias: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    time_bias: dict[str, np.ndarray] = field(default_factory=dict)
    years: dict[int, int] = field(default_factory=dict)
    categories: dict[str, int] = field(default_factory=dict)
    subcategories: dict[str, int] = field(default_factory=dict)
    category_bias: np.ndarray = field(default_factory=lambda: np.zeros(0))
    subcategory_bias: np.ndarray = field(default_factory=lambda: np.zeros(0))
    item_category: dict[str, str] = field(default_factory=dict)
    item_subcategory: dict[str, str] = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)

    supports_rating = True

    # -- index helpers -------------------------------------------------
    def _bin_index(self, granularity: str, parts: dict[str, np.ndarray]) -> np.ndarray:
        values = parts[granularity]
        if granularity == "year":
            return np.array([self.years.get(int(y), -1) for y in values], dtype=np.int64)
        if granularity == "month":
            return values - 1
        return values

    def _taxonomy_index(self, items: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        cat = np.full(len(items), -1, dtype=np.int64)
        sub = np.full(len(items), -1, dtype=np.int64)
        if self.config.use_category:
            cat[:] = [self.categories.get(self.item_category.get(i, ""), -1) for i in items]
        if self.config.use_subcategory:
            sub[:] = [self.subcategories.get(self.item_subcategory.get(i, ""), -1) for i in items]
        return cat, sub

    # -- prediction ----------------------------------------------------
    def predict_many(self, users: Sequence[str], items: Sequence[str], timestamps) -> np.ndarray:
        n = len(users)
        uidx = np.array([self.users.get(u, -1) for u in users], dtype=np.int64)
        iidx = np.array([self.items.get(i, -1) for i in items], dtype=np.int64)
        ts = np.broadcast_to(np.asarray(timestamps, dtype=np.int64), (n,))
        out = np.full(n, self.mu)
        ku, ki = uidx >= 0, iidx >= 0
        out = out + np.where(ku, self.user_bias[np.maximum(uidx, 0)] if self.user_bias.size else 0.0, 0.0)
        out = out + np.where(ki, self.item_bias[np.maximum(iidx, 0)] if self.item_bias.size else 0.0, 0.0)
        if self.config.granularities:
            parts = decompose_many(ts)
            for g in self.config.granularities:
                table = self.time_bias[g]
                b = self._bin_index(g, parts)
                out = out + np.where(b >= 0, table[np.maximum(b, 0)] if table.size else 0.0, 0.0)
        cat, sub = self._taxonomy_index(items)
        if self.config.use_category and self.category_bias.size:
            out = out + np.where(cat >= 0, self.category_bias[np.maximum(cat, 0)], 0.0)
        if self.config.use_subcategory and self.subcategory_bias.size:
            out = out + np.where(sub >= 0, self.subcategory_bias[np.maximum(sub, 0)], 0.0)
        if self.config.n_factors and self.P.size and self.Q.size:
            both = ku & ki
            dots = np.einsum("nf,nf->n", self.P[np.maximum(uidx, 0)], self.Q[np.maximum(iidx, 0)])
            out = out + np.where(both, dots, 0.0)
        if self.config.rating_scale is not None:
            out = np.clip(out, *self.config.rating_scale)
        return out

    def predict(self, user: str, item: str, timestamp: int) -> float:
        return float(self.predict_many([user], [item], [timestamp])[0])

    def score_items(self, user: str, items: Sequence[str], timestamp: int) -> np.ndarray:
        return self.predict_many([user] * len(items), items, timestamp)


def predict(model: MfModel, user: str, item: str, timestamp: int) -> float:
    return model.predict(user, item, timestamp)


def recommend_top_k(model, user: str, candidate_items: Sequence[str], timestamp: int,
                    k: int) -> RankedList:
    """Top ``k`` candidates by score, ties broken by ascending item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    candidate_items = list(candidate_items)
    scores = model.score_items(user, candidate_items, timestamp)
    return rank_top_k(user, candidate_items, scores, k)


# -- training ----------------------------------------------------------

@njit(cache=True)
def _predict_one(n, uidx, iidx, bins, cidx, sidx, mu, bu, bi, tb, cb, sb, P, Q):
    u = uidx[n]
    i = iidx[n]
    pred = mu + bu[u] + bi[i]
    for g in range(bins.shape[1]):
        pred += tb[bins[n, g]]
    if cidx[n] >= 0:
        pred += cb[cidx[n]]
    if sidx[n] >= 0:
        pred += sb[sidx[n]]
    for f in range(P.shape[1]):
        pred += P[u, f] * Q[i, f]
    return pred


@njit(cache=True)
def _sgd_epoch(order, uidx, iidx, bins, cidx, sidx, y, mu, bu, bi, tb, cb, sb, P, Q, lr, reg):
    for n in order:
        u = uidx[n]
        i = iidx[n]
        e = y[n] - _predict_one(n, uidx, iidx, bins, cidx, sidx, mu, bu, bi, tb, cb, sb, P, Q)
        bu[u] += lr * (e - reg * bu[u])
        bi[i] += lr * (e - reg * bi[i])
        for g in range(bins.shape[1]):
            b = bins[n, g]
            tb[b] += lr * (e - reg * tb[b])
        if cidx[n] >= 0:
            c = cidx[n]
            cb[c] += lr * (e - reg * cb[c])
        if sidx[n] >= 0:
            s = sidx[n]
            sb[s] += lr * (e - reg * sb[s])
        for f in range(P.shape[1]):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] += lr * (e * qi - reg * pu)
            Q[i, f] += lr * (e * pu - reg * qi)


@njit(cache=True)
def _objective(uidx, iidx, bins, cidx, sidx, y, mu, bu, bi, tb, cb, sb, P, Q, reg):
    # sum over examples of 0.5*e^2 + 0.5*reg*(squared norm of every parameter the example touches)
    total = 0.0
    for n in range(y.shape[0]):
        u = uidx[n]
        i = iidx[n]
        e = y[n] - _predict_one(n, uidx, iidx, bins, cidx, sidx, mu, bu, bi, tb, cb, sb, P, Q)
        sq = bu[u] ** 2 + bi[i] ** 2
        for g in range(bins.shape[1]):
            sq += tb[bins[n, g]] ** 2
        if cidx[n] >= 0:
            sq += cb[cidx[n]] ** 2
        if sidx[n] >= 0:
            sq += sb[sidx[n]] ** 2
        for f in range(P.shape[1]):
            sq += P[u, f] ** 2 + Q[i, f] ** 2
        total += 0.5 * e * e + 0.5 * reg * sq
    return total


class _Encoded(NamedTuple):
    uidx: np.ndarray
    iidx: np.ndarray
    bins: np.ndarray
    cidx: np.ndarray
    sidx: np.ndarray
    y: np.ndarray
    offsets: dict


def _encode(model: MfModel, examples: Sequence[Example]) -> _Encoded:
    """Map examples onto parameter indices; all users/items must be known to ``model``."""
    cfg = model.config
    uidx = np.array([model.users[e.user_id] for e in examples], dtype=np.int64)
    iidx = np.array([model.items[e.item_id] for e in examples], dtype=np.int64)
    ts = np.array([e.timestamp for e in examples], dtype=np.int64)
    y = np.array([e.value for e in examples], dtype=np.float64)
    parts = decompose_many(ts)
    bins = np.zeros((len(examples), len(cfg.granularities)), dtype=np.int64)
    offsets, start = {}, 0
    for col, g in enumerate(cfg.granularities):
        b = model._bin_index(g, parts)
        if (b < 0).any():
            raise ValueError(f"training timestamp falls outside the {g} table")
        bins[:, col] = b + start
        offsets[g] = start
        start += model.time_bias[g].size
    items = [e.item_id for e in examples]
    cidx, sidx = model._taxonomy_index(items)
    return _Encoded(uidx, iidx, bins, cidx, sidx, y, offsets)


def _flat_time(model: MfModel) -> np.ndarray:
    tables = [model.time_bias[g] for g in model.config.granularities]
    return np.concatenate(tables) if tables else np.zeros(1)


def _unflatten_time(model: MfModel, flat: np.ndarray) -> None:
    start = 0
    for g in model.config.granularities:
        size = model.time_bias[g].size
        model.time_bias[g] = flat[start:start + size].copy()
        start += size


def _nonempty(a: np.ndarray) -> np.ndarray:
    # numba kernels index these tables only when active; give them a dummy cell otherwise
    return a if a.size else np.zeros(1)


def init_model(config: MfConfig, examples: Sequence[Example],
               catalog: Optional[dict[str, NewsItem]] = None) -> MfModel:
    """Index every entity in ``examples`` and initialise parameters.

    Biases start at zero; factors are drawn from N(0, (init_scale/sqrt(n_factors))^2).
    """
    if not examples:
        raise ValueError("no training examples")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for e in examples:
        users.setdefault(e.user_id, len(users))
        items.setdefault(e.item_id, len(items))
    mu = float(np.mean([e.value for e in examples]))

    time_bias, years = {}, {}
    if "year" in config.granularities:
        seen = sorted(set(decompose_many([e.timestamp for e in examples])["year"].tolist()))
        years = {int(y): k for k, y in enumerate(seen)}
    for g in config.granularities:
        time_bias[g] = np.zeros(len(years) if g == "year" else BIN_SIZES[g])

    catalog = catalog or {}
    item_category = {i: it.category for i, it in catalog.items()}
    item_subcategory = {i: key for i, it in catalog.items() if (key := _subcategory_key(it))}
    categories = {c: k for k, c in enumerate(sorted(set(item_category.values())))}
    subcategories = {s: k for k, s in enumerate(sorted(set(item_subcategory.values())))}

    rng = np.random.default_rng(config.rng_seed)
    k = config.n_factors
    sd = config.init_scale / math.sqrt(k) if k else 0.0
    P = rng.normal(0.0, sd, size=(len(users), k))
    Q = rng.normal(0.0, sd, size=(len(items), k))
    return MfModel(config, mu, users, items, np.zeros(len(users)), np.zeros(len(items)), P, Q,
                   time_bias, years, categories, subcategories,
                   np.zeros(len(categories)), np.zeros(len(subcategories)),
                   item_category, item_subcategory)


def train_sgd(config: MfConfig, examples: Sequence[Example],
              catalog: Optional[dict[str, NewsItem]] = None) -> MfModel:
    """Fit an :class:`MfModel` by SGD.

    Each epoch visits the examples in a seeded random order. The per-epoch value
    of the regularised objective (divided by the number of examples) is kept in
    ``model.loss_history``.

    Raises
    ------
    TrainingDiverged
        If the loss becomes non-finite.
    """
    model = init_model(config, examples, catalog)
    enc = _encode(model, examples)
    tb = _flat_time(model)
    cb = _nonempty(model.category_bias)
    sb = _nonempty(model.subcategory_bias)
    rng = np.random.default_rng(config.rng_seed + 1)
    order = rng.permutation(len(examples))
    n = len(examples)
    last = math.inf
    for epoch in range(1, config.epochs + 1):
        if config.reshuffle and epoch > 1:
            order = rng.permutation(n)
        with np.errstate(all="ignore"):
            _sgd_epoch(order, enc.uidx, enc.iidx, enc.bins, enc.cidx, enc.sidx, enc.y, model.mu,
                       model.user_bias, model.item_bias, tb, cb, sb, model.P, model.Q,
                       config.learning_rate, config.l2_reg)
            loss = _objective(enc.uidx, enc.iidx, enc.bins, enc.cidx, enc.sidx, enc.y, model.mu,
                              model.user_bias, model.item_bias, tb, cb, sb, model.P, model.Q,
                              config.l2_reg) / n
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, last)
        model.loss_history.append(float(loss))
        last = loss
        logger.debug("epoch %d loss %.6f", epoch, loss)
    _unflatten_time(model, tb)
    if model.category_bias.size:
        model.category_bias = cb
    if model.subcategory_bias.size:
        model.subcategory_bias = sb
    return model


def objective(model: MfModel, examples: Sequence[Example]) -> float:
    """Regularised squared-error objective that SGD descends (summed, not averaged)."""
    enc = _encode(model, examples)
    return float(_objective(enc.uidx, enc.iidx, enc.bins, enc.cidx, enc.sidx, enc.y, model.mu,
                            model.user_bias, model.item_bias, _flat_time(model),
                            _nonempty(model.category_bias), _nonempty(model.subcategory_bias),
                            model.P, model.Q, model.config.l2_reg))


def objective_gradient(model: MfModel, examples: Sequence[Example]) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`objective` for every parameter block.

    Keys are ``user_bias``, ``item_bias``, ``time:<granularity>``, ``category_bias``,
    ``subcategory_bias``, ``P`` and ``Q``. The SGD update for one example is
    exactly ``-learning_rate`` times this gradient evaluated on that example alone.
    """
    enc = _encode(model, examples)
    reg = model.config.l2_reg
    tb = _flat_time(model)
    cb, sb = _nonempty(model.category_bias), _nonempty(model.subcategory_bias)
    g_bu = np.zeros_like(model.user_bias)
    g_bi = np.zeros_like(model.item_bias)
    g_tb = np.zeros_like(tb)
    g_cb = np.zeros_like(cb)
    g_sb = np.zeros_like(sb)
    g_P = np.zeros_like(model.P)
    g_Q = np.zeros_like(model.Q)
    for n in range(len(enc.y)):
        u, i = enc.uidx[n], enc.iidx[n]
        e = enc.y[n] - _predict_one(n, enc.uidx, enc.iidx, enc.bins, enc.cidx, enc.sidx, model.mu,
                                    model.user_bias, model.item_bias, tb, cb, sb, model.P, model.Q)
        g_bu[u] += -e + reg * model.user_bias[u]
        g_bi[i] += -e + reg * model.item_bias[i]
        for b in enc.bins[n]:
            g_tb[b] += -e + reg * tb[b]
        if enc.cidx[n] >= 0:
            g_cb[enc.cidx[n]] += -e + reg * cb[enc.cidx[n]]
        if enc.sidx[n] >= 0:
            g_sb[enc.sidx[n]] += -e + reg * sb[enc.sidx[n]]
        g_P[u] += -e * model.Q[i] + reg * model.P[u]
        g_Q[i] += -e * model.P[u] + reg * model.Q[i]
    out = {"user_bias": g_bu, "item_bias": g_bi, "P": g_P, "Q": g_Q,
           "category_bias": g_cb[:model.category_bias.size],
           "subcategory_bias": g_sb[:model.subcategory_bias.size]}
    for g, off in enc.offsets.items():
        out[f"time:{g}"] = g_tb[off:off + model.time_bias[g].size]
    return out


def sgd_step(model: MfModel, example: Example) -> None:
    """Apply a single in-place SGD update for one known example."""
    enc = _encode(model, [example])
    tb = _flat_time(model)
    cb, sb = _nonempty(model.category_bias), _nonempty(model.subcategory_bias)
    _sgd_epoch(np.zeros(1, dtype=np.int64), enc.uidx, enc.iidx, enc.bins, enc.cidx, enc.sidx, enc.y,
               model.mu, model.user_bias, model.item_bias, tb, cb, sb, model.P, model.Q,
               model.config.learning_rate, model.config.l2_reg)
    _unflatten_time(model, tb)
    if model.category_bias.size:
        model.category_bias = cb
    if model.subcategory_bias.size:
        model.subcategory_bias = sb


# -- persistence -------------------------------------------------------

def _ordered_keys(index: dict) -> list:
    return sorted(index, key=index.__getitem__)


def model_to_dict(model: MfModel) -> dict:
    return {
        "kind": "temporal-mf",
        "config": asdict(model.config),
        "mu": model.mu,
        "users": _ordered_keys(model.users),
        "items": _ordered_keys(model.items),
        "user_bias": model.user_bias.tolist(),
        "item_bias": model.item_bias.tolist(),
        "P": model.P.tolist(),
        "Q": model.Q.tolist(),
        "time_bias": {g: t.tolist() for g, t in model.time_bias.items()},
        "years": _ordered_keys(model.years),
        "categories": _ordered_keys(model.categories),
        "subcategories": _ordered_keys(model.subcategories),
        "category_bias": model.category_bias.tolist(),
        "subcategory_bias": model.subcategory_bias.tolist(),
        "item_category": model.item_category,
        "item_subcategory": model.item_subcategory,
        "loss_history": model.loss_history,
    }


def model_from_dict(d: dict) -> MfModel:
    cfg = dict(d["config"])
    cfg["granularities"] = tuple(cfg["granularities"])
    if cfg["rating_scale"] is not None:
        cfg["rating_scale"] = tuple(cfg["rating_scale"])
    config = MfConfig(**cfg)
    k = config.n_factors

    def mat(rows):
        return np.array(rows, dtype=np.float64).reshape(len(rows), k)

    return MfModel(
        config, float(d["mu"]),
        {u: n for n, u in enumerate(d["users"])},
        {i: n for n, i in enumerate(d["items"])},
        np.array(d["user_bias"], dtype=np.float64),
        np.array(d["item_bias"], dtype=np.float64),
        mat(d["P"]), mat(d["Q"]),
        {g: np.array(t, dtype=np.float64) for g, t in d["time_bias"].items()},
        {int(y): n for n, y in enumerate(d["years"])},
        {c: n for n, c in enumerate(d["categories"])},
        {s: n for n, s in enumerate(d["subcategories"])},
        np.array(d["category_bias"], dtype=np.float64),
        np.array(d["subcategory_bias"], dtype=np.float64),
        dict(d["item_category"]), dict(d["item_subcategory"]),
        list(d["loss_history"]),
    )


def save_model(model: MfModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MfModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# -- time-decay comparator ---------------------------------------------

def decay_weight(t_now: float, t_obs: float, half_life_seconds: float) -> float:
    """``2 ** (-(t_now - t_obs) / half_life_seconds)``."""
    if half_life_seconds <= 0:
        raise ValueError("half_life_seconds must be positive")
    if t_now < t_obs:
        raise ValueError("t_now must not precede t_obs")
    return 2.0 ** (-(t_now - t_obs) / half_life_seconds)


class DecayPopularity:
    """Ranks items by the sum of half-life-decayed weights of their past interactions.

    Ranking only; it has no rating scale, so RMSE does not apply.
    """

    supports_rating = False

    def __init__(self, half_life_seconds: float = 86400.0):
        if half_life_seconds <= 0:
            raise ValueError("half_life_seconds must be positive")
        self.half_life_seconds = float(half_life_seconds)
        self.t_now: Optional[int] = None
        self.scores: dict[str, float] = {}

    def fit(self, interactions: Iterable[Interaction], t_now: Optional[int] = None) -> "DecayPopularity":
        interactions = list(interactions)
        if t_now is None:
            t_now = max(x.timestamp for x in interactions)
        scores: dict[str, float] = {}
        for x in sorted(interactions, key=lambda x: (x.timestamp, x.item_id)):
            if x.timestamp <= t_now:
                scores[x.item_id] = scores.get(x.item_id, 0.0) + decay_weight(
                    t_now, x.timestamp, self.half_life_seconds)
        self.t_now = int(t_now)
        self.scores = scores
        return self

    def score_items(self, user: str, items: Sequence[str], timestamp: int = 0) -> np.ndarray:
        return np.array([self.scores.get(i, 0.0) for i in items], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"kind": "decay-baseline", "half_life_seconds": self.half_life_seconds,
                "t_now": self.t_now, "scores": self.scores}

    @classmethod
    def from_dict(cls, d: dict) -> "DecayPopularity":
        m = cls(d["half_life_seconds"])
        m.t_now = d["t_now"]
        m.scores = {k: float(v) for k, v in d["scores"].items()}
        return m
