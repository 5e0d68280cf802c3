"""Regularised latent-factor model trading accuracy for diversity.

User and item factors are fit by alternating penalised regressions: with the
item factors frozen every user vector is an elastic-net (or smoothed Lp)
regression of that user's residual ratings on the factors of the items they
rated, and vice versa. The L2 part favours accuracy, the L1 part sparsifies the
factors and flattens personalisation.

Per-entity problems minimise::

    (1/2n) ||y - X w||^2 + lam * (alpha ||w||_1 + (1 - alpha)/2 ||w||_2^2)     # elastic net
    (1/2n) ||y - X w||^2 + (lam / p) * sum_j (w_j^2 + eps)^(p/2)               # Lp, by IRLS
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

DAMPING = 10.0


@dataclass(frozen=True)
class RegularizationSpec:
    lam: float
    mode: str = "elastic_net"
    alpha: float = 0.5
    p: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be finite and >= 0")
        if self.mode == "elastic_net":
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("alpha must lie in [0, 1]")
        elif self.mode == "lp":
            if not 0.0 < self.p <= 2.0:
                raise ValueError("p must lie in (0, 2]")
            if not self.epsilon > 0:
                raise ValueError("epsilon must be positive")
        else:
            raise ValueError(f"unknown regularisation mode {self.mode!r}")

    @classmethod
    def elastic_net(cls, lam: float, alpha: float) -> "RegularizationSpec":
        return cls(lam, "elastic_net", alpha=alpha)

    @classmethod
    def lp_norm(cls, lam: float, p: float, epsilon: float = 1e-6) -> "RegularizationSpec":
        return cls(lam, "lp", p=p, epsilon=epsilon)

    def penalty(self, w: np.ndarray) -> float:
        if self.mode == "elastic_net":
            return self.lam * (self.alpha * np.abs(w).sum() + 0.5 * (1 - self.alpha) * (w @ w))
        return self.lam / self.p * float(np.sum((w * w + self.epsilon) ** (self.p / 2)))


def soft_threshold(z: float, gamma: float) -> float:
    """``sign(z) * max(|z| - gamma, 0)``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return math.copysign(max(abs(z) - gamma, 0.0), z) if abs(z) > gamma else 0.0


@njit(cache=True)
def _soft(z, gamma):
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@njit(cache=True)
def _cd(G, c, yy, lam, alpha, tol, max_iter, w, trace):
    # covariance-form updates: G = X'X/n, c = X'y/n, yy = y'y/n; Gw tracks G @ w
    d = G.shape[0]
    Gw = G @ w
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        sweeps += 1
        delta = 0.0
        for j in range(d):
            wj = w[j]
            if G[j, j] == 0.0:
                w[j] = 0.0
                continue
            rho = c[j] - Gw[j] + G[j, j] * wj
            new = _soft(rho, l1) / (G[j, j] + l2)
            if new != wj:
                Gw += G[:, j] * (new - wj)
                w[j] = new
                if abs(new - wj) > delta:
                    delta = abs(new - wj)
        loss = 0.5 * (yy - 2.0 * (c @ w) + w @ Gw)
        trace[sweeps - 1] = loss + lam * (alpha * np.abs(w).sum() + 0.5 * (1.0 - alpha) * (w @ w))
        if delta < tol:
            converged = True
            break
    return sweeps, converged


class CDResult(NamedTuple):
    coef: np.ndarray
    n_iter: int
    converged: bool
    objective: np.ndarray


def enet_objective(X, y, w, lam: float, alpha: float) -> float:
    """``(1/2n)||y - Xw||^2 + lam*(alpha||w||_1 + (1-alpha)/2 ||w||^2)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(y, dtype=np.float64) - X @ np.asarray(w, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return float(0.5 * (r @ r) / len(r) + lam * (alpha * np.abs(w).sum() + 0.5 * (1 - alpha) * (w @ w)))


def elastic_net_cd(X, y, lam: float, alpha: float, tol: float = 1e-5, max_iter: int = 1000,
                   w0=None, standardize: bool = False) -> CDResult:
    """Cyclic coordinate descent for the elastic net.

    Parameters
    ----------
    X : (n, d) array
        Design matrix. Columns that are entirely zero keep a zero coefficient.
    y : (n,) array
    lam, alpha : float
        Penalty intensity and L1 share (``alpha=0`` ridge, ``alpha=1`` lasso).
    tol : float
        Stop once the largest coefficient change within a sweep is below ``tol``.
    max_iter : int
        Maximum number of full sweeps.
    w0 : array, optional
        Warm start; zeros by default.
    standardize : bool
        Rescale columns to unit mean square before fitting; coefficients are
        returned on the original scale.

    Returns
    -------
    CDResult
        ``coef``, sweeps used, convergence flag and the objective after each sweep.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 1 or d < 1 or y.shape != (n,):
        raise ValueError("X must be (n, d) and y (n,) with n, d >= 1")
    if lam < 0 or not 0 <= alpha <= 1:
        raise ValueError("need lam >= 0 and alpha in [0, 1]")
    scale = np.ones(d)
    if standardize:
        ms = np.sqrt((X * X).mean(axis=0))
        scale = np.where(ms > 0, ms, 1.0)
        X = X / scale
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64) * scale
    trace = np.empty(max_iter)
    G = X.T @ X / n
    sweeps, converged = _cd(G, X.T @ y / n, float(y @ y / n), float(lam), float(alpha),
                            float(tol), int(max_iter), w, trace)
    return CDResult(w / scale, sweeps, converged, trace[:sweeps].copy())


class IrlsResult(NamedTuple):
    coef: np.ndarray
    jittered: bool


def irls_lp(X, y, p: float, lam: float, epsilon: float = 1e-6, outer_iters: int = 15) -> IrlsResult:
    """Smoothed Lp-penalised least squares by iteratively reweighted ridge solves.

    Starts from the ridge solution and repeatedly solves
    ``(X'X/n + lam*diag(omega)) w = X'y/n`` with
    ``omega_j = (w_j^2 + epsilon)^((p-2)/2)``. At ``p=2`` every weight is 1 and the
    result is plain ridge. A singular system is retried with 1e-10 added to
    the diagonal and the result is flagged.
    """
    if not 0 < p <= 2:
        raise ValueError("p must lie in (0, 2]")
    if epsilon <= 0 or lam < 0:
        raise ValueError("need epsilon > 0 and lam >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    gram = X.T @ X / n
    rhs = X.T @ y / n
    jittered = False

    def solve(omega):
        nonlocal jittered
        A = gram + lam * np.diag(omega)
        try:
            w = np.linalg.solve(A, rhs)
            if np.all(np.isfinite(w)):
                return w
        except np.linalg.LinAlgError:
            pass
        jittered = True
        return np.linalg.solve(A + 1e-10 * np.eye(d), rhs)

    w = solve(np.ones(d))
    if p != 2:
        for _ in range(outer_iters):
            w = solve((w * w + epsilon) ** ((p - 2) / 2))
    return IrlsResult(w, jittered)


# -- alternating factorisation ---------------------------------------------

@njit(cache=True)
def _enet_half_sweep(indptr, other_idx, resid, other, mine, lam, alpha, tol, max_iter):
    k = mine.shape[1]
    trace = np.empty(max_iter)
    not_converged = 0
    for e in range(indptr.shape[0] - 1):
        lo, hi = indptr[e], indptr[e + 1]
        if hi == lo:
            continue
        m = hi - lo
        G = np.zeros((k, k))
        c = np.zeros(k)
        yy = 0.0
        for r in range(m):
            x = other[other_idx[lo + r]]
            G += np.outer(x, x)
            c += x * resid[lo + r]
            yy += resid[lo + r] ** 2
        w = mine[e].copy()
        sweeps, conv = _cd(G / m, c / m, yy / m, lam, alpha, tol, max_iter, w, trace)
        if not conv:
            not_converged += 1
        mine[e] = w
    return not_converged


def _group(keys: np.ndarray, n_groups: int):
    """CSR-style grouping: ``order`` sorts rows by key, ``indptr`` delimits groups."""
    order = np.argsort(keys, kind="stable")
    indptr = np.zeros(n_groups + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n_groups), out=indptr[1:])
    return order, indptr


def damped_intercepts(uidx, iidx, y, n_users, n_items, damping: float = DAMPING):
    mu = float(y.mean())
    bu = np.bincount(uidx, weights=y - mu, minlength=n_users) / (
        np.bincount(uidx, minlength=n_users) + damping)
    bi = np.bincount(iidx, weights=y - mu - bu[uidx], minlength=n_items) / (
        np.bincount(iidx, minlength=n_items) + damping)
    return mu, bu, bi


@dataclass
class GlmModel:
    spec: RegularizationSpec
    n_factors: int
    mu: float
    users: dict[str, int]
    items: dict[str, int]
    user_bias: np.ndarray
    item_bias: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    rating_scale: Optional[tuple[float, float]] = (1.0, 5.0)
    objective_trace: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    supports_rating = True

    def predict_many(self, users: Sequence[str], items: Sequence[str], timestamps=None) -> np.ndarray:
        uidx = np.array([self.users.get(u, -1) for u in users], dtype=np.int64)
        iidx = np.array([self.items.get(i, -1) for i in items], dtype=np.int64)
        ku, ki = uidx >= 0, iidx >= 0
        uu, ii = np.maximum(uidx, 0), np.maximum(iidx, 0)
        out = np.full(len(uidx), self.mu)
        if self.user_bias.size:
            out = out + np.where(ku, self.user_bias[uu], 0.0)
        if self.item_bias.size:
            out = out + np.where(ki, self.item_bias[ii], 0.0)
        if self.n_factors and self.P.size and self.Q.size:
            out = out + np.where(ku & ki, np.einsum("nf,nf->n", self.P[uu], self.Q[ii]), 0.0)
        if self.rating_scale is not None:
            out = np.clip(out, *self.rating_scale)
        return out

    def predict(self, user: str, item: str, timestamp=None) -> float:
        return float(self.predict_many([user], [item])[0])

    def score_items(self, user: str, items: Sequence[str], timestamp=None) -> np.ndarray:
        return self.predict_many([user] * len(items), items)

    def zero_coefficients(self) -> int:
        return int(np.count_nonzero(self.P == 0.0) + np.count_nonzero(self.Q == 0.0))

    def write_objective_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sweep", "objective"])
            for n, v in enumerate(self.objective_trace):
                writer.writerow([n, repr(v)])


def predict_glm(model: GlmModel, user: str, item: str) -> float:
    return model.predict(user, item)


def _global_objective(spec, resid, uidx, iidx, P, Q, n_u, n_i) -> float:
    e = resid - np.einsum("nf,nf->n", P[uidx], Q[iidx])
    pen = sum(n_u[u] * spec.penalty(P[u]) for u in range(len(P)))
    pen += sum(n_i[i] * spec.penalty(Q[i]) for i in range(len(Q)))
    return float((0.5 * (e @ e) + pen) / len(resid))


def train_als_elastic_net(examples, n_factors: int, spec: RegularizationSpec, outer_iters: int = 10,
                          tol: float = 1e-5, max_iter: int = 1000, rng_seed: int = 0,
                          init_scale: float = 1.0, rating_scale=(1.0, 5.0),
                          damping: float = DAMPING) -> GlmModel:
    """Fit a :class:`GlmModel` by alternating per-user / per-item penalised regressions.

    ``examples`` are ``(user_id, item_id, timestamp, value)`` tuples. Intercepts
    are damped means fixed before factor training; factors fit the residuals.
    Item factors start from N(0, (init_scale/sqrt(n_factors))^2) and user factors
    from zero. The recorded objective, after every half-sweep, is::

        [ 1/2 sum e^2 + sum_u n_u pen(p_u) + sum_i n_i pen(q_i) ] / N

    which each per-entity regression minimises exactly in its own block, so for
    the elastic net it never increases.
    """
    if not examples:
        raise ValueError("no training examples")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for e in examples:
        users.setdefault(e[0], len(users))
        items.setdefault(e[1], len(items))
    uidx = np.array([users[e[0]] for e in examples], dtype=np.int64)
    iidx = np.array([items[e[1]] for e in examples], dtype=np.int64)
    y = np.array([e[3] for e in examples], dtype=np.float64)
    n_users, n_items = len(users), len(items)
    mu, bu, bi = damped_intercepts(uidx, iidx, y, n_users, n_items, damping)
    resid = y - mu - bu[uidx] - bi[iidx]

    rng = np.random.default_rng(rng_seed)
    k = n_factors
    P = np.zeros((n_users, k))
    Q = rng.normal(0.0, init_scale / math.sqrt(k), size=(n_items, k)) if k else np.zeros((n_items, 0))
    n_u = np.bincount(uidx, minlength=n_users)
    n_i = np.bincount(iidx, minlength=n_items)
    u_order, u_ptr = _group(uidx, n_users)
    i_order, i_ptr = _group(iidx, n_items)

    trace = [_global_objective(spec, resid, uidx, iidx, P, Q, n_u, n_i)]
    not_converged = 0
    jittered = 0
    for _ in range(outer_iters if k else 0):
        for order, ptr, other_idx, other, mine in ((u_order, u_ptr, iidx, Q, P),
                                                   (i_order, i_ptr, uidx, P, Q)):
            if spec.mode == "elastic_net":
                not_converged += _enet_half_sweep(ptr, other_idx[order], resid[order], other, mine,
                                                  spec.lam, spec.alpha, tol, max_iter)
            else:
                for e in range(len(ptr) - 1):
                    rows = order[ptr[e]:ptr[e + 1]]
                    if rows.size == 0:
                        continue
                    res = irls_lp(other[other_idx[rows]], resid[rows], spec.p, spec.lam,
                                  spec.epsilon)
                    jittered += res.jittered
                    mine[e] = res.coef
            trace.append(_global_objective(spec, resid, uidx, iidx, P, Q, n_u, n_i))
    if not_converged:
        logger.info("%d inner regressions hit max_iter", not_converged)
    info = {"not_converged": not_converged, "jittered": jittered}
    return GlmModel(spec, k, mu, users, items, bu, bi, P, Q,
                    None if rating_scale is None else tuple(map(float, rating_scale)), trace, info)


def _ordered(index: dict) -> list:
    return sorted(index, key=index.__getitem__)


def glm_to_dict(model: GlmModel) -> dict:
    return {
        "kind": "diversity-glm",
        "spec": asdict(model.spec),
        "n_factors": model.n_factors,
        "mu": model.mu,
        "users": _ordered(model.users),
        "items": _ordered(model.items),
        "user_bias": model.user_bias.tolist(),
        "item_bias": model.item_bias.tolist(),
        "P": model.P.tolist(),
        "Q": model.Q.tolist(),
        "rating_scale": model.rating_scale,
        "objective_trace": model.objective_trace,
        "info": model.info,
    }


def glm_from_dict(d: dict) -> GlmModel:
    k = int(d["n_factors"])
    P = np.array(d["P"], dtype=np.float64).reshape(len(d["users"]), k)
    Q = np.array(d["Q"], dtype=np.float64).reshape(len(d["items"]), k)
    return GlmModel(RegularizationSpec(**d["spec"]), k, float(d["mu"]),
                    {u: n for n, u in enumerate(d["users"])},
                    {i: n for n, i in enumerate(d["items"])},
                    np.array(d["user_bias"], dtype=np.float64),
                    np.array(d["item_bias"], dtype=np.float64), P, Q,
                    None if d["rating_scale"] is None else tuple(d["rating_scale"]),
                    list(d["objective_trace"]), dict(d["info"]))


def save_glm(model: GlmModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(glm_to_dict(model), fh)


def load_glm(path) -> GlmModel:
    with open(path, encoding="utf-8") as fh:
        return glm_from_dict(json.load(fh))
