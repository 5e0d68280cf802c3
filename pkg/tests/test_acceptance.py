"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line at the end of the run.

The data-dependent criteria use planted-signal synthetic sets with fixed seeds;
the settings below were checked to hold on several other seeds as well.
"""

import random
import time

import numpy as np
import pytest

from newsrec import harness
from newsrec.corpus import Dataset, Interaction, Session, time_based_split
from newsrec.diversity_glm import (RegularizationSpec, elastic_net_cd, irls_lp, load_glm, save_glm,
                                   soft_threshold, train_als_elastic_net)
from newsrec.metrics import (ItemFeatures, composite_tradeoff, f1_at_k, intra_list_diversity,
                             novelty_score, precision_at_k, recall_at_k, rmse)
from newsrec.sampling import sample_negatives
from newsrec.synth import SynthSpec, generate
from newsrec.temporal_mf import MfConfig, load_model, objective_gradient, save_model, train_sgd

from test_diversity_glm import grid_minimiser, noisy_examples
from test_metrics import item, oracle_ild, random_catalog
from test_temporal_mf import gradient_fixture, oracle_objective, parameter_blocks, random_examples

pytestmark = pytest.mark.slow

AFTERNOON = tuple(range(12, 24))


def run(spec_kwargs, seed, **sections):
    data = generate(SynthSpec(**spec_kwargs), seed)
    cfg = harness.ExperimentConfig()
    cfg.evaluation.ks = (10,)
    for name, values in sections.items():
        for key, value in values.items():
            setattr(getattr(cfg, name), key, value)
    prep = harness.prepare(cfg.validate(), Dataset(data.catalog, data.interactions))
    return harness.run_experiment(cfg, prep=prep).report


# -- 1 ------------------------------------------------------------------------------------------

def test_c01_temporal_signal_recovery(criterion):
    spec = dict(n_users=500, n_items=2000, n_interactions=50000, hour_offset=1.0,
                offset_hours=AFTERNOON, noise_sd=0.5, user_bias_sd=0.3, item_bias_sd=0.3,
                latent_rank=4, latent_sd=0.5)
    start = time.perf_counter()
    flat = run(spec, 0, temporal_mf={"granularities": ()}).rmse
    hourly = run(spec, 0, temporal_mf={"granularities": ("hour",)}).rmse
    elapsed = time.perf_counter() - start
    ok = flat - hourly >= 0.1 and elapsed < 60
    assert criterion(1, ok, f"RMSE G=none {flat:.4f}, G=hour {hourly:.4f}, gap {flat - hourly:.4f} "
                            f"(need >= 0.1), {elapsed:.1f}s (need < 60s)")


# -- 2 ------------------------------------------------------------------------------------------

def test_c02_granularity_dose_response(criterion):
    spec = dict(n_users=500, n_items=2000, n_interactions=50000, hour_offset=1.0,
                offset_hours=AFTERNOON, dow_offset=0.8, offset_days=(5, 6), noise_sd=0.5,
                user_bias_sd=0.3, item_bias_sd=0.3, latent_rank=4, latent_sd=0.5)
    none = run(spec, 0, temporal_mf={"granularities": ()}).rmse
    dow = run(spec, 0, temporal_mf={"granularities": ("day_of_week",)}).rmse
    both = run(spec, 0, temporal_mf={"granularities": ("hour", "day_of_week")}).rmse
    ok = none - dow >= 0.02 and dow - both >= 0.02
    assert criterion(2, ok, f"RMSE none {none:.4f} >= dow {dow:.4f} >= hour+dow {both:.4f}; "
                            f"gaps {none - dow:.4f}, {dow - both:.4f} (need >= 0.02 each)")


# -- 3 ------------------------------------------------------------------------------------------

def test_c03_taxonomy_side_information(criterion):
    # short item lifetimes: most test items are fresh, so only their taxonomy is known
    spec = dict(category_offset_sd=0.7, subcategory_offset_sd=0.4, affinity_sd=0.3,
                user_bias_sd=0.3, item_bias_sd=0.2, item_lifetime_days=2, noise_sd=0.5)
    off = run(spec, 0, evaluation={"candidates": "test"})
    on = run(spec, 0, evaluation={"candidates": "test"},
             temporal_mf={"use_category": True, "use_subcategory": True})
    d_rmse, d_f1 = off.rmse - on.rmse, on.f1[10] - off.f1[10]
    ok = d_rmse >= 0.05 and d_f1 >= 0.02
    assert criterion(3, ok, f"RMSE {off.rmse:.4f} -> {on.rmse:.4f} (gain {d_rmse:.4f}, need >= 0.05); "
                            f"F1@10 {off.f1[10]:.4f} -> {on.f1[10]:.4f} (gain {d_f1:.4f}, need >= 0.02)")


# -- 4 ------------------------------------------------------------------------------------------

def test_c04_accuracy_diversity_negative_correlation(criterion):
    spec = SynthSpec(n_users=300, n_items=300, n_interactions=30000, popularity_exponent=1.2,
                     noise_sd=0.5, user_bias_sd=0.2, item_bias_sd=0.2, affinity_sd=1.0,
                     choice_strength=3.0)
    data = generate(spec, 1)
    cfg = harness.ExperimentConfig()
    cfg.experiment.model = "diversity-glm"
    cfg.diversity_glm.n_factors = 4
    cfg.evaluation.ks = (10,)
    prep = harness.prepare(cfg, Dataset(data.catalog, data.interactions))
    rows = harness.sweep(cfg, {"lam": [0.001, 0.01, 0.1, 1.0], "alpha": [0.0, 0.5, 1.0]}, prep=prep)
    f1 = [r["f1@10"] for r in rows]
    ild = [r["diversity@10"] for r in rows]
    rho = harness.spearman(f1, ild)
    ok = len(rows) == 12 and rho <= -0.3
    assert criterion(4, ok, f"Spearman(F1@10, ILD@10) over {len(rows)} cells = {rho:.3f} (need <= -0.3)")


# -- 5 ------------------------------------------------------------------------------------------

def test_c05_solver_correctness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    checks = {}

    X = rng.normal(size=(30, 3))
    y = X @ np.array([1.0, -0.5, 2.0]) + rng.normal(0, 0.1, size=30)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    cd = elastic_net_cd(X, y, 0.0, 0.5, tol=1e-13, max_iter=10_000).coef
    checks["ols"] = np.max(np.abs(cd - ols)) <= 1e-8

    x = np.array([1.0, -1.0, 1.0, -1.0])
    yd = np.array([2.5, -1.0, 0.75, 0.25])
    exact = True
    for lam, alpha in [(0.25, 1.0), (0.5, 0.5), (0.125, 0.0)]:
        w = elastic_net_cd(x[:, None], yd, lam, alpha).coef[0]
        exact &= w == soft_threshold(float(x @ yd) / 4, lam * alpha) / (1 + lam * (1 - alpha))
    checks["univariate"] = exact

    grid_ok = True
    for seed in range(4):
        r = np.random.default_rng(seed)
        d = 1 + seed % 2
        Xg = r.normal(size=(15, d))
        yg = Xg @ r.uniform(-1.5, 1.5, size=d) + r.normal(0, 0.5, size=15)
        lam, alpha = r.uniform(0.01, 0.5), r.uniform(0, 1)
        w_grid, _, step = grid_minimiser(Xg, yg, lam, alpha)
        w_cd = elastic_net_cd(Xg, yg, lam, alpha, tol=1e-12, max_iter=10_000).coef
        grid_ok &= bool(np.all(np.abs(w_cd - w_grid) <= step))
    checks["grid"] = grid_ok

    Xr = rng.normal(size=(10, 4))
    yr = rng.normal(size=10)
    ridge = np.linalg.solve(Xr.T @ Xr / 10 + 0.3 * np.eye(4), Xr.T @ yr / 10)
    checks["irls_p2"] = np.max(np.abs(irls_lp(Xr, yr, 2.0, 0.3).coef - ridge)) <= 1e-6

    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 5.0
    assert criterion(5, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
                     + f"; {elapsed:.2f}s (need < 5s)")


# -- 6 ------------------------------------------------------------------------------------------

def test_c06_gradient_check(criterion):
    model, ex = gradient_fixture()
    assert (len(model.users), len(model.items), model.config.n_factors) == (3, 4, 2)
    analytic = objective_gradient(model, ex)
    worst = 0.0
    h = 1e-5
    for name, arr in parameter_blocks(model).items():
        for idx in np.ndindex(arr.shape):
            saved = arr[idx]
            arr[idx] = saved + h
            up = oracle_objective(model, ex)
            arr[idx] = saved - h
            down = oracle_objective(model, ex)
            arr[idx] = saved
            fd = (up - down) / (2 * h)
            an = analytic[name][idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
    assert criterion(6, worst <= 1e-4, f"max relative error {worst:.2e} (need <= 1e-4)")


# -- 7 ------------------------------------------------------------------------------------------

def test_c07_metric_oracles(criterion):
    tab = [
        rmse([(1, 2), (3, 4)]) == 1.0, rmse([(0, 3)]) == 3.0, rmse([(2, 2)]) == 0.0,
        precision_at_k(list("abcde"), {"b", "e"}, 5) == 0.4,
        precision_at_k(list("abcde"), set(), 5) == 0.0,
        precision_at_k(list("abc"), set("abc"), 5) == 0.6,
        recall_at_k(list("abc"), set("acxy"), 3) == 0.5, recall_at_k(list("ab"), set("ab"), 2) == 1.0,
        recall_at_k(list("ab"), {"x"}, 2) == 0.0,
        f1_at_k(0.5, 0.5) == 0.5, abs(f1_at_k(0.4, 0.5) - 4 / 9) < 1e-15, f1_at_k(0.0, 0.3) == 0.0,
        intra_list_diversity(["a", "b"], ItemFeatures({"a": item("a", "x"), "b": item("b", "x")})) == 0.0,
        intra_list_diversity(["a", "b"], ItemFeatures({"a": item("a", "x"), "b": item("b", "y")})) == 1.0,
        abs(intra_list_diversity(list("abc"), ItemFeatures(
            {"a": item("a", "x"), "b": item("b", "x"), "c": item("c", "y")})) - 2 / 3) < 1e-15,
        novelty_score([f"i{n}" for n in range(10)], set()) == 1.0,
        abs(novelty_score([f"i{n}" for n in range(10)], {"i1", "i2", "i3"}) - 0.7) < 1e-15,
        novelty_score(["a"], {"a"}) == 0.0,
        composite_tradeoff(0.3, 0.9, 0.1, 1.0) == 0.3,
        abs(composite_tradeoff(0.0, 0.6, 0.8, 0.0) - 0.7) < 1e-15,
        abs(composite_tradeoff(0.4, 0.6, 0.8, 0.5) - 0.55) < 1e-15,
    ]
    rng = random.Random(11)
    catalog = random_catalog(rng, 150)
    feats = ItemFeatures(catalog)
    ids = list(catalog) + ["ghost"]
    worst = 0.0
    for _ in range(300):
        items = rng.sample(ids, rng.randint(0, 50))
        worst = max(worst, abs(intra_list_diversity(items, feats) - oracle_ild(items, catalog)))
    ok = all(tab) and worst <= 1e-12
    assert criterion(7, ok, f"{sum(tab)}/{len(tab)} tabulated values; ILD vs brute force max |diff| "
                            f"{worst:.1e} over 300 lists (need <= 1e-12)")


# -- 8 ------------------------------------------------------------------------------------------

def test_c08_split_and_sampler_soundness(criterion):
    rng = random.Random(8)
    split_bad = sampler_bad = nondeterministic = 0
    for _ in range(1000):
        stamps = [rng.randint(0, 40) for _ in range(rng.randint(2, 40))]
        if len(set(stamps)) < 2:
            stamps.append(41)
        xs = [Interaction("u", f"N{n}", t) for n, t in enumerate(stamps)]
        frac = rng.uniform(0.05, 0.95)
        train, test, _ = time_based_split(xs, frac)
        if max(x.timestamp for x in train) >= min(x.timestamp for x in test):
            split_bad += 1
        if time_based_split(xs, frac) != (train, test, _):
            nondeterministic += 1

        letters = [f"I{j}" for j in range(25)]
        clicked = rng.sample(letters, rng.randint(1, 5))
        shown = frozenset(rng.sample(letters, rng.randint(0, 20))) | frozenset(clicked)
        session = Session("u", [Interaction("u", i, 100 + n) for n, i in enumerate(clicked)], "s", shown)
        seed, ratio = rng.randrange(2 ** 32), rng.randint(1, 5)
        negs = sample_negatives(session, ratio, rng_seed=seed)
        if {n.item_id for n in negs} & set(clicked):
            sampler_bad += 1
        if negs != sample_negatives(session, ratio, rng_seed=seed):
            nondeterministic += 1
    ok = split_bad == sampler_bad == nondeterministic == 0
    assert criterion(8, ok, f"1000 trials: split violations {split_bad}, clicked negatives {sampler_bad}, "
                            f"non-deterministic repeats {nondeterministic}")


# -- 9 ------------------------------------------------------------------------------------------

def test_c09_implicit_feedback_benefit(criterion):
    # 300 x 1000 matrix: clicks fill 10% of it, explicit ratings 1%
    spec = dict(n_users=300, n_items=1000, n_interactions=30000, explicit_fraction=0.1,
                affinity_sd=1.0, choice_strength=2.0, popularity_exponent=1.2,
                user_bias_sd=0.2, item_bias_sd=0.2)
    explicit = run(spec, 0, experiment={"feedback": "explicit"}).f1[10]
    mixed = run(spec, 0, experiment={"feedback": "mixed"}).f1[10]
    ok = mixed - explicit >= 0.02
    assert criterion(9, ok, f"F1@10 explicit-only {explicit:.4f}, explicit+implicit {mixed:.4f} "
                            f"(gain {mixed - explicit:.4f}, need >= 0.02)")


# -- 10 -----------------------------------------------------------------------------------------

def test_c10_determinism_and_persistence(criterion, tmp_path):
    ex = random_examples(6, n_users=20, n_items=30, n=400)
    mf = train_sgd(MfConfig(n_factors=4, granularities=("hour", "year"), use_category=True),
                   ex, {f"N{i}": item(f"N{i}", f"c{i % 3}", "s") for i in range(30)})
    save_model(mf, tmp_path / "mf.json")
    users = [e.user_id for e in ex] + ["new"]
    items = [e.item_id for e in ex] + ["new"]
    ts = [e.timestamp for e in ex] + [0]
    mf_same = np.array_equal(mf.predict_many(users, items, ts),
                             load_model(tmp_path / "mf.json").predict_many(users, items, ts))

    glm_ex = noisy_examples(7)
    glm = train_als_elastic_net(glm_ex, 3, RegularizationSpec.elastic_net(0.01, 0.5), outer_iters=3)
    save_glm(glm, tmp_path / "glm.json")
    gu = [e.user_id for e in glm_ex] + ["new"]
    gi = [e.item_id for e in glm_ex] + ["new"]
    glm_same = np.array_equal(glm.predict_many(gu, gi), load_glm(tmp_path / "glm.json").predict_many(gu, gi))

    data = generate(SynthSpec(n_users=60, n_items=200, n_interactions=3000, hour_offset=1.0), 2)
    reports = []
    for sub in ("a", "b"):
        cfg = harness.ExperimentConfig()
        cfg.temporal_mf.n_factors = 4
        cfg.temporal_mf.epochs = 5
        cfg.experiment.feedback = "mixed"
        prep = harness.prepare(cfg, Dataset(data.catalog, data.interactions))
        harness.run_experiment(cfg, str(tmp_path / sub), prep)
        reports.append((tmp_path / sub / "report.json").read_bytes())
    ok = mf_same and glm_same and reports[0] == reports[1]
    assert criterion(10, ok, f"temporal-mf round trip {'identical' if mf_same else 'DIFFERS'}, "
                             f"diversity-glm round trip {'identical' if glm_same else 'DIFFERS'}, "
                             f"repeated report {'byte-identical' if reports[0] == reports[1] else 'DIFFERS'}")
