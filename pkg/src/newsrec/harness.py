"""Experiment runner, hyper-parameter sweeps and the ``newsrec`` command line.

Configuration is an INI file (``[section]`` headers, ``key = value`` lines).
Every key has a default; unknown sections or keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import corpus, diversity_glm, metrics, sampling, synth, temporal_mf
from .corpus import DataError, Dataset, Interaction
from .temporal_mf import Example, TrainingDiverged

logger = logging.getLogger("newsrec")

MODELS = ("temporal-mf", "diversity-glm", "decay-baseline")
FEEDBACK_MODES = ("explicit", "implicit", "mixed")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- configuration -----------------------------------------------------------

@dataclass
class DataSection:
    catalog: str = "catalog.tsv"
    interactions: str = "interactions.tsv"
    rating_min: float = 1.0
    rating_max: float = 5.0
    header: bool = False


@dataclass
class CorpusSection:
    session_gap: int = corpus.DEFAULT_SESSION_GAP
    train_fraction: float = 0.8


@dataclass
class ExperimentSection:
    model: str = "temporal-mf"
    feedback: str = "explicit"
    seed: int = 0
    # evaluate on the last 10% of the train window instead of the test window
    validation: bool = False


@dataclass
class SamplingSection:
    negatives_per_positive: int = sampling.DEFAULT_NEGATIVES_PER_POSITIVE
    seed: int = 0
    dedup: bool = False


@dataclass
class TemporalMfSection:
    n_factors: int = 32
    learning_rate: float = 0.005
    l2_reg: float = 0.02
    epochs: int = 20
    granularities: tuple = ()
    use_category: bool = False
    use_subcategory: bool = False
    init_scale: float = 0.1


@dataclass
class DiversityGlmSection:
    n_factors: int = 10
    lam: float = 0.01
    mode: str = "elastic_net"
    alpha: float = 0.5
    p: float = 1.0
    epsilon: float = 1e-6
    outer_iters: int = 10
    tol: float = 1e-5
    max_iter: int = 1000
    init_scale: float = 1.0
    damping: float = diversity_glm.DAMPING


@dataclass
class DecaySection:
    half_life: float = 86400.0


@dataclass
class EvaluationSection:
    ks: tuple = metrics.DEFAULT_KS
    w: float = metrics.DEFAULT_W
    candidates: str = "unseen"
    relevance_threshold: float = metrics.RELEVANCE_THRESHOLD


@dataclass
class SweepSection:
    lam: tuple = ()
    alpha: tuple = ()
    p: tuple = ()
    n_factors: tuple = ()
    granularities: tuple = ()
    w: tuple = ()


_SYNTH_FIELDS = {f.name: f for f in fields(synth.SynthSpec)}


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    temporal_mf: TemporalMfSection = field(default_factory=TemporalMfSection)
    diversity_glm: DiversityGlmSection = field(default_factory=DiversityGlmSection)
    decay: DecaySection = field(default_factory=DecaySection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    # raw [synth] values, typed later against SynthSpec
    synth: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    def validate(self) -> "ExperimentConfig":
        if self.experiment.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.experiment.feedback not in FEEDBACK_MODES:
            raise ConfigError(f"feedback must be one of {FEEDBACK_MODES}")
        if self.evaluation.candidates not in metrics.CANDIDATE_POLICIES:
            raise ConfigError(f"candidates must be one of {metrics.CANDIDATE_POLICIES}")
        if not 0 < self.corpus.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0 <= self.evaluation.w <= 1:
            raise ConfigError("w must lie in [0, 1]")
        bad = set(self.temporal_mf.granularities) - set(corpus.GRANULARITIES)
        if bad:
            raise ConfigError(f"unknown granularities {sorted(bad)}")
        return self

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    @property
    def rating_scale(self) -> tuple[float, float]:
        return (self.data.rating_min, self.data.rating_max)


def _parse_value(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def _parse_granularities(raw) -> tuple[str, ...]:
    if not isinstance(raw, str):
        raw = ",".join(raw)
    parts = raw.replace("+", ",").split(",")
    return tuple(g.strip() for g in parts if g.strip() and g.strip() != "none")


def _coerce_section(section, name: str) -> None:
    """Typed conversion for tuple-valued keys that need more than string splitting."""
    if name == "temporal_mf":
        section.granularities = _parse_granularities(section.granularities)
    if name == "evaluation":
        section.ks = tuple(int(k) for k in section.ks)
    if name == "sweep":
        section.lam = tuple(float(v) for v in section.lam)
        section.alpha = tuple(float(v) for v in section.alpha)
        section.p = tuple(float(v) for v in section.p)
        section.n_factors = tuple(int(v) for v in section.n_factors)
        section.w = tuple(float(v) for v in section.w)
        section.granularities = tuple(_parse_granularities(g) for g in section.granularities)


def load_config(path: Optional[str] = None, text: Optional[str] = None) -> ExperimentConfig:
    """Parse an INI config; missing keys take defaults, unknown keys raise :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    cfg = ExperimentConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        cfg.base_dir = os.path.dirname(os.path.abspath(path))
    elif text is not None:
        parser.read_string(text)
    for name in parser.sections():
        if name == "synth":
            for key, raw in parser.items(name):
                if key not in _SYNTH_FIELDS:
                    raise ConfigError(f"unknown key [synth] {key}")
                cfg.synth[key] = raw
            continue
        section = getattr(cfg, name, None)
        if not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown section [{name}]")
        known = {f.name: f for f in fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key [{name}] {key}")
            setattr(section, key, _parse_value(raw, getattr(section, key), f"[{name}] {key}"))
        _coerce_section(section, name)
    return cfg.validate()


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join("+".join(g) or "none" for g in v)
        return ", ".join(str(x) for x in v)
    return str(v)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Every resolved value, in the same format :func:`load_config` reads."""
    out = io.StringIO()
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        if f.name == "base_dir":
            continue
        out.write(f"[{f.name}]\n")
        if f.name == "synth":
            for key, raw in sorted(section.items()):
                out.write(f"{key} = {raw}\n")
        else:
            for sf in fields(section):
                value = getattr(section, sf.name)
                if sf.name == "granularities" and f.name == "temporal_mf":
                    value = "+".join(value) or "none"
                out.write(f"{sf.name} = {_format_value(value)}\n")
        out.write("\n")
    return out.getvalue()


def synth_spec_from_config(cfg: ExperimentConfig) -> synth.SynthSpec:
    kwargs = {}
    for key, raw in cfg.synth.items():
        default = _SYNTH_FIELDS[key].default
        if key in ("offset_hours", "offset_days"):
            kwargs[key] = tuple(int(v) for v in raw.split(",") if v.strip())
        elif key == "rating_scale":
            kwargs[key] = tuple(float(v) for v in raw.split(","))
        elif key == "item_lifetime_days":
            kwargs[key] = None if raw.strip().lower() == "none" else float(raw)
        else:
            kwargs[key] = _parse_value(raw, default, f"[synth] {key}")
    return synth.SynthSpec(**kwargs)


# -- pipeline ----------------------------------------------------------------

@dataclass
class Prepared:
    """Everything a run needs before the model is chosen: the ingested and split data."""

    dataset: Dataset
    train: list[Interaction]
    test: list[Interaction]
    split_timestamp: int
    train_examples: list[Example]
    test_examples: list[Example]
    counts: dict


def _implicit_examples(interactions, all_interactions, cfg: ExperimentConfig, mode: str,
                       seed: int) -> tuple[list[Example], dict]:
    sessions = corpus.sessionize(interactions, cfg.corpus.session_gap)
    window = sampling.ActivityWindow(all_interactions)
    pairs, stats = sampling.sample_all(sessions, cfg.sampling.negatives_per_positive, seed, window,
                                       cfg.sampling.dedup)
    rated = {(x.user_id, x.item_id, x.timestamp): x.rating for x in interactions
             if x.rating is not None}
    lo, hi = cfg.rating_scale
    out = []
    for p in pairs:
        value = p.target
        if mode == "mixed" and p.label == sampling.POSITIVE:
            r = rated.get((p.user_id, p.item_id, p.timestamp))
            if r is not None:
                value = (r - lo) / (hi - lo)
        out.append(Example(p.user_id, p.item_id, p.timestamp, value))
    return out, {"sessions": stats.sessions, "empty_negative_pools": stats.empty_pools}


def prepare(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> Prepared:
    """Ingest, split and build train/test targets according to ``cfg``."""
    stage = "ingest"
    try:
        if dataset is None:
            dataset = corpus.load_dataset(cfg.path(cfg.data.catalog), cfg.path(cfg.data.interactions),
                                          cfg.rating_scale, cfg.data.header)
        if not dataset.interactions:
            raise DataError("no usable interactions")
        stage = "split"
        train, test, cut = corpus.time_based_split(dataset.interactions, cfg.corpus.train_fraction)
        if cfg.experiment.validation:
            train, test, cut = corpus.validation_split(train)
        stage = "sample"
        counts = dict(dataset.tally.to_dict())
        if cfg.experiment.feedback == "explicit":
            tr = temporal_mf.examples_from_interactions(train)
            te = temporal_mf.examples_from_interactions(test)
        else:
            tr, c1 = _implicit_examples(train, train, cfg, cfg.experiment.feedback, cfg.sampling.seed)
            te, _ = _implicit_examples(test, dataset.interactions, cfg, "implicit",
                                       sampling.derive_seed(cfg.sampling.seed, "test"))
            counts.update(c1)
        if not tr and cfg.experiment.model != "decay-baseline":
            raise DataError("no training targets for the selected feedback mode")
    except (DataError, ValueError, OSError) as exc:
        raise StageError(stage, exc) from exc
    counts.update({"train_interactions": len(train), "test_interactions": len(test)})
    return Prepared(dataset, train, test, cut, tr, te, counts)


def cell_seed(global_seed: int, index: int) -> int:
    return sampling.derive_seed(global_seed, f"cell:{index}") % (2 ** 32)


def train_model(cfg: ExperimentConfig, prep: Prepared, seed: int):
    kind = cfg.experiment.model
    implicit = cfg.experiment.feedback != "explicit"
    scale = None if implicit else cfg.rating_scale
    if kind == "temporal-mf":
        s = cfg.temporal_mf
        mf_cfg = temporal_mf.MfConfig(s.n_factors, s.learning_rate, s.l2_reg, s.epochs,
                                      s.granularities, s.use_category, s.use_subcategory,
                                      seed, s.init_scale, scale)
        return temporal_mf.train_sgd(mf_cfg, prep.train_examples, prep.dataset.catalog)
    if kind == "diversity-glm":
        s = cfg.diversity_glm
        spec = diversity_glm.RegularizationSpec(s.lam, s.mode, s.alpha, s.p, s.epsilon)
        return diversity_glm.train_als_elastic_net(prep.train_examples, s.n_factors, spec,
                                                   s.outer_iters, s.tol, s.max_iter, seed,
                                                   s.init_scale, scale, s.damping)
    return temporal_mf.DecayPopularity(cfg.decay.half_life).fit(prep.train, prep.split_timestamp)


def model_to_dict(model) -> dict:
    if isinstance(model, temporal_mf.MfModel):
        return temporal_mf.model_to_dict(model)
    if isinstance(model, diversity_glm.GlmModel):
        return diversity_glm.glm_to_dict(model)
    return model.to_dict()


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "temporal-mf":
        return temporal_mf.model_from_dict(d)
    if kind == "diversity-glm":
        return diversity_glm.glm_from_dict(d)
    if kind == "decay-baseline":
        return temporal_mf.DecayPopularity.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


def save_any(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_any(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def evaluate_model(cfg: ExperimentConfig, prep: Prepared, model,
                   features: Optional[metrics.ItemFeatures] = None) -> metrics.EvaluationReport:
    e = cfg.evaluation
    return metrics.evaluate_run(model, prep.train, prep.test, prep.dataset.catalog, e.ks, e.w,
                                e.candidates, prep.test_examples, e.relevance_threshold,
                                count_clicks=True, features=features, extra_counts=prep.counts)


@dataclass
class RunResult:
    report: metrics.EvaluationReport
    model: object
    paths: dict


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   prep: Optional[Prepared] = None, index: int = 0,
                   features: Optional[metrics.ItemFeatures] = None) -> RunResult:
    """ingest -> sessionize -> split -> sample -> train -> evaluate, writing artifacts to ``out_dir``.

    Writes ``model.json``, ``report.json`` and ``config.log`` (the fully resolved
    configuration). On failure nothing is left behind and :class:`StageError`
    names the failing stage.
    """
    written: list[str] = []
    try:
        prep = prep or prepare(cfg)
        seed = cell_seed(cfg.experiment.seed, index)
        try:
            model = train_model(cfg, prep, seed)
        except TrainingDiverged:
            raise
        except (ValueError, DataError) as exc:
            raise StageError("train", exc) from exc
        try:
            report = evaluate_model(cfg, prep, model, features)
        except ValueError as exc:
            raise StageError("evaluate", exc) from exc
        paths = {}
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            paths = {n: os.path.join(out_dir, n) for n in ("config.log", "model.json", "report.json")}
            for name, writer in (("config.log", lambda fh: fh.write(config_to_ini(cfg))),
                                 ("model.json", lambda fh: json.dump(model_to_dict(model), fh)),
                                 ("report.json", lambda fh: fh.write(report.to_json()))):
                written.append(paths[name])
                with open(paths[name], "w", encoding="utf-8", newline="\n") as fh:
                    writer(fh)
        return RunResult(report, model, paths)
    except BaseException:
        for p in written:
            if os.path.exists(p):
                os.remove(p)
        raise


# -- sweeps ------------------------------------------------------------------

SWEEP_KEYS = ("lam", "alpha", "p", "n_factors", "granularities", "w")


def grid_cells(grid: dict) -> list[dict]:
    """Cartesian product in a fixed key order (``SWEEP_KEYS``), last key varying fastest."""
    keys = [k for k in SWEEP_KEYS if grid.get(k)]
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    cells = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    return cells or [{}]


def apply_cell(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    cfg = dataclasses.replace(
        cfg, temporal_mf=dataclasses.replace(cfg.temporal_mf),
        diversity_glm=dataclasses.replace(cfg.diversity_glm),
        evaluation=dataclasses.replace(cfg.evaluation))
    glm = cfg.experiment.model == "diversity-glm"
    for key, value in cell.items():
        if key == "lam":
            if glm:
                cfg.diversity_glm.lam = value
            else:
                cfg.temporal_mf.l2_reg = value
        elif key == "alpha":
            cfg.diversity_glm.alpha = value
            cfg.diversity_glm.mode = "elastic_net"
        elif key == "p":
            cfg.diversity_glm.p = value
            cfg.diversity_glm.mode = "lp"
        elif key == "n_factors":
            cfg.diversity_glm.n_factors = value
            cfg.temporal_mf.n_factors = value
        elif key == "granularities":
            cfg.temporal_mf.granularities = tuple(value)
        elif key == "w":
            cfg.evaluation.w = value
    return cfg


def _run_cell(args):
    cfg, prep, index, cell, out_dir = args
    cell_cfg = apply_cell(cfg, cell)
    cell_dir = None if out_dir is None else os.path.join(out_dir, f"cell_{index:03d}")
    try:
        result = run_experiment(cell_cfg, cell_dir, prep, index)
        return index, result.report.to_dict(), None
    except (StageError, TrainingDiverged) as exc:
        return index, None, str(exc)


def _cell_label(key, value) -> str:
    if key == "granularities":
        return "+".join(value) or "none"
    return repr(value)


def sweep(cfg: ExperimentConfig, grid: Optional[dict] = None, out_dir: Optional[str] = None,
          jobs: int = 1, prep: Optional[Prepared] = None) -> list[dict]:
    """Train and evaluate every grid cell; returns one row per cell in grid order.

    Cell ``i`` is seeded from ``(global seed, i)``, so cell 0 reproduces
    :func:`run_experiment`. A failing cell yields a row with an ``error`` entry
    and the sweep carries on. With ``out_dir`` the table is also written to
    ``sweep.csv``.
    """
    if grid is None:
        grid = {k: getattr(cfg.sweep, k) for k in SWEEP_KEYS}
    cells = grid_cells(grid)
    logger.info("sweep: %d cells", len(cells))
    prep = prep or prepare(cfg)
    tasks = [(cfg, prep, n, cell, out_dir) for n, cell in enumerate(cells)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    rows = []
    for (index, report, error), cell in zip(sorted(results, key=lambda r: r[0]), cells):
        row = {"cell": index, "seed": cell_seed(cfg.experiment.seed, index)}
        for key in SWEEP_KEYS:
            if key in cell:
                row[key] = _cell_label(key, cell[key])
        if report is None:
            row["error"] = error
        else:
            row["rmse"] = report["rmse"]
            for k in report["k_values"]:
                for name in ("precision", "recall", "f1", "diversity", "novelty", "composite"):
                    row[f"{name}@{k}"] = report[name][str(k)]
        rows.append(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in columns})


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


# -- command line -------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    common.add_argument("--model", choices=MODELS, help="model selector (overrides the config)")
    common.add_argument("--k", help="comma-separated cutoffs, e.g. 10,20,50")
    common.add_argument("--w", type=float, help="accuracy weight of the composite score")
    common.add_argument("--header", action="store_true", help="input TSVs start with a header row")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="newsrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("ingest", "parse inputs and print error tallies as JSON"),
        ("profile", "hour / day-of-week / month interaction histograms"),
        ("split", "time-based train/test split into train.tsv and test.tsv"),
        ("sample", "labelled positive/negative pairs for the train window"),
        ("train", "train the selected model and save model.json"),
        ("evaluate", "evaluate OUT/model.json and write report.json"),
        ("run", "train and evaluate in one go"),
        ("sweep", "run the [sweep] grid and write sweep.csv"),
        ("synth", "write a planted-signal dataset from the [synth] section"),
        ("report", "print a saved report.json or sweep.csv"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.experiment.seed = args.seed
    if args.model:
        cfg.experiment.model = args.model
    if args.k:
        cfg.evaluation.ks = tuple(int(k) for k in args.k.split(","))
    if args.w is not None:
        cfg.evaluation.w = args.w
    if args.header:
        cfg.data.header = True
    return cfg.validate()


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _dispatch(args) -> int:
    cfg = _resolve(args)
    out = args.out
    cmd = args.command

    if cmd == "synth":
        paths = synth.generate_synthetic(synth_spec_from_config(cfg), cfg.experiment.seed, out)
        print(json.dumps(paths, indent=2))
        return EXIT_OK
    if cmd == "report":
        for name in ("report.json", "sweep.csv"):
            p = os.path.join(out, name)
            if os.path.exists(p):
                with open(p, encoding="utf-8") as fh:
                    sys.stdout.write(fh.read())
                return EXIT_OK
        raise StageError("report", FileNotFoundError(f"no report.json or sweep.csv in {out}"))

    os.makedirs(out, exist_ok=True)
    if cmd == "ingest":
        try:
            ds = corpus.load_dataset(cfg.path(cfg.data.catalog), cfg.path(cfg.data.interactions),
                                     cfg.rating_scale, cfg.data.header)
        except OSError as exc:
            raise StageError("ingest", exc) from exc
        summary = dict(ds.tally.to_dict(), items=len(ds.catalog), interactions=len(ds.interactions),
                       duplicates=ds.tally.duplicates)
        print(json.dumps(summary))
        return EXIT_OK
    if cmd == "profile":
        prep = prepare(cfg)
        prof = corpus.profile_time_series(prep.dataset.interactions)
        _write_json(prof, os.path.join(out, "profile.json"))
        print(json.dumps(prof))
        return EXIT_OK
    if cmd == "split":
        prep = prepare(cfg)
        for name, rows in (("train.tsv", prep.train), ("test.tsv", prep.test)):
            with open(os.path.join(out, name), "w", encoding="utf-8", newline="\n") as fh:
                corpus.write_interactions(rows, fh)
        print(json.dumps({"split_timestamp": prep.split_timestamp, "train": len(prep.train),
                          "test": len(prep.test)}))
        return EXIT_OK
    if cmd == "sample":
        prep = prepare(cfg)
        sessions = corpus.sessionize(prep.train, cfg.corpus.session_gap)
        pairs, stats = sampling.sample_all(sessions, cfg.sampling.negatives_per_positive,
                                           cfg.sampling.seed, sampling.ActivityWindow(prep.train),
                                           cfg.sampling.dedup)
        with open(os.path.join(out, "pairs.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            sampling.write_pairs(pairs, fh)
        print(json.dumps({"pairs": len(pairs), **dataclasses.asdict(stats)}))
        return EXIT_OK
    if cmd == "train":
        prep = prepare(cfg)
        model = train_model(cfg, prep, cell_seed(cfg.experiment.seed, 0))
        with open(os.path.join(out, "config.log"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(config_to_ini(cfg))
        save_any(model, os.path.join(out, "model.json"))
        return EXIT_OK
    if cmd == "evaluate":
        prep = prepare(cfg)
        try:
            model = load_any(os.path.join(out, "model.json"))
        except (OSError, ValueError, KeyError) as exc:
            raise StageError("evaluate", exc) from exc
        report = evaluate_model(cfg, prep, model)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json())
        report.write_per_user_csv(os.path.join(out, "per_user.csv"))
        sys.stdout.write(report.to_json())
        return EXIT_OK
    if cmd == "run":
        result = run_experiment(cfg, out)
        sys.stdout.write(result.report.to_json())
        return EXIT_OK
    if cmd == "sweep":
        rows = sweep(cfg, out_dir=out, jobs=args.jobs)
        print(f"{len(rows)} cells written to {os.path.join(out, 'sweep.csv')}")
        return EXIT_OK
    raise ConfigError(f"unknown command {cmd}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, configparser.Error) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGED
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
