"""Repeated train / calibrate / evaluate experiments and their reports."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .calibrate import (
    CVPlusClassifier,
    HomogeneousConformalClassifier,
    JackknifePlusClassifier,
    SplitConformalClassifier,
)
from .core import LabeledDataset, RandomSource
from .metrics import EvaluationReport, evaluate
from .models import KNNProbaClassifier, LogisticRegressionGD, OracleClassifier
from .synthdata import generate_multinomial_inhomogeneous

METHODS = ("sc", "cv+", "jk+", "hcc")
BLACK_BOXES = ("oracle", "logistic", "knn")
REPORT_COLUMNS = (
    "method", "blackbox", "alpha", "rep", "marginal_coverage", "wsc_coverage",
    "avg_size", "avg_size_covered", "seconds",
)
WSC_NOTE = (
    "worst-slab coverage: random unit directions, contiguous windows of sorted "
    "projections holding >= delta of a random half of the test set; coverage of "
    "the lowest window re-measured on the other half"
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class CSVFormatError(ValueError):
    """Dataset file does not follow the x0..x{p-1},y layout."""


# CSV datasets -----------------------------------------------------------------

def ingest_csv(path) -> LabeledDataset:
    """Read a dataset whose header is ``x0,...,x{p-1},y``.

    The class count is ``1 + max(label)``. Errors name the offending line.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(f"{path}: line 1: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[-1] != "y":
            raise CSVFormatError(f"{path}: line 1: last column must be named 'y', got {header}")
        p = len(header) - 1
        if p < 1 or header[:-1] != [f"x{j}" for j in range(p)]:
            raise CSVFormatError(f"{path}: line 1: feature columns must be x0..x{p - 1}")
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise CSVFormatError(f"{path}: line {line_no}: expected {p + 1} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:-1]]
            except ValueError as exc:
                raise CSVFormatError(f"{path}: line {line_no}: {exc}") from None
            if not all(math.isfinite(v) for v in x):
                raise CSVFormatError(f"{path}: line {line_no}: non-finite feature")
            lab = row[-1].strip()
            if not lab.isdigit():
                raise CSVFormatError(
                    f"{path}: line {line_no}: label {lab!r} is not a non-negative integer")
            rows.append(x)
            labels.append(int(lab))
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows), np.array(labels, dtype=np.int64))


def emit_csv(data: LabeledDataset, path) -> None:
    """Write ``data`` in the format :func:`ingest_csv` reads (floats round-trip exactly)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(data.p)] + ["y"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


# Configuration ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    data: str | None = None
    synthetic: bool = False
    method: str = "sc"
    black_box: str = "oracle"
    alpha: float = 0.1
    folds: int = 10
    n_train: int | None = None
    n_test: int | None = None
    reps: int = 100
    seed: int = 0
    jobs: int = 1
    output: str | None = None
    format: str = "csv"
    emit_data: str | None = None
    timing: bool = False
    wsc_delta: float = 0.1
    wsc_directions: int = 1000
    p: int = 10
    classes: int = 10
    l2: float = 1e-4
    max_iter: int = 5000
    tol: float = 1e-8
    knn_k: int | None = None

    def __post_init__(self):
        self.validate()

    @property
    def is_synthetic(self) -> bool:
        return self.data is None

    def resolved_sizes(self, n_available: int | None = None) -> tuple[int, int]:
        if self.is_synthetic:
            return (self.n_train or 1000, self.n_test or 5000)
        n_train = self.n_train or n_available // 2
        n_test = self.n_test or n_available - n_train
        if n_train + n_test > n_available:
            raise ConfigError(
                f"n_train + n_test = {n_train + n_test} exceeds the {n_available} rows in {self.data}")
        return n_train, n_test

    def validate(self):
        if self.data is not None and self.synthetic:
            raise ConfigError("choose either --data or --synthetic, not both")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.black_box not in BLACK_BOXES:
            raise ConfigError(f"black box must be one of {BLACK_BOXES}, got {self.black_box!r}")
        if self.black_box == "oracle" and not self.is_synthetic:
            raise ConfigError("the oracle black box needs synthetic data")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.method == "cv+" and self.folds < 2:
            raise ConfigError("cv+ needs at least 2 folds")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        for name in ("n_train", "n_test"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_train is not None and self.n_train < 2:
            raise ConfigError("n_train must be at least 2")
        if self.method == "cv+" and self.n_train is not None and self.folds > self.n_train:
            raise ConfigError("more folds than training samples")
        if not 0.0 < self.wsc_delta < 1.0:
            raise ConfigError("wsc_delta must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def coerce_value(name: str, raw):
    """Convert a text value to the type of config field ``name``."""
    types = ExperimentConfig.field_types()
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    t = types[name]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if "None" in t and raw.lower() in ("", "none", "null"):
        return None
    try:
        if t.startswith("bool"):
            return _BOOL_WORDS[raw.lower()]
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        out[key] = coerce_value(key, value)
    return out


# Running ----------------------------------------------------------------------

@dataclass
class RepetitionResult:
    rep: int
    report: EvaluationReport | None
    threshold: float | None = None
    score_ks_statistic: float | None = None
    score_ks_pvalue: float | None = None
    n_models: int = 0
    seconds: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["report"] = None if self.report is None else self.report.to_dict()
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    repetitions: list[RepetitionResult] = field(default_factory=list)
    wall_time: float | None = None

    @property
    def reports(self) -> list[EvaluationReport]:
        return [r.report for r in self.repetitions if r.report is not None]

    @property
    def n_failed(self) -> int:
        return sum(r.report is None for r in self.repetitions)

    def summary(self) -> dict:
        out = {"n_reps": len(self.repetitions), "n_failed": self.n_failed}
        for key in ("marginal_coverage", "wsc_coverage", "avg_size", "avg_size_covered"):
            vals = [getattr(r, key) for r in self.reports]
            vals = [v for v in vals if not math.isnan(v)]
            out[f"mean_{key}"] = float(np.mean(vals)) if vals else None
        return out


def make_black_box(config: ExperimentConfig, beta=None, seed=0):
    if config.black_box == "oracle":
        return OracleClassifier(beta=beta)
    if config.black_box == "logistic":
        return LogisticRegressionGD(l2=config.l2, max_iter=config.max_iter, tol=config.tol)
    return KNNProbaClassifier(n_neighbors=config.knn_k, random_state=seed)


def make_calibrator(config: ExperimentConfig, black_box, n_classes, rng, n_jobs=None):
    common = dict(alpha=config.alpha, n_classes=n_classes, random_state=rng)
    if config.method == "sc":
        return SplitConformalClassifier(black_box, **common)
    if config.method == "hcc":
        return HomogeneousConformalClassifier(black_box, **common)
    if config.method == "cv+":
        return CVPlusClassifier(black_box, n_folds=config.folds, n_jobs=n_jobs, **common)
    return JackknifePlusClassifier(black_box, n_jobs=n_jobs, **common)


def draw_repetition(config: ExperimentConfig, rep: int, source: LabeledDataset | None = None):
    """Data and random streams of one repetition; identical for every method."""
    rep_rng = RandomSource(config.seed).split(config.reps)[rep]
    data_rng, calib_rng, u_rng, wsc_rng, model_rng = rep_rng.split(5)
    if source is None:
        n_train, n_test = config.resolved_sizes()
        synth = generate_multinomial_inhomogeneous(
            n_train + n_test, p=config.p, C=config.classes, rng=data_rng)
        data, beta = synth.dataset, synth.spec.beta
        train, test = np.arange(n_train), np.arange(n_train, n_train + n_test)
    else:
        n_train, n_test = config.resolved_sizes(source.n)
        perm = data_rng.permutation(source.n)
        data, beta = source, None
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_test])
    u_test = u_rng.uniform(test.size)
    model_seed = int(model_rng.integers(0, 2**31 - 1))
    return data, beta, train, test, u_test, calib_rng, wsc_rng, model_seed


def run_repetition(config: ExperimentConfig, rep: int, source: LabeledDataset | None = None,
                   n_jobs=None) -> RepetitionResult:
    t0 = time.perf_counter()
    try:
        data, beta, train, test, u_test, calib_rng, wsc_rng, model_seed = draw_repetition(
            config, rep, source)
        box = make_black_box(config, beta, model_seed)
        cal = make_calibrator(config, box, data.num_classes, calib_rng, n_jobs)
        cal.fit(data.features[train], data.labels[train])
        sets = cal.predict(data.features[test], u=u_test)
        report = evaluate(data.features[test], sets, data.labels[test],
                          config.wsc_delta, config.wsc_directions, wsc_rng)
        scores = getattr(cal, "calib_scores_", getattr(cal, "holdout_scores_", None))
        ks = stats.kstest(scores, "uniform")
        n_models = len(getattr(cal, "estimators_", [None]))
        out = RepetitionResult(
            rep=rep, report=report, threshold=getattr(cal, "threshold_", None),
            score_ks_statistic=float(ks.statistic), score_ks_pvalue=float(ks.pvalue),
            n_models=n_models,
        )
    except Exception as exc:  # recorded per repetition; the run decides whether to abort
        out = RepetitionResult(rep=rep, report=None, error=f"{type(exc).__name__}: {exc}")
    if config.timing:
        out.seconds = time.perf_counter() - t0
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every repetition (in parallel up to ``config.jobs``), ordered by index."""
    config.validate()
    t0 = time.perf_counter()
    source = None if config.is_synthetic else ingest_csv(config.data)
    if source is not None:
        config.resolved_sizes(source.n)
    if config.jobs > 1 and config.reps > 1:
        reps = Parallel(n_jobs=config.jobs)(
            delayed(run_repetition)(config, r, source) for r in range(config.reps))
    else:
        reps = [run_repetition(config, r, source) for r in range(config.reps)]
    reps.sort(key=lambda r: r.rep)
    result = ExperimentResult(config=config, repetitions=reps)
    if config.timing:
        result.wall_time = time.perf_counter() - t0
    return result


def emit_data(config: ExperimentConfig, path, rep: int = 0) -> None:
    """Write the rows drawn for repetition ``rep`` (training rows first) as CSV."""
    source = None if config.is_synthetic else ingest_csv(config.data)
    data, _, train, test, *_ = draw_repetition(config, rep, source)
    emit_csv(data.subset(np.concatenate([train, test])), path)


# Reports ----------------------------------------------------------------------

def _csv_value(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(v) if isinstance(v, float) else v


def report_rows(result: ExperimentResult) -> list[dict]:
    rows = []
    cfg = result.config
    for r in result.repetitions:
        m = r.report
        rows.append({
            "method": cfg.method,
            "blackbox": cfg.black_box,
            "alpha": cfg.alpha,
            "rep": r.rep,
            "marginal_coverage": None if m is None else m.marginal_coverage,
            "wsc_coverage": None if m is None else m.wsc_coverage,
            "avg_size": None if m is None else m.avg_size,
            "avg_size_covered": None if m is None else m.avg_size_covered,
            "seconds": r.seconds,
        })
    return rows


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def emit_report(result: ExperimentResult, path=None, format: str = "csv") -> str:
    """Serialize ``result`` as CSV (one row per repetition) or JSON; write it if ``path``."""
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in report_rows(result):
            lines.append(",".join(str(_csv_value(row[c])) for c in REPORT_COLUMNS))
        text = "\n".join(lines) + "\n"
    elif format == "json":
        doc = {
            "config": result.config.to_dict(),
            "summary": result.summary(),
            "wall_time": result.wall_time,
            "wsc_estimator": {
                "description": WSC_NOTE,
                "delta": result.config.wsc_delta,
                "n_directions": result.config.wsc_directions,
                "selection_fraction": 0.5,
            },
            "repetitions": [r.to_dict() for r in result.repetitions],
        }
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
