"""Dataset construction, per-subject authentication, cohort aggregation and
the COV threshold sweep."""

from __future__ import annotations

import csv
import io
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .classifier import GENUINE, IMPOSTOR, SvmModel, TrainConfig, fit_scaler, predict_labels, smo_train
from .core import ALL_COMBOS, Combo, DomainError, Period
from .features import FeatureId, FeatureTable, max_feature_count
from .selection import (
    X_SIGMA_GRID,
    Approach,
    EmptySelectionError,
    FeatureSelector,
    KsConfig,
    SelectionResult,
)

logger = logging.getLogger(__name__)

DEFAULT_MIN_WINDOWS = 330


@dataclass(frozen=True)
class ExperimentConfig:
    """One (period, combination, approach, threshold) experiment.

    ``windows_per_subject`` is |W|, the genuine windows drawn per subject.  When
    None it is sized to the smallest balanced count meeting the
    ``min_window_multiple`` rule (never below ``min_windows``).
    """

    period: Period = Period.NON_SEDENTARY
    combo: Combo = ALL_COMBOS[-1]
    approach: Approach = Approach.KS_COV
    x_sigma_t: int = 30
    windows_per_subject: Optional[int] = None
    min_windows: int = DEFAULT_MIN_WINDOWS
    min_window_multiple: int = 10
    split: float = 0.75
    seed: int = 0
    acc_slack: float = 2.0
    train: TrainConfig = TrainConfig()
    ks: KsConfig = KsConfig()
    cov_mode: str = "subject"

    def __post_init__(self):
        object.__setattr__(self, "period", Period(self.period))
        object.__setattr__(self, "approach", Approach(self.approach))
        if not 0 < self.split < 1:
            raise DomainError(f"split must lie in (0, 1), got {self.split}")
        if self.min_window_multiple < 1:
            raise DomainError("min_window_multiple must be at least 1")
        if self.x_sigma_t not in X_SIGMA_GRID:
            raise DomainError(f"x_sigma_t must be one of {X_SIGMA_GRID}")


class SkipSubject(Exception):
    """Subject cannot supply a dataset satisfying the sizing rules."""


@dataclass(frozen=True, eq=False)
class Dataset:
    subject: str
    feature_ids: tuple[FeatureId, ...]
    train_rows: np.ndarray
    train_y: np.ndarray
    test_rows: np.ndarray
    test_y: np.ndarray
    train_X: np.ndarray
    test_X: np.ndarray
    windows_per_subject: int


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int = 0
    TN: int = 0
    FP: int = 0
    FN: int = 0

    def __post_init__(self):
        if min(self.TP, self.TN, self.FP, self.FN) < 0:
            raise DomainError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, truth: np.ndarray, predicted: np.ndarray) -> "ConfusionCounts":
        g, p = truth == GENUINE, predicted == GENUINE
        return cls(int(np.sum(g & p)), int(np.sum(~g & ~p)), int(np.sum(~g & p)), int(np.sum(g & ~p)))

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


def fcd(n_total: int, n: int) -> float:
    """Feature count decrease in percent, (n_T - n) / n_T * 100."""
    if n_total <= 0 or not 0 <= n <= n_total:
        raise DomainError(f"invalid feature counts n_T={n_total}, n={n}")
    return float(Fraction(n_total - n, n_total) * 100)


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    gar: float
    far: float
    fcd: float
    n: int
    n_T: int
    N: int = 1
    W: int = 0

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, n: int, n_total: int, N: int = 1, W: int = 0):
        if counts.total == 0:
            raise DomainError("no predictions to score")
        genuine = counts.TP + counts.FN
        impostor = counts.FP + counts.TN
        return cls(
            acc=(counts.TP + counts.TN) / counts.total * 100,
            gar=counts.TP / genuine if genuine else float("nan"),
            far=counts.FP / impostor if impostor else float("nan"),
            fcd=fcd(n_total, n),
            n=n,
            n_T=n_total,
            N=N,
            W=W,
        )


def _subject_rng(seed: int, subject: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(subject.encode("utf-8"))])


def windows_needed(n_features: int, cfg: ExperimentConfig) -> int:
    """|W| per subject: balanced across the period's levels, both classes
    together holding at least ``min_window_multiple`` windows per feature."""
    levels = len(cfg.period.levels)
    if cfg.windows_per_subject is not None:
        return cfg.windows_per_subject - cfg.windows_per_subject % levels
    w = max(cfg.min_windows, math.ceil(cfg.min_window_multiple * n_features / 2))
    return levels * math.ceil(w / levels)


def build_dataset(
    table: FeatureTable,
    target: str,
    feature_ids: Sequence[FeatureId],
    cfg: ExperimentConfig,
) -> Dataset:
    """Balanced genuine-vs-impostor train/test split for one subject.

    Raises :class:`SkipSubject` when the subject (or the impostor pool) cannot
    supply |W| windows balanced per activity level, or when the dataset would
    hold fewer than ``min_window_multiple`` windows per feature.
    """
    if table.period is not cfg.period:
        raise DomainError("feature table belongs to a different period")
    feature_ids = tuple(feature_ids)
    n = len(feature_ids)
    if n == 0:
        raise DomainError("empty feature set")
    levels = cfg.period.levels
    W = windows_needed(n, cfg)
    per_level = W // len(levels)
    if 2 * W < cfg.min_window_multiple * n or per_level == 0:
        raise SkipSubject(
            f"{2 * W} windows < {cfg.min_window_multiple} x {n} features"
        )

    rng = _subject_rng(cfg.seed, target)
    is_target = table.subjects == target
    genuine, impostor = [], []
    for level in levels:
        at_level = table.levels == int(level)
        own = np.flatnonzero(is_target & at_level)
        others = np.flatnonzero(~is_target & at_level)
        if len(own) < per_level:
            raise SkipSubject(
                f"{len(own)} windows at level {int(level)}, need {per_level}"
            )
        if len(others) < per_level:
            raise SkipSubject(f"impostor pool has {len(others)} windows at level {int(level)}")
        genuine.append(np.sort(rng.choice(own, per_level, replace=False)))
        impostor.append(np.sort(rng.choice(others, per_level, replace=False)))

    n_train = round(per_level * cfg.split)
    if n_train == 0 or n_train == per_level:
        raise SkipSubject(f"split {cfg.split} leaves an empty side at {per_level} windows per level")
    train, test, train_y, test_y = [], [], [], []
    for label, groups in ((GENUINE, genuine), (IMPOSTOR, impostor)):
        for rows in groups:
            rows = rng.permutation(rows)
            train.append(rows[:n_train])
            test.append(rows[n_train:])
            train_y.append(np.full(n_train, label))
            test_y.append(np.full(per_level - n_train, label))
    train_rows, test_rows = np.concatenate(train), np.concatenate(test)
    X = table.columns(feature_ids)
    return Dataset(
        subject=target,
        feature_ids=feature_ids,
        train_rows=train_rows,
        train_y=np.concatenate(train_y),
        test_rows=test_rows,
        test_y=np.concatenate(test_y),
        train_X=X[train_rows],
        test_X=X[test_rows],
        windows_per_subject=W,
    )


@dataclass(frozen=True)
class SubjectResult:
    subject: str
    counts: ConfusionCounts
    metrics: MetricsReport
    model: SvmModel = field(repr=False, compare=False)


def evaluate_subject(
    dataset: Dataset, cfg: ExperimentConfig, provenance: Optional[dict] = None
) -> SubjectResult:
    scaler = fit_scaler(dataset.train_X)
    model = smo_train(
        dataset.train_X,
        dataset.train_y,
        cfg.train,
        scaler,
        subject=dataset.subject,
        feature_ids=dataset.feature_ids,
        provenance=provenance,
    )
    counts = ConfusionCounts.from_labels(dataset.test_y, predict_labels(model, dataset.test_X))
    n = len(dataset.feature_ids)
    metrics = MetricsReport.from_counts(
        counts, n, max_feature_count(cfg.period), W=dataset.windows_per_subject
    )
    return SubjectResult(dataset.subject, counts, metrics, model)


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        return float("nan"), float("nan")
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), sd


@dataclass(frozen=True)
class CohortReport:
    period: Period
    combo: Combo
    approach: Approach
    threshold: Optional[int]
    selection: SelectionResult
    rows: tuple[SubjectResult, ...]
    skipped: dict[str, str]
    W: int

    @property
    def n(self) -> int:
        return self.selection.n

    @property
    def N(self) -> int:
        return len(self.rows)

    @property
    def accs(self) -> list[float]:
        return [r.metrics.acc for r in self.rows]

    @property
    def mean_acc(self) -> float:
        return _mean_sd(self.accs)[0]

    @property
    def sd_acc(self) -> float:
        return _mean_sd(self.accs)[1]

    @property
    def mean_gar(self) -> float:
        return _mean_sd([r.metrics.gar for r in self.rows])[0]

    @property
    def mean_far(self) -> float:
        return _mean_sd([r.metrics.far for r in self.rows])[0]

    @property
    def fcd(self) -> float:
        return fcd(max_feature_count(self.period), self.n)


def run_cohort(
    table: FeatureTable,
    cfg: ExperimentConfig,
    selection: Optional[SelectionResult] = None,
    selector: Optional[FeatureSelector] = None,
) -> CohortReport:
    """Train and test one authenticator per subject and aggregate the results.

    ``selection`` fixes the feature set; otherwise it is derived from the
    table (or ``selector``) according to ``cfg``.  Raises
    :class:`EmptySelectionError` when no feature survives and
    :class:`DomainError` when fewer than two subjects are eligible.
    """
    if selection is None:
        selector = selector or FeatureSelector(table, cfg.ks, cfg.cov_mode)
        selection = selector.select(cfg.approach, cfg.combo, cfg.x_sigma_t)
    if not selection.kept:
        raise EmptySelectionError("empty feature set")
    subjects = table.subject_ids
    if len(subjects) < 2:
        raise DomainError("a cohort needs at least two subjects")
    provenance = {
        "combo": cfg.combo.code,
        "period": int(cfg.period),
        "approach": cfg.approach.value,
        "threshold": cfg.x_sigma_t if cfg.approach is Approach.KS_COV else None,
        "seed": cfg.seed,
    }
    rows, skipped = [], {}
    for subject in subjects:
        try:
            dataset = build_dataset(table, subject, selection.kept, cfg)
        except SkipSubject as exc:
            skipped[subject] = str(exc)
            continue
        rows.append(evaluate_subject(dataset, cfg, provenance))
    if len(rows) < 2:
        raise DomainError(
            f"only {len(rows)} eligible subject(s); skipped: {skipped}"
        )
    return CohortReport(
        period=cfg.period,
        combo=cfg.combo,
        approach=cfg.approach,
        threshold=provenance["threshold"],
        selection=selection,
        rows=tuple(rows),
        skipped=skipped,
        W=windows_needed(selection.n, cfg),
    )


@dataclass(frozen=True)
class SweepRow:
    x_sigma_t: int
    mean_acc: float
    sd_acc: float
    mean_fcd: float
    sd_fcd: float
    combos_evaluated: int


@dataclass(frozen=True)
class SweepReport:
    period: Period
    rows: tuple[SweepRow, ...]
    chosen_threshold: Optional[int]  # None when no threshold produced an accuracy
    acc_slack: float
    failures: dict[str, str]
    reports: dict[tuple[int, str], CohortReport] = field(repr=False, compare=False)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x_sigma_t", "mean_acc", "sd_acc", "mean_fcd", "sd_fcd", "combos"])
        for r in self.rows:
            writer.writerow([
                r.x_sigma_t, f"{r.mean_acc:.4f}", f"{r.sd_acc:.4f}",
                f"{r.mean_fcd:.4f}", f"{r.sd_fcd:.4f}", r.combos_evaluated,
            ])
        return buf.getvalue().encode("utf-8")


def choose_threshold(rows: Sequence[SweepRow], acc_slack: float) -> int:
    """Largest grid value whose mean ACC is within ``acc_slack`` of the best."""
    scored = [r for r in rows if not math.isnan(r.mean_acc)]
    if not scored:
        raise DomainError("no threshold produced an accuracy")
    best = max(r.mean_acc for r in scored)
    return max(r.x_sigma_t for r in scored if r.mean_acc >= best - acc_slack)


def sweep_threshold(
    table: FeatureTable,
    base: ExperimentConfig,
    grid: Sequence[int] = X_SIGMA_GRID,
    combos: Sequence[Combo] = ALL_COMBOS,
    selector: Optional[FeatureSelector] = None,
) -> SweepReport:
    """Average ACC and FCD over combinations for every COV threshold."""
    selector = selector or FeatureSelector(table, base.ks, base.cov_mode)
    n_total = max_feature_count(base.period)
    cache: dict[tuple[FeatureId, ...], CohortReport] = {}
    reports: dict[tuple[int, str], CohortReport] = {}
    failures: dict[str, str] = {}
    rows = []
    for x in grid:
        accs, fcds = [], []
        for combo in combos:
            try:
                sel = selector.select(Approach.KS_COV, combo, x)
            except EmptySelectionError as exc:
                failures[combo.code] = str(exc)
                continue
            fcds.append(fcd(n_total, sel.n))
            cfg = replace(base, combo=combo, approach=Approach.KS_COV, x_sigma_t=x)
            report = cache.get(sel.kept)
            if report is None:
                try:
                    report = run_cohort(table, cfg, selection=sel)
                except DomainError as exc:
                    failures[f"{combo.code}@{x}"] = str(exc)
                    continue
                cache[sel.kept] = report
            else:
                report = replace(report, combo=combo, threshold=x, selection=sel)
            reports[(x, combo.code)] = report
            accs.append(report.mean_acc)
        mean_acc, sd_acc = _mean_sd(accs)
        mean_fcd, sd_fcd = _mean_sd(fcds)
        rows.append(SweepRow(x, mean_acc, sd_acc, mean_fcd, sd_fcd, len(accs)))
        logger.info("x=%d: mean ACC %.2f, mean FCD %.2f", x, mean_acc, mean_fcd)
    try:
        chosen = choose_threshold(rows, base.acc_slack)
    except DomainError:
        chosen = None
    return SweepReport(
        period=base.period,
        rows=tuple(rows),
        chosen_threshold=chosen,
        acc_slack=base.acc_slack,
        failures=failures,
        reports=reports,
    )
