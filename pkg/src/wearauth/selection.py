"""Feature selection: pairwise two-sample KS screening and COV thresholding."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import Combo, DomainError, Period
from .features import FeatureId, FeatureTable, candidate_ids, canonical_sort

X_SIGMA_GRID = tuple(range(10, 100, 10))
MIN_KS_SAMPLES = 5
SELECTION_FORMAT = "wearauth.selection"


class Approach(str, Enum):
    KS = "ks"
    KS_COV = "ks-cov"

    @property
    def label(self) -> str:
        """Row label used in summary tables."""
        return "KS" if self is Approach.KS else "COV"


class EmptySelectionError(DomainError):
    """No feature survived selection."""


@dataclass(frozen=True)
class KsConfig:
    alpha: float = 0.05
    reject_fraction: float = 0.5
    max_pairs: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.reject_fraction <= 1:
            raise DomainError(f"reject_fraction must lie in (0, 1], got {self.reject_fraction}")
        if self.max_pairs < 1:
            raise DomainError("max_pairs must be positive")


@dataclass(frozen=True)
class CovConfig:
    x_sigma_t: int = 30

    def __post_init__(self):
        if self.x_sigma_t not in X_SIGMA_GRID:
            raise DomainError(f"x_sigma_t must be one of {X_SIGMA_GRID}, got {self.x_sigma_t}")


@dataclass(frozen=True)
class SelectionResult:
    period: Optional[Period]
    combo: Optional[Combo]
    approach: Approach
    kept: tuple[FeatureId, ...]
    threshold: Optional[int] = None
    per_feature_cov: Mapping[FeatureId, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.kept)

    def to_json(self) -> str:
        doc = {
            "format": SELECTION_FORMAT,
            "version": 1,
            "approach": self.approach.value,
            "period": None if self.period is None else int(self.period),
            "combo": None if self.combo is None else self.combo.code,
            "threshold": self.threshold,
            "n": self.n,
            "kept": [str(f) for f in self.kept],
            "cov": {str(f): self.per_feature_cov[f] for f in self.kept if f in self.per_feature_cov},
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        doc = json.loads(text)
        if doc.get("format") != SELECTION_FORMAT:
            raise DomainError("not a selection file")
        return cls(
            period=None if doc["period"] is None else Period(doc["period"]),
            combo=None if doc["combo"] is None else Combo.parse(doc["combo"]),
            approach=Approach(doc["approach"]),
            kept=tuple(FeatureId.parse(f) for f in doc["kept"]),
            threshold=doc["threshold"],
            per_feature_cov={FeatureId.parse(k): v for k, v in doc["cov"].items()},
        )


class KsResult(NamedTuple):
    D: float
    p: float


def kolmogorov_q(lam: float) -> float:
    """Survival function of the Kolmogorov distribution, Q(lam) = P(K > lam).

    Uses the alternating series for lam >= 1 and the equivalent theta-function
    form below that, where the alternating series converges slowly.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        s = sum(
            math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8 * lam * lam))
            for j in range(1, 8)
        )
        q = 1.0 - math.sqrt(2 * math.pi) / lam * s
    else:
        q = 2.0 * sum(
            (-1) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam) for j in range(1, 101)
        )
    return min(1.0, max(0.0, q))


def _ks_statistic(a_sorted: np.ndarray, b_sorted: np.ndarray) -> float:
    pooled = np.concatenate((a_sorted, b_sorted))
    fa = np.searchsorted(a_sorted, pooled, side="right") / len(a_sorted)
    fb = np.searchsorted(b_sorted, pooled, side="right") / len(b_sorted)
    return float(np.max(np.abs(fa - fb)))


def _ks_pvalue(d: float, na: int, nb: int) -> float:
    ne = na * nb / (na + nb)
    sq = math.sqrt(ne)
    return kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KsResult:
    """Two-sample KS statistic with the asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) < MIN_KS_SAMPLES or len(b) < MIN_KS_SAMPLES:
        raise DomainError(f"KS test needs at least {MIN_KS_SAMPLES} samples per side")
    d = _ks_statistic(a, b)
    return KsResult(d, _ks_pvalue(d, len(a), len(b)))


def subject_pairs(subjects: Sequence[str], max_pairs: int, seed: int) -> list[tuple[str, str]]:
    """All subject pairs, or a seeded sample of ``max_pairs`` of them."""
    pairs = list(itertools.combinations(sorted(subjects), 2))
    if len(pairs) <= max_pairs:
        return pairs
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
    return [pairs[i] for i in pick]


def _eligible_subjects(table: FeatureTable) -> list[str]:
    subjects = [s for s in table.subject_ids if len(table.rows_of(s)) >= MIN_KS_SAMPLES]
    if len(subjects) < 2:
        raise DomainError("KS screening needs at least two subjects with 5+ windows")
    return subjects


def ks_reject_fractions(
    table: FeatureTable, ids: Sequence[FeatureId], cfg: KsConfig
) -> dict[FeatureId, float]:
    """Fraction of subject pairs whose KS p-value is <= alpha, per feature."""
    subjects = _eligible_subjects(table)
    pairs = subject_pairs(subjects, cfg.max_pairs, cfg.seed)
    rows = {s: table.rows_of(s) for s in subjects}
    data = table.columns(ids)
    out = {}
    for k, fid in enumerate(ids):
        col = data[:, k]
        sorted_by_subject = {s: np.sort(col[r]) for s, r in rows.items()}
        rejected = 0
        for s1, s2 in pairs:
            a, b = sorted_by_subject[s1], sorted_by_subject[s2]
            if _ks_pvalue(_ks_statistic(a, b), len(a), len(b)) <= cfg.alpha:
                rejected += 1
        out[fid] = rejected / len(pairs)
    return out


def ks_screen(
    table: FeatureTable, cfg: KsConfig, ids: Optional[Sequence[FeatureId]] = None
) -> list[FeatureId]:
    """Keep features on which most subject pairs reject the same-distribution null."""
    ids = list(table.ids if ids is None else ids)
    fractions = ks_reject_fractions(table, ids, cfg)
    return [fid for fid in ids if fractions[fid] >= cfg.reject_fraction]


def cov_rank(
    table: FeatureTable, candidates: Sequence[FeatureId], mode: str = "subject"
) -> dict[FeatureId, float]:
    """Coefficient of variation of each candidate feature across subjects.

    ``mode="subject"`` takes the sample std of per-subject feature means over
    their mean; ``mode="pooled"`` uses all windows directly.
    """
    if not candidates:
        raise DomainError("cov_rank needs at least one candidate feature")
    data = table.columns(candidates)
    if mode == "subject":
        subjects = table.subject_ids
        if len(subjects) < 2:
            raise DomainError("cov_rank needs at least two subjects")
        values = np.stack([data[table.rows_of(s)].mean(axis=0) for s in subjects])
    elif mode == "pooled":
        values = data
    else:
        raise DomainError(f"unknown cov mode {mode!r}")
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    cov = np.divide(std, np.abs(mean), out=np.zeros_like(std), where=mean != 0)
    return dict(zip(candidates, map(float, cov)))


def cov_select(
    covs: Mapping[FeatureId, float],
    cfg: CovConfig,
    *,
    period: Optional[Period] = None,
    combo: Optional[Combo] = None,
) -> SelectionResult:
    if not covs:
        raise DomainError("cov_select needs at least one feature")
    threshold = cfg.x_sigma_t / 100 * max(covs.values())
    kept = [f for f, c in covs.items() if c > threshold]
    # stable sort: canonical order first, then descending cov
    kept = sorted(canonical_sort(kept), key=lambda f: -covs[f])
    return SelectionResult(
        period=period,
        combo=combo,
        approach=Approach.KS_COV,
        kept=tuple(kept),
        threshold=cfg.x_sigma_t,
        per_feature_cov=dict(covs),
    )


class FeatureSelector:
    """Caches per-feature KS and COV statistics of one feature table.

    Both statistics depend only on the feature column, so one screen of the
    full CSMH table serves every combination and threshold.
    """

    def __init__(self, table: FeatureTable, ks_cfg: KsConfig = KsConfig(), cov_mode: str = "subject"):
        self.table = table
        self.ks_cfg = ks_cfg
        self.cov_mode = cov_mode
        self._fractions = ks_reject_fractions(table, table.ids, ks_cfg)
        self.ks_kept = [f for f in table.ids if self._fractions[f] >= ks_cfg.reject_fraction]
        self._covs = cov_rank(table, self.ks_kept, cov_mode) if self.ks_kept else {}

    def reject_fraction(self, fid: FeatureId) -> float:
        return self._fractions[fid]

    def select(
        self, approach: Approach, combo: Combo, x_sigma_t: Optional[int] = None
    ) -> SelectionResult:
        approach = Approach(approach)
        period = self.table.period
        allowed = set(candidate_ids(combo, period))
        survivors = [f for f in self.ks_kept if f in allowed]
        if not survivors:
            raise EmptySelectionError(
                f"no significant feature for combo {combo} in period {int(period)}"
            )
        if approach is Approach.KS:
            return SelectionResult(period, combo, approach, tuple(survivors))
        covs = {f: self._covs[f] for f in survivors}
        result = cov_select(covs, CovConfig(x_sigma_t if x_sigma_t is not None else 30),
                            period=period, combo=combo)
        if not result.kept:
            raise EmptySelectionError(
                f"no feature above the cov threshold for combo {combo} in period {int(period)}"
            )
        return result


def select(
    approach: Approach,
    period: Period,
    combo: Combo,
    table: FeatureTable,
    ks_cfg: KsConfig = KsConfig(),
    cov_cfg: CovConfig = CovConfig(),
    cov_mode: str = "subject",
) -> SelectionResult:
    if table.period is not Period(period):
        raise DomainError("feature table belongs to a different period")
    restricted = FeatureTable(
        table.period, table.subjects, table.starts, table.levels,
        candidate_ids(combo, period), table.columns(candidate_ids(combo, period)),
    )
    selector = FeatureSelector(restricted, ks_cfg, cov_mode)
    return selector.select(approach, combo, cov_cfg.x_sigma_t)
