"""Glue between the stages: streams -> windows -> feature tables -> reports."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

from .core import Combo, DomainError, Period, SubjectStream, filter_invalid_wear, partition_by_period, segment_windows
from .evaluation import CohortReport, ExperimentConfig, run_cohort
from .features import FeatureTable, featurize
from .selection import FeatureSelector

logger = logging.getLogger(__name__)


def windows_of(streams: Sequence[SubjectStream]):
    windows = []
    for stream in streams:
        windows.extend(segment_windows(filter_invalid_wear(stream)))
    return windows


def feature_table(streams: Sequence[SubjectStream], period: Period) -> FeatureTable:
    sedentary, active = partition_by_period(windows_of(streams))
    return featurize(sedentary if Period(period) is Period.SEDENTARY else active, period)


def run_combos(
    table: FeatureTable,
    cfg: ExperimentConfig,
    combos: Sequence[Combo],
    selector: FeatureSelector | None = None,
) -> tuple[list[CohortReport], dict[str, str]]:
    """Run ``cfg`` for each combination; failures are collected, not raised."""
    selector = selector or FeatureSelector(table, cfg.ks, cfg.cov_mode)
    reports, failures = [], {}
    for combo in combos:
        combo_cfg = replace(cfg, combo=combo)
        try:
            reports.append(run_cohort(table, combo_cfg, selector=selector))
        except DomainError as exc:  # includes EmptySelectionError
            failures[combo.code] = str(exc)
        else:
            r = reports[-1]
            logger.info("%s: n=%d N=%d ACC %.2f", combo.code, r.n, r.N, r.mean_acc)
    return reports, failures
