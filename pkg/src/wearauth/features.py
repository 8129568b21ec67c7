"""Time- and frequency-domain statistics of five-minute biometric windows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import (
    WINDOW_MINUTES,
    Biometric,
    Combo,
    DomainError,
    FULL_COMBO,
    Period,
    Window,
    format_timestamp,
)

FEATURE_NAMES = (
    "mu", "sigma", "var", "cov", "max", "min", "ran", "coran",
    "p25", "p50", "p75", "p95", "iqr", "coi", "mad_mu", "mad_mdn",
    "f_mu", "f_mdn", "P", "np", "E", "rms", "p2rms", "rss", "snr",
    "skew", "kurt", "a_main", "a_sec", "f_main", "f_sec",
)  # fmt: skip
N_FEATURES = len(FEATURE_NAMES)
_COL = {name: i for i, name in enumerate(FEATURE_NAMES)}

# one-sided DFT frequencies of a 5-sample window, cycles per minute
FREQS = np.arange(WINDOW_MINUTES // 2 + 1) / WINDOW_MINUTES
_TIE_RTOL = 1e-12


class FeatureId(NamedTuple):
    biometric: str  # "C", "S", "M", "H" or "LEVEL"
    name: str

    def __str__(self) -> str:
        return f"{self.biometric}:{self.name}"

    @classmethod
    def parse(cls, text: str) -> "FeatureId":
        biometric, sep, name = text.partition(":")
        if not sep:
            raise DomainError(f"bad feature id {text!r}")
        fid = cls(biometric, name)
        if fid != LEVEL_FEATURE and (
            biometric not in Biometric.__members__ or name not in _COL
        ):
            raise DomainError(f"unknown feature id {text!r}")
        return fid


LEVEL_FEATURE = FeatureId("LEVEL", "activity")


def candidate_ids(combo: Combo, period: Period) -> tuple[FeatureId, ...]:
    """All feature ids for a combination, LEVEL appended for non-sedentary."""
    ids = tuple(FeatureId(b.value, n) for b in combo.members for n in FEATURE_NAMES)
    if Period(period) is Period.NON_SEDENTARY:
        ids += (LEVEL_FEATURE,)
    return ids


def max_feature_count(period: Period) -> int:
    return len(candidate_ids(FULL_COMBO, period))


def canonical_sort(ids: Iterable[FeatureId]) -> list[FeatureId]:
    full = candidate_ids(FULL_COMBO, Period.NON_SEDENTARY)
    order = {fid: i for i, fid in enumerate(full)}
    return sorted(ids, key=order.__getitem__)


@dataclass(frozen=True)
class Spectrum:
    bins: np.ndarray  # |X[k]|, k = 0..2
    freqs: np.ndarray

    @property
    def amplitudes(self) -> np.ndarray:
        """Single-sided amplitude 2|X[k]|/n for k >= 1 (DC bin is |X[0]|/n)."""
        amp = 2.0 * self.bins / WINDOW_MINUTES
        amp[0] /= 2.0
        return amp


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.shape[0] != WINDOW_MINUTES:
        raise DomainError(f"expected {WINDOW_MINUTES} samples, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DomainError("samples must be finite")
    return x


def dft_onesided(samples: Sequence[float]) -> Spectrum:
    x = _check_samples(samples)
    return Spectrum(np.abs(np.fft.rfft(x)), FREQS.copy())


def feature_matrix(x: np.ndarray) -> np.ndarray:
    """Compute all 31 features for each row of an (m, 5) sample matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != WINDOW_MINUTES:
        raise DomainError(f"expected an (m, {WINDOW_MINUTES}) matrix, got {x.shape}")
    if not np.isfinite(x).all():
        raise DomainError("samples must be finite")
    m, n = x.shape
    out = np.zeros((m, N_FEATURES))
    if m == 0:
        return out

    flat = np.ptp(x, axis=1) == 0
    mu = x.mean(axis=1)
    mu[flat] = x[flat, 0]
    d = x - mu[:, None]
    d[flat] = 0.0

    m2 = (d**2).mean(axis=1)
    m3 = (d**3).mean(axis=1)
    m4 = (d**4).mean(axis=1)
    var = (d**2).sum(axis=1) / (n - 1)
    sigma = np.sqrt(var)
    hi, lo = x.max(axis=1), x.min(axis=1)
    ran = hi - lo
    p25, p50, p75, p95 = np.percentile(x, [25, 50, 75, 95], axis=1)
    iqr = p75 - p25
    energy = (x**2).sum(axis=1)
    rms = np.sqrt(energy / n)

    # non-DC bins are mean-independent; the centred signal keeps flat rows exactly 0
    spec = np.abs(np.fft.rfft(d, axis=1))[:, 1:]
    power = spec**2
    total = power.sum(axis=1)
    amp = 2.0 * spec / n
    f = FREQS[1:]
    # bins equal up to rounding count as tied; ties go to the lower frequency
    first_main = amp[:, 0] >= amp[:, 1] - _TIE_RTOL * amp.max(axis=1)

    def ratio(num, den):
        safe = den != 0
        return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=safe)

    inner = x[:, 1:-1]
    peaks = (inner > x[:, :-2]) & (inner > x[:, 2:])

    cols = {
        "mu": mu,
        "sigma": sigma,
        "var": var,
        "cov": ratio(sigma, np.abs(mu)),
        "max": hi,
        "min": lo,
        "ran": ran,
        "coran": ratio(ran, hi + lo),
        "p25": p25,
        "p50": p50,
        "p75": p75,
        "p95": p95,
        "iqr": iqr,
        "coi": ratio(iqr, p75 + p25),
        "mad_mu": np.abs(d).mean(axis=1),
        "mad_mdn": np.median(np.abs(x - p50[:, None]), axis=1),
        "f_mu": ratio(power @ f, total),
        "f_mdn": np.where(total == 0, 0.0, np.where(power[:, 0] >= (0.5 - _TIE_RTOL) * total, f[0], f[1])),
        "P": total / n**2,
        "np": peaks.sum(axis=1).astype(float),
        "E": energy,
        "rms": rms,
        "p2rms": ratio(np.abs(x).max(axis=1), rms),
        "rss": np.sqrt(energy),
        "snr": ratio(mu, sigma),
        "skew": ratio(m3, m2**1.5),
        "kurt": ratio(m4, m2**2),
        "a_main": np.where(first_main, amp[:, 0], amp[:, 1]),
        "a_sec": np.where(first_main, amp[:, 1], amp[:, 0]),
        "f_main": np.where(first_main, f[0], f[1]),
        "f_sec": np.where(first_main, f[1], f[0]),
    }
    for name, values in cols.items():
        out[:, _COL[name]] = values
    return out


def compute_biometric_features(samples: Sequence[float]) -> dict[str, float]:
    x = _check_samples(samples)
    row = feature_matrix(x[None, :])[0]
    return {name: float(v) for name, v in zip(FEATURE_NAMES, row)}


@dataclass(frozen=True, eq=False)
class FeatureVector:
    window_ref: tuple[str, np.datetime64]
    combo: Combo
    period: Period
    ids: tuple[FeatureId, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict[FeatureId, float]:
        return dict(zip(self.ids, map(float, self.values)))


def assemble_vector(window: Window, combo: Combo) -> FeatureVector:
    parts = [feature_matrix(window.signal(b)[None, :])[0] for b in combo.members]
    if window.period is Period.NON_SEDENTARY:
        parts.append(np.array([float(window.level)]))
    values = np.concatenate(parts)
    values.setflags(write=False)
    return FeatureVector(
        window_ref=window.key,
        combo=combo,
        period=window.period,
        ids=candidate_ids(combo, window.period),
        values=values,
    )


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Full CSMH feature matrix for all windows of one period.

    Combination vectors are column subsets of this table, so it is computed
    once per cohort and period.
    """

    period: Period
    subjects: np.ndarray
    starts: np.ndarray
    levels: np.ndarray
    ids: tuple[FeatureId, ...]
    matrix: np.ndarray

    def __len__(self) -> int:
        return len(self.subjects)

    def columns(self, ids: Sequence[FeatureId]) -> np.ndarray:
        index = {fid: i for i, fid in enumerate(self.ids)}
        try:
            cols = [index[fid] for fid in ids]
        except KeyError as exc:
            raise DomainError(f"feature {exc.args[0]} not in table") from None
        return self.matrix[:, cols]

    def column(self, fid: FeatureId) -> np.ndarray:
        return self.columns([fid])[:, 0]

    @property
    def subject_ids(self) -> list[str]:
        return sorted(set(self.subjects.tolist()))

    def rows_of(self, subject: str) -> np.ndarray:
        return np.flatnonzero(self.subjects == subject)

    def restrict(self, rows) -> "FeatureTable":
        return FeatureTable(
            self.period,
            self.subjects[rows],
            self.starts[rows],
            self.levels[rows],
            self.ids,
            self.matrix[rows],
        )

    def to_csv(self, ids: Sequence[FeatureId] | None = None) -> bytes:
        ids = list(self.ids if ids is None else ids)
        data = self.columns(ids)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject", "start", "level"] + [str(f) for f in ids])
        for i in range(len(self)):
            writer.writerow(
                [self.subjects[i], format_timestamp(self.starts[i]), int(self.levels[i])]
                + [repr(float(v)) for v in data[i]]
            )
        return buf.getvalue().encode("utf-8")


def featurize(windows: Sequence[Window], period: Period) -> FeatureTable:
    """Build the feature table for the windows belonging to ``period``."""
    period = Period(period)
    windows = [w for w in windows if w.period is period]
    ids = candidate_ids(FULL_COMBO, period)
    m = len(windows)
    if m:
        stack = np.stack([w.values for w in windows])  # (m, 5, 4)
        blocks = [feature_matrix(stack[:, :, b.column]) for b in FULL_COMBO.members]
        levels = np.array([int(w.level) for w in windows], dtype=np.int8)
        if period is Period.NON_SEDENTARY:
            blocks.append(levels[:, None].astype(float))
        matrix = np.hstack(blocks)
    else:
        levels = np.zeros(0, dtype=np.int8)
        matrix = np.zeros((0, len(ids)))
    if not np.isfinite(matrix).all():
        raise DomainError("non-finite feature value")
    return FeatureTable(
        period=period,
        subjects=np.array([w.subject for w in windows], dtype=object),
        starts=np.array([w.start for w in windows], dtype="datetime64[m]"),
        levels=levels,
        ids=ids,
        matrix=matrix,
    )
