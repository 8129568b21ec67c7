"""Domain types, CSV ingestion, invalid-wear filtering and window segmentation.

Minute-level streams are held column-wise (one numpy array per signal) since a
two-week cohort easily reaches hundreds of thousands of minutes.  Per-record
views (:class:`MinuteRecord`) are materialised on demand.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum, IntEnum
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

WINDOW_MINUTES = 5

CSV_COLUMNS = (
    "subject_id",
    "timestamp",
    "heart_rate",
    "calories",
    "steps",
    "met",
    "activity_level",
)


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ParseError(ValueError):
    """Malformed CSV row."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConflictError(ValueError):
    """Two rows claim the same (subject, timestamp)."""


class ActivityLevel(IntEnum):
    SEDENTARY = 0
    LIGHT = 1
    FAIR = 2
    HIGH = 3


class Period(IntEnum):
    SEDENTARY = 0
    NON_SEDENTARY = 1

    @classmethod
    def of_level(cls, level: int) -> "Period":
        return cls.SEDENTARY if int(level) == 0 else cls.NON_SEDENTARY

    @property
    def levels(self) -> tuple[ActivityLevel, ...]:
        if self is Period.SEDENTARY:
            return (ActivityLevel.SEDENTARY,)
        return (ActivityLevel.LIGHT, ActivityLevel.FAIR, ActivityLevel.HIGH)


class Biometric(str, Enum):
    """Per-minute signals, in canonical order C, S, M, H."""

    C = "C"  # calorie burn
    S = "S"  # step count
    M = "M"  # metabolic equivalent
    H = "H"  # heart rate

    @property
    def column(self) -> int:
        """Column of this signal in :attr:`Window.values`."""
        return _BIOMETRIC_ORDER.index(self)


_BIOMETRIC_ORDER = (Biometric.C, Biometric.S, Biometric.M, Biometric.H)


@dataclass(frozen=True)
class Combo:
    """Non-empty set of biometrics, stored in canonical order."""

    members: tuple[Biometric, ...]

    def __post_init__(self):
        members = tuple(Biometric(m) for m in self.members)
        if not members:
            raise DomainError("a biometric combination needs at least one member")
        if len(set(members)) != len(members):
            raise DomainError(f"duplicate biometric in {members}")
        object.__setattr__(
            self, "members", tuple(sorted(members, key=_BIOMETRIC_ORDER.index))
        )

    @classmethod
    def parse(cls, text: str) -> "Combo":
        text = text.strip().upper()
        try:
            return cls(tuple(Biometric(ch) for ch in text))
        except ValueError as exc:
            raise DomainError(f"invalid biometric combination {text!r}") from exc

    @property
    def code(self) -> str:
        return "".join(m.value for m in self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __str__(self) -> str:
        return self.code


ALL_COMBOS: tuple[Combo, ...] = tuple(
    Combo(c)
    for r in range(1, 5)
    for c in itertools.combinations(_BIOMETRIC_ORDER, r)
)
FULL_COMBO = ALL_COMBOS[-1]


@dataclass(frozen=True)
class MinuteRecord:
    subject: str
    timestamp: datetime
    heart_rate: Optional[float]
    calories: float
    steps: int
    met: float
    level: ActivityLevel


@dataclass(frozen=True, eq=False)
class SubjectStream:
    """Time-sorted minute records of one subject, stored column-wise.

    ``heart_rate`` uses NaN for an absent reading.  ``minutes`` is
    ``datetime64[m]`` in UTC.
    """

    subject: str
    minutes: np.ndarray
    heart_rate: np.ndarray
    calories: np.ndarray
    steps: np.ndarray
    met: np.ndarray
    level: np.ndarray

    def __post_init__(self):
        cols = {
            "minutes": np.asarray(self.minutes, dtype="datetime64[m]"),
            "heart_rate": np.asarray(self.heart_rate, dtype=float),
            "calories": np.asarray(self.calories, dtype=float),
            "steps": np.asarray(self.steps, dtype=np.int64),
            "met": np.asarray(self.met, dtype=float),
            "level": np.asarray(self.level, dtype=np.int8),
        }
        n = len(cols["minutes"])
        for name, arr in cols.items():
            if arr.shape != (n,):
                raise DomainError(f"column {name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n > 1 and not np.all(np.diff(cols["minutes"].astype(np.int64)) > 0):
            raise DomainError(f"timestamps of subject {self.subject} are not strictly increasing")
        if n and not np.isin(cols["level"], (0, 1, 2, 3)).all():
            raise DomainError("unknown activity level code")

    def __len__(self) -> int:
        return len(self.minutes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubjectStream):
            return NotImplemented
        return self.subject == other.subject and all(
            np.array_equal(getattr(self, f), getattr(other, f), equal_nan=f == "heart_rate")
            for f in ("minutes", "heart_rate", "calories", "steps", "met", "level")
        )

    @property
    def worn(self) -> np.ndarray:
        return ~np.isnan(self.heart_rate)

    @property
    def records(self) -> list[MinuteRecord]:
        return [self.record(i) for i in range(len(self))]

    def record(self, i: int) -> MinuteRecord:
        hr = self.heart_rate[i]
        return MinuteRecord(
            subject=self.subject,
            timestamp=_to_datetime(self.minutes[i]),
            heart_rate=None if np.isnan(hr) else float(hr),
            calories=float(self.calories[i]),
            steps=int(self.steps[i]),
            met=float(self.met[i]),
            level=ActivityLevel(int(self.level[i])),
        )

    def take(self, mask_or_index) -> "SubjectStream":
        return SubjectStream(
            self.subject,
            self.minutes[mask_or_index],
            self.heart_rate[mask_or_index],
            self.calories[mask_or_index],
            self.steps[mask_or_index],
            self.met[mask_or_index],
            self.level[mask_or_index],
        )

    @classmethod
    def from_records(cls, records: Sequence[MinuteRecord]) -> "SubjectStream":
        if not records:
            raise DomainError("cannot build a stream from zero records")
        subjects = {r.subject for r in records}
        if len(subjects) != 1:
            raise DomainError(f"records span several subjects: {sorted(subjects)}")
        return cls(
            records[0].subject,
            np.array([_to_minute(r.timestamp) for r in records], dtype="datetime64[m]"),
            np.array([np.nan if r.heart_rate is None else r.heart_rate for r in records]),
            np.array([r.calories for r in records]),
            np.array([r.steps for r in records], dtype=np.int64),
            np.array([r.met for r in records]),
            np.array([int(r.level) for r in records], dtype=np.int8),
        )


@dataclass(frozen=True, eq=False)
class Window:
    """Five consecutive worn minutes at one activity level.

    ``values`` has shape (5, 4); columns follow the canonical C, S, M, H order.
    """

    subject: str
    start: np.datetime64
    level: ActivityLevel
    values: np.ndarray

    @property
    def period(self) -> Period:
        return Period.of_level(self.level)

    @property
    def key(self) -> tuple[str, np.datetime64]:
        return (self.subject, self.start)

    def signal(self, biometric: Biometric) -> np.ndarray:
        return self.values[:, Biometric(biometric).column]

    @property
    def samples(self) -> list[MinuteRecord]:
        return [
            MinuteRecord(
                subject=self.subject,
                timestamp=_to_datetime(self.start + np.timedelta64(i, "m")),
                heart_rate=float(row[3]),
                calories=float(row[0]),
                steps=int(row[1]),
                met=float(row[2]),
                level=self.level,
            )
            for i, row in enumerate(self.values)
        ]


def _to_datetime(minute: np.datetime64) -> datetime:
    seconds = int(minute.astype("datetime64[m]").astype(np.int64)) * 60
    return datetime.fromtimestamp(seconds, tz=timezone.utc)


def _to_minute(ts: datetime) -> np.datetime64:
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(ts.replace(second=0, microsecond=0), "m")


def format_timestamp(minute: np.datetime64) -> str:
    return str(np.datetime64(minute, "m")) + "Z"


def _parse_timestamp(text: str, line: int) -> tuple[np.datetime64, bool]:
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ParseError(line, f"bad timestamp {text!r}") from exc
    truncated = ts.second != 0 or ts.microsecond != 0
    return _to_minute(ts), truncated


def _parse_float(text: str, field: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(line, f"bad {field} value {text!r}") from exc
    if not np.isfinite(value):
        raise ParseError(line, f"non-finite {field} value {text!r}")
    return value


Source = Union[bytes, str, IO[str], IO[bytes]]


def ingest_csv(source: Source, schema: Optional[Mapping[str, str]] = None) -> list[SubjectStream]:
    """Parse a minute-level CSV export into one stream per subject.

    ``schema`` maps canonical column names (see ``CSV_COLUMNS``) to the
    header names used in ``source``; unmapped names are looked up verbatim.
    Columns not in the schema (sleep status, labels, ...) and lines starting
    with ``#`` are ignored.  Streams are returned sorted by subject id.
    """
    text = _read_text(source)
    schema = dict(schema or {})
    # comment lines are blanked rather than dropped so line numbers stay true
    lines = ["" if ln.startswith("#") else ln for ln in text.split("\n")]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = []
    for row in reader:
        if any(c.strip() for c in row):
            header = [h.strip() for h in row]
            break
    if not header:
        raise ParseError(1, "missing header")
    idx = {}
    for name in CSV_COLUMNS:
        col = schema.get(name, name)
        if col not in header:
            raise ParseError(1, f"missing column {col!r}")
        idx[name] = header.index(col)

    rows: dict[str, list[tuple]] = {}
    truncated = 0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
        get = lambda name: row[idx[name]].strip()  # noqa: E731
        subject = get("subject_id")
        if not subject:
            raise ParseError(line, "empty subject_id")
        minute, was_truncated = _parse_timestamp(get("timestamp"), line)
        truncated += was_truncated
        hr_text = get("heart_rate")
        hr = np.nan if hr_text == "" else _parse_float(hr_text, "heart_rate", line)
        if hr_text and hr <= 0:
            raise DomainError(f"line {line}: heart_rate must be positive, got {hr_text}")
        calories = _parse_float(get("calories"), "calories", line)
        met = _parse_float(get("met"), "met", line)
        steps_value = _parse_float(get("steps"), "steps", line)
        if calories < 0 or met < 0:
            raise DomainError(f"line {line}: calories and met must be non-negative")
        if steps_value < 0 or steps_value != int(steps_value):
            raise DomainError(f"line {line}: steps must be a non-negative integer, got {get('steps')}")
        level_text = get("activity_level")
        try:
            level = int(level_text)
        except ValueError as exc:
            raise ParseError(line, f"bad activity_level {level_text!r}") from exc
        if level not in (0, 1, 2, 3):
            raise DomainError(f"line {line}: unknown activity level {level}")
        rows.setdefault(subject, []).append(
            (minute, hr, calories, int(steps_value), met, level, line)
        )

    if truncated:
        logger.warning("truncated %d timestamps to minute resolution", truncated)

    streams = []
    for subject in sorted(rows):
        recs = sorted(rows[subject], key=lambda r: r[0])
        for prev, cur in zip(recs, recs[1:]):
            if prev[0] == cur[0]:
                raise ConflictError(
                    f"duplicate timestamp {format_timestamp(cur[0])} for subject "
                    f"{subject} (lines {prev[6]} and {cur[6]})"
                )
        cols = list(zip(*recs))
        streams.append(SubjectStream(subject, *cols[:6]))
    return streams


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def _fmt_float(x: float) -> str:
    return repr(float(x))


def to_csv(streams: Iterable[SubjectStream], comment: str = "") -> bytes:
    """Serialise streams to the ingest schema; ``ingest_csv`` inverts this."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in streams:
        stamps = [format_timestamp(m) for m in s.minutes]
        for i in range(len(s)):
            hr = s.heart_rate[i]
            writer.writerow(
                (
                    s.subject,
                    stamps[i],
                    "" if np.isnan(hr) else _fmt_float(hr),
                    _fmt_float(s.calories[i]),
                    int(s.steps[i]),
                    _fmt_float(s.met[i]),
                    int(s.level[i]),
                )
            )
    return buf.getvalue().encode("utf-8")


def filter_invalid_wear(stream: SubjectStream) -> SubjectStream:
    """Drop minutes without a heart-rate reading (device not worn)."""
    worn = stream.worn
    if worn.all():
        return stream
    return stream.take(worn)


def segment_windows(stream: SubjectStream) -> list[Window]:
    """Tile each same-level run of consecutive minutes into 5-minute windows.

    A run ends at a level change or a missing minute.  Windows are anchored at
    the first minute of the run and do not overlap; a trailing remainder
    shorter than five minutes is discarded.
    """
    n = len(stream)
    if n and not stream.worn.all():
        raise DomainError("segment_windows expects a wear-filtered stream")
    if n < WINDOW_MINUTES:
        return []
    t = stream.minutes.astype(np.int64)
    level = stream.level
    breaks = np.flatnonzero((np.diff(t) != 1) | (np.diff(level) != 0)) + 1
    run_starts = np.concatenate(([0], breaks))
    run_ends = np.concatenate((breaks, [n]))

    values = np.column_stack(
        (stream.calories, stream.steps.astype(float), stream.met, stream.heart_rate)
    )
    windows = []
    for start, end in zip(run_starts, run_ends):
        for w in range(start, end - WINDOW_MINUTES + 1, WINDOW_MINUTES):
            block = values[w : w + WINDOW_MINUTES].copy()
            block.setflags(write=False)
            windows.append(
                Window(
                    subject=stream.subject,
                    start=stream.minutes[w],
                    level=ActivityLevel(int(level[w])),
                    values=block,
                )
            )
    return windows


def partition_by_period(windows: Iterable[Window]) -> tuple[list[Window], list[Window]]:
    sedentary, active = [], []
    for w in windows:
        (sedentary if w.level == ActivityLevel.SEDENTARY else active).append(w)
    return sedentary, active
