"""Seeded synthetic cohort of minute-level wearable streams.

Each subject gets a physiological profile drawn around a shared base profile;
``subject_separation`` scales how far profiles spread, so 0 yields
statistically identical subjects.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .core import DomainError, SubjectStream, to_csv

DEFAULT_TRANSITIONS = (
    (0.0, 0.5, 0.3, 0.2),
    (0.5, 0.0, 0.3, 0.2),
    (0.4, 0.3, 0.0, 0.3),
    (0.5, 0.2, 0.3, 0.0),
)
DEFAULT_DWELL = (45.0, 20.0, 20.0, 20.0)


@dataclass(frozen=True)
class SubjectProfile:
    resting_hr: float
    hr_gain: float
    cadence: tuple[float, float, float, float]  # steps/min per level
    bmr_per_min: float
    met_gain: float
    noise_ar1: float
    noise_sd: dict[str, float]

    def __post_init__(self):
        if self.cadence[0] != 0:
            raise DomainError("sedentary cadence must be 0")
        if not 45 <= self.resting_hr <= 100:
            raise DomainError(f"resting_hr {self.resting_hr} outside [45, 100]")
        if not 0 <= self.noise_ar1 < 1:
            raise DomainError("noise_ar1 must lie in [0, 1)")


@dataclass(frozen=True)
class CohortConfig:
    n_subjects: int = 20
    days: float = 14
    level_transition_matrix: tuple[tuple[float, ...], ...] = DEFAULT_TRANSITIONS
    mean_dwell_minutes: tuple[float, ...] = DEFAULT_DWELL
    wear_gap_rate: float = 0.05
    mean_gap_minutes: float = 30.0
    seed: int = 0
    subject_separation: float = 0.8
    start: str = "2016-01-04T00:00"

    def __post_init__(self):
        P = np.asarray(self.level_transition_matrix, dtype=float)
        if P.shape != (4, 4):
            raise DomainError("level_transition_matrix must be 4x4")
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise DomainError("level_transition_matrix rows must be non-negative and sum to 1")
        dwell = np.asarray(self.mean_dwell_minutes, dtype=float)
        if dwell.shape != (4,) or (dwell < 1).any():
            raise DomainError("mean_dwell_minutes needs four values >= 1")
        if not (dwell >= 5).any():
            raise DomainError("at least one level needs a mean dwell of 5+ minutes")
        if not 0 <= self.wear_gap_rate < 1:
            raise DomainError("wear_gap_rate must lie in [0, 1)")
        if not 0 <= self.subject_separation <= 1:
            raise DomainError("subject_separation must lie in [0, 1]")
        if self.n_subjects < 0 or self.days <= 0:
            raise DomainError("n_subjects must be >= 0 and days > 0")
        object.__setattr__(
            self, "level_transition_matrix", tuple(tuple(map(float, r)) for r in P)
        )
        object.__setattr__(self, "mean_dwell_minutes", tuple(map(float, dwell)))

    @property
    def minutes(self) -> int:
        return int(round(self.days * 24 * 60))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_transition_matrix"] = [list(r) for r in self.level_transition_matrix]
        d["mean_dwell_minutes"] = list(self.mean_dwell_minutes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown cohort settings: {sorted(unknown)}")
        d = dict(d)
        if "level_transition_matrix" in d:
            d["level_transition_matrix"] = tuple(tuple(r) for r in d["level_transition_matrix"])
        if "mean_dwell_minutes" in d:
            d["mean_dwell_minutes"] = tuple(d["mean_dwell_minutes"])
        return cls(**d)


# base value, spread at separation 1
_PROFILE_SPREAD = {
    "resting_hr": (70.0, 25.0),
    "hr_gain": (14.0, 8.0),
    "cadence_light": (35.0, 15.0),
    "cadence_fair": (75.0, 20.0),
    "cadence_high": (110.0, 20.0),
    "bmr_per_min": (1.25, 0.6),
    "met_gain": (1.6, 0.8),
    "noise_ar1": (0.5, 0.3),
    "sd_hr": (4.0, 1.0),
    "sd_steps": (8.0, 2.0),
    "sd_met": (0.2, 0.05),
    "sd_cal": (0.1, 0.025),
}


def draw_profile(rng: np.random.Generator, separation: float) -> SubjectProfile:
    u = rng.uniform(-1.0, 1.0, size=len(_PROFILE_SPREAD))
    p = {k: base + separation * spread * ui for (k, (base, spread)), ui in zip(_PROFILE_SPREAD.items(), u)}
    return SubjectProfile(
        resting_hr=p["resting_hr"],
        hr_gain=p["hr_gain"],
        cadence=(0.0, p["cadence_light"], p["cadence_fair"], p["cadence_high"]),
        bmr_per_min=p["bmr_per_min"],
        met_gain=p["met_gain"],
        noise_ar1=p["noise_ar1"],
        noise_sd={"hr": p["sd_hr"], "steps": p["sd_steps"], "met": p["sd_met"], "cal": p["sd_cal"]},
    )


def simulate_levels(rng: np.random.Generator, cfg: CohortConfig) -> np.ndarray:
    """Semi-Markov activity-level path with geometric dwell times."""
    n = cfg.minutes
    P = np.asarray(cfg.level_transition_matrix)
    out = np.empty(n, dtype=np.int8)
    state = int(rng.integers(4))
    t = 0
    while t < n:
        dwell = int(rng.geometric(1.0 / cfg.mean_dwell_minutes[state]))
        out[t : t + dwell] = state
        t += dwell
        state = int(rng.choice(4, p=P[state]))
    return out


def _ar1(rng: np.random.Generator, n: int, phi: float, sd: float) -> np.ndarray:
    z = rng.standard_normal(n) * sd * np.sqrt(1.0 - phi * phi)
    return lfilter([1.0], [1.0, -phi], z)


def _wear_mask(rng: np.random.Generator, cfg: CohortConfig) -> np.ndarray:
    """True where the device is worn; gaps are contiguous blocks."""
    n = cfg.minutes
    worn = np.ones(n, dtype=bool)
    if cfg.wear_gap_rate == 0:
        return worn
    mean_gap = cfg.mean_gap_minutes
    mean_worn = mean_gap * (1 - cfg.wear_gap_rate) / cfg.wear_gap_rate
    t = int(rng.geometric(1.0 / mean_worn))
    while t < n:
        gap = int(rng.geometric(1.0 / mean_gap))
        worn[t : t + gap] = False
        t += gap + int(rng.geometric(1.0 / mean_worn))
    return worn


def simulate_subject(
    subject: str, rng: np.random.Generator, cfg: CohortConfig, profile: Optional[SubjectProfile] = None
) -> SubjectStream:
    profile = profile or draw_profile(rng, cfg.subject_separation)
    n = cfg.minutes
    level = simulate_levels(rng, cfg)
    phi, sd = profile.noise_ar1, profile.noise_sd

    hr = profile.resting_hr + profile.hr_gain * level + _ar1(rng, n, phi, sd["hr"])
    hr = np.clip(np.round(hr), 30, 220)

    cadence = np.asarray(profile.cadence)[level]
    steps = np.where(level > 0, np.round(cadence + _ar1(rng, n, phi, sd["steps"])), 0)
    steps = np.maximum(steps, 0).astype(np.int64)

    met = 1.0 + profile.met_gain * level + _ar1(rng, n, phi, sd["met"])
    met = np.round(np.maximum(met, 1.0), 2)

    calories = profile.bmr_per_min * met + _ar1(rng, n, phi, sd["cal"])
    calories = np.round(np.maximum(calories, 0.0), 4)

    hr[~_wear_mask(rng, cfg)] = np.nan
    start = np.datetime64(cfg.start, "m")
    return SubjectStream(subject, start + np.arange(n), hr, calories, steps, met, level)


def subject_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"s{k + 1:0{width}d}" for k in range(n)]


def generate_cohort(cfg: CohortConfig, profiles: Optional[Sequence[SubjectProfile]] = None) -> list[SubjectStream]:
    """Simulate ``cfg.n_subjects`` independent subjects.

    Every subject draws from its own child of ``SeedSequence(cfg.seed)``, so
    one subject's draws never perturb another's.
    """
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_subjects)
    streams = []
    for k, (sid, seq) in enumerate(zip(subject_ids(cfg.n_subjects), children)):
        profile = None if profiles is None else profiles[k]
        streams.append(simulate_subject(sid, np.random.default_rng(seq), cfg, profile))
    return streams


def export_csv(streams: Sequence[SubjectStream], comment: str = "") -> bytes:
    return to_csv(streams, comment)
