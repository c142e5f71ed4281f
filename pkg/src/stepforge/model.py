"""Core domain types shared across the pipeline.

Everything downstream (ingestion, detectors, summaries, validity screening,
survival analysis) passes these types around.  They are deliberately plain:
frozen dataclasses with eager validation, no behavior beyond small derived
properties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

#: Sentinel used by minute-level files for an invalid/unusable MIMS minute.
MIMS_INVALID = -0.01

MINUTES_PER_DAY = 1440

#: Ages at or above this value are stored topcoded.
AGE_TOPCODE = 80.0


class WearState(Enum):
    """Per-minute wear classification."""

    WAKE_WEAR = "wake"
    SLEEP_WEAR = "sleep"
    NON_WEAR = "nonwear"
    UNKNOWN = "unknown"

    @property
    def counts_as_wear(self) -> bool:
        # Unknown minutes count as wear for validity arithmetic.
        return self is not WearState.NON_WEAR


#: Row/column order used for wear-state transition tables.
TRANSITION_STATE_ORDER = (
    WearState.UNKNOWN,
    WearState.NON_WEAR,
    WearState.SLEEP_WEAR,
    WearState.WAKE_WEAR,
)


@dataclass(frozen=True)
class TriaxialRecording:
    """A chunk of raw triaxial acceleration, in g, at a fixed sampling rate.

    Axes are stored as separate arrays so per-axis pipelines (activity
    counts, MIMS) never pay for a transpose.  Timestamps are optional; when
    present they carry timezone-free local semantics.
    """

    subject_id: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sample_rate_hz: float = 80.0
    start_timestamp: datetime | None = None

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if not (self.x.ndim == self.y.ndim == self.z.ndim == 1):
            raise ValueError("axis arrays must be one-dimensional")
        if not (len(self.x) == len(self.y) == len(self.z)):
            raise ValueError("x, y, z must have equal length")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        for name in ("x", "y", "z"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite samples in axis {name}")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def duration_seconds(self) -> float:
        return len(self.x) / self.sample_rate_hz


@dataclass(frozen=True)
class MinuteRecord:
    """One subject-minute: wear state, quality flag, and activity measures.

    ``steps`` maps detector name to a nonnegative per-minute step value.
    ``mims`` may carry the :data:`MIMS_INVALID` sentinel; a sentinel minute
    never counts as nonzero activity and contributes zero to totals.
    """

    subject_id: str
    day_index: int
    minute_of_day: int
    wear: WearState
    quality_flagged: bool = False
    mims: float = 0.0
    ac: int = 0
    steps: Mapping[str, float] = field(default_factory=dict)
    effective_wear: bool | None = None

    def __post_init__(self) -> None:
        if self.day_index < 1:
            raise ValueError("day_index starts at 1")
        if not 0 <= self.minute_of_day <= 1439:
            raise ValueError("minute_of_day must lie in [0, 1439]")
        if self.mims < 0 and self.mims != MIMS_INVALID:
            raise ValueError(
                f"negative mims {self.mims!r} is not the invalid sentinel {MIMS_INVALID}"
            )
        if not math.isfinite(self.mims):
            raise ValueError("mims must be finite")
        if self.ac < 0:
            raise ValueError("ac must be nonnegative")
        object.__setattr__(self, "steps", dict(self.steps))
        for name, value in self.steps.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"steps[{name!r}] must be finite and nonnegative")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.subject_id, self.day_index, self.minute_of_day)

    @property
    def mims_usable(self) -> float:
        """MIMS value with the invalid sentinel mapped to zero."""
        return 0.0 if self.mims == MIMS_INVALID else self.mims

    @property
    def log10_mims(self) -> float:
        return math.log10(1.0 + self.mims_usable)

    @property
    def log10_ac(self) -> float:
        return math.log10(1.0 + self.ac)


def check_unique_minutes(minutes: Iterable[MinuteRecord]) -> None:
    """Reject datasets carrying duplicate (subject, day, minute) keys."""
    seen: set[tuple[str, int, int]] = set()
    for m in minutes:
        if m.key in seen:
            raise ValueError(f"duplicate minute key {m.key}")
        seen.add(m.key)


@dataclass(frozen=True)
class DaySummary:
    """Validity counts and per-day activity totals for one subject-day.

    Totals are accumulated over valid minutes only, regardless of whether the
    day itself ends up valid.
    """

    subject_id: str
    day_index: int
    n_valid_minutes: int
    n_wake_minutes: int
    n_nonzero_mims_minutes: int
    valid: bool
    totals: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "totals", dict(self.totals))


@dataclass(frozen=True)
class SubjectSummary:
    """Per-subject daily means over valid days, plus the inclusion decision."""

    subject_id: str
    n_valid_days: int
    included: bool
    means: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", dict(self.means))


SEX_LEVELS = ("male", "female")
RACE_LEVELS = ("nh_white", "nh_black", "mexican_american", "other_hispanic", "other")
EDUCATION_LEVELS = ("less_than_hs", "hs_equivalent", "more_than_hs")
BMI_LEVELS = ("underweight", "normal", "overweight", "obese")
ALCOHOL_LEVELS = ("never", "former", "moderate", "heavy", "missing_alcohol")
SMOKING_LEVELS = ("never", "former", "current")
HEALTH_LEVELS = ("poor", "fair", "good", "very_good", "excellent")

#: Categorical fields on SubjectCovariates and their closed level sets.
CATEGORICAL_LEVELS: dict[str, tuple[str, ...]] = {
    "sex": SEX_LEVELS,
    "race_ethnicity": RACE_LEVELS,
    "education": EDUCATION_LEVELS,
    "bmi_category": BMI_LEVELS,
    "alcohol": ALCOHOL_LEVELS,
    "smoking": SMOKING_LEVELS,
    "self_reported_health": HEALTH_LEVELS,
}

#: Boolean comorbidity/covariate fields, in design-matrix order.
BOOLEAN_COVARIATES = (
    "diabetes",
    "chd",
    "chf",
    "heart_attack",
    "stroke",
    "cancer",
    "mobility_problem",
)


@dataclass(frozen=True)
class SubjectCovariates:
    """Demographics, health covariates, and survey-design fields.

    Missing alcohol use is kept as its own level (``missing_alcohol``); any
    other missing field leaves the record flagged via :meth:`has_missing`
    so survival analysis can drop it.
    """

    subject_id: str
    wave: str
    age_years: float | None
    sex: str | None
    race_ethnicity: str | None
    education: str | None
    bmi_category: str | None
    diabetes: bool | None
    chd: bool | None
    chf: bool | None
    heart_attack: bool | None
    stroke: bool | None
    cancer: bool | None
    mobility_problem: bool | None
    alcohol: str
    smoking: str | None
    self_reported_health: str | None
    survey_weight: float
    stratum_id: str
    psu_id: str
    age_topcoded: bool = False

    def __post_init__(self) -> None:
        if self.age_years is not None:
            if not 18.0 <= self.age_years <= AGE_TOPCODE:
                raise ValueError("age_years must lie in [18, 80] (topcoded at 80)")
        for name, levels in CATEGORICAL_LEVELS.items():
            value = getattr(self, name)
            if name == "alcohol":
                if value not in levels:
                    raise ValueError(f"unknown alcohol level {value!r}")
            elif value is not None and value not in levels:
                raise ValueError(f"unknown {name} level {value!r}")
        if not self.survey_weight > 0:
            raise ValueError("survey_weight must be positive")

    @property
    def has_missing(self) -> bool:
        if self.age_years is None:
            return True
        for name in CATEGORICAL_LEVELS:
            if name != "alcohol" and getattr(self, name) is None:
                return True
        return any(getattr(self, name) is None for name in BOOLEAN_COVARIATES)


@dataclass(frozen=True)
class MortalityRecord:
    """Linked mortality follow-up for one subject."""

    subject_id: str
    event: bool
    followup_months: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.followup_months) or self.followup_months < 0:
            raise ValueError("followup_months must be finite and nonnegative")


@dataclass(frozen=True)
class AnalysisConfig:
    """Tunable thresholds for validity screening and downstream analysis."""

    min_valid_minutes: int = 1368
    min_wake_minutes: int = 420
    min_nonzero_mims_minutes: int = 420
    min_valid_days: int = 3
    winsor_percentile: float = 0.99
    hr_step_increment: float = 500.0
    cv_folds: int = 10
    cv_repeats: int = 100
    rng_seed: int = 2011
    age_range: tuple[int, int] = (50, 79)
    nonzero_mims_among_valid: bool = True


def _check_config(cfg: AnalysisConfig) -> None:
    if not 1 <= cfg.min_valid_minutes <= MINUTES_PER_DAY:
        raise ValueError("min_valid_minutes must lie in [1, 1440]")
    if not 0 <= cfg.min_wake_minutes <= MINUTES_PER_DAY:
        raise ValueError("min_wake_minutes must lie in [0, 1440]")
    if not 0 <= cfg.min_nonzero_mims_minutes <= MINUTES_PER_DAY:
        raise ValueError("min_nonzero_mims_minutes must lie in [0, 1440]")
    if cfg.min_valid_days < 1:
        raise ValueError("min_valid_days must be at least 1")
    if not 0.0 < cfg.winsor_percentile < 1.0:
        raise ValueError("winsor_percentile must lie in (0, 1)")
    if not cfg.hr_step_increment > 0:
        raise ValueError("hr_step_increment must be positive")
    if cfg.cv_folds < 2:
        raise ValueError("cv_folds must be at least 2")
    if cfg.cv_repeats < 1:
        raise ValueError("cv_repeats must be at least 1")
    if not -(2**63) <= cfg.rng_seed < 2**63:
        raise ValueError("rng_seed must fit in 64 bits")
    lo, hi = cfg.age_range
    if not lo < hi:
        raise ValueError("age_range must be an increasing (low, high) pair")


_CONFIG_FIELDS = {f.name: f.type for f in fields(AnalysisConfig)}


def make_config(overrides: Mapping[str, Any] | None = None) -> AnalysisConfig:
    """Build an :class:`AnalysisConfig`, applying validated overrides.

    Unknown keys and out-of-range values raise ``ValueError``.
    """
    overrides = dict(overrides or {})
    for key in overrides:
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"unknown config key {key!r}")
    if "age_range" in overrides:
        lo, hi = overrides["age_range"]
        overrides["age_range"] = (int(lo), int(hi))
    cfg = replace(AnalysisConfig(), **overrides)
    _check_config(cfg)
    return cfg
