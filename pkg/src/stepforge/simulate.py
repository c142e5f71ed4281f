"""Synthetic data generators with known ground truth.

Three generators close the loop for testing: gait-like raw accelerometry
(known true step counts), minute-level cohorts (known validity outcomes),
and survival datasets (known hazard ratios).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    ALCOHOL_LEVELS,
    BMI_LEVELS,
    EDUCATION_LEVELS,
    HEALTH_LEVELS,
    MinuteRecord,
    MortalityRecord,
    RACE_LEVELS,
    SEX_LEVELS,
    SMOKING_LEVELS,
    SubjectCovariates,
    TriaxialRecording,
    WearState,
)


@dataclass(frozen=True)
class GaitSegment:
    """One bout of either rest or steady walking."""

    kind: str  # "walk" | "rest"
    duration_s: int
    cadence_hz: float = 0.0
    amplitude_g: float = 0.4
    noise_sd_g: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("walk", "rest"):
            raise ValueError("segment kind must be 'walk' or 'rest'")
        if self.duration_s < 1:
            raise ValueError("duration_s must be a positive whole number of seconds")
        if self.kind == "walk" and not 0.5 <= self.cadence_hz <= 4.0:
            raise ValueError("cadence_hz must lie in [0.5, 4.0] for walk segments")
        if self.noise_sd_g < 0:
            raise ValueError("noise_sd_g must be nonnegative")


def gen_gait(
    recipe: Sequence[GaitSegment],
    sample_rate_hz: float = 80.0,
    seed: int = 0,
    subject_id: str = "sim",
) -> tuple[TriaxialRecording, np.ndarray]:
    """Generate gait-like triaxial data plus the true per-second step counts.

    Each walk segment produces a 1 g baseline plus
    ``amplitude * sin(2*pi*cadence*t)`` along a randomly oriented unit axis,
    with independent Gaussian noise per axis; one step per oscillation, so
    the true step rate equals the cadence.  Rest segments hold the 1 g
    baseline.

    Returns
    -------
    (recording, truth) : (TriaxialRecording, ndarray)
        The raw recording and an array of true steps for each whole second.
    """
    if not recipe:
        raise ValueError("recipe must contain at least one segment")
    for seg in recipe:
        if seg.kind == "walk" and sample_rate_hz < 4.0 * seg.cadence_hz:
            raise ValueError("sample_rate_hz must be at least 4x the cadence")
    rng = np.random.default_rng(seed)
    parts = []
    truth = []
    for seg in recipe:
        n = int(round(seg.duration_s * sample_rate_hz))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        if seg.kind == "walk":
            t = np.arange(n) / sample_rate_hz
            base = 1.0 + seg.amplitude_g * np.sin(2.0 * np.pi * seg.cadence_hz * t)
            truth.extend([seg.cadence_hz] * seg.duration_s)
        else:
            base = np.ones(n)
            truth.extend([0.0] * seg.duration_s)
        xyz = np.outer(base, axis)
        if seg.noise_sd_g > 0:
            xyz = xyz + rng.normal(scale=seg.noise_sd_g, size=(n, 3))
        parts.append(xyz)
    xyz = np.concatenate(parts, axis=0)
    rec = TriaxialRecording(
        subject_id=subject_id,
        x=xyz[:, 0],
        y=xyz[:, 1],
        z=xyz[:, 2],
        sample_rate_hz=sample_rate_hz,
    )
    return rec, np.asarray(truth)


@dataclass(frozen=True)
class CohortProfile:
    """Marginal rates used when sampling synthetic minute-level days."""

    p_wake: float = 0.62
    p_sleep: float = 0.33
    p_nonwear: float = 0.02
    p_unknown: float = 0.03
    p_flagged: float = 0.005
    p_zero_mims: float = 0.08
    #: Fraction of subjects who barely wear the device (all days invalid).
    p_low_wear_subject: float = 0.15
    detector_names: tuple[str, ...] = (
        "peak_original",
        "peak_revised",
        "spectral",
        "template",
    )
    #: Mean per-minute steps during wake, per detector, before subject scaling.
    detector_scale: Sequence[float] = (6.0, 5.5, 7.0, 1.8)
    include_boundary_days: bool = True

    def __post_init__(self) -> None:
        total = self.p_wake + self.p_sleep + self.p_nonwear + self.p_unknown
        if abs(total - 1.0) > 1e-9:
            raise ValueError("wear-state probabilities must sum to 1")
        if len(self.detector_scale) != len(self.detector_names):
            raise ValueError("detector_scale must match detector_names")


def make_boundary_day(
    subject_id: str,
    day_index: int,
    n_valid: int,
    n_wake: int,
    n_nonzero_mims: int,
    detector_names: Sequence[str] = ("peak_original",),
) -> list[MinuteRecord]:
    """Construct a full day with exact validity counts.

    The first ``n_valid`` minutes are unflagged wear (the first ``n_wake`` of
    them wake wear, the rest sleep wear) and the first ``n_nonzero_mims``
    carry positive MIMS.  Remaining minutes are non-wear.  Useful for
    exercising thresholds at +/-1 minute.
    """
    if not 0 <= n_wake <= n_valid <= 1440 or not 0 <= n_nonzero_mims <= n_valid:
        raise ValueError("need 0 <= n_wake, n_nonzero_mims <= n_valid <= 1440")
    records = []
    for minute in range(1440):
        if minute < n_valid:
            wear = WearState.WAKE_WEAR if minute < n_wake else WearState.SLEEP_WEAR
            mims = 5.0 if minute < n_nonzero_mims else 0.0
            steps = {name: (4.0 if wear is WearState.WAKE_WEAR else 0.0)
                     for name in detector_names}
            records.append(
                MinuteRecord(
                    subject_id=subject_id,
                    day_index=day_index,
                    minute_of_day=minute,
                    wear=wear,
                    quality_flagged=False,
                    mims=mims,
                    ac=int(mims * 100),
                    steps=steps,
                )
            )
        else:
            records.append(
                MinuteRecord(
                    subject_id=subject_id,
                    day_index=day_index,
                    minute_of_day=minute,
                    wear=WearState.NON_WEAR,
                    quality_flagged=False,
                    mims=0.0,
                    ac=0,
                    steps={name: 0.0 for name in detector_names},
                )
            )
    return records


def gen_cohort(
    n_subjects: int,
    n_days: int,
    profile: CohortProfile | None = None,
    seed: int = 0,
) -> list[MinuteRecord]:
    """Sample a minute-level cohort with controllable validity rates.

    Subjects are named ``S0001`` onward.  When the profile asks for boundary
    days, the first subject's opening days sit exactly at the validity
    thresholds (1368 valid / 420 wake / 420 nonzero-MIMS minutes) and one
    minute below them.
    """
    if n_subjects < 1 or n_days < 1:
        raise ValueError("need at least one subject and one day")
    profile = profile or CohortProfile()
    rng = np.random.default_rng(seed)
    p_states = np.array(
        [profile.p_wake, profile.p_sleep, profile.p_nonwear, profile.p_unknown]
    )
    states = (
        WearState.WAKE_WEAR,
        WearState.SLEEP_WEAR,
        WearState.NON_WEAR,
        WearState.UNKNOWN,
    )
    scales = np.asarray(profile.detector_scale, dtype=np.float64)
    records: list[MinuteRecord] = []
    low_wear_states = np.array([0.45, 0.20, 0.30, 0.05])
    for s in range(n_subjects):
        subject = f"S{s + 1:04d}"
        activity = rng.lognormal(mean=0.0, sigma=0.4)
        # Stable relative bias per subject and measure, so subject-level
        # daily means disagree across measures even after averaging.
        measure_bias = rng.lognormal(mean=0.0, sigma=0.1, size=len(scales) + 2)
        low_wear = rng.random() < profile.p_low_wear_subject
        p_subject = low_wear_states if low_wear else p_states
        for day in range(1, n_days + 1):
            if profile.include_boundary_days and s == 0 and day <= 4:
                # Days pinned at and just below the validity thresholds.
                n_valid, n_wake, n_mims = [
                    (1368, 420, 420),
                    (1367, 420, 420),
                    (1368, 419, 420),
                    (1368, 420, 419),
                ][day - 1]
                records.extend(
                    make_boundary_day(
                        subject, day, n_valid, n_wake, n_mims, profile.detector_names
                    )
                )
                continue
            wear_idx = rng.choice(len(states), size=1440, p=p_subject)
            flagged = rng.random(1440) < profile.p_flagged
            zero_mims = rng.random(1440) < profile.p_zero_mims
            base = rng.gamma(shape=2.0, scale=3.0, size=1440) * activity
            # Detectors disagree minute to minute; without this jitter every
            # measure would be an exact rescaling of the same series.
            jitter = measure_bias * rng.lognormal(
                mean=0.0, sigma=0.2, size=(1440, len(scales) + 2)
            )
            for minute in range(1440):
                wear = states[wear_idx[minute]]
                active = wear is WearState.WAKE_WEAR and not zero_mims[minute]
                level = base[minute] if active else 0.0
                steps = {
                    name: float(np.round(level * jitter[minute, k] * scale / 3.0, 3))
                    for k, (name, scale) in enumerate(
                        zip(profile.detector_names, scales)
                    )
                }
                records.append(
                    MinuteRecord(
                        subject_id=subject,
                        day_index=day,
                        minute_of_day=minute,
                        wear=wear,
                        quality_flagged=bool(flagged[minute]),
                        mims=float(np.round(level * jitter[minute, -2] * 2.5, 4)),
                        ac=int(level * jitter[minute, -1] * 180),
                        steps=steps,
                    )
                )
    return records


def gen_covariates(
    subject_ids: Sequence[str],
    seed: int = 0,
    waves: tuple[str, str] = ("2011-2012", "2013-2014"),
    p_missing: float = 0.0,
    age_range: tuple[float, float] = (18.0, 84.0),
) -> list[SubjectCovariates]:
    """Draw plausible covariate records for the given subjects."""
    rng = np.random.default_rng(seed)
    out = []
    for i, subject in enumerate(subject_ids):
        age = float(min(80.0, round(rng.uniform(*age_range), 1)))
        missing = rng.random() < p_missing
        out.append(
            SubjectCovariates(
                subject_id=subject,
                wave=waves[i % 2],
                age_years=age,
                sex=str(rng.choice(SEX_LEVELS)),
                race_ethnicity=str(rng.choice(RACE_LEVELS)),
                education=None if missing else str(rng.choice(EDUCATION_LEVELS)),
                bmi_category=str(rng.choice(BMI_LEVELS)),
                diabetes=bool(rng.random() < 0.12),
                chd=bool(rng.random() < 0.06),
                chf=bool(rng.random() < 0.04),
                heart_attack=bool(rng.random() < 0.05),
                stroke=bool(rng.random() < 0.04),
                cancer=bool(rng.random() < 0.10),
                mobility_problem=bool(rng.random() < 0.15),
                alcohol=str(rng.choice(ALCOHOL_LEVELS)),
                smoking=str(rng.choice(SMOKING_LEVELS)),
                self_reported_health=str(rng.choice(HEALTH_LEVELS)),
                survey_weight=float(np.round(rng.lognormal(mean=9.0, sigma=0.5), 2)),
                stratum_id=str(1 + i % 4),
                psu_id=str(1 + (i // 4) % 2),
                age_topcoded=age >= 80.0,
            )
        )
    return out


def gen_survival(
    n: int,
    beta_per_step: float,
    baseline_hazard: float = 0.002,
    censor_rate: float = 0.3,
    seed: int = 0,
    steps_mean: float = 9000.0,
    steps_sd: float = 3000.0,
):
    """Simulate an exponential proportional-hazards cohort on daily steps.

    Event times are exponential with rate
    ``baseline_hazard * exp(beta_per_step * steps)``; censoring times are
    independent exponentials tuned so roughly ``censor_rate`` of subjects
    are censored (none when ``censor_rate`` is 0).

    Returns a :class:`stepforge.survival.SurvivalDataset` with one covariate
    column named ``steps`` and unit weights.
    """
    from .survival import SurvivalDataset

    if n < 2:
        raise ValueError("need at least two subjects")
    if not 0.0 <= censor_rate < 1.0:
        raise ValueError("censor_rate must lie in [0, 1)")
    if baseline_hazard <= 0:
        raise ValueError("baseline_hazard must be positive")
    rng = np.random.default_rng(seed)
    steps = np.maximum(rng.normal(steps_mean, steps_sd, size=n), 0.0)
    rate = baseline_hazard * np.exp(beta_per_step * steps)
    event_time = rng.exponential(1.0 / rate)
    if censor_rate > 0:
        censor_hazard = baseline_hazard * censor_rate / (1.0 - censor_rate)
        censor_time = rng.exponential(1.0 / censor_hazard, size=n)
    else:
        censor_time = np.full(n, np.inf)
    time = np.minimum(event_time, censor_time)
    event = event_time <= censor_time
    return SurvivalDataset(
        followup_months=time,
        event=event,
        covariates=steps.reshape(-1, 1),
        weights=np.ones(n),
        covariate_names=("steps",),
        subject_ids=tuple(f"S{i + 1:04d}" for i in range(n)),
    )


def gen_mortality_from_summary(
    mean_steps: dict[str, float],
    ages: dict[str, float],
    seed: int = 0,
    beta_per_step: float = -1.0e-4,
    beta_age: float = 0.07,
    baseline_hazard: float = 5e-5,
    admin_cutoff_months: float = 150.0,
) -> list[MortalityRecord]:
    """Simulate linked mortality for subjects with known step/age covariates."""
    rng = np.random.default_rng(seed)
    out = []
    for subject in sorted(mean_steps):
        steps = mean_steps[subject]
        age = ages.get(subject, 60.0)
        rate = baseline_hazard * math.exp(beta_per_step * steps + beta_age * (age - 60.0))
        t = rng.exponential(1.0 / rate)
        event = t <= admin_cutoff_months
        out.append(
            MortalityRecord(
                subject_id=subject,
                event=bool(event),
                followup_months=float(round(min(t, admin_cutoff_months), 2)),
            )
        )
    return out
