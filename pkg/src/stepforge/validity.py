"""Minute/day/subject validity screening and wear-state bookkeeping.

The screening rules operate purely on minute records: a valid minute is
unflagged wear (unknown counts as wear), a valid day clears the wear-minute,
wake-minute, and nonzero-MIMS thresholds, and a subject is included with
enough valid days.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dsp import compensated_sum
from .model import (
    AnalysisConfig,
    DaySummary,
    MinuteRecord,
    SubjectSummary,
    TRANSITION_STATE_ORDER,
    WearState,
)


def impute_unknown_as_wear(minutes: Sequence[MinuteRecord]) -> list[MinuteRecord]:
    """Stamp each record with its effective wear flag.

    Unknown minutes count as wear; only non-wear is excluded.  Wear states
    themselves are preserved.
    """
    return [replace(m, effective_wear=m.wear.counts_as_wear) for m in minutes]


def is_valid_minute(minute: MinuteRecord) -> bool:
    """A valid minute is unflagged and classified as (possibly unknown) wear."""
    return not minute.quality_flagged and minute.wear.counts_as_wear


def _day_totals(valid_minutes: Sequence[MinuteRecord]) -> dict[str, float]:
    detector_names = sorted({name for m in valid_minutes for name in m.steps})
    totals: dict[str, float] = {}
    for name in detector_names:
        totals[f"steps_{name}"] = compensated_sum(
            m.steps.get(name, 0.0) for m in valid_minutes
        )
    totals["mims"] = compensated_sum(m.mims_usable for m in valid_minutes)
    totals["ac"] = compensated_sum(float(m.ac) for m in valid_minutes)
    totals["log10_mims"] = compensated_sum(m.log10_mims for m in valid_minutes)
    totals["log10_ac"] = compensated_sum(m.log10_ac for m in valid_minutes)
    return totals


def is_valid_day(
    day_minutes: Sequence[MinuteRecord], cfg: AnalysisConfig
) -> DaySummary:
    """Screen one subject-day and accumulate its activity totals.

    A day is valid when it has at least ``cfg.min_valid_minutes`` valid
    minutes, ``cfg.min_wake_minutes`` wake-wear minutes, and
    ``cfg.min_nonzero_mims_minutes`` minutes with strictly positive MIMS
    (counted among valid minutes when ``cfg.nonzero_mims_among_valid``).
    Totals accumulate over valid minutes only; the MIMS invalid sentinel
    contributes zero and never counts as nonzero activity.
    """
    if not day_minutes:
        raise ValueError("day_minutes must be nonempty")
    subject = day_minutes[0].subject_id
    day = day_minutes[0].day_index
    for m in day_minutes:
        if m.subject_id != subject or m.day_index != day:
            raise ValueError("day_minutes must belong to a single subject-day")
    valid = [m for m in day_minutes if is_valid_minute(m)]
    mims_pool = valid if cfg.nonzero_mims_among_valid else list(day_minutes)
    n_nonzero = sum(1 for m in mims_pool if m.mims > 0.0)
    n_wake = sum(1 for m in day_minutes if m.wear is WearState.WAKE_WEAR)
    day_valid = (
        len(valid) >= cfg.min_valid_minutes
        and n_wake >= cfg.min_wake_minutes
        and n_nonzero >= cfg.min_nonzero_mims_minutes
    )
    return DaySummary(
        subject_id=subject,
        day_index=day,
        n_valid_minutes=len(valid),
        n_wake_minutes=n_wake,
        n_nonzero_mims_minutes=n_nonzero,
        valid=day_valid,
        totals=_day_totals(valid),
    )


def summarize_subject(
    day_summaries: Sequence[DaySummary], cfg: AnalysisConfig
) -> SubjectSummary:
    """Average daily totals over valid days and apply the inclusion rule."""
    if not day_summaries:
        raise ValueError("day_summaries must be nonempty")
    subject = day_summaries[0].subject_id
    if any(d.subject_id != subject for d in day_summaries):
        raise ValueError("day_summaries must belong to a single subject")
    valid_days = [d for d in day_summaries if d.valid]
    means: dict[str, float] = {}
    if valid_days:
        keys = sorted(valid_days[0].totals)
        for d in valid_days:
            if sorted(d.totals) != keys:
                raise ValueError("day summaries carry inconsistent total keys")
        for key in keys:
            means[key] = compensated_sum(d.totals[key] for d in valid_days) / len(
                valid_days
            )
    return SubjectSummary(
        subject_id=subject,
        n_valid_days=len(valid_days),
        included=len(valid_days) >= cfg.min_valid_days,
        means=means,
    )


def group_minutes_by_day(
    minutes: Iterable[MinuteRecord],
) -> dict[tuple[str, int], list[MinuteRecord]]:
    """Group minute records by (subject, day), each day minute-ordered."""
    grouped: dict[tuple[str, int], list[MinuteRecord]] = {}
    for m in minutes:
        grouped.setdefault((m.subject_id, m.day_index), []).append(m)
    for day in grouped.values():
        day.sort(key=lambda m: m.minute_of_day)
    return grouped


def screen_cohort(
    minutes: Sequence[MinuteRecord], cfg: AnalysisConfig
) -> tuple[dict[str, list[DaySummary]], dict[str, SubjectSummary]]:
    """Run day and subject screening over a whole minute-level cohort."""
    by_day = group_minutes_by_day(minutes)
    days_by_subject: dict[str, list[DaySummary]] = {}
    for (subject, _day), recs in sorted(by_day.items()):
        days_by_subject.setdefault(subject, []).append(is_valid_day(recs, cfg))
    subjects = {
        subject: summarize_subject(days, cfg)
        for subject, days in days_by_subject.items()
    }
    return days_by_subject, subjects


def exclusion_reason(summary: SubjectSummary, cfg: AnalysisConfig) -> str:
    """Human-readable reason a subject failed screening ('' when included)."""
    if summary.included:
        return ""
    return (
        f"only {summary.n_valid_days} valid day(s); "
        f"need at least {cfg.min_valid_days}"
    )


def unknown_bout_transition_matrix(
    minutes: Sequence[MinuteRecord],
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Joint distribution of states flanking each maximal unknown bout.

    For every maximal run of consecutive Unknown minutes inside a subject's
    contiguous timeline, the (preceding state, following state) pair is
    tallied; bouts touching a timeline edge or a gap in minute coverage are
    skipped.  Rows index the preceding state and columns the following
    state, both ordered Unknown, NonWear, Sleep, Wake; entries are joint
    proportions summing to 1 when any bouts were found.
    """
    order = TRANSITION_STATE_ORDER
    index = {state: i for i, state in enumerate(order)}
    counts = np.zeros((4, 4))
    by_subject: dict[str, list[MinuteRecord]] = {}
    for m in minutes:
        by_subject.setdefault(m.subject_id, []).append(m)
    for recs in by_subject.values():
        recs.sort(key=lambda m: (m.day_index, m.minute_of_day))
        abs_minute = [1440 * (m.day_index - 1) + m.minute_of_day for m in recs]
        i = 0
        while i < len(recs):
            if recs[i].wear is not WearState.UNKNOWN:
                i += 1
                continue
            j = i
            while (
                j + 1 < len(recs)
                and recs[j + 1].wear is WearState.UNKNOWN
                and abs_minute[j + 1] == abs_minute[j] + 1
            ):
                j += 1
            has_before = i > 0 and abs_minute[i - 1] == abs_minute[i] - 1
            has_after = j + 1 < len(recs) and abs_minute[j + 1] == abs_minute[j] + 1
            if has_before and has_after:
                counts[index[recs[i - 1].wear], index[recs[j + 1].wear]] += 1.0
            i = j + 1
    total = counts.sum()
    if total > 0:
        counts /= total
    labels = tuple(state.value for state in order)
    return counts, labels
