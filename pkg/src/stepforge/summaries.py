"""Epoch-level activity summaries: activity counts (AC) and MIMS.

Both measures run per axis through a resample → band-pass → rectify stage
and then diverge: AC deadbands, clips, quantizes, and sums; MIMS integrates
the rectified curve and truncates tiny areas.  Axis results combine per
epoch.  The ``log10(1 + x)`` transform used by downstream analyses lives
here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dsp import UniformSeries, butterworth_bandpass, resample_linear
from .model import MinuteRecord, TriaxialRecording


@dataclass(frozen=True)
class AcParams:
    """ActiGraph-style activity-count parameters."""

    resample_hz: float = 30.0
    band_hz: tuple[float, float] = (0.25, 2.5)
    filter_order: int = 4
    deadband_g: float = 0.068
    clip_g: float = 2.13
    quantum_g: float = 1.0 / 128.0
    epoch_seconds: int = 60
    axis_combine: str = "euclidean"  # or "sum"

    def __post_init__(self) -> None:
        low, high = self.band_hz
        if not 0 < low < high < self.resample_hz / 2:
            raise ValueError("band must lie strictly inside (0, resample Nyquist)")
        if self.deadband_g < 0 or self.clip_g <= 0 or self.quantum_g <= 0:
            raise ValueError("deadband, clip, and quantum must be positive")
        if self.epoch_seconds < 1:
            raise ValueError("epoch_seconds must be at least 1")
        if self.axis_combine not in ("euclidean", "sum"):
            raise ValueError("axis_combine must be 'euclidean' or 'sum'")


def _axis_quanta(
    axis: np.ndarray, rate_hz: float, p: AcParams
) -> np.ndarray:
    """Per-sample integer quanta for one axis after the AC front end."""
    series = UniformSeries(rate_hz, axis)
    if rate_hz != p.resample_hz:
        series = resample_linear(series, p.resample_hz)
    filtered = butterworth_bandpass(
        series, p.band_hz[0], p.band_hz[1], order=p.filter_order, zero_phase=True
    )
    rectified = np.abs(filtered.values)
    deadbanded = np.maximum(rectified - p.deadband_g, 0.0)
    clipped = np.minimum(deadbanded, p.clip_g)
    return np.floor(clipped / p.quantum_g).astype(np.int64)


def activity_counts(rec: TriaxialRecording, params: AcParams | None = None) -> np.ndarray:
    """Per-epoch activity counts, combined across axes.

    Each axis is resampled, band-pass filtered, rectified, deadbanded,
    clipped, quantized to integer quanta, and summed per epoch; axis totals
    combine by Euclidean norm (rounded to an integer count) or plain sum.
    Trailing samples short of a full epoch are dropped.

    Returns
    -------
    ndarray of int64
        One nonnegative count per epoch.
    """
    params = params or AcParams()
    epoch_len = int(round(params.epoch_seconds * params.resample_hz))
    per_axis = []
    for axis in (rec.x, rec.y, rec.z):
        quanta = _axis_quanta(np.asarray(axis, dtype=np.float64), rec.sample_rate_hz, params)
        n_epochs = len(quanta) // epoch_len
        sums = quanta[: n_epochs * epoch_len].reshape(n_epochs, epoch_len).sum(axis=1)
        per_axis.append(sums)
    n_epochs = min(len(a) for a in per_axis)
    stacked = np.stack([a[:n_epochs] for a in per_axis])
    if params.axis_combine == "sum":
        return stacked.sum(axis=0)
    combined = np.sqrt((stacked.astype(np.float64) ** 2).sum(axis=0))
    return np.rint(combined).astype(np.int64)


@dataclass(frozen=True)
class MimsParams:
    """Monitor-independent movement summary parameters.

    Extrapolation of saturated samples is intentionally not implemented
    (fixed off); inputs are assumed within the device dynamic range.
    """

    interp_hz: float = 100.0
    band_hz: tuple[float, float] = (0.2, 5.0)
    filter_order: int = 4
    epoch_seconds: int = 60
    truncation_floor: float = 1e-4

    def __post_init__(self) -> None:
        low, high = self.band_hz
        if not 0 < low < high < self.interp_hz / 2:
            raise ValueError("band must lie strictly inside (0, interp Nyquist)")
        if self.epoch_seconds < 1:
            raise ValueError("epoch_seconds must be at least 1")
        if self.truncation_floor < 0:
            raise ValueError("truncation_floor must be nonnegative")


def mims_units(rec: TriaxialRecording, params: MimsParams | None = None) -> np.ndarray:
    """Per-epoch MIMS: rectified band-passed area under the curve.

    Each axis is linearly interpolated to ``interp_hz``, band-pass filtered,
    rectified, and integrated per epoch by the trapezoid rule (sharing the
    epoch-boundary sample).  Axis areas below ``truncation_floor`` zero out
    before the axes are summed.
    """
    params = params or MimsParams()
    epoch_len = int(round(params.epoch_seconds * params.interp_hz))
    dt = 1.0 / params.interp_hz
    per_axis = []
    for axis in (rec.x, rec.y, rec.z):
        series = UniformSeries(rec.sample_rate_hz, np.asarray(axis, dtype=np.float64))
        if rec.sample_rate_hz != params.interp_hz:
            series = resample_linear(series, params.interp_hz)
        filtered = butterworth_bandpass(
            series, params.band_hz[0], params.band_hz[1],
            order=params.filter_order, zero_phase=True,
        )
        rectified = np.abs(filtered.values)
        n_epochs = len(rectified) // epoch_len
        areas = np.empty(n_epochs)
        for e in range(n_epochs):
            seg = rectified[e * epoch_len : (e + 1) * epoch_len + 1]
            areas[e] = np.trapezoid(seg, dx=dt)
        areas[areas < params.truncation_floor] = 0.0
        per_axis.append(areas)
    n_epochs = min(len(a) for a in per_axis)
    return np.sum([a[:n_epochs] for a in per_axis], axis=0)


def log10_plus1(values):
    """Elementwise log10(1 + x); rejects negative input."""
    arr = np.asarray(values, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("log10_plus1 requires nonnegative input")
    out = np.log10(1.0 + arr)
    return float(out) if np.isscalar(values) or arr.ndim == 0 else out


def attach_minute_summaries(
    minutes: Sequence[MinuteRecord],
    ac: np.ndarray | None = None,
    mims: np.ndarray | None = None,
    steps: Mapping[str, np.ndarray] | None = None,
) -> list[MinuteRecord]:
    """Merge per-minute AC / MIMS / step arrays onto minute records.

    Array lengths must match the record count exactly; epoch misalignment is
    an error, not a silent truncation.
    """
    n = len(minutes)
    for label, arr in (("ac", ac), ("mims", mims)):
        if arr is not None and len(arr) != n:
            raise ValueError(f"{label} has {len(arr)} epochs for {n} minutes")
    steps = dict(steps or {})
    for name, arr in steps.items():
        if len(arr) != n:
            raise ValueError(f"steps[{name!r}] has {len(arr)} epochs for {n} minutes")
    out = []
    for i, rec in enumerate(minutes):
        merged = dict(rec.steps)
        for name, arr in steps.items():
            merged[name] = float(arr[i])
        out.append(
            replace(
                rec,
                ac=int(ac[i]) if ac is not None else rec.ac,
                mims=float(mims[i]) if mims is not None else rec.mims,
                steps=merged,
            )
        )
    return out


def minute_skeleton(
    subject_id: str, n_minutes: int, start_day: int = 1
) -> list[MinuteRecord]:
    """Blank wake-wear minute records for freshly processed raw data."""
    from .model import WearState

    out = []
    for i in range(n_minutes):
        out.append(
            MinuteRecord(
                subject_id=subject_id,
                day_index=start_day + i // 1440,
                minute_of_day=i % 1440,
                wear=WearState.WAKE_WEAR,
            )
        )
    return out
