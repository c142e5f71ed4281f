"""Open-source-style step detectors over the vector-magnitude signal.

Three families are implemented:

* peak detection with periodicity / similarity / continuity screening
  (``detect_steps_peak``),
* windowed spectral cadence estimation (``detect_steps_spectral``),
* scaled template matching with greedy stride selection
  (``detect_steps_template``).

Every detector maps a vector-magnitude series to a per-second step series;
``run_detectors`` fans one signal out to a registry of detectors and
aggregates to minutes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import signal as scipy_signal

from .dsp import (
    UniformSeries,
    compensated_sum,
    moving_average,
    power_spectrum,
    resample_linear,
    sliding_windows,
)

#: Detector names wired into the default registry.
BUILTIN_DETECTOR_NAMES = ("peak_original", "peak_revised", "spectral", "template")


@dataclass(frozen=True)
class StepSeries:
    """Per-second step values produced by one detector."""

    detector_name: str
    steps_per_second: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "steps_per_second", np.asarray(self.steps_per_second, dtype=np.float64)
        )
        values = self.steps_per_second
        if values.ndim != 1:
            raise ValueError("steps_per_second must be one-dimensional")
        if len(values) and (not np.all(np.isfinite(values)) or values.min() < 0):
            raise ValueError("step values must be finite and nonnegative")
        if len(values) and values.max() > 5.0 + 1e-9:
            raise ValueError("per-second step values above 5 are not physiological")

    @property
    def total(self) -> float:
        return compensated_sum(self.steps_per_second)


def per_second_to_minutes(values: np.ndarray, n_minutes: int | None = None) -> np.ndarray:
    """Aggregate per-second values into per-minute sums (compensated)."""
    values = np.asarray(values, dtype=np.float64)
    if n_minutes is None:
        n_minutes = (len(values) + 59) // 60
    out = np.zeros(n_minutes)
    for m in range(n_minutes):
        chunk = values[60 * m : 60 * (m + 1)]
        if len(chunk):
            out[m] = compensated_sum(chunk)
    return out


@dataclass(frozen=True)
class PeakParams:
    """Tuning for the peak-detection family.

    Continuity screening mirrors the usual wrist convention: look back over
    the ``continuity_required`` most recent inter-peak windows and demand
    strictly more than ``continuity_window`` of them show local variance
    above ``variance_threshold_g2`` (with the defaults, all four must).
    """

    target_hz: float = 15.0
    k_neighbors: int = 3
    mag_threshold_g: float = 1.2
    period_min_samples: int = 5
    period_max_samples: int = 15
    similarity_threshold_g: float = 0.5
    continuity_window: int = 3
    continuity_required: int = 4
    variance_threshold_g2: float = 0.001

    def __post_init__(self) -> None:
        if not self.target_hz > 0:
            raise ValueError("target_hz must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if not 0 < self.period_min_samples < self.period_max_samples:
            raise ValueError("need 0 < period_min_samples < period_max_samples")
        if self.mag_threshold_g <= 0 or self.similarity_threshold_g <= 0:
            raise ValueError("magnitude and similarity thresholds must be positive")
        if self.continuity_window < 1 or self.continuity_required < 1:
            raise ValueError("continuity parameters must be positive")
        if self.variance_threshold_g2 <= 0:
            raise ValueError("variance_threshold_g2 must be positive")


def _strict_local_maxima(values: np.ndarray, k: int) -> np.ndarray:
    """Indices with a full +/-k neighborhood that strictly dominate it."""
    n = len(values)
    if n < 2 * k + 1:
        return np.empty(0, dtype=np.intp)
    keep = np.ones(n - 2 * k, dtype=bool)
    center = values[k : n - k]
    for d in range(1, k + 1):
        keep &= center > values[k - d : n - k - d]
        keep &= center > values[k + d : n - k + d]
    return np.nonzero(keep)[0] + k


def detect_steps_peak(
    vm: UniformSeries, params: PeakParams | None = None, name: str = "peak"
) -> StepSeries:
    """Count steps from screened vector-magnitude peaks.

    Candidate peaks are samples strictly greater than every neighbor within
    ``k_neighbors``; candidates survive magnitude, inter-peak period, and
    amplitude-similarity screens in sequence, and finally the trailing
    continuity (local variance) test.  Surviving peaks are bucketed per
    second.
    """
    params = params or PeakParams()
    if vm.sample_rate_hz < params.target_hz:
        raise ValueError("vm rate must be at least the detector target rate")
    if vm.sample_rate_hz != params.target_hz:
        vm = resample_linear(vm, params.target_hz)
    values = vm.values
    n = len(values)
    n_seconds = int(math.ceil(n / params.target_hz))
    counts = np.zeros(n_seconds)
    if n == 0:
        return StepSeries(name, counts)

    locs = _strict_local_maxima(values, params.k_neighbors)
    locs = locs[values[locs] > params.mag_threshold_g]

    # Inter-peak period screen: gap to the previous retained candidate.
    kept: list[int] = []
    for loc in locs:
        if not kept:
            kept.append(int(loc))
            continue
        gap = loc - kept[-1]
        if params.period_min_samples <= gap <= params.period_max_samples:
            kept.append(int(loc))
    locs = np.asarray(kept, dtype=np.intp)

    # Amplitude-similarity screen against the previous surviving peak.
    kept = []
    for loc in locs:
        if kept and abs(values[loc] - values[kept[-1]]) > params.similarity_threshold_g:
            continue
        kept.append(int(loc))
    locs = np.asarray(kept, dtype=np.intp)

    if len(locs) == 0:
        return StepSeries(name, counts)

    # Continuity: prefix sums give O(1) variance of each inter-peak window.
    csum = np.concatenate(([0.0], np.cumsum(values)))
    csum2 = np.concatenate(([0.0], np.cumsum(values * values)))

    def window_passes(a: int, b: int) -> bool:
        length = b - a + 1
        total = csum[b + 1] - csum[a]
        total2 = csum2[b + 1] - csum2[a]
        var = total2 / length - (total / length) ** 2
        return var > params.variance_threshold_g2

    passes = [
        window_passes(locs[i - 1], locs[i]) for i in range(1, len(locs))
    ]
    for i in range(len(locs)):
        if i < params.continuity_required:
            continue
        recent = passes[i - params.continuity_required : i]
        if sum(recent) > params.continuity_window:
            second = int(locs[i] // params.target_hz)
            counts[second] += 1.0
    return StepSeries(name, counts)


@dataclass(frozen=True)
class SpectralParams:
    """Tuning for the windowed spectral-cadence family."""

    window_seconds: float = 10.0
    cadence_band_hz: tuple[float, float] = (1.4, 2.3)
    activity_std_min_g: float = 0.025
    prominence_ratio: float = 3.0
    harmonic_check: bool = True

    def __post_init__(self) -> None:
        low, high = self.cadence_band_hz
        if not 0 < low < high:
            raise ValueError("cadence band must be an increasing positive pair")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.activity_std_min_g <= 0 or self.prominence_ratio <= 0:
            raise ValueError("activity and prominence thresholds must be positive")


def detect_steps_spectral(
    vm: UniformSeries, params: SpectralParams | None = None, name: str = "spectral"
) -> StepSeries:
    """Estimate cadence per window from the dominant in-band spectral peak.

    Non-overlapping windows are screened by standard deviation, then the
    periodogram peak inside the cadence band must stand out against the
    median in-band power by ``prominence_ratio``.  When the sub-harmonic at
    half the peak frequency carries more power, the cadence drops to it
    (arm-swing dominance).  Steps per window are cadence times window
    length, spread uniformly over its seconds.
    """
    params = params or SpectralParams()
    low, high = params.cadence_band_hz
    if vm.sample_rate_hz < 2.0 * high:
        raise ValueError("vm rate must be at least twice the cadence band top")
    n_seconds = int(math.ceil(len(vm) / vm.sample_rate_hz))
    counts = np.zeros(n_seconds)
    window_s = int(round(params.window_seconds))
    for start, stop in sliding_windows(vm, params.window_seconds, params.window_seconds):
        seg = vm.values[start:stop]
        if seg.std() < params.activity_std_min_g:
            continue
        freqs, power = power_spectrum(UniformSeries(vm.sample_rate_hz, seg))
        band = (freqs >= low) & (freqs <= high)
        if not band.any():
            continue
        band_power = power[band]
        peak_pos = int(np.argmax(band_power))
        f_star = float(freqs[band][peak_pos])
        p_star = float(band_power[peak_pos])
        if p_star < params.prominence_ratio * float(np.median(band_power)):
            continue
        cadence = f_star
        if params.harmonic_check:
            half_bin = int(np.argmin(np.abs(freqs - f_star / 2.0)))
            if power[half_bin] > p_star:
                cadence = f_star / 2.0
        first_second = int(start // vm.sample_rate_hz)
        for s in range(first_second, first_second + window_s):
            if s < n_seconds:
                counts[s] += cadence
    return StepSeries(name, counts)


def _default_templates(n_points: int = 64) -> tuple[np.ndarray, ...]:
    """Two synthetic stride shapes, zero-mean with unit energy.

    A stride spans two steps, so both defaults carry one magnitude
    oscillation per step: a uniform two-step sinusoid and a tapered variant
    whose envelope fades at the stride boundaries.  Empirical templates can
    be loaded via :class:`TemplateParams`.
    """
    u = np.linspace(0.0, 1.0, n_points, endpoint=False)
    uniform = np.sin(4.0 * np.pi * u)
    tapered = np.sin(4.0 * np.pi * u) * np.sin(np.pi * u)
    out = []
    for shape in (uniform, tapered):
        shape = shape - shape.mean()
        out.append(shape / np.linalg.norm(shape))
    return tuple(out)


@dataclass(frozen=True)
class TemplateParams:
    """Tuning for the stride-template matching family."""

    templates: tuple[np.ndarray, ...] = field(default_factory=_default_templates)
    stride_grid_seconds: tuple[float, ...] = tuple(
        round(0.7 + 0.1 * i, 1) for i in range(12)
    )
    correlation_threshold: float = 0.7
    smoothing_window_seconds: float = 0.22

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValueError("at least one template is required")
        norm_templates = []
        for t in self.templates:
            t = np.asarray(t, dtype=np.float64)
            if len(t) < 4:
                raise ValueError("templates need at least 4 points")
            if abs(t.mean()) > 1e-8 or abs(np.linalg.norm(t) - 1.0) > 1e-8:
                raise ValueError("templates must be zero-mean with unit norm")
            norm_templates.append(t)
        object.__setattr__(self, "templates", tuple(norm_templates))
        if not self.stride_grid_seconds:
            raise ValueError("stride grid must be nonempty")
        if any(d <= 0 for d in self.stride_grid_seconds):
            raise ValueError("stride durations must be positive")
        if not 0.0 < self.correlation_threshold <= 1.0:
            raise ValueError("correlation_threshold must lie in (0, 1]")
        if self.smoothing_window_seconds < 0:
            raise ValueError("smoothing_window_seconds must be nonnegative")


def normalized_template(template: np.ndarray, length: int) -> np.ndarray:
    """Rescale a unit template onto ``length`` samples, zero-mean unit-norm."""
    u_src = np.linspace(0.0, 1.0, len(template))
    u_dst = np.linspace(0.0, 1.0, length)
    t = np.interp(u_dst, u_src, template)
    t = t - t.mean()
    norm = np.linalg.norm(t)
    if norm == 0:
        raise ValueError("degenerate template after rescaling")
    return t / norm


def _correlation_profile(values: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of a zero-mean unit template at each offset."""
    n, L = len(values), len(template)
    if n < L:
        return np.empty(0)
    if n * L > 2e7:
        # overlap-add convolution keeps multi-day signals tractable
        num = scipy_signal.oaconvolve(values, template[::-1], mode="valid")
    else:
        num = np.correlate(values, template, mode="valid")
    csum = np.concatenate(([0.0], np.cumsum(values)))
    csum2 = np.concatenate(([0.0], np.cumsum(values * values)))
    seg_sum = csum[L:] - csum[:-L]
    seg_sum2 = csum2[L:] - csum2[:-L]
    denom2 = np.maximum(seg_sum2 - seg_sum * seg_sum / L, 0.0)
    denom = np.sqrt(denom2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, num / denom, 0.0)
    return np.clip(r, -1.0, 1.0)


def detect_steps_template(
    vm: UniformSeries, params: TemplateParams | None = None, name: str = "template"
) -> StepSeries:
    """Match scaled stride templates and count two steps per accepted stride.

    Every template is rescaled to every stride duration on the grid and
    correlated (normalized cross-correlation) against the magnitude signal.
    Candidate strides sit at local maxima of the smoothed correlation
    profile whose raw correlation clears the threshold; the moving-average
    smoothing merges jittery double maxima without diluting the matching
    score.  Candidates are accepted greedily by descending correlation
    (ties break toward the earlier onset, then the shorter stride) with
    overlapping strides discarded.  Each accepted stride contributes 2
    steps, booked at the second containing the stride midpoint.
    """
    params = params or TemplateParams()
    rate = vm.sample_rate_hz
    n = len(vm)
    n_seconds = int(math.ceil(n / rate))
    counts = np.zeros(n_seconds)
    if n == 0:
        return StepSeries(name, counts)
    # Odd width keeps the smoothed profile's maxima centered on symmetric peaks.
    width = max(1, int(round(params.smoothing_window_seconds * rate)))
    if width % 2 == 0:
        width += 1

    candidates: list[tuple[float, int, int]] = []  # (corr, onset, length)
    for duration in params.stride_grid_seconds:
        L = int(round(duration * rate))
        if L < 4 or L > n:
            continue
        for template in params.templates:
            t = normalized_template(template, L)
            r = _correlation_profile(vm.values, t)
            if len(r) == 0:
                continue
            r_loc = moving_average(r, width)
            # Rising-edge plateau convention: strict rise in, soft fall out.
            is_max = np.ones(len(r), dtype=bool)
            if len(r) >= 2:
                is_max[1:] &= r_loc[1:] > r_loc[:-1]
                is_max[:-1] &= r_loc[:-1] >= r_loc[1:]
            is_max &= r >= params.correlation_threshold
            for onset in np.nonzero(is_max)[0]:
                candidates.append((float(r[onset]), int(onset), L))

    # Near-equal correlations count as ties so the earlier onset wins;
    # quantizing at 0.01 keeps phase-ambiguous candidates from shuffling.
    candidates.sort(key=lambda c: (-round(c[0] / 0.01), c[1], c[2]))
    covered = np.zeros(n, dtype=bool)
    for corr, onset, L in candidates:
        if covered[onset : onset + L].any():
            continue
        covered[onset : onset + L] = True
        # Two steps per stride, bucketed at the second holding its midpoint.
        midpoint_second = int((onset + L // 2) // rate)
        counts[min(midpoint_second, n_seconds - 1)] += 2.0
    return StepSeries(name, counts)


DetectorFn = Callable[[UniformSeries], StepSeries]


def build_registry(
    peak_original: PeakParams | None = None,
    peak_revised: PeakParams | None = None,
    spectral: SpectralParams | None = None,
    template: TemplateParams | None = None,
) -> dict[str, DetectorFn]:
    """Default detector registry.

    ``peak_revised`` is a named configuration slot for a revised peak
    preset; until a revision is configured it runs the original parameters.
    """
    peak_original = peak_original or PeakParams()
    peak_revised = peak_revised or PeakParams()
    spectral_params = spectral or SpectralParams()
    template_params = template or TemplateParams()
    return {
        "peak_original": lambda vm: detect_steps_peak(vm, peak_original, "peak_original"),
        "peak_revised": lambda vm: detect_steps_peak(vm, peak_revised, "peak_revised"),
        "spectral": lambda vm: detect_steps_spectral(vm, spectral_params, "spectral"),
        "template": lambda vm: detect_steps_template(vm, template_params, "template"),
    }


@dataclass(frozen=True)
class DetectorRun:
    """Fan-out result: one StepSeries per detector plus timing and errors."""

    series: Mapping[str, StepSeries]
    minutes: Mapping[str, np.ndarray]
    timings_s: Mapping[str, float]
    errors: Mapping[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "series", dict(self.series))
        object.__setattr__(self, "minutes", dict(self.minutes))
        object.__setattr__(self, "timings_s", dict(self.timings_s))
        object.__setattr__(self, "errors", dict(self.errors))


def run_detectors(
    vm: UniformSeries,
    registry: Mapping[str, DetectorFn],
    n_minutes: int | None = None,
) -> DetectorRun:
    """Apply every registered detector to one signal.

    A detector raising an exception is isolated: its error message is
    recorded and the remaining detectors still run.  Wall-clock time is
    recorded per detector.
    """
    if not registry:
        raise ValueError("registry must contain at least one detector")
    series: dict[str, StepSeries] = {}
    minutes: dict[str, np.ndarray] = {}
    timings: dict[str, float] = {}
    errors: dict[str, str] = {}
    for dname in registry:
        t0 = time.perf_counter()
        try:
            result = registry[dname](vm)
        except Exception as exc:  # noqa: BLE001 - detector isolation by contract
            errors[dname] = f"{type(exc).__name__}: {exc}"
            timings[dname] = time.perf_counter() - t0
            continue
        timings[dname] = time.perf_counter() - t0
        series[dname] = result
        minutes[dname] = per_second_to_minutes(result.steps_per_second, n_minutes)
    return DetectorRun(series=series, minutes=minutes, timings_s=timings, errors=errors)
