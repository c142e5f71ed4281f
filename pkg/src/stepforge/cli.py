"""Batch pipeline commands: ``steps``, ``analyze``, ``bench``, ``simulate``.

Configuration comes from a flat ``key = value`` text file, overridable per
key through ``STEPFORGE_``-prefixed environment variables and the ``--seed``
flag.  All outputs are deterministic given inputs, config, and seed: worker
counts never change any emitted byte.

Exit codes: 0 success, 1 partial per-subject/per-section failures, 2 fatal
configuration or input errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import fields as dataclass_fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import detectors as det
from . import ingest, simulate, stats, survival, validity
from .dsp import vector_magnitude
from .model import (
    BOOLEAN_COVARIATES,
    CATEGORICAL_LEVELS,
    AnalysisConfig,
    MinuteRecord,
    MortalityRecord,
    SubjectCovariates,
    SubjectSummary,
    WearState,
    make_config,
)
from .summaries import AcParams, MimsParams, activity_counts, mims_units

ENV_PREFIX = "STEPFORGE_"

_PARAM_TYPES = {
    "peak_original": det.PeakParams,
    "peak_revised": det.PeakParams,
    "spectral": det.SpectralParams,
    "template": det.TemplateParams,
}


class FatalCliError(Exception):
    """Configuration or input problem that should abort with exit code 2."""


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def parse_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise FatalCliError(f"{path}:{line_no}: expected 'key = value'")
            key, value = text.split("=", 1)
            key = key.strip()
            if not key:
                raise FatalCliError(f"{path}:{line_no}: empty key")
            if key in out:
                raise FatalCliError(f"{path}:{line_no}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _coerce(name: str, text: str, target_type) -> object:
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if name == "age_range":
            lo, hi = (part.strip() for part in text.split(","))
            return (int(lo), int(hi))
    except ValueError:
        raise FatalCliError(f"config key {name!r}: cannot parse {text!r}") from None
    return text


_CONFIG_TYPES = {
    "min_valid_minutes": int,
    "min_wake_minutes": int,
    "min_nonzero_mims_minutes": int,
    "min_valid_days": int,
    "winsor_percentile": float,
    "hr_step_increment": float,
    "cv_folds": int,
    "cv_repeats": int,
    "rng_seed": int,
    "age_range": tuple,
    "nonzero_mims_among_valid": bool,
}


def load_config(
    config_path: str | None,
    seed: int | None = None,
    env: Mapping[str, str] | None = None,
) -> tuple[AnalysisConfig, dict[str, Mapping[str, float]]]:
    """Resolve config precedence: defaults < file < environment < --seed.

    Returns the analysis config plus per-detector parameter overrides
    gathered from dotted keys like ``spectral.min_std_g = 0.03``.
    """
    env = os.environ if env is None else env
    raw: dict[str, str] = {}
    if config_path is not None:
        raw.update(parse_config_file(config_path))
    for key in _CONFIG_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            raw[key] = env[env_key]

    overrides: dict[str, object] = {}
    detector_params: dict[str, dict[str, float]] = {}
    for key, text in raw.items():
        if "." in key:
            prefix, _, param = key.partition(".")
            if prefix not in _PARAM_TYPES:
                raise FatalCliError(f"unknown detector prefix in config key {key!r}")
            param_fields = {
                f.name: f.type for f in dataclass_fields(_PARAM_TYPES[prefix])
            }
            if param not in param_fields:
                raise FatalCliError(f"unknown detector parameter {key!r}")
            try:
                detector_params.setdefault(prefix, {})[param] = float(text)
            except ValueError:
                raise FatalCliError(
                    f"config key {key!r}: cannot parse {text!r}"
                ) from None
            continue
        if key not in _CONFIG_TYPES:
            raise FatalCliError(f"unknown config key {key!r}")
        overrides[key] = _coerce(key, text, _CONFIG_TYPES[key])
    if seed is not None:
        overrides["rng_seed"] = seed
    try:
        cfg = make_config(overrides)
    except ValueError as exc:
        raise FatalCliError(str(exc)) from None
    return cfg, detector_params


def _build_registry(detector_params: Mapping[str, Mapping[str, float]]):
    kwargs = {}
    for name, params in detector_params.items():
        cls = _PARAM_TYPES[name]
        typed = {}
        for field in dataclass_fields(cls):
            if field.name in params:
                value = params[field.name]
                typed[field.name] = (
                    int(value) if field.type in ("int", int) else value
                )
        kwargs[name] = cls(**typed)
    return det.build_registry(**kwargs)


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------


def _raw_inputs(raw_dir: Path) -> list[Path]:
    names = [
        p
        for p in sorted(raw_dir.iterdir())
        if p.is_file() and (p.name.endswith(".csv") or p.name.endswith(".csv.gz"))
    ]
    return names


def _steps_worker(args: tuple) -> tuple[str, dict[str, float], str]:
    """Process one raw file into a minute-level output; returns timings."""
    path_text, out_dir_text, schema, detector_params = args
    path = Path(path_text)
    subject = path.name.split(".")[0]
    try:
        registry = _build_registry(detector_params)
        chunks = list(ingest.read_raw_recording(path, schema))
        x = np.concatenate([c.x for c in chunks])
        y = np.concatenate([c.y for c in chunks])
        z = np.concatenate([c.z for c in chunks])
        from .model import TriaxialRecording

        rec = TriaxialRecording(subject, x, y, z, schema.sample_rate_hz)
        vm = vector_magnitude(rec)
        n_seconds = int(len(vm) // vm.sample_rate_hz)
        n_minutes = max(1, (n_seconds + 59) // 60)
        run = det.run_detectors(vm, registry, n_minutes=n_minutes)
        if run.errors:
            raise RuntimeError(
                "; ".join(f"{k}: {v}" for k, v in sorted(run.errors.items()))
            )
        ac = activity_counts(rec, AcParams())
        mims = mims_units(rec, MimsParams())
        records = []
        for minute in range(n_minutes):
            steps = {
                name: float(run.minutes[name][minute]) for name in sorted(run.minutes)
            }
            records.append(
                MinuteRecord(
                    subject_id=subject,
                    day_index=1 + minute // 1440,
                    minute_of_day=minute % 1440,
                    wear=WearState.UNKNOWN,
                    quality_flagged=False,
                    mims=float(mims[minute]) if minute < len(mims) else 0.0,
                    ac=int(ac[minute]) if minute < len(ac) else 0,
                    steps=steps,
                )
            )
        out_path = Path(out_dir_text) / f"{subject}_minutes.csv"
        ingest.write_minute_file(records, out_path)
        return subject, dict(run.timings_s), ""
    except Exception as exc:  # noqa: BLE001 - per-subject isolation
        return subject, {}, f"{type(exc).__name__}: {exc}"


def cmd_steps(args: argparse.Namespace) -> int:
    cfg, detector_params = load_config(args.config, args.seed)
    raw_dir = Path(args.raw_dir)
    if not raw_dir.is_dir():
        raise FatalCliError(f"raw directory {raw_dir} does not exist")
    inputs = _raw_inputs(raw_dir)
    if not inputs:
        raise FatalCliError(f"no subjects: no raw .csv/.csv.gz files in {raw_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema = ingest.RawFileSchema(
        sample_rate_hz=args.rate,
        has_header=not args.no_header,
        has_timestamp=args.has_timestamp,
    )
    work = [(str(p), str(out_dir), schema, detector_params) for p in inputs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_steps_worker, work))
    else:
        results = [_steps_worker(item) for item in work]
    failures = 0
    for subject, timings, error in sorted(results):
        if error:
            failures += 1
            _log(f"subject {subject}: FAILED ({error})")
        else:
            timing_text = ", ".join(
                f"{name} {seconds:.2f}s" for name, seconds in sorted(timings.items())
            )
            _log(f"subject {subject}: ok ({timing_text})")
    _log(f"steps: {len(results) - failures}/{len(results)} subjects processed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _load_minutes(minute_path: Path) -> list[MinuteRecord]:
    if minute_path.is_dir():
        files = sorted(minute_path.glob("*.csv"))
        if not files:
            raise FatalCliError(f"no minute files in {minute_path}")
        records: list[MinuteRecord] = []
        for f in files:
            records.extend(ingest.read_minute_file(f))
    elif minute_path.is_file():
        records = ingest.read_minute_file(minute_path)
    else:
        raise FatalCliError(f"minute input {minute_path} does not exist")
    from .model import check_unique_minutes

    check_unique_minutes(records)
    return records


AGE_GROUP_WIDTH = 10


def _age_group(age: float, cfg: AnalysisConfig) -> str:
    lo = cfg.age_range[0] + AGE_GROUP_WIDTH * int(
        (age - cfg.age_range[0]) // AGE_GROUP_WIDTH
    )
    hi = min(lo + AGE_GROUP_WIDTH - 1, cfg.age_range[1])
    return f"{lo}-{hi}"


def build_survival_dataset(
    summaries: Sequence[SubjectSummary],
    covariates: Sequence[SubjectCovariates],
    mortality: Sequence[MortalityRecord],
    cfg: AnalysisConfig,
    measures: Sequence[str],
) -> tuple[survival.SurvivalDataset | None, list[str], list[str]]:
    """Assemble the complete-case survival design matrix.

    Categorical covariates are dummy-encoded against their first level;
    activity measures are winsorized at ``cfg.winsor_percentile``.  Columns
    that end up constant in the analysis sample are dropped (returned for
    logging).  Subjects missing covariates or mortality are likewise
    returned as join failures.
    """
    cov_by_id = {c.subject_id: c for c in covariates}
    mort_by_id = {m.subject_id: m for m in mortality}
    join_failures: list[str] = []
    rows: list[tuple[SubjectSummary, SubjectCovariates, MortalityRecord]] = []
    for s in sorted(summaries, key=lambda s: s.subject_id):
        if not s.included:
            continue
        cov = cov_by_id.get(s.subject_id)
        mort = mort_by_id.get(s.subject_id)
        if cov is None or mort is None:
            join_failures.append(s.subject_id)
            continue
        if cov.has_missing:
            continue
        assert cov.age_years is not None
        if not cfg.age_range[0] <= cov.age_years <= cfg.age_range[1]:
            continue
        rows.append((s, cov, mort))
    if not rows or not any(m.event for _, _, m in rows):
        return None, join_failures, []

    names: list[str] = ["age"]
    for cat, levels in CATEGORICAL_LEVELS.items():
        names.extend(f"{cat}_{level}" for level in levels[1:])
    names.extend(BOOLEAN_COVARIATES)
    names.extend(measures)

    matrix = np.zeros((len(rows), len(names)))
    for i, (s, cov, _mort) in enumerate(rows):
        col = 0
        matrix[i, col] = float(cov.age_years)
        col += 1
        for cat, levels in CATEGORICAL_LEVELS.items():
            value = getattr(cov, cat)
            for level in levels[1:]:
                matrix[i, col] = 1.0 if value == level else 0.0
                col += 1
        for boolean in BOOLEAN_COVARIATES:
            matrix[i, col] = 1.0 if getattr(cov, boolean) else 0.0
            col += 1
        for measure in measures:
            matrix[i, col] = s.means.get(measure, 0.0)
            col += 1

    for j, name in enumerate(names):
        if name in measures:
            matrix[:, j] = stats.winsorize_upper(matrix[:, j], cfg.winsor_percentile)

    keep = [j for j in range(len(names)) if np.ptp(matrix[:, j]) > 0.0]
    dropped = [names[j] for j in range(len(names)) if j not in keep]
    kept_names = tuple(names[j] for j in keep)
    data = survival.SurvivalDataset(
        followup_months=np.array([m.followup_months for _, _, m in rows]),
        event=np.array([m.event for _, _, m in rows], dtype=bool),
        covariates=matrix[:, keep],
        weights=np.array([c.survey_weight for _, c, _ in rows]),
        covariate_names=kept_names,
        subject_ids=tuple(s.subject_id for s, _, _ in rows),
    )
    return data, join_failures, dropped


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg, _detector_params = load_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = "" if cfg.min_valid_days == 3 else f"_minvd{cfg.min_valid_days}"

    def out_path(stem: str) -> Path:
        return out_dir / f"{stem}{suffix}.csv"

    minutes = _load_minutes(Path(args.minutes))
    minutes = validity.impute_unknown_as_wear(minutes)
    days_by_subject, subject_summaries = validity.screen_cohort(minutes, cfg)

    validity_rows = []
    for subject in sorted(subject_summaries):
        summary = subject_summaries[subject]
        validity_rows.append(
            {
                "subject": subject,
                "n_valid_days": summary.n_valid_days,
                "included": int(summary.included),
                "exclusion_reason": validity.exclusion_reason(summary, cfg),
            }
        )
    ingest.write_table(
        validity_rows,
        out_path("validity_report"),
        fieldnames=["subject", "n_valid_days", "included", "exclusion_reason"],
    )

    day_rows = []
    for subject in sorted(days_by_subject):
        for day in days_by_subject[subject]:
            day_rows.append(
                {
                    "subject": day.subject_id,
                    "day": day.day_index,
                    "n_valid_minutes": day.n_valid_minutes,
                    "n_wake_minutes": day.n_wake_minutes,
                    "n_nonzero_mims_minutes": day.n_nonzero_mims_minutes,
                    "valid": int(day.valid),
                }
            )
    ingest.write_table(
        day_rows,
        out_path("day_summaries"),
        fieldnames=[
            "subject", "day", "n_valid_minutes", "n_wake_minutes",
            "n_nonzero_mims_minutes", "valid",
        ],
    )

    summaries = [subject_summaries[s] for s in sorted(subject_summaries)]
    ingest.write_subject_summaries(summaries, out_path("subject_summaries"))

    matrix, labels = validity.unknown_bout_transition_matrix(minutes)
    transition_rows = [
        {"preceding": labels[i], "following": labels[j], "proportion": float(matrix[i, j])}
        for i in range(len(labels))
        for j in range(len(labels))
    ]
    ingest.write_table(
        transition_rows,
        out_path("unknown_transitions"),
        fieldnames=["preceding", "following", "proportion"],
    )

    covariates = ingest.read_covariates(args.covariates)
    cov_by_id = {c.subject_id: c for c in covariates}
    included = [s for s in summaries if s.included]
    with_cov = [s for s in included if s.subject_id in cov_by_id]
    missing_cov = sorted(s.subject_id for s in included if s.subject_id not in cov_by_id)
    if missing_cov:
        _log(f"analyze: {len(missing_cov)} subject(s) missing covariates: "
             + ", ".join(missing_cov))
    measures = sorted({k for s in with_cov for k in s.means})
    activity_measures = [m for m in measures if m.startswith("steps_")] + [
        m for m in ("ac", "mims") if m in measures
    ]

    # survey-weighted means by wave and age group
    mean_rows = []
    waves = sorted({cov_by_id[s.subject_id].wave for s in with_cov})
    wave_all_means: dict[tuple[str, str], float] = {}
    for wave in waves:
        in_wave = [
            s
            for s in with_cov
            if cov_by_id[s.subject_id].wave == wave
            and cov_by_id[s.subject_id].age_years is not None
            and cfg.age_range[0]
            <= cov_by_id[s.subject_id].age_years
            <= cfg.age_range[1]
        ]
        groups: dict[str, list[SubjectSummary]] = {"all": in_wave}
        for s in in_wave:
            groups.setdefault(
                _age_group(cov_by_id[s.subject_id].age_years, cfg), []
            ).append(s)
        for group in sorted(groups):
            members = groups[group]
            for measure in activity_measures:
                values = [m.means.get(measure, 0.0) for m in members]
                if not values:
                    continue
                covs = [cov_by_id[m.subject_id] for m in members]
                weights = [c.survey_weight for c in covs]
                strata = [c.stratum_id for c in covs]
                psus = [(c.stratum_id, c.psu_id) for c in covs]
                mean, se = stats.weighted_mean_se(values, weights, strata, psus)
                mean_rows.append(
                    {
                        "wave": wave,
                        "age_group": group,
                        "measure": measure,
                        "n": len(members),
                        "mean": mean,
                        "se": se,
                    }
                )
                if group == "all":
                    wave_all_means[(wave, measure)] = mean
    ingest.write_table(
        mean_rows,
        out_path("weighted_means"),
        fieldnames=["wave", "age_group", "measure", "n", "mean", "se"],
    )

    diff_rows = []
    if len(waves) == 2:
        for measure in activity_measures:
            a = wave_all_means.get((waves[0], measure))
            b = wave_all_means.get((waves[1], measure))
            if a is None or b is None or a <= 0 or b <= 0:
                continue
            diff_rows.append(
                {
                    "measure": measure,
                    "wave_a": waves[0],
                    "wave_b": waves[1],
                    "estimate_a": a,
                    "estimate_b": b,
                    "percent_diff": stats.between_wave_percent_diff(a, b),
                }
            )
    ingest.write_table(
        diff_rows,
        out_path("between_wave_diff"),
        fieldnames=[
            "measure", "wave_a", "wave_b", "estimate_a", "estimate_b", "percent_diff",
        ],
    )

    # age curves: weighted mean per integer age, then tricube local-linear smooth
    curve_rows = []
    pct_rows = []
    for measure in activity_measures:
        by_age: dict[int, list[SubjectSummary]] = {}
        for s in with_cov:
            cov = cov_by_id[s.subject_id]
            if cov.age_years is None:
                continue
            age = int(math.floor(cov.age_years))
            if cfg.age_range[0] <= age <= cfg.age_range[1]:
                by_age.setdefault(age, []).append(s)
        ages, means, ses = [], [], []
        for age in sorted(by_age):
            members = by_age[age]
            values = [m.means.get(measure, 0.0) for m in members]
            weights = [cov_by_id[m.subject_id].survey_weight for m in members]
            mean, se = stats.weighted_mean_se(values, weights)
            ages.append(float(age))
            means.append(mean)
            ses.append(se)
        if len(set(ages)) < 5:
            _log(f"analyze: too few distinct ages for {measure} curve; skipped")
            continue
        curve = stats.local_weighted_smooth(ages, means, ses)
        for i in range(len(curve.ages)):
            curve_rows.append(
                {
                    "measure": measure,
                    "age": int(curve.ages[i]),
                    "mean": float(curve.estimate[i]),
                    "se": float(curve.se[i]),
                    "ci_lower": float(curve.ci_lower[i]),
                    "ci_upper": float(curve.ci_upper[i]),
                }
            )
        if np.all(curve.estimate[:-1] != 0.0):
            pct_ages, pct = stats.percent_change_by_age(curve)
            for age, value in zip(pct_ages, pct):
                pct_rows.append(
                    {"measure": measure, "age": int(age), "percent_change": float(value)}
                )
    ingest.write_table(
        curve_rows,
        out_path("age_curves"),
        fieldnames=["measure", "age", "mean", "se", "ci_lower", "ci_upper"],
    )
    ingest.write_table(
        pct_rows,
        out_path("age_percent_change"),
        fieldnames=["measure", "age", "percent_change"],
    )

    # unweighted pairwise correlations between activity measures
    corr_rows = []
    rows_for_corr = [s.means for s in with_cov]
    for method in ("pearson", "spearman"):
        matrix = stats.correlation_matrix(rows_for_corr, activity_measures, method)
        for i, a in enumerate(activity_measures):
            for j, b in enumerate(activity_measures):
                corr_rows.append(
                    {
                        "method": method,
                        "var_a": a,
                        "var_b": b,
                        "correlation": float(matrix[i, j]),
                    }
                )
    ingest.write_table(
        corr_rows,
        out_path("correlations"),
        fieldnames=["method", "var_a", "var_b", "correlation"],
    )

    # survival analyses
    partial_failure = False
    mortality_path = Path(args.mortality) if args.mortality else None
    if mortality_path is None or not mortality_path.exists():
        _log("analyze: mortality file missing; survival tables skipped")
        return 0
    mortality = ingest.read_mortality(mortality_path)
    data, join_failures, dropped = build_survival_dataset(
        summaries, covariates, mortality, cfg, activity_measures
    )
    if join_failures:
        _log(
            f"analyze: {len(join_failures)} subject(s) missing mortality/covariates: "
            + ", ".join(join_failures)
        )
    if dropped:
        _log("analyze: dropped constant design columns: " + ", ".join(dropped))
    if data is None:
        _log("analyze: no usable survival sample; survival tables skipped")
        return 0

    step_measures = [m for m in activity_measures if m in data.covariate_names]
    traditional = [
        n for n in data.covariate_names if n not in activity_measures
    ]

    def univariate(measure: str) -> tuple[str, float, str]:
        try:
            value, _ = survival.repeated_cv_concordance(data, [measure], cfg)
            return measure, value, ""
        except Exception as exc:  # noqa: BLE001 - per-measure isolation
            return measure, math.nan, f"{type(exc).__name__}: {exc}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            uni_results = list(pool.map(univariate, step_measures))
    else:
        uni_results = [univariate(m) for m in step_measures]
    uni_rows = []
    for measure, value, error in sorted(uni_results):
        if error:
            partial_failure = True
            _log(f"analyze: univariate cvC failed for {measure}: {error}")
        uni_rows.append({"measure": measure, "cv_concordance": value})
    ingest.write_table(
        uni_rows, out_path("univariate_cvc"), fieldnames=["measure", "cv_concordance"]
    )

    model_rows = []
    try:
        reports = survival.model_suite(data, cfg, traditional=traditional)
        for report in reports:
            model_rows.append(
                {
                    "model": report.name,
                    "concordance": report.concordance,
                    "steps_variable": report.steps_variable or "",
                    "steps_hr": report.steps_hr_per_500,
                    "steps_hr_lower": report.steps_hr_ci[0] if report.steps_hr_ci else None,
                    "steps_hr_upper": report.steps_hr_ci[1] if report.steps_hr_ci else None,
                    "steps_p": report.steps_p,
                }
            )
    except Exception as exc:  # noqa: BLE001 - keep the remaining tables
        partial_failure = True
        _log(f"analyze: model suite failed: {type(exc).__name__}: {exc}")
    ingest.write_table(
        model_rows,
        out_path("model_suite"),
        fieldnames=[
            "model", "concordance", "steps_variable", "steps_hr",
            "steps_hr_lower", "steps_hr_upper", "steps_p",
        ],
    )

    hr_rows = []
    steps_only = [m for m in step_measures if m.startswith("steps_")]
    for measure in steps_only:
        try:
            adjusted = survival.cox_fit(data.select(traditional + [measure]))
            hr, lo, hi = survival.hazard_ratio(adjusted, measure, cfg.hr_step_increment)
            scaled_data = survival.standardize(
                data.select(traditional + [measure]), measure
            )
            scaled_fit = survival.cox_fit(scaled_data)
            shr, slo, shi = survival.hazard_ratio(scaled_fit, measure, 1.0)
            _, sd = scaled_data.scaling[measure]
            hr_rows.append(
                {
                    "measure": measure,
                    "hr_per_increment": hr,
                    "hr_lower": lo,
                    "hr_upper": hi,
                    "scaled_hr": shr,
                    "scaled_hr_lower": slo,
                    "scaled_hr_upper": shi,
                    "sd_thousands": sd / 1000.0,
                }
            )
        except Exception as exc:  # noqa: BLE001 - per-measure isolation
            partial_failure = True
            _log(f"analyze: hazard-ratio fit failed for {measure}: "
                 f"{type(exc).__name__}: {exc}")
    ingest.write_table(
        hr_rows,
        out_path("hazard_ratios"),
        fieldnames=[
            "measure", "hr_per_increment", "hr_lower", "hr_upper",
            "scaled_hr", "scaled_hr_lower", "scaled_hr_upper", "sd_thousands",
        ],
    )

    return 1 if partial_failure else 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_day_recipe() -> list[simulate.GaitSegment]:
    """One day alternating 30 min walking with 30 min rest."""
    segments = []
    for half_hour in range(48):
        if half_hour % 2 == 0:
            segments.append(
                simulate.GaitSegment(
                    "walk", 1800, cadence_hz=1.9, amplitude_g=0.35, noise_sd_g=0.05
                )
            )
        else:
            segments.append(simulate.GaitSegment("rest", 1800, noise_sd_g=0.02))
    return segments


def cmd_bench(args: argparse.Namespace) -> int:
    detector_names = [d for d in args.detectors.split(",") if d]
    if not detector_names:
        raise FatalCliError("0 detectors requested")
    registry = det.build_registry()
    unknown = [d for d in detector_names if d not in registry]
    if unknown:
        raise FatalCliError(f"unknown detectors: {', '.join(unknown)}")
    recipe = _bench_day_recipe()
    totals = {name: 0.0 for name in detector_names}
    for subject in range(args.subjects):
        for day in range(args.days):
            rec, _ = simulate.gen_gait(
                recipe,
                sample_rate_hz=args.rate,
                seed=args.seed_base + 1000 * subject + day,
                subject_id=f"B{subject:03d}",
            )
            vm = vector_magnitude(rec)
            for name in detector_names:
                start = time.perf_counter()
                registry[name](vm)
                totals[name] += time.perf_counter() - start
        _log(f"bench: subject {subject + 1}/{args.subjects} done")
    rows = []
    for name in detector_names:
        seconds = totals[name]
        rows.append(
            {
                "detector": name,
                "total_seconds": seconds,
                "minutes_per_10_subjects": (seconds / 60.0) * (10.0 / args.subjects),
            }
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ingest.write_table(
        rows, out, fieldnames=["detector", "total_seconds", "minutes_per_10_subjects"]
    )
    for row in rows:
        _log(
            f"bench: {row['detector']}: {row['minutes_per_10_subjects']:.2f} "
            "min per 10 subjects"
        )
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    minutes = simulate.gen_cohort(args.subjects, args.days, seed=cfg.rng_seed)
    ingest.write_minute_file(minutes, out_dir / "minutes.csv")
    subject_ids = sorted({m.subject_id for m in minutes})
    covariates = simulate.gen_covariates(
        subject_ids, seed=cfg.rng_seed + 1, age_range=(45.0, 84.0)
    )
    ingest.write_covariates(covariates, out_dir / "covariates.csv")

    _, summaries = validity.screen_cohort(
        validity.impute_unknown_as_wear(minutes), cfg
    )
    first_steps_key = None
    for s in summaries.values():
        for key in sorted(s.means):
            if key.startswith("steps_"):
                first_steps_key = key
                break
        if first_steps_key:
            break
    mean_steps = {
        subject: summaries[subject].means.get(first_steps_key, 0.0)
        if first_steps_key
        else 0.0
        for subject in subject_ids
    }
    ages = {
        c.subject_id: c.age_years if c.age_years is not None else 60.0
        for c in covariates
    }
    mortality = simulate.gen_mortality_from_summary(
        mean_steps, ages, seed=cfg.rng_seed + 2, baseline_hazard=6e-3
    )
    ingest.write_mortality(mortality, out_dir / "mortality.csv")

    if args.raw_subjects > 0:
        raw_dir = out_dir / "raw"
        raw_dir.mkdir(exist_ok=True)
        recipe = [
            simulate.GaitSegment("rest", 30, noise_sd_g=0.02),
            simulate.GaitSegment("walk", 60, cadence_hz=2.0, amplitude_g=0.35,
                                 noise_sd_g=0.02),
            simulate.GaitSegment("rest", 30, noise_sd_g=0.02),
        ]
        for i in range(args.raw_subjects):
            rec, _ = simulate.gen_gait(
                recipe, seed=cfg.rng_seed + i, subject_id=f"R{i + 1:04d}"
            )
            path = raw_dir / f"R{i + 1:04d}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("x,y,z\n")
                for x, y, z in zip(rec.x, rec.y, rec.z):
                    fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")
    _log(
        f"simulate: wrote {len(subject_ids)} subjects x {args.days} days to {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepforge",
        description="Step counting, activity summaries, and survival analysis "
        "for wrist accelerometry.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override rng_seed")
        p.add_argument("--jobs", type=int, default=1, help="worker count")

    p_steps = sub.add_parser("steps", help="raw recordings -> minute-level files")
    common(p_steps)
    p_steps.add_argument("raw_dir", help="directory of raw .csv/.csv.gz files")
    p_steps.add_argument("--out", required=True, help="output directory")
    p_steps.add_argument("--rate", type=float, default=80.0, help="sample rate (Hz)")
    p_steps.add_argument("--no-header", action="store_true")
    p_steps.add_argument("--has-timestamp", action="store_true")
    p_steps.set_defaults(func=cmd_steps)

    p_an = sub.add_parser("analyze", help="minute files -> report tables")
    common(p_an)
    p_an.add_argument("minutes", help="minute-level csv file or directory")
    p_an.add_argument("--covariates", required=True)
    p_an.add_argument("--mortality", default=None)
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.set_defaults(func=cmd_analyze)

    p_bench = sub.add_parser("bench", help="synthetic detector timing table")
    common(p_bench)
    p_bench.add_argument("--subjects", type=int, default=10)
    p_bench.add_argument("--days", type=int, default=7)
    p_bench.add_argument("--rate", type=float, default=80.0)
    p_bench.add_argument(
        "--detectors",
        default=",".join(det.BUILTIN_DETECTOR_NAMES),
        help="comma-separated detector names",
    )
    p_bench.add_argument("--seed-base", type=int, default=0)
    p_bench.add_argument("--out", required=True, help="output csv path")
    p_bench.set_defaults(func=cmd_bench)

    p_sim = sub.add_parser("simulate", help="write a synthetic cohort corpus")
    common(p_sim)
    p_sim.add_argument("--subjects", type=int, default=20)
    p_sim.add_argument("--days", type=int, default=4)
    p_sim.add_argument("--raw-subjects", type=int, default=0,
                       help="also write this many raw gait files")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FatalCliError as exc:
        _log(f"error: {exc}")
        return 2
    except (OSError, ValueError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
