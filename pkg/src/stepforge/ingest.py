"""Streaming readers/writers for raw recordings and analysis tables.

Raw accelerometer payloads are delimiter-separated text (optionally gzip),
streamed in hour-sized chunks; a little-endian float32 binary cache with
magic ``SFG1`` is written beside each text file on first read so re-runs
skip parsing.  Table I/O round-trips exactly: floats are serialized with
``repr`` so ``read(write(x)) == x`` bit for bit.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .model import (
    AGE_TOPCODE,
    BOOLEAN_COVARIATES,
    CATEGORICAL_LEVELS,
    MinuteRecord,
    MortalityRecord,
    SubjectCovariates,
    SubjectSummary,
    TriaxialRecording,
    WearState,
    check_unique_minutes,
)

CACHE_MAGIC = b"SFG1"
CACHE_SUFFIX = ".sfg1"


@dataclass(frozen=True)
class RawFileSchema:
    """Layout of a raw triaxial text file.

    ``has_timestamp`` marks a leading time/sample-index column; the three
    acceleration columns follow in x, y, z order.  When timestamps are
    present the declared rate must match the observed cadence within one
    part in 10^4.
    """

    sample_rate_hz: float = 80.0
    delimiter: str = ","
    has_header: bool = True
    has_timestamp: bool = False
    gzipped: bool = False

    def __post_init__(self) -> None:
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")

    @property
    def n_columns(self) -> int:
        return 4 if self.has_timestamp else 3


def _open_text(path: Path, schema: RawFileSchema) -> io.TextIOBase:
    if schema.gzipped or path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def cache_path(path: str | os.PathLike) -> Path:
    return Path(path).with_name(Path(path).name + CACHE_SUFFIX)


def write_binary_cache(
    path: str | os.PathLike, x: np.ndarray, y: np.ndarray, z: np.ndarray
) -> None:
    """Write the SFG1 cache: magic, u32 sample count, f32 x/y/z blocks."""
    xs = np.asarray(x, dtype="<f4")
    ys = np.asarray(y, dtype="<f4")
    zs = np.asarray(z, dtype="<f4")
    if not len(xs) == len(ys) == len(zs):
        raise ValueError("axes must have equal lengths")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(xs)))
        fh.write(xs.tobytes())
        fh.write(ys.tobytes())
        fh.write(zs.tobytes())


def read_binary_cache(
    path: str | os.PathLike,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read an SFG1 cache back into float32 axis arrays."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise ValueError(f"{path}: not an SFG1 cache (magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        payload = fh.read()
    expected = 3 * 4 * count
    if len(payload) != expected:
        raise ValueError(
            f"{path}: truncated cache ({len(payload)} payload bytes, "
            f"expected {expected})"
        )
    block = count * 4
    x = np.frombuffer(payload[:block], dtype="<f4")
    y = np.frombuffer(payload[block : 2 * block], dtype="<f4")
    z = np.frombuffer(payload[2 * block :], dtype="<f4")
    return x.copy(), y.copy(), z.copy()


def _parse_raw_rows(
    path: Path, schema: RawFileSchema
) -> Iterator[tuple[float | None, float, float, float]]:
    with _open_text(path, schema) as fh:
        line_no = 0
        if schema.has_header:
            fh.readline()
            line_no = 1
        for line in fh:
            line_no += 1
            line = line.strip()
            if not line:
                continue
            parts = line.split(schema.delimiter)
            if len(parts) != schema.n_columns:
                raise ValueError(
                    f"{path}:{line_no}: expected {schema.n_columns} columns, "
                    f"got {len(parts)}"
                )
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{line_no}: malformed row {line!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"{path}:{line_no}: non-finite value in {line!r}")
            if schema.has_timestamp:
                yield values[0], values[1], values[2], values[3]
            else:
                yield None, values[0], values[1], values[2]


def _check_cadence(
    timestamps: Sequence[float], schema: RawFileSchema, path: Path
) -> None:
    if len(timestamps) < 2:
        return
    span = timestamps[-1] - timestamps[0]
    if span <= 0:
        return
    observed = (len(timestamps) - 1) / span
    if abs(observed - schema.sample_rate_hz) > 1e-4 * schema.sample_rate_hz:
        raise ValueError(
            f"{path}: declared rate {schema.sample_rate_hz} Hz but rows run at "
            f"{observed:.6f} Hz"
        )


def read_raw_recording(
    path: str | os.PathLike,
    schema: RawFileSchema,
    subject_id: str | None = None,
    chunk_seconds: float = 3600.0,
    use_cache: bool = True,
) -> Iterator[TriaxialRecording]:
    """Stream a raw file as hour-sized :class:`TriaxialRecording` chunks.

    Values are cast to float32 on read so text and binary-cache paths yield
    bit-identical samples.  On the first text read an SFG1 cache is written
    next to the file (atomically, via a temp file); later reads stream from
    the cache.  Memory stays bounded by the chunk size either way.
    """
    path = Path(path)
    if subject_id is None:
        subject_id = path.name.split(".")[0]
    chunk_len = max(1, int(round(chunk_seconds * schema.sample_rate_hz)))

    cache = cache_path(path)
    if use_cache and cache.exists():
        x, y, z = read_binary_cache(cache)
        for start in range(0, len(x), chunk_len):
            sl = slice(start, start + chunk_len)
            yield TriaxialRecording(
                subject_id, x[sl], y[sl], z[sl], schema.sample_rate_hz
            )
        return

    bufs: list[list[float]] = [[], [], []]
    stamps: list[float] = []
    last_stamp: float | None = None
    total = 0
    tmp_files = None
    if use_cache:
        tmp_files = [
            tempfile.NamedTemporaryFile(
                mode="wb", delete=False, dir=cache.parent, suffix=".tmp"
            )
            for _ in range(3)
        ]
    try:
        for stamp, x, y, z in _parse_raw_rows(path, schema):
            if stamp is not None:
                if last_stamp is not None and stamp <= last_stamp:
                    raise ValueError(
                        f"{path}: non-monotone timestamp {stamp} after {last_stamp}"
                    )
                last_stamp = stamp
                stamps.append(stamp)
            bufs[0].append(x)
            bufs[1].append(y)
            bufs[2].append(z)
            total += 1
            if len(bufs[0]) == chunk_len:
                yield from _flush_chunk(bufs, subject_id, schema, tmp_files)
        if bufs[0]:
            yield from _flush_chunk(bufs, subject_id, schema, tmp_files)
        _check_cadence(stamps, schema, path)
        if tmp_files is not None:
            _assemble_cache(cache, tmp_files, total)
            tmp_files = None
    finally:
        if tmp_files is not None:
            for tf in tmp_files:
                tf.close()
                os.unlink(tf.name)


def _flush_chunk(bufs, subject_id, schema, tmp_files) -> Iterator[TriaxialRecording]:
    arrays = [np.array(b, dtype=np.float32) for b in bufs]
    for b in bufs:
        b.clear()
    if tmp_files is not None:
        for tf, arr in zip(tmp_files, arrays):
            tf.write(arr.astype("<f4").tobytes())
    yield TriaxialRecording(
        subject_id, arrays[0], arrays[1], arrays[2], schema.sample_rate_hz
    )


def _assemble_cache(cache: Path, tmp_files, total: int) -> None:
    for tf in tmp_files:
        tf.close()
    final_tmp = cache.with_name(cache.name + ".partial")
    with open(final_tmp, "wb") as out:
        out.write(CACHE_MAGIC)
        out.write(struct.pack("<I", total))
        for tf in tmp_files:
            with open(tf.name, "rb") as src:
                while True:
                    block = src.read(1 << 20)
                    if not block:
                        break
                    out.write(block)
    for tf in tmp_files:
        os.unlink(tf.name)
    os.replace(final_tmp, cache)


# ---------------------------------------------------------------------------
# Delimited tables
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_table(
    rows: Sequence[Mapping[str, object]],
    path: str | os.PathLike,
    fieldnames: Sequence[str] | None = None,
) -> None:
    """Write dict rows as UTF-8 CSV with a deterministic column order.

    Columns follow ``fieldnames`` when given, else the first row's key
    order; floats use ``repr`` so a re-read reproduces them exactly.
    """
    if fieldnames is None:
        if not rows:
            raise ValueError("fieldnames required when rows is empty")
        fieldnames = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            if set(row.keys()) != set(fieldnames):
                raise ValueError("row keys do not match fieldnames")
            writer.writerow([_fmt(row[k]) for k in fieldnames])


def read_table(path: str | os.PathLike) -> list[dict[str, str]]:
    """Read a CSV written by :func:`write_table` back into string dicts."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [dict(row) for row in reader]


def _parse_float(text: str, context: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{context}: bad number {text!r}") from None


def _parse_int(text: str, context: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{context}: bad integer {text!r}") from None


# ---------------------------------------------------------------------------
# Minute-level files
# ---------------------------------------------------------------------------

_WEAR_LABELS = {state.value: state for state in WearState}
MINUTE_BASE_COLUMNS = ("subject", "day", "minute", "wear", "flag", "mims", "ac")


def read_minute_file(path: str | os.PathLike) -> list[MinuteRecord]:
    """Parse ``subject,day,minute,wear,flag,mims[,ac][,steps_*...]`` rows."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        required = {"subject", "day", "minute", "wear", "flag", "mims"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        step_cols = [c for c in reader.fieldnames if c.startswith("steps_")]
        records: list[MinuteRecord] = []
        for idx, row in enumerate(reader, start=2):
            ctx = f"{path}:{idx}"
            wear_label = row["wear"].strip().lower()
            if wear_label not in _WEAR_LABELS:
                raise ValueError(f"{ctx}: unknown wear label {row['wear']!r}")
            steps = {
                c[len("steps_") :]: _parse_float(row[c], ctx) for c in step_cols
            }
            records.append(
                MinuteRecord(
                    subject_id=row["subject"],
                    day_index=_parse_int(row["day"], ctx),
                    minute_of_day=_parse_int(row["minute"], ctx),
                    wear=_WEAR_LABELS[wear_label],
                    quality_flagged=bool(_parse_int(row["flag"], ctx)),
                    mims=_parse_float(row["mims"], ctx),
                    ac=_parse_float(row.get("ac") or "0", ctx),
                    steps=steps,
                )
            )
    check_unique_minutes(records)
    return records


def write_minute_file(
    records: Sequence[MinuteRecord], path: str | os.PathLike
) -> None:
    """Write minute records with step columns in sorted detector order."""
    detector_names = sorted({name for r in records for name in r.steps})
    fieldnames = list(MINUTE_BASE_COLUMNS) + [f"steps_{n}" for n in detector_names]
    rows = []
    for r in records:
        row: dict[str, object] = {
            "subject": r.subject_id,
            "day": r.day_index,
            "minute": r.minute_of_day,
            "wear": r.wear.value,
            "flag": int(r.quality_flagged),
            "mims": float(r.mims),
            "ac": float(r.ac),
        }
        for n in detector_names:
            row[f"steps_{n}"] = float(r.steps.get(n, 0.0))
        rows.append(row)
    write_table(rows, path, fieldnames=fieldnames)


# ---------------------------------------------------------------------------
# Covariates and mortality
# ---------------------------------------------------------------------------

_COVARIATE_COLUMNS = (
    ("subject", True),
    ("wave", True),
    ("age", False),
    ("sex", False),
    ("race_ethnicity", False),
    ("education", False),
    ("bmi_category", False),
    ("alcohol", False),
    ("smoking", False),
    ("self_reported_health", False),
    ("weight", True),
    ("stratum", True),
    ("psu", True),
)


def read_covariates(path: str | os.PathLike) -> list[SubjectCovariates]:
    """Read the subject covariate table.

    Empty categorical cells become record-level missing values, except
    alcohol, which maps to its explicit "Missing alcohol" level.  Ages above
    the topcode are clamped and flagged.
    """
    path = Path(path)
    out: list[SubjectCovariates] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        required = [c for c, req in _COVARIATE_COLUMNS if req]
        missing = set(required) - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for idx, row in enumerate(reader, start=2):
            ctx = f"{path}:{idx}"
            weight = _parse_float(row["weight"], ctx)
            if weight <= 0:
                raise ValueError(f"{ctx}: survey weight must be positive")
            age_text = (row.get("age") or "").strip()
            age = _parse_float(age_text, ctx) if age_text else None
            topcoded = False
            # the source convention: the topcode value means "that age or older"
            if age is not None and age >= AGE_TOPCODE:
                age, topcoded = AGE_TOPCODE, True

            def cat(col: str) -> str | None:
                value = (row.get(col) or "").strip()
                return value or None

            alcohol = cat("alcohol") or "missing_alcohol"

            def boolean(col: str) -> bool | None:
                value = (row.get(col) or "").strip()
                if not value:
                    return None
                return bool(_parse_int(value, ctx))

            out.append(
                SubjectCovariates(
                    subject_id=row["subject"],
                    wave=row["wave"],
                    age_years=age,
                    sex=cat("sex"),
                    race_ethnicity=cat("race_ethnicity"),
                    education=cat("education"),
                    bmi_category=cat("bmi_category"),
                    alcohol=alcohol,
                    smoking=cat("smoking"),
                    self_reported_health=cat("self_reported_health"),
                    diabetes=boolean("diabetes"),
                    chd=boolean("chd"),
                    chf=boolean("chf"),
                    heart_attack=boolean("heart_attack"),
                    stroke=boolean("stroke"),
                    cancer=boolean("cancer"),
                    mobility_problem=boolean("mobility_problem"),
                    survey_weight=weight,
                    stratum_id=row["stratum"],
                    psu_id=row["psu"],
                    age_topcoded=topcoded,
                )
            )
    return out


def write_covariates(
    records: Sequence[SubjectCovariates], path: str | os.PathLike
) -> None:
    fieldnames = (
        ["subject", "wave", "age", "sex", "race_ethnicity", "education",
         "bmi_category", "alcohol", "smoking", "self_reported_health"]
        + list(BOOLEAN_COVARIATES)
        + ["weight", "stratum", "psu"]
    )
    rows = []
    for r in records:
        row: dict[str, object] = {
            "subject": r.subject_id,
            "wave": r.wave,
            "age": r.age_years,
            "sex": r.sex,
            "race_ethnicity": r.race_ethnicity,
            "education": r.education,
            "bmi_category": r.bmi_category,
            "alcohol": r.alcohol,
            "smoking": r.smoking,
            "self_reported_health": r.self_reported_health,
            "weight": r.survey_weight,
            "stratum": r.stratum_id,
            "psu": r.psu_id,
        }
        for b in BOOLEAN_COVARIATES:
            row[b] = getattr(r, b)
        rows.append(row)
    write_table(rows, path, fieldnames=fieldnames)


def read_mortality(path: str | os.PathLike) -> list[MortalityRecord]:
    """Read ``subject,event,followup_months`` rows."""
    path = Path(path)
    out: list[MortalityRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = {"subject", "event", "followup_months"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for idx, row in enumerate(reader, start=2):
            ctx = f"{path}:{idx}"
            followup = _parse_float(row["followup_months"], ctx)
            if followup < 0:
                raise ValueError(f"{ctx}: negative follow-up")
            out.append(
                MortalityRecord(
                    subject_id=row["subject"],
                    event=bool(_parse_int(row["event"], ctx)),
                    followup_months=followup,
                )
            )
    return out


def write_mortality(
    records: Sequence[MortalityRecord], path: str | os.PathLike
) -> None:
    rows = [
        {
            "subject": r.subject_id,
            "event": int(r.event),
            "followup_months": float(r.followup_months),
        }
        for r in records
    ]
    write_table(rows, path, fieldnames=["subject", "event", "followup_months"])


# ---------------------------------------------------------------------------
# Externally computed step series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExternalStepSeries:
    """Minute-keyed step values computed outside this package."""

    detector_name: str
    values: Mapping[tuple[str, int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (subject, day, minute), steps in self.values.items():
            if not 0 <= minute <= 1439:
                raise ValueError(f"minute {minute} out of range for {subject}")
            if day < 1:
                raise ValueError(f"day {day} out of range for {subject}")
            if not steps >= 0:
                raise ValueError(f"negative steps for {subject} day {day}")


def import_external_steps(
    path: str | os.PathLike, detector_name: str
) -> ExternalStepSeries:
    """Read ``subject,day,minute,steps`` rows into an external series.

    The name must not collide with a built-in detector.
    """
    from .detectors import BUILTIN_DETECTOR_NAMES

    if detector_name in BUILTIN_DETECTOR_NAMES:
        raise ValueError(
            f"{detector_name!r} collides with a built-in detector name"
        )
    path = Path(path)
    values: dict[tuple[str, int, int], float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ExternalStepSeries(detector_name, {})
        missing = {"subject", "day", "minute", "steps"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for idx, row in enumerate(reader, start=2):
            ctx = f"{path}:{idx}"
            steps = _parse_float(row["steps"], ctx)
            if steps < 0:
                raise ValueError(f"{ctx}: negative steps")
            key = (
                row["subject"],
                _parse_int(row["day"], ctx),
                _parse_int(row["minute"], ctx),
            )
            if key in values:
                raise ValueError(f"{ctx}: duplicate minute key {key}")
            values[key] = steps
    return ExternalStepSeries(detector_name, values)


def merge_external_steps(
    minutes: Sequence[MinuteRecord], series: ExternalStepSeries
) -> list[MinuteRecord]:
    """Attach an external series to minute records under its detector name.

    Minutes without an external value get 0 steps for that detector;
    external values without a matching minute are ignored.
    """
    out = []
    for m in minutes:
        if series.detector_name in m.steps:
            raise ValueError(
                f"minute {m.key} already has steps for {series.detector_name!r}"
            )
        steps = dict(m.steps)
        steps[series.detector_name] = series.values.get(
            (m.subject_id, m.day_index, m.minute_of_day), 0.0
        )
        out.append(replace(m, steps=steps))
    return out


# ---------------------------------------------------------------------------
# Subject-summary tables (round-trippable)
# ---------------------------------------------------------------------------


def write_subject_summaries(
    summaries: Sequence[SubjectSummary], path: str | os.PathLike
) -> None:
    keys = sorted({k for s in summaries for k in s.means})
    fieldnames = ["subject", "n_valid_days", "included"] + [f"mean_{k}" for k in keys]
    rows = []
    for s in summaries:
        row: dict[str, object] = {
            "subject": s.subject_id,
            "n_valid_days": s.n_valid_days,
            "included": int(s.included),
        }
        for k in keys:
            row[f"mean_{k}"] = float(s.means[k]) if k in s.means else None
        rows.append(row)
    write_table(rows, path, fieldnames=fieldnames)


def read_subject_summaries(path: str | os.PathLike) -> list[SubjectSummary]:
    out = []
    for row in read_table(path):
        means = {
            k[len("mean_") :]: float(v)
            for k, v in row.items()
            if k.startswith("mean_") and v != ""
        }
        out.append(
            SubjectSummary(
                subject_id=row["subject"],
                n_valid_days=int(row["n_valid_days"]),
                included=bool(int(row["included"])),
                means=means,
            )
        )
    return out
