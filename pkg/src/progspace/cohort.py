"""Visit-level ingestion, imputation, vectorization and normalization.

Long-format assessment rows become one fixed-length vector per patient.
Feature columns are labelled ``code@month`` and laid out schedule-major.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    ConflictError,
    DegenerateInputError,
    ParseError,
    PreconditionError,
    SchemaError,
    UnimputableError,
    ValidationError,
)

log = logging.getLogger(__name__)

COHORT_LABELS = ("PD", "Prodromal", "HC", "SWEDD")
CSV_COLUMNS = ("patient_id", "cohort_label", "visit_month", "assessment_code", "value")
DEFAULT_SCHEDULE = (0, 12, 24, 36, 48)
SNAP_WINDOW = 3


@dataclass(frozen=True)
class VisitObservation:
    patient_id: str
    cohort_label: str
    visit_month: int
    assessment_code: str
    value: float


@dataclass(frozen=True)
class VisitTable:
    observations: tuple[VisitObservation, ...]
    schedule: tuple[int, ...]
    assessment_codes: tuple[str, ...]

    def __post_init__(self):
        sched = list(self.schedule)
        if sched and (sched[0] != 0 or any(b <= a for a, b in zip(sched, sched[1:]))):
            raise ValidationError(f"schedule must be strictly increasing from 0, got {sched}")
        codes = set(self.assessment_codes)
        months = set(sched)
        for ob in self.observations:
            if ob.assessment_code not in codes:
                raise ValidationError(f"unknown assessment code {ob.assessment_code!r}")
            if ob.visit_month not in months:
                raise ValidationError(f"visit month {ob.visit_month} not in schedule")

    @property
    def patients(self) -> dict[str, str]:
        """patient_id -> cohort_label, in first-appearance order."""
        out: dict[str, str] = {}
        for ob in self.observations:
            out.setdefault(ob.patient_id, ob.cohort_label)
        return out

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    def cube(self) -> tuple[list[str], np.ndarray]:
        """Dense patients x months x codes array with NaN for absent cells."""
        ids = list(self.patients)
        row = {p: i for i, p in enumerate(ids)}
        col = {m: j for j, m in enumerate(self.schedule)}
        dep = {c: k for k, c in enumerate(self.assessment_codes)}
        arr = np.full((len(ids), len(self.schedule), len(self.assessment_codes)), np.nan)
        for ob in self.observations:
            arr[row[ob.patient_id], col[ob.visit_month], dep[ob.assessment_code]] = ob.value
        return ids, arr

    def select(self, cohort_labels: Iterable[str]) -> "VisitTable":
        keep = set(cohort_labels)
        return replace(self, observations=tuple(o for o in self.observations if o.cohort_label in keep))


@dataclass(frozen=True)
class FeatureMatrix:
    patient_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    normalization: str = "raw"
    norm_params: dict = field(default_factory=dict)
    cohort_labels: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("feature values must be a 2-D matrix")
        if v.shape != (len(self.patient_ids), len(self.feature_names)):
            raise ValidationError(
                f"matrix shape {v.shape} does not match "
                f"{len(self.patient_ids)} patients x {len(self.feature_names)} features"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature matrix contains non-finite entries")
        if self.cohort_labels and len(self.cohort_labels) != len(self.patient_ids):
            raise ValidationError("cohort_labels length differs from patient count")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def codes(self) -> list[str]:
        seen: dict[str, None] = {}
        for name in self.feature_names:
            seen.setdefault(split_feature(name)[0], None)
        return list(seen)

    def rows(self, mask) -> "FeatureMatrix":
        idx = np.flatnonzero(np.asarray(mask))
        labels = tuple(self.cohort_labels[i] for i in idx) if self.cohort_labels else ()
        return replace(
            self,
            patient_ids=tuple(self.patient_ids[i] for i in idx),
            values=self.values[idx],
            cohort_labels=labels,
        )

    def columns(self, names: Sequence[str]) -> "FeatureMatrix":
        pos = {n: j for j, n in enumerate(self.feature_names)}
        idx = [pos[n] for n in names]
        params = {k: [v[j] for j in idx] for k, v in self.norm_params.items()}
        return replace(self, feature_names=tuple(names), values=self.values[:, idx], norm_params=params)

    def months(self, months: Iterable[int]) -> "FeatureMatrix":
        """Keep only the columns observed at the given visit months."""
        keep = set(months)
        return self.columns([n for n in self.feature_names if split_feature(n)[1] in keep])


def feature_name(code: str, month: int) -> str:
    return f"{code}@{month}"


def split_feature(name: str) -> tuple[str, int]:
    code, _, month = name.rpartition("@")
    return code, int(month)


def snap_month(month: int, schedule: Sequence[int], window: int = SNAP_WINDOW) -> int | None:
    best = min(schedule, key=lambda s: (abs(s - month), s))
    return best if abs(best - month) <= window else None


def parse_visits(
    stream: TextIO | str,
    schedule: Sequence[int] = DEFAULT_SCHEDULE,
    snap_window: int = SNAP_WINDOW,
) -> VisitTable:
    """Read the long-format visit CSV.

    Months are snapped to the nearest configured schedule point within
    ``snap_window``; rows further away are skipped with a warning.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("missing header row", line=1) from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"header lacks required columns {missing}", line=1)
    pos = [header.index(c) for c in CSV_COLUMNS]

    obs: list[VisitObservation] = []
    seen: set[tuple[str, int, str]] = set()
    labels: dict[str, str] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        pid, label, month_s, code, value_s = (row[i].strip() for i in pos)
        if not pid or not code:
            raise ParseError("empty patient_id or assessment_code", line=line)
        if label not in COHORT_LABELS:
            raise ValidationError(f"line {line}: unknown cohort_label {label!r}")
        if labels.setdefault(pid, label) != label:
            raise ValidationError(f"line {line}: patient {pid} has conflicting cohort labels")
        try:
            month = int(month_s)
        except ValueError:
            raise ParseError(f"visit_month {month_s!r} is not an integer", line=line) from None
        if month < 0:
            raise ParseError(f"negative visit_month {month}", line=line)
        try:
            value = float(value_s)
        except ValueError:
            raise ParseError(f"value {value_s!r} is not numeric", line=line) from None
        if not math.isfinite(value):
            raise ParseError(f"value {value_s!r} is not finite", line=line)
        snapped = snap_month(month, schedule, snap_window)
        if snapped is None:
            log.warning("line %d: month %d is off-schedule, row ignored", line, month)
            continue
        key = (pid, snapped, code)
        if key in seen:
            raise ConflictError(f"line {line}: duplicate observation for {key}")
        seen.add(key)
        obs.append(VisitObservation(pid, label, snapped, code, value))

    observed = sorted({o.visit_month for o in obs})
    if observed and observed[0] != 0:
        raise ValidationError(f"no baseline (month 0) observations; earliest month is {observed[0]}")
    return VisitTable(tuple(obs), tuple(observed), tuple(sorted({o.assessment_code for o in obs})))


def write_visits(table: VisitTable, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for o in table.observations:
        w.writerow([o.patient_id, o.cohort_label, o.visit_month, o.assessment_code, repr(float(o.value))])


def impute(table: VisitTable) -> VisitTable:
    """Fill every (patient, month, code) cell.

    Last observation carried forward within a patient first, then the
    median of the observed values for that (code, month) among patients
    of the same cohort label, falling back to all patients.
    """
    ids, arr = table.cube()
    if not ids:
        return table
    labels = table.patients
    observed = arr.copy()
    out = arr.copy()
    # LOCF along the month axis
    for j in range(1, out.shape[1]):
        gap = np.isnan(out[:, j, :])
        out[:, j, :][gap] = out[:, j - 1, :][gap]

    overall = _nanmedian(observed)
    if np.isnan(overall).any():
        j, k = np.argwhere(np.isnan(overall))[0]
        raise UnimputableError(
            f"code {table.assessment_codes[k]!r} has no observation at month {table.schedule[j]}"
        )
    lab = np.array([labels[p] for p in ids])
    for group in dict.fromkeys(lab):
        rows = lab == group
        med = _nanmedian(observed[rows])
        med = np.where(np.isnan(med), overall, med)
        block = out[rows]
        gap = np.isnan(block)
        block[gap] = np.broadcast_to(med, block.shape)[gap]
        out[rows] = block

    obs = [
        VisitObservation(p, labels[p], m, c, float(out[i, j, k]))
        for i, p in enumerate(ids)
        for j, m in enumerate(table.schedule)
        for k, c in enumerate(table.assessment_codes)
    ]
    return VisitTable(tuple(obs), table.schedule, table.assessment_codes)


def _nanmedian(a: np.ndarray) -> np.ndarray:
    out = np.full(a.shape[1:], np.nan)
    has = ~np.all(np.isnan(a), axis=0)
    if has.any():
        out[has] = np.nanmedian(a[:, has], axis=0)
    return out


def vectorize(table: VisitTable) -> FeatureMatrix:
    ids, arr = table.cube()
    if np.isnan(arr).any():
        i, j, k = np.argwhere(np.isnan(arr))[0]
        raise PreconditionError(
            f"cell ({ids[i]}, {table.schedule[j]}, {table.assessment_codes[k]}) is not imputed"
        )
    names = tuple(feature_name(c, m) for m in table.schedule for c in table.assessment_codes)
    labels = table.patients
    return FeatureMatrix(
        patient_ids=tuple(ids),
        feature_names=names,
        values=arr.reshape(len(ids), -1),
        normalization="raw",
        cohort_labels=tuple(labels[p] for p in ids),
    )


def drop_static_features(m: FeatureMatrix, epsilon: float = 0.0) -> FeatureMatrix:
    """Remove assessment codes whose within-patient range never exceeds epsilon."""
    if m.normalization != "raw":
        raise PreconditionError("drop_static_features expects a raw matrix")
    keep: list[str] = []
    dropped: list[str] = []
    for code in m.codes:
        cols = [j for j, n in enumerate(m.feature_names) if split_feature(n)[0] == code]
        block = m.values[:, cols]
        spread = (block.max(axis=1) - block.min(axis=1)).max() if block.size else 0.0
        (keep if spread > epsilon else dropped).append(code)
    if not keep:
        raise DegenerateInputError(f"every assessment code is static at epsilon={epsilon}")
    if dropped:
        log.info("dropping %d static codes: %s", len(dropped), ", ".join(dropped))
    kept = set(keep)
    return m.columns([n for n in m.feature_names if split_feature(n)[0] in kept])


def normalize(m: FeatureMatrix, method: str = "minmax") -> FeatureMatrix:
    if m.normalization != "raw":
        raise PreconditionError(f"matrix is already {m.normalization}-normalized")
    x = m.values
    if method == "minmax":
        params = {"min": x.min(axis=0).tolist(), "max": x.max(axis=0).tolist()}
    elif method == "zscore":
        params = {"mean": x.mean(axis=0).tolist(), "std": x.std(axis=0).tolist()}
    else:
        raise ValidationError(f"unknown normalization {method!r}")
    out = replace(m, normalization=method, norm_params=params)
    return replace(out, values=_apply(x, method, params))


def apply_normalization(raw: FeatureMatrix, reference: FeatureMatrix | dict) -> FeatureMatrix:
    """Normalize ``raw`` with the parameters stored on ``reference``.

    ``reference`` is a normalized FeatureMatrix or a dict with keys
    ``method``, ``feature_names`` and ``params``. Columns are matched by name.
    """
    if isinstance(reference, FeatureMatrix):
        method, names, params = reference.normalization, reference.feature_names, reference.norm_params
    else:
        method, names, params = reference["method"], tuple(reference["feature_names"]), reference["params"]
    if raw.normalization != "raw":
        raise PreconditionError("apply_normalization expects a raw matrix")
    missing = [n for n in names if n not in set(raw.feature_names)]
    if missing:
        raise SchemaError(f"matrix lacks {len(missing)} features, e.g. {missing[:3]}")
    aligned = raw.columns(list(names))
    if method == "raw":
        return aligned
    out = replace(aligned, normalization=method, norm_params={k: list(v) for k, v in params.items()})
    return replace(out, values=_apply(aligned.values, method, params))


def _apply(x: np.ndarray, method: str, params: dict) -> np.ndarray:
    if method == "minmax":
        lo, hi = np.asarray(params["min"]), np.asarray(params["max"])
        span = hi - lo
        const = span == 0
        y = (x - lo) / np.where(const, 1.0, span)
    else:
        mu, sd = np.asarray(params["mean"]), np.asarray(params["std"])
        const = sd == 0
        y = (x - mu) / np.where(const, 1.0, sd)
    y[:, const] = 0.0
    return y


def write_feature_matrix(m: FeatureMatrix, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("patient_id",) + tuple(m.feature_names))
    for pid, row in zip(m.patient_ids, m.values):
        w.writerow([pid] + [repr(float(v)) for v in row])


def read_feature_matrix(stream: TextIO) -> FeatureMatrix:
    reader = csv.reader(stream)
    header = next(reader)
    if not header or header[0] != "patient_id":
        raise ParseError("feature matrix header must start with patient_id", line=1)
    ids, rows = [], []
    for row in reader:
        ids.append(row[0])
        rows.append([float(v) for v in row[1:]])
    values = np.array(rows, dtype=float).reshape(len(ids), len(header) - 1)
    return FeatureMatrix(tuple(ids), tuple(header[1:]), values)
