"""Reading registry data: case records to incident episodes to monthly rates,
plus the series / cases / population CSV formats."""
from __future__ import annotations

import csv
import datetime as dt
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import ObservationSeries, SeriesValidationError, StratumKey

SERIES_COLUMNS = ("month", "sex", "age_band", "rate", "population")
CASES_COLUMNS = ("person_id", "event_date", "sex", "birth_date")
POPULATION_COLUMNS = ("month", "sex", "age_band", "population")
AGE_BANDS = ((15, 29), (30, 94))
SEX_CODES = {"F": 0, "M": 1}
SEX_LABELS = {0: "F", 1: "M"}
RATE_SCALE = 100000.0


class CSVSchemaError(ValueError):
    pass


class DuplicateKeyError(CSVSchemaError):
    pass


class MissingPopulationError(ValueError):
    pass


class MissingAgeError(ValueError):
    pass


@dataclass(frozen=True)
class RawCaseRecord:
    person_id: str
    event_date: dt.date
    sex: str
    birth_date: Optional[dt.date] = None
    age: Optional[int] = None
    line: Optional[int] = None

    def __post_init__(self):
        if not self.person_id:
            raise ValueError("person_id must be non-empty")


def months_between(earlier: dt.date, later: dt.date) -> int:
    """Whole calendar months from ``earlier`` to ``later``."""
    m = (later.year - earlier.year) * 12 + (later.month - earlier.month)
    if later.day < earlier.day:
        m -= 1
    return m


def _sort_key(r: RawCaseRecord):
    return (r.person_id, r.event_date, r.sex, r.birth_date or dt.date.min, r.age or -1)


def _by_person(records):
    groups = defaultdict(list)
    for r in sorted(records, key=_sort_key):
        groups[r.person_id].append(r)
    return groups


def incident_episodes(records: Iterable[RawCaseRecord], window_months: int = 12) -> List[RawCaseRecord]:
    """Keep records preceded by at least ``window_months`` without any record
    of the same person. The gap is measured from the most recent record of any
    kind, so a chain of close records counts once."""
    out = []
    for _, recs in sorted(_by_person(records).items()):
        prev = None
        for r in recs:
            if prev is None or months_between(prev.event_date, r.event_date) >= window_months:
                out.append(r)
            prev = r
    return out


def ambiguous_chains(records: Iterable[RawCaseRecord], window_months: int = 12) -> List[RawCaseRecord]:
    """Records that would be incident if the gap were measured from the last
    incident episode instead of the last record."""
    out = []
    for _, recs in sorted(_by_person(records).items()):
        prev = last_incident = None
        for r in recs:
            if prev is None or months_between(prev.event_date, r.event_date) >= window_months:
                last_incident = r
            elif months_between(last_incident.event_date, r.event_date) >= window_months:
                out.append(r)
                last_incident = r
            prev = r
    return out


def age_at(record: RawCaseRecord) -> int:
    if record.birth_date is not None:
        b, e = record.birth_date, record.event_date
        return e.year - b.year - ((e.month, e.day) < (b.month, b.day))
    if record.age is not None:
        return int(record.age)
    raise MissingAgeError(f"record for {record.person_id} (line {record.line}) has neither birth date nor age")


def filter_age(records: Iterable[RawCaseRecord], min_age: int = 15, max_age: int = 94) -> List[RawCaseRecord]:
    return [r for r in records if min_age <= age_at(r) <= max_age]


def age_band(age: int, bands: Sequence[Tuple[int, int]] = AGE_BANDS) -> Optional[int]:
    for i, (lo, hi) in enumerate(bands):
        if lo <= age <= hi:
            return i
    return None


def stratum_of(record: RawCaseRecord, bands: Sequence[Tuple[int, int]] = AGE_BANDS) -> Optional[StratumKey]:
    band = age_band(age_at(record), bands)
    if band is None:
        return None
    return StratumKey(SEX_CODES[record.sex], band)


def month_index(date: dt.date, start: dt.date) -> int:
    """1-based study month of ``date`` for a window starting in ``start``'s month."""
    return (date.year - start.year) * 12 + (date.month - start.month) + 1


class PopulationTable:
    """Person-months at risk per (stratum, month)."""

    def __init__(self, cells: Dict[Tuple[StratumKey, int], float]):
        for key, v in cells.items():
            if not v > 0:
                raise SeriesValidationError(f"population for {key[0].label} month {key[1]} must be positive")
        self.cells = dict(cells)

    def __getitem__(self, key):
        return self.cells[key]

    def __contains__(self, key):
        return key in self.cells

    @classmethod
    def from_csv(cls, path) -> "PopulationTable":
        cells = {}
        for lineno, row in _read_rows(path, POPULATION_COLUMNS, POPULATION_COLUMNS):
            month = _parse_int(row, "month", lineno, minimum=1)
            key = (_parse_stratum(row, lineno), month)
            if key in cells:
                raise DuplicateKeyError(f"row {lineno}: duplicate population cell {key[0].label} month {month}")
            cells[key] = _parse_float(row, "population", lineno)
        return cls(cells)


def monthly_counts(events: Iterable[RawCaseRecord], start: dt.date, t_max: int,
                   strata: Sequence[StratumKey], bands=AGE_BANDS) -> Dict[Tuple[StratumKey, int], int]:
    counts = {(k, m): 0 for k in strata for m in range(1, t_max + 1)}
    skipped = 0
    for e in events:
        key = (stratum_of(e, bands), month_index(e.event_date, start))
        if key in counts:
            counts[key] += 1
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"{skipped} events fall outside the study window or strata", RuntimeWarning, stacklevel=2)
    return counts


def monthly_rates(events: Iterable[RawCaseRecord], population: PopulationTable, start: dt.date,
                  t_max: int, strata: Optional[Sequence[StratumKey]] = None, bands=AGE_BANDS) -> ObservationSeries:
    """Incidence per 100,000 person-months; months without events give rate 0."""
    if strata is None:
        strata = sorted({k for k, _ in population.cells})
    missing = [(k, m) for k in strata for m in range(1, t_max + 1) if (k, m) not in population]
    if missing:
        cells = ", ".join(f"{k.label} month {m}" for k, m in missing[:10])
        raise MissingPopulationError(f"population table lacks {len(missing)} cells: {cells}")
    counts = monthly_counts(events, start, t_max, strata, bands)
    records = [(m, k, RATE_SCALE * c / population[(k, m)], population[(k, m)]) for (k, m), c in counts.items()]
    return ObservationSeries.from_records(records, t_max=t_max)


# -- CSV formats -------------------------------------------------------------

def _read_rows(path, required: Sequence[str], allowed: Sequence[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise CSVSchemaError(f"{path}: header is missing column(s) {', '.join(missing)}")
        extra = [c for c in header if c not in allowed]
        if extra:
            raise CSVSchemaError(f"{path}: unexpected column(s) {', '.join(extra)}")
        for row in reader:
            yield reader.line_num, row


def _parse_int(row, col, lineno, minimum=None):
    raw = (row.get(col) or "").strip()
    try:
        v = int(raw)
    except ValueError:
        raise CSVSchemaError(f"row {lineno}, column {col}: expected an integer, got {raw!r}") from None
    if minimum is not None and v < minimum:
        raise CSVSchemaError(f"row {lineno}, column {col}: must be >= {minimum}, got {v}")
    return v


def _parse_float(row, col, lineno):
    raw = (row.get(col) or "").strip()
    try:
        v = float(raw)
    except ValueError:
        raise CSVSchemaError(f"row {lineno}, column {col}: expected a number, got {raw!r}") from None
    if not np.isfinite(v):
        raise CSVSchemaError(f"row {lineno}, column {col}: value must be finite")
    return v


def _parse_stratum(row, lineno):
    sex = (row.get("sex") or "").strip()
    if sex not in SEX_CODES:
        raise CSVSchemaError(f"row {lineno}, column sex: expected F or M, got {sex!r}")
    band = (row.get("age_band") or "").strip()
    labels = [f"{lo}-{hi}" for lo, hi in AGE_BANDS]
    if band not in labels:
        raise CSVSchemaError(f"row {lineno}, column age_band: expected one of {labels}, got {band!r}")
    return StratumKey(SEX_CODES[sex], labels.index(band))


def _parse_date(raw, col, lineno, optional=False):
    raw = (raw or "").strip()
    if not raw and optional:
        return None
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        raise CSVSchemaError(f"row {lineno}, column {col}: unparseable date {raw!r}") from None


def parse_series_csv(path) -> ObservationSeries:
    records = []
    seen = set()
    pops = []
    for lineno, row in _read_rows(path, SERIES_COLUMNS[:4], SERIES_COLUMNS):
        month = _parse_int(row, "month", lineno, minimum=1)
        key = _parse_stratum(row, lineno)
        rate = _parse_float(row, "rate", lineno)
        if rate < 0:
            raise CSVSchemaError(f"row {lineno}, column rate: must be non-negative, got {rate}")
        if (key, month) in seen:
            raise DuplicateKeyError(f"row {lineno}: duplicate record for {key.label} month {month}")
        seen.add((key, month))
        pop = None
        if (row.get("population") or "").strip():
            pop = _parse_float(row, "population", lineno)
            if pop <= 0:
                raise CSVSchemaError(f"row {lineno}, column population: must be positive")
        pops.append(pop)
        records.append((month, key, rate, pop))
    if not records:
        raise CSVSchemaError(f"{path}: no data rows")
    t_max = max(r[0] for r in records)
    if any(p is None for p in pops) and not all(p is None for p in pops):
        raise CSVSchemaError(f"{path}: population column must be filled on every row or on none")
    try:
        return ObservationSeries.from_records(records, t_max=t_max)
    except SeriesValidationError as exc:
        raise CSVSchemaError(f"{path}: {exc}") from None


def parse_cases_csv(path, skip_invalid: bool = False) -> List[RawCaseRecord]:
    """Read person-level records. Bad rows raise, or are skipped with a
    warning naming their line when ``skip_invalid`` is set."""
    out = []
    for lineno, row in _read_rows(path, CASES_COLUMNS, CASES_COLUMNS):
        try:
            pid = (row.get("person_id") or "").strip()
            if not pid:
                raise CSVSchemaError(f"row {lineno}, column person_id: empty identifier")
            sex = (row.get("sex") or "").strip()
            if sex not in SEX_CODES:
                raise CSVSchemaError(f"row {lineno}, column sex: expected F or M, got {sex!r}")
            out.append(RawCaseRecord(
                person_id=pid,
                event_date=_parse_date(row.get("event_date"), "event_date", lineno),
                sex=sex,
                birth_date=_parse_date(row.get("birth_date"), "birth_date", lineno, optional=True),
                line=lineno,
            ))
        except CSVSchemaError as exc:
            if not skip_invalid:
                raise
            warnings.warn(f"rejected: {exc}", RuntimeWarning, stacklevel=2)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series_csv(path, series: ObservationSeries) -> None:
    labels = [f"{lo}-{hi}" for lo, hi in AGE_BANDS]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for i in range(len(series)):
            pop = "" if series.population is None else _fmt(series.population[i])
            w.writerow([int(series.month[i]), SEX_LABELS[int(series.sex[i])],
                        labels[int(series.age_band[i])], _fmt(series.y[i]), pop])


def write_truth_csv(path, series: ObservationSeries, latent, flags) -> None:
    labels = [f"{lo}-{hi}" for lo, hi in AGE_BANDS]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("month", "sex", "age_band", "latent_x", "flag"))
        for i in range(len(series)):
            w.writerow([int(series.month[i]), SEX_LABELS[int(series.sex[i])],
                        labels[int(series.age_band[i])], _fmt(latent[i]), int(bool(flags[i]))])
