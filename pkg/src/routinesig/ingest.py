"""Per-day behavioral record ingestion.

Turns raw sensor events or pre-aggregated daily rows into the fixed
13-feature analysis matrix:

  mobility   mob_daily + mob_n/mob_m/mob_a/mob_e   std of accelerometer
             magnitude (or any daily activity proxy) per 6-hour bin
  sleep      sleep_bed, sleep_wake, sleep_dur      hours; bed/wake are
             offsets from the noon-to-noon window start
  screen     scr_daily + scr_n/scr_m/scr_a/scr_e   screen-on hours per
             6-hour bin

The pipeline is derive -> exclude -> standardize. Exclusion drops each
participant's first and last recorded day, then days with any missing
feature, then participants left with fewer than 14 days. Standardization
z-scores each feature within participant (sample sd, n-1); zero-variance
features map to all-zero columns.

Day bins are night 00-06, morning 06-12, afternoon 12-18, evening 18-24
in participant-local time.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, MissingData, SchemaError

FEATURE_NAMES: list[str] = [
    "mob_daily", "mob_n", "mob_m", "mob_a", "mob_e",
    "sleep_bed", "sleep_wake", "sleep_dur",
    "scr_daily", "scr_n", "scr_m", "scr_a", "scr_e",
]

DAILY_HEADER: list[str] = ["participant_id", "date", "group_key"] + FEATURE_NAMES

AGE_BINS: list[str] = ["<25", "25-34", "35-44", "45-54", "55-64"]

MIN_DAYS = 14          # participants below this are excluded from clustering
BIN_HOURS = 6.0        # four 6-hour bins per day
N_BINS = 4


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class DayRecord:
    """One participant-day of raw (unstandardized) behavioral features.

    `features` maps each of the 13 schema names to a value or None
    (missing). `trimmed` marks records that already survived the
    endpoint-trim, so re-applying the exclusion pass never trims twice.
    """

    participant_id: str
    date: dt.date
    features: dict[str, float | None]
    group_key: str = ""
    trimmed: bool = False

    @property
    def weekday_flag(self) -> bool:
        """True Monday through Friday."""
        return self.date.weekday() < 5


class RowMeta(NamedTuple):
    participant_id: str
    date: dt.date
    weekday_flag: bool
    group_key: str


@dataclass
class FeatureMatrix:
    """Standardized M x 13 analysis matrix with per-row identity."""

    rows: list[RowMeta]
    values: np.ndarray
    feature_names: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def groups(self) -> list[str]:
        return sorted({r.group_key for r in self.rows})

    def group_indices(self, group_key: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.rows) if r.group_key == group_key], dtype=int)

    def participant_rows(self, group_key: str | None = None) -> dict[str, list[int]]:
        """Row indices per participant in date order (optionally one group)."""
        out: dict[str, list[int]] = {}
        for i, r in enumerate(self.rows):
            if group_key is not None and r.group_key != group_key:
                continue
            out.setdefault(r.participant_id, []).append(i)
        return out

    def subset(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = list(indices)
        return FeatureMatrix(rows=[self.rows[i] for i in idx],
                             values=self.values[idx],
                             feature_names=list(self.feature_names))


@dataclass
class ParticipantProfile:
    """Demographics and trait scores used by the regression models."""

    participant_id: str
    age_bin: str
    gender: str
    extraversion: float
    agreeableness: float
    conscientiousness: float
    neuroticism: float
    openness: float

    def traits(self) -> dict[str, float]:
        return {
            "extraversion": self.extraversion,
            "agreeableness": self.agreeableness,
            "conscientiousness": self.conscientiousness,
            "neuroticism": self.neuroticism,
            "openness": self.openness,
        }


class SleepEstimate(NamedTuple):
    bedtime: float      # hours since window start (noon)
    waketime: float
    duration: float


class BinnedDay(NamedTuple):
    night: float | None
    morning: float | None
    afternoon: float | None
    evening: float | None
    daily_avg: float | None


# ---------------------------------------------------------------------------
# Per-day derivations
# ---------------------------------------------------------------------------

def derive_sleep_from_lock(episodes: Sequence[tuple[float, float]]) -> SleepEstimate:
    """Sleep proxy: the longest phone-lock episode in a noon-to-noon window.

    Episodes are (start, end) in hours since the window start, so 10.0 is
    22:00 local time. Duration ties go to the earliest-starting episode,
    which makes the result independent of episode order.
    """
    if not episodes:
        raise MissingData("no lock episodes in sleep window")
    for start, end in episodes:
        if not (end > start):
            raise DomainError(f"lock episode with end <= start: ({start}, {end})")
    best = min(episodes, key=lambda ep: (-(ep[1] - ep[0]), ep[0]))
    return SleepEstimate(bedtime=float(best[0]), waketime=float(best[1]),
                         duration=float(best[1] - best[0]))


def _bin_index(hour: float) -> int:
    if not (0.0 <= hour <= 24.0):
        raise DomainError(f"hour-of-day out of range: {hour}")
    return min(int(hour // BIN_HOURS), N_BINS - 1)


def derive_mobility_from_accelerometer(
    samples: Sequence[tuple[float, float, float, float]],
) -> BinnedDay:
    """Per-bin population std of accelerometer magnitude sqrt(ax^2+ay^2+az^2).

    A bin needs at least 2 samples to be defined; the daily average is the
    mean of the defined bins. All bins empty -> MissingData.
    """
    mags: list[list[float]] = [[] for _ in range(N_BINS)]
    for t, ax, ay, az in samples:
        mags[_bin_index(t)].append(math.sqrt(ax * ax + ay * ay + az * az))
    bins: list[float | None] = []
    for vals in mags:
        if len(vals) < 2:
            bins.append(None)
        else:
            bins.append(float(np.std(np.asarray(vals))))  # population form, divisor n
    defined = [b for b in bins if b is not None]
    if not defined:
        raise MissingData("no accelerometer coverage in any bin")
    daily = float(np.mean(defined))
    return BinnedDay(bins[0], bins[1], bins[2], bins[3], daily)


def _merge_episodes(episodes: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    clipped = []
    for s, e in episodes:
        s, e = max(0.0, float(s)), min(24.0, float(e))
        if e > s:
            clipped.append((s, e))
    clipped.sort()
    merged: list[tuple[float, float]] = []
    for s, e in clipped:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def bin_screen_usage(episodes: Sequence[tuple[float, float]]) -> BinnedDay:
    """Screen-on hours per 6-hour bin; episodes are clipped to the day and
    overlaps merged, with boundary-spanning episodes split proportionally.

    Zero episodes is a valid all-zero observation, not missing data.
    """
    totals = [0.0] * N_BINS
    for s, e in _merge_episodes(episodes):
        for b in range(N_BINS):
            lo, hi = b * BIN_HOURS, (b + 1) * BIN_HOURS
            overlap = min(e, hi) - max(s, lo)
            if overlap > 0:
                totals[b] += overlap
    daily = float(np.mean(totals))
    return BinnedDay(totals[0], totals[1], totals[2], totals[3], daily)


# ---------------------------------------------------------------------------
# Exclusion and standardization
# ---------------------------------------------------------------------------

def _unit_key(rec: DayRecord) -> tuple[str, str]:
    # A participant observed in several group_keys (e.g. academic years) is
    # an independent analysis unit in each, matching per-group model fits.
    return (rec.group_key, rec.participant_id)


def _grouped(records: Iterable[DayRecord]) -> dict[tuple[str, str], list[DayRecord]]:
    units: dict[tuple[str, str], list[DayRecord]] = {}
    for rec in records:
        units.setdefault(_unit_key(rec), []).append(rec)
    for key, recs in units.items():
        recs.sort(key=lambda r: r.date)
        for a, b in zip(recs, recs[1:]):
            if a.date == b.date:
                raise SchemaError(
                    f"duplicate date {a.date} for participant {a.participant_id!r}"
                    + (f" in group {a.group_key!r}" if a.group_key else ""))
    return units


def _is_missing(v: float | None) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def _complete(rec: DayRecord) -> bool:
    return all(not _is_missing(rec.features.get(name)) for name in FEATURE_NAMES)


@dataclass
class ExclusionAudit:
    """Counts of rows dropped by each exclusion rule."""

    rows_in: int = 0
    dropped_endpoint_days: int = 0
    dropped_missing_days: int = 0
    dropped_short_participants: int = 0
    dropped_short_days: int = 0
    rows_out: int = 0
    participants_in: int = 0
    participants_out: int = 0

    def to_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


def apply_exclusions_with_audit(
    records: Iterable[DayRecord],
) -> tuple[list[DayRecord], ExclusionAudit]:
    """Endpoint trim, then missing-feature drop, then the 14-day threshold.

    The trim happens exactly once per analysis unit: records that already
    carry the `trimmed` mark are never re-trimmed, which makes the whole
    pass idempotent.
    """
    audit = ExclusionAudit()
    kept: list[DayRecord] = []
    units = _grouped(records)
    audit.participants_in = len(units)
    for key in sorted(units):
        recs = units[key]
        audit.rows_in += len(recs)
        if not any(r.trimmed for r in recs):
            endpoints = {recs[0].date, recs[-1].date}
            trimmed = [r for r in recs if r.date not in endpoints]
            audit.dropped_endpoint_days += len(recs) - len(trimmed)
            recs = [replace(r, trimmed=True) for r in trimmed]
        complete = [r for r in recs if _complete(r)]
        audit.dropped_missing_days += len(recs) - len(complete)
        if len(complete) < MIN_DAYS:
            audit.dropped_short_participants += 1
            audit.dropped_short_days += len(complete)
            continue
        audit.participants_out += 1
        kept.extend(complete)
    kept.sort(key=lambda r: (_unit_key(r), r.date))
    audit.rows_out = len(kept)
    return kept, audit


def apply_exclusions(records: Iterable[DayRecord]) -> list[DayRecord]:
    kept, _ = apply_exclusions_with_audit(records)
    return kept


def standardize(records: Iterable[DayRecord]) -> FeatureMatrix:
    """Within-participant z-normalization into the analysis matrix.

    Requires exclusions to have run (every record complete, every unit with
    at least 2 days). Columns with zero variance within a participant come
    out all-zero rather than dividing by zero.
    """
    units = _grouped(records)
    rows: list[RowMeta] = []
    blocks: list[np.ndarray] = []
    for key in sorted(units):
        recs = units[key]
        if len(recs) < 2:
            raise DomainError(
                f"participant {key[1]!r} has {len(recs)} day(s); standardization "
                "needs at least 2 (run exclusions first)")
        block = np.empty((len(recs), len(FEATURE_NAMES)), dtype=float)
        for i, rec in enumerate(recs):
            for j, name in enumerate(FEATURE_NAMES):
                v = rec.features.get(name)
                if _is_missing(v):
                    raise DomainError(
                        f"missing feature {name!r} for {rec.participant_id!r} on "
                        f"{rec.date}; run exclusions first")
                block[i, j] = float(v)  # type: ignore[arg-type]
        mu = block.mean(axis=0)
        sd = block.std(axis=0, ddof=1)
        z = np.where(sd > 0.0, (block - mu) / np.where(sd > 0.0, sd, 1.0), 0.0)
        blocks.append(z)
        rows.extend(RowMeta(r.participant_id, r.date, r.weekday_flag, r.group_key)
                    for r in recs)
    if not blocks:
        return FeatureMatrix(rows=[], values=np.empty((0, len(FEATURE_NAMES))))
    return FeatureMatrix(rows=rows, values=np.vstack(blocks))


# ---------------------------------------------------------------------------
# Daily CSV schema
# ---------------------------------------------------------------------------

def _parse_float_cell(cell: str, column: str, line_no: int) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise SchemaError(f"line {line_no}: column {column!r}: not a number: {cell!r}") from None


def _read_commented_csv(path: str) -> tuple[dict[str, str], list[str], list[tuple[int, list[str]]]]:
    """Read a CSV that may carry '# key: value' metadata lines before the header."""
    meta: dict[str, str] = {}
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            stripped = raw.rstrip("\n")
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if ":" in body:
                    k, v = body.split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            if stripped == "":
                continue
            cells = next(csv.reader([stripped]))
            if header is None:
                header = cells
            else:
                rows.append((line_no, cells))
    if header is None:
        raise SchemaError(f"{path}: no header row found")
    return meta, header, rows


def _check_header(header: list[str], expected: list[str], path: str) -> None:
    if header == expected:
        return
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}")
    if extra:
        raise SchemaError(f"{path}: unexpected column {extra[0]!r}")
    raise SchemaError(f"{path}: columns out of order; expected {expected}")


def load_daily_csv(path: str) -> tuple[list[DayRecord], dict[str, str]]:
    """Load the daily feature CSV; empty cells are missing values.

    Returns records plus any '# key: value' metadata found in the file
    (a dataset written by this package marks itself `normalized: true`).
    """
    meta, header, rows = _read_commented_csv(path)
    _check_header(header, DAILY_HEADER, path)
    records: list[DayRecord] = []
    trimmed = meta.get("normalized", "") == "true"
    for line_no, cells in rows:
        if len(cells) != len(DAILY_HEADER):
            raise SchemaError(f"{path}: line {line_no}: expected {len(DAILY_HEADER)} cells, "
                              f"got {len(cells)}")
        pid = cells[0].strip()
        if not pid:
            raise SchemaError(f"{path}: line {line_no}: empty participant_id")
        try:
            date = dt.date.fromisoformat(cells[1].strip())
        except ValueError:
            raise SchemaError(f"{path}: line {line_no}: column 'date': "
                              f"not ISO-8601: {cells[1]!r}") from None
        features = {name: _parse_float_cell(cells[3 + j], name, line_no)
                    for j, name in enumerate(FEATURE_NAMES)}
        records.append(DayRecord(participant_id=pid, date=date, features=features,
                                 group_key=cells[2].strip(), trimmed=trimmed))
    return records, meta


def matrix_from_records(records: Iterable[DayRecord]) -> FeatureMatrix:
    """Build a FeatureMatrix from already-normalized records (no re-scaling)."""
    recs = sorted(records, key=lambda r: (_unit_key(r), r.date))
    values = np.empty((len(recs), len(FEATURE_NAMES)), dtype=float)
    rows = []
    for i, rec in enumerate(recs):
        for j, name in enumerate(FEATURE_NAMES):
            v = rec.features.get(name)
            if _is_missing(v):
                raise DomainError(f"normalized dataset has missing {name!r} for "
                                  f"{rec.participant_id!r} on {rec.date}")
            values[i, j] = float(v)  # type: ignore[arg-type]
        rows.append(RowMeta(rec.participant_id, rec.date, rec.weekday_flag, rec.group_key))
    return FeatureMatrix(rows=rows, values=values)


def load_dataset_csv(path: str) -> tuple[FeatureMatrix, dict[str, str]]:
    """Load a normalized dataset written by the ingest step."""
    records, meta = load_daily_csv(path)
    if meta.get("normalized") != "true":
        raise SchemaError(f"{path}: not a normalized dataset (run the ingest step first)")
    return matrix_from_records(records), meta


def load_profiles_csv(path: str) -> dict[str, ParticipantProfile]:
    """Load participant demographics + trait scores (traits already on [1,5])."""
    expected = ["participant_id", "age_bin", "gender", "extraversion", "agreeableness",
                "conscientiousness", "neuroticism", "openness"]
    _, header, rows = _read_commented_csv(path)
    _check_header(header, expected, path)
    profiles: dict[str, ParticipantProfile] = {}
    for line_no, cells in rows:
        if len(cells) != len(expected):
            raise SchemaError(f"{path}: line {line_no}: expected {len(expected)} cells")
        pid = cells[0].strip()
        age_bin = cells[1].strip().replace("–", "-").replace("−", "-")
        if age_bin not in AGE_BINS:
            raise SchemaError(f"{path}: line {line_no}: column 'age_bin': "
                              f"{age_bin!r} not in {AGE_BINS}")
        traits = {}
        for j, name in enumerate(expected[3:]):
            v = _parse_float_cell(cells[3 + j], name, line_no)
            if v is None or not (1.0 <= v <= 5.0):
                raise SchemaError(f"{path}: line {line_no}: column {name!r}: "
                                  f"trait score {cells[3 + j]!r} outside [1, 5]")
            traits[name] = v
        profiles[pid] = ParticipantProfile(participant_id=pid, age_bin=age_bin,
                                           gender=cells[2].strip(), **traits)
    return profiles


# ---------------------------------------------------------------------------
# Raw sensor event ingestion
# ---------------------------------------------------------------------------

def _parse_ts(cell: str, path: str, line_no: int) -> dt.datetime:
    try:
        return dt.datetime.fromisoformat(cell.strip())
    except ValueError:
        raise SchemaError(f"{path}: line {line_no}: not an ISO-8601 timestamp: "
                          f"{cell!r}") from None


def load_episode_csv(path: str) -> dict[str, list[tuple[dt.datetime, dt.datetime]]]:
    """Per-participant (start, end) event episodes, e.g. lock or screen-on."""
    _, header, rows = _read_commented_csv(path)
    _check_header(header, ["participant_id", "start", "end"], path)
    out: dict[str, list[tuple[dt.datetime, dt.datetime]]] = {}
    for line_no, cells in rows:
        start, end = _parse_ts(cells[1], path, line_no), _parse_ts(cells[2], path, line_no)
        out.setdefault(cells[0].strip(), []).append((start, end))
    for eps in out.values():
        eps.sort()
    return out


def load_accel_csv(path: str) -> dict[str, list[tuple[dt.datetime, float, float, float]]]:
    _, header, rows = _read_commented_csv(path)
    _check_header(header, ["participant_id", "timestamp", "ax", "ay", "az"], path)
    out: dict[str, list[tuple[dt.datetime, float, float, float]]] = {}
    for line_no, cells in rows:
        t = _parse_ts(cells[1], path, line_no)
        vals = []
        for j, name in enumerate(("ax", "ay", "az")):
            v = _parse_float_cell(cells[2 + j], name, line_no)
            if v is None:
                raise SchemaError(f"{path}: line {line_no}: column {name!r}: empty cell")
            vals.append(v)
        out.setdefault(cells[0].strip(), []).append((t, vals[0], vals[1], vals[2]))
    for samples in out.values():
        samples.sort(key=lambda s: s[0])
    return out


def _hours_into_day(ts: dt.datetime, day: dt.date) -> float:
    return (ts - dt.datetime.combine(day, dt.time())).total_seconds() / 3600.0


def _clip_to_day(start: dt.datetime, end: dt.datetime, day: dt.date) -> tuple[float, float] | None:
    lo = dt.datetime.combine(day, dt.time())
    hi = lo + dt.timedelta(days=1)
    s, e = max(start, lo), min(end, hi)
    if e <= s:
        return None
    return (_hours_into_day(s, day), _hours_into_day(e, day))


def _sleep_by_date(
    episodes: list[tuple[dt.datetime, dt.datetime]],
) -> dict[dt.date, SleepEstimate]:
    """Longest lock episode per noon-to-noon window, attributed to the
    calendar date the waketime falls on. If two windows claim the same
    date, the longer sleep wins (earlier bedtime on ties)."""
    if not episodes:
        return {}
    first_day = min(s for s, _ in episodes).date() - dt.timedelta(days=1)
    last_day = max(e for _, e in episodes).date() + dt.timedelta(days=1)
    out: dict[dt.date, SleepEstimate] = {}
    day = first_day
    while day <= last_day:
        window_start = dt.datetime.combine(day, dt.time(hour=12))
        window_end = window_start + dt.timedelta(days=1)
        clipped = []
        for s, e in episodes:
            cs, ce = max(s, window_start), min(e, window_end)
            if ce > cs:
                hours = lambda t: (t - window_start).total_seconds() / 3600.0
                clipped.append((hours(cs), hours(ce)))
        if clipped:
            est = derive_sleep_from_lock(clipped)
            wake_at = window_start + dt.timedelta(hours=est.waketime)
            wake_date = wake_at.date()
            prev = out.get(wake_date)
            if prev is None or (est.duration, -est.bedtime) > (prev.duration, -prev.bedtime):
                out[wake_date] = est
        day += dt.timedelta(days=1)
    return out


def derive_daily_records(
    lock_episodes: dict[str, list[tuple[dt.datetime, dt.datetime]]],
    accel_samples: dict[str, list[tuple[dt.datetime, float, float, float]]],
    screen_episodes: dict[str, list[tuple[dt.datetime, dt.datetime]]],
    group_key: str = "",
) -> list[DayRecord]:
    """Assemble DayRecords from raw event streams.

    A modality contributes on every date inside its own coverage span
    (first to last event date per participant); screen days without
    episodes inside the span are genuine zeros, while dates outside any
    span leave that modality's features missing.
    """
    all_pids = sorted(set(lock_episodes) | set(accel_samples) | set(screen_episodes))
    records: list[DayRecord] = []
    for pid in all_pids:
        sleep = _sleep_by_date(lock_episodes.get(pid, []))
        accel = accel_samples.get(pid, [])
        screen = screen_episodes.get(pid, [])

        accel_span = (accel[0][0].date(), accel[-1][0].date()) if accel else None
        screen_dates = [d for s, e in screen for d in (s.date(), e.date())]
        screen_span = (min(screen_dates), max(screen_dates)) if screen_dates else None

        dates: set[dt.date] = set(sleep)
        if accel_span:
            d = accel_span[0]
            while d <= accel_span[1]:
                dates.add(d)
                d += dt.timedelta(days=1)
        if screen_span:
            d = screen_span[0]
            while d <= screen_span[1]:
                dates.add(d)
                d += dt.timedelta(days=1)

        accel_by_date: dict[dt.date, list[tuple[float, float, float, float]]] = {}
        for t, ax, ay, az in accel:
            accel_by_date.setdefault(t.date(), []).append((_hours_into_day(t, t.date()), ax, ay, az))

        for date in sorted(dates):
            features: dict[str, float | None] = {name: None for name in FEATURE_NAMES}
            est = sleep.get(date)
            if est is not None:
                features["sleep_bed"] = est.bedtime
                features["sleep_wake"] = est.waketime
                features["sleep_dur"] = est.duration
            if accel_span and accel_span[0] <= date <= accel_span[1]:
                try:
                    mob = derive_mobility_from_accelerometer(accel_by_date.get(date, []))
                except MissingData:
                    mob = None
                if mob is not None:
                    features["mob_n"], features["mob_m"] = mob.night, mob.morning
                    features["mob_a"], features["mob_e"] = mob.afternoon, mob.evening
                    features["mob_daily"] = mob.daily_avg
            if screen_span and screen_span[0] <= date <= screen_span[1]:
                eps = [c for s, e in screen if (c := _clip_to_day(s, e, date)) is not None]
                scr = bin_screen_usage(eps)
                features["scr_n"], features["scr_m"] = scr.night, scr.morning
                features["scr_a"], features["scr_e"] = scr.afternoon, scr.evening
                features["scr_daily"] = scr.daily_avg
            records.append(DayRecord(participant_id=pid, date=date, features=features,
                                     group_key=group_key))
    return records
