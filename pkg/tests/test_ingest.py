"""Feature derivation, exclusion rules, normalization, and CSV schemas."""

from __future__ import annotations

import datetime as dt
import math

import numpy as np
import pytest

from routinesig.errors import DomainError, MissingData, SchemaError
from routinesig.ingest import (AGE_BINS, DAILY_HEADER, FEATURE_NAMES, MIN_DAYS,
                               DayRecord, apply_exclusions,
                               apply_exclusions_with_audit, bin_screen_usage,
                               derive_daily_records,
                               derive_mobility_from_accelerometer,
                               derive_sleep_from_lock, load_accel_csv,
                               load_daily_csv, load_dataset_csv,
                               load_episode_csv, load_profiles_csv,
                               standardize)


def mk_rec(pid, date_str, value=1.0, group="", missing=(), trimmed=False):
    features = {name: (None if name in missing else float(value))
                for name in FEATURE_NAMES}
    return DayRecord(participant_id=pid, date=dt.date.fromisoformat(date_str),
                     features=features, group_key=group, trimmed=trimmed)


def span_records(pid, start, n, value=1.0, group=""):
    d0 = dt.date.fromisoformat(start)
    return [mk_rec(pid, (d0 + dt.timedelta(days=i)).isoformat(), value=value,
                   group=group) for i in range(n)]


# ---------------------------------------------------------------------------
# Sleep from lock episodes
# ---------------------------------------------------------------------------

def test_sleep_picks_longest_episode():
    # hours since noon: 22:00 -> 06:00 is (10, 18)
    est = derive_sleep_from_lock([(2.0, 3.5), (10.0, 18.0), (20.0, 21.0)])
    assert est.bedtime == 10.0
    assert est.waketime == 18.0
    assert est.duration == 8.0


def test_sleep_duration_tie_goes_to_earlier_start():
    est = derive_sleep_from_lock([(12.0, 15.0), (2.0, 5.0)])
    assert est.bedtime == 2.0
    est2 = derive_sleep_from_lock([(2.0, 5.0), (12.0, 15.0)])
    assert est2.bedtime == 2.0   # order independent


def test_sleep_errors():
    with pytest.raises(MissingData):
        derive_sleep_from_lock([])
    with pytest.raises(DomainError):
        derive_sleep_from_lock([(5.0, 5.0)])
    with pytest.raises(DomainError):
        derive_sleep_from_lock([(5.0, 4.0)])


# ---------------------------------------------------------------------------
# Mobility from accelerometer
# ---------------------------------------------------------------------------

def test_mobility_population_std_per_bin():
    samples = [(1.0, 3.0, 0.0, 0.0), (2.0, 0.0, 4.0, 0.0), (3.0, 0.0, 0.0, 5.0)]
    day = derive_mobility_from_accelerometer(samples)
    # magnitudes 3, 4, 5 in the night bin: population std sqrt(2/3)
    assert day.night == pytest.approx(math.sqrt(2.0 / 3.0))
    assert day.morning is None and day.afternoon is None and day.evening is None
    assert day.daily_avg == pytest.approx(day.night)


def test_mobility_needs_two_samples_per_bin():
    day = derive_mobility_from_accelerometer([
        (1.0, 1.0, 0.0, 0.0),                       # lone night sample
        (7.0, 1.0, 0.0, 0.0), (8.0, 2.0, 0.0, 0.0)  # morning has two
    ])
    assert day.night is None
    assert day.morning == pytest.approx(0.5)
    assert day.daily_avg == pytest.approx(0.5)


def test_mobility_bin_boundaries():
    # hour 24.0 folds into the last bin rather than indexing out of range
    day = derive_mobility_from_accelerometer([
        (24.0, 1.0, 0.0, 0.0), (23.0, 3.0, 0.0, 0.0)])
    assert day.evening == pytest.approx(1.0)
    with pytest.raises(DomainError):
        derive_mobility_from_accelerometer([(25.0, 1.0, 0.0, 0.0)])
    with pytest.raises(MissingData):
        derive_mobility_from_accelerometer([])


# ---------------------------------------------------------------------------
# Screen usage binning
# ---------------------------------------------------------------------------

def test_screen_merges_overlaps():
    day = bin_screen_usage([(1.0, 3.0), (2.0, 4.0)])
    assert day.night == pytest.approx(3.0)     # union [1, 4]
    assert day.daily_avg == pytest.approx(3.0 / 4.0)


def test_screen_splits_across_bins():
    day = bin_screen_usage([(5.0, 7.0)])
    assert day.night == pytest.approx(1.0)
    assert day.morning == pytest.approx(1.0)


def test_screen_clips_to_day():
    day = bin_screen_usage([(-2.0, 2.0), (23.0, 27.0)])
    assert day.night == pytest.approx(2.0)
    assert day.evening == pytest.approx(1.0)


def test_screen_no_episodes_is_all_zero():
    day = bin_screen_usage([])
    assert (day.night, day.morning, day.afternoon, day.evening) == (0, 0, 0, 0)
    assert day.daily_avg == 0.0


# ---------------------------------------------------------------------------
# Exclusions
# ---------------------------------------------------------------------------

def test_exclusions_trim_endpoints_and_threshold():
    recs = span_records("a", "2024-01-01", MIN_DAYS + 2)
    kept, audit = apply_exclusions_with_audit(recs)
    assert len(kept) == MIN_DAYS
    dates = [r.date for r in kept]
    assert dt.date(2024, 1, 1) not in dates
    assert dt.date(2024, 1, 16) not in dates
    assert audit.dropped_endpoint_days == 2
    assert audit.participants_out == 1
    assert all(r.trimmed for r in kept)


def test_exclusions_drop_short_participants():
    recs = span_records("short", "2024-01-01", MIN_DAYS + 1)  # 13 after trim
    kept, audit = apply_exclusions_with_audit(recs)
    assert kept == []
    assert audit.dropped_short_participants == 1
    assert audit.participants_out == 0


def test_exclusions_drop_incomplete_days():
    recs = span_records("a", "2024-01-01", MIN_DAYS + 4)
    recs[5] = mk_rec("a", "2024-01-06", missing=("sleep_dur",))
    kept, audit = apply_exclusions_with_audit(recs)
    assert audit.dropped_missing_days == 1
    assert len(kept) == MIN_DAYS + 1
    assert dt.date(2024, 1, 6) not in [r.date for r in kept]


def test_exclusions_are_idempotent():
    recs = span_records("a", "2024-01-01", MIN_DAYS + 4)
    once = apply_exclusions(recs)
    twice = apply_exclusions(once)
    assert [(r.participant_id, r.date) for r in once] == \
        [(r.participant_id, r.date) for r in twice]
    assert len(twice) == MIN_DAYS + 2    # no second endpoint trim


def test_exclusions_reject_duplicate_dates():
    recs = span_records("a", "2024-01-01", MIN_DAYS + 2)
    recs.append(mk_rec("a", "2024-01-05"))
    with pytest.raises(SchemaError):
        apply_exclusions(recs)


def test_exclusions_group_units_are_independent():
    # same participant id in two groups: trimmed per group
    recs = (span_records("a", "2024-01-01", MIN_DAYS + 2, group="2024") +
            span_records("a", "2024-06-01", MIN_DAYS + 2, group="2025"))
    kept, audit = apply_exclusions_with_audit(recs)
    assert audit.dropped_endpoint_days == 4
    assert audit.participants_in == 2
    assert len(kept) == 2 * MIN_DAYS


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def test_standardize_z_scores():
    recs = [mk_rec("a", "2024-01-01", value=1.0),
            mk_rec("a", "2024-01-02", value=2.0),
            mk_rec("a", "2024-01-03", value=3.0)]
    matrix = standardize(recs)
    np.testing.assert_allclose(matrix.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(matrix.values, np.tile(matrix.values[:, :1], (1, 13)))


def test_standardize_zero_variance_becomes_zero():
    recs = [mk_rec("a", "2024-01-01", value=7.0),
            mk_rec("a", "2024-01-02", value=7.0)]
    matrix = standardize(recs)
    np.testing.assert_array_equal(matrix.values, np.zeros((2, 13)))


def test_standardize_is_per_participant():
    recs = ([mk_rec("a", "2024-01-01", value=0.0), mk_rec("a", "2024-01-02", value=10.0)]
            + [mk_rec("b", "2024-01-01", value=100.0), mk_rec("b", "2024-01-02", value=101.0)])
    matrix = standardize(recs)
    # both participants normalize to the same +-1/sqrt(2) pattern
    np.testing.assert_allclose(matrix.values[:2, 0], matrix.values[2:, 0], atol=1e-12)


def test_standardize_requires_complete_days():
    with pytest.raises(DomainError):
        standardize([mk_rec("a", "2024-01-01", missing=("mob_n",)),
                     mk_rec("a", "2024-01-02")])
    with pytest.raises(DomainError):
        standardize([mk_rec("a", "2024-01-01")])   # single day


def test_feature_matrix_helpers():
    recs = (span_records("b", "2024-01-01", 3, group="g1")
            + span_records("a", "2024-01-01", 3, value=2.0, group="g1")
            + span_records("a", "2024-02-01", 3, group="g2"))
    matrix = standardize(recs)
    assert matrix.groups() == ["g1", "g2"]
    assert len(matrix.group_indices("g2")) == 3
    by_pid = matrix.participant_rows("g1")
    assert sorted(by_pid) == ["a", "b"]
    sub = matrix.subset(matrix.group_indices("g1"))
    assert sub.n_rows == 6
    assert all(r.group_key == "g1" for r in sub.rows)


def test_weekday_flag():
    assert mk_rec("a", "2024-01-01").weekday_flag          # Monday
    assert not mk_rec("a", "2024-01-06").weekday_flag      # Saturday


# ---------------------------------------------------------------------------
# CSV schemas
# ---------------------------------------------------------------------------

def daily_csv_text(rows, meta=None):
    lines = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    lines.append(",".join(DAILY_HEADER))
    lines.extend(rows)
    return "\n".join(lines) + "\n"


def test_load_daily_csv_parses_missing_cells(tmp_path):
    path = tmp_path / "daily.csv"
    vals = ",".join(["1.5"] * 12)
    path.write_text(daily_csv_text([f"p1,2024-01-01,,{vals},", f"p1,2024-01-02,,{vals},2.0"]))
    records, meta = load_daily_csv(str(path))
    assert len(records) == 2
    assert records[0].features["scr_e"] is None
    assert records[1].features["scr_e"] == 2.0
    assert records[0].date == dt.date(2024, 1, 1)
    assert meta == {}


def test_load_daily_csv_errors(tmp_path):
    path = tmp_path / "daily.csv"
    path.write_text("participant_id,date\np1,2024-01-01\n")
    with pytest.raises(SchemaError, match="missing column"):
        load_daily_csv(str(path))
    vals = ",".join(["1.0"] * 13)
    path.write_text(daily_csv_text([f"p1,not-a-date,,{vals}"]))
    with pytest.raises(SchemaError, match="date"):
        load_daily_csv(str(path))
    path.write_text(daily_csv_text([f",2024-01-01,,{vals}"]))
    with pytest.raises(SchemaError, match="participant_id"):
        load_daily_csv(str(path))
    path.write_text(daily_csv_text(["p1,2024-01-01,," + ",".join(["oops"] + ["1.0"] * 12)]))
    with pytest.raises(SchemaError, match="not a number"):
        load_daily_csv(str(path))


def test_load_daily_csv_unexpected_column(tmp_path):
    path = tmp_path / "daily.csv"
    path.write_text("participant_id,date,group_key,bogus,"
                    + ",".join(FEATURE_NAMES) + "\n")
    with pytest.raises(SchemaError, match="bogus"):
        load_daily_csv(str(path))


def test_load_dataset_requires_normalized_mark(tmp_path):
    path = tmp_path / "dataset.csv"
    vals = ",".join(["0.0"] * 13)
    path.write_text(daily_csv_text([f"p1,2024-01-01,,{vals}"]))
    with pytest.raises(SchemaError, match="normalized"):
        load_dataset_csv(str(path))
    path.write_text(daily_csv_text([f"p1,2024-01-01,,{vals}"],
                                   meta={"normalized": "true"}))
    matrix, meta = load_dataset_csv(str(path))
    assert matrix.n_rows == 1
    assert meta["normalized"] == "true"


def test_load_profiles_normalizes_dash_variants(tmp_path):
    path = tmp_path / "profiles.csv"
    path.write_text(
        "participant_id,age_bin,gender,extraversion,agreeableness,"
        "conscientiousness,neuroticism,openness\n"
        "p1,25–34,Female,3.0,3.5,2.0,4.0,1.5\n")   # en-dash age bin
    profiles = load_profiles_csv(str(path))
    assert profiles["p1"].age_bin == "25-34"
    assert profiles["p1"].age_bin in AGE_BINS
    assert profiles["p1"].traits()["neuroticism"] == 4.0


def test_load_profiles_rejects_bad_traits(tmp_path):
    path = tmp_path / "profiles.csv"
    path.write_text(
        "participant_id,age_bin,gender,extraversion,agreeableness,"
        "conscientiousness,neuroticism,openness\n"
        "p1,25-34,Female,3.0,3.5,2.0,4.0,7.5\n")
    with pytest.raises(SchemaError, match="openness"):
        load_profiles_csv(str(path))


def test_load_episode_and_accel_csv(tmp_path):
    ep = tmp_path / "lock.csv"
    ep.write_text("participant_id,start,end\n"
                  "p1,2024-01-01T22:00:00,2024-01-02T06:00:00\n"
                  "p1,2024-01-01T13:00:00,2024-01-01T13:30:00\n")
    episodes = load_episode_csv(str(ep))
    assert len(episodes["p1"]) == 2
    assert episodes["p1"][0][0].hour == 13    # sorted by start

    acc = tmp_path / "accel.csv"
    acc.write_text("participant_id,timestamp,ax,ay,az\n"
                   "p1,2024-01-01T08:00:00,0.1,0.2,0.3\n")
    samples = load_accel_csv(str(acc))
    assert samples["p1"][0][1:] == (0.1, 0.2, 0.3)
    acc.write_text("participant_id,timestamp,ax,ay,az\np1,whenever,0,0,0\n")
    with pytest.raises(SchemaError, match="timestamp"):
        load_accel_csv(str(acc))


# ---------------------------------------------------------------------------
# Raw-sensor day assembly
# ---------------------------------------------------------------------------

def test_derive_daily_records_assembles_modalities():
    day = dt.date(2024, 1, 10)
    ts = lambda d, h, m=0: dt.datetime.combine(d, dt.time(h, m))
    lock = {"p1": [(ts(day - dt.timedelta(days=1), 22), ts(day, 6)),
                   (ts(day, 22), ts(day + dt.timedelta(days=1), 7))]}
    accel = {"p1": [(ts(day, 8), 1.0, 0.0, 0.0), (ts(day, 9), 0.0, 2.0, 0.0),
                    (ts(day + dt.timedelta(days=1), 10), 1.0, 1.0, 0.0),
                    (ts(day + dt.timedelta(days=1), 11), 0.5, 0.5, 0.0)]}
    screen = {"p1": [(ts(day, 20), ts(day, 22)),
                     (ts(day + dt.timedelta(days=2), 9), ts(day + dt.timedelta(days=2), 10))]}
    records = derive_daily_records(lock, accel, screen)
    by_date = {r.date: r for r in records}

    rec = by_date[day]
    assert rec.features["sleep_bed"] == pytest.approx(10.0)   # 22:00 prior evening
    assert rec.features["sleep_wake"] == pytest.approx(18.0)  # 06:00
    assert rec.features["sleep_dur"] == pytest.approx(8.0)
    assert rec.features["mob_m"] is not None                  # two morning samples
    assert rec.features["scr_e"] == pytest.approx(2.0)

    # the day between screen episodes is inside the span: a genuine zero
    mid = day + dt.timedelta(days=1)
    assert by_date[mid].features["scr_daily"] == 0.0
    # outside the accelerometer span mobility stays missing
    last = day + dt.timedelta(days=2)
    assert by_date[last].features["mob_daily"] is None


def test_derive_daily_records_empty_inputs():
    assert derive_daily_records({}, {}, {}) == []


def test_derive_daily_records_group_key():
    ts = dt.datetime(2024, 1, 1, 12)
    records = derive_daily_records({}, {}, {"p1": [(ts, ts + dt.timedelta(hours=1))]},
                                   group_key="wave1")
    assert records and all(r.group_key == "wave1" for r in records)
