"""Synthetic cohort generator and its recorded ground truth."""

from __future__ import annotations

import datetime as dt

import numpy as np
import pytest

from routinesig.errors import DomainError
from routinesig.gmm import bhattacharyya_distance
from routinesig.ingest import FEATURE_NAMES
from routinesig.pipeline import ingest_records
from routinesig.synth import (CohortSpec, generate_cohort, match_labels,
                              recovery_ari)


def small_spec(**kw):
    base = dict(n_participants=8, n_days=30, k=3, separation=1.5, seed=5)
    base.update(kw)
    return CohortSpec(**base)


def test_generation_is_deterministic():
    c1 = generate_cohort(small_spec())
    c2 = generate_cohort(small_spec())
    np.testing.assert_array_equal(c1.means, c2.means)
    np.testing.assert_array_equal(c1.weights, c2.weights)
    for a, b in zip(c1.labels, c2.labels):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(c1.features, c2.features):
        np.testing.assert_array_equal(a, b)
    assert c1.dates == c2.dates


def test_different_seeds_differ():
    c1 = generate_cohort(small_spec(seed=5))
    c2 = generate_cohort(small_spec(seed=6))
    assert not np.array_equal(c1.features[0], c2.features[0])


def test_separation_hits_target_exactly():
    for target in (1.0, 2.0, 3.5):
        cohort = generate_cohort(small_spec(separation=target))
        assert cohort.separation_min == pytest.approx(target, rel=1e-9)
        assert cohort.separation_mean >= cohort.separation_min - 1e-12
        # recompute minimum pairwise distance independently
        k = cohort.spec.k
        dists = [bhattacharyya_distance(cohort.means[i], cohort.covariances[i],
                                        cohort.means[j], cohort.covariances[j])
                 for i in range(k) for j in range(i + 1, k)]
        assert min(dists) == pytest.approx(target, rel=1e-9)


def test_spec_validation():
    with pytest.raises(DomainError):
        CohortSpec(n_participants=0).validate()
    with pytest.raises(DomainError):
        small_spec(k=1).validate()
    with pytest.raises(DomainError):
        small_spec(mode="markovian").validate()
    with pytest.raises(DomainError):
        small_spec(weekend_cluster=3).validate()   # out of range for k=3
    with pytest.raises(DomainError):
        small_spec(missing_rate=1.0).validate()
    with pytest.raises(DomainError):
        small_spec(separation=0.0).validate()


def test_weights_are_distributions():
    cohort = generate_cohort(small_spec())
    assert cohort.weights.shape == (8, 3)
    np.testing.assert_allclose(cohort.weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(cohort.weights >= 0)
    assert cohort.chains is None    # iid mode


def test_shared_weights_and_chain():
    cohort = generate_cohort(small_spec(shared_weights=True))
    for i in range(1, 8):
        np.testing.assert_array_equal(cohort.weights[i], cohort.weights[0])
    mk = generate_cohort(small_spec(mode="markov", shared_chain=True))
    assert mk.chains.shape == (8, 3, 3)
    np.testing.assert_allclose(mk.chains.sum(axis=2), 1.0, atol=1e-12)
    for i in range(1, 8):
        np.testing.assert_array_equal(mk.chains[i], mk.chains[0])


def test_markov_chains_vary_without_sharing():
    mk = generate_cohort(small_spec(mode="markov"))
    assert not np.array_equal(mk.chains[0], mk.chains[1])


def test_labels_in_range_and_dates_sorted():
    cohort = generate_cohort(small_spec(missing_rate=0.3, n_days=60))
    for labels, dates in zip(cohort.labels, cohort.dates):
        assert labels.min() >= 0 and labels.max() < 3
        assert len(labels) == len(dates)
        assert all(d2 > d1 for d1, d2 in zip(dates, dates[1:]))
        assert len(dates) < 60    # dropout actually removed days


def test_start_date_is_monday():
    cohort = generate_cohort(small_spec())
    assert cohort.dates[0][0].weekday() == 0
    assert cohort.dates[0][0] == dt.date(2024, 1, 1)


def test_weekend_boost_shifts_truth_labels():
    plain = generate_cohort(small_spec(n_participants=40, n_days=120,
                                       weight_concentration=20.0))
    boosted = generate_cohort(small_spec(n_participants=40, n_days=120,
                                         weight_concentration=20.0,
                                         weekend_cluster=1, weekend_boost=4.0))

    def weekend_share(cohort, cluster):
        hits = np.concatenate([
            np.array([d.weekday() >= 5 for d in dates])[labels == cluster]
            for labels, dates in zip(cohort.labels, cohort.dates)])
        return hits.mean()

    assert weekend_share(boosted, 1) > weekend_share(plain, 1) + 0.1
    assert weekend_share(boosted, 1) > 2 / 7


def test_feature_emission_matches_component_means():
    cohort = generate_cohort(small_spec(n_participants=40, n_days=100,
                                        separation=2.0, seed=9))
    feats = np.vstack(cohort.features)
    labels = cohort.flat_labels()
    for j in range(3):
        sample_mean = feats[labels == j].mean(axis=0)
        np.testing.assert_allclose(sample_mean, cohort.means[j], atol=0.2)


def test_matrix_rows_sorted_and_named():
    cohort = generate_cohort(small_spec())
    matrix = cohort.matrix()
    assert matrix.feature_names == list(FEATURE_NAMES)
    keys = [(r.group_key, r.participant_id, r.date) for r in matrix.rows]
    assert keys == sorted(keys)
    assert matrix.n_rows == 8 * 30


def test_to_records_round_trip_keeps_everyone():
    cohort = generate_cohort(small_spec(n_days=16))
    records = cohort.to_records()
    assert all(all(rec.features[f] is not None for f in FEATURE_NAMES)
               for rec in records)
    matrix, audit = ingest_records(records)
    # endpoint trim removes exactly 2 days each; 14 remain, nobody excluded
    assert audit.participants_out == 8
    assert audit.dropped_endpoint_days == 16
    assert audit.dropped_missing_days == 0
    assert matrix.n_rows == 8 * 14


def test_ground_truth_dict_round_trips_labels():
    cohort = generate_cohort(small_spec())
    doc = cohort.ground_truth_dict()
    assert doc["spec"]["seed"] == 5
    assert doc["separation_min"] == cohort.separation_min
    pid = cohort.participants[0]
    assert doc["labels"][pid]["labels"] == [int(v) for v in cohort.labels[0]]
    assert doc["labels"][pid]["dates"][0] == "2024-01-01"


def test_recovery_ari_properties():
    rng = np.random.default_rng(50)
    truth = rng.integers(0, 4, size=500)
    assert recovery_ari(truth, truth) == pytest.approx(1.0)
    perm = np.array([2, 3, 0, 1])[truth]    # relabeled, same partition
    assert recovery_ari(truth, perm) == pytest.approx(1.0)
    noise = rng.integers(0, 4, size=500)
    assert abs(recovery_ari(truth, noise)) < 0.05


def test_match_labels_recovers_permutation():
    rng = np.random.default_rng(51)
    truth = rng.integers(0, 4, size=300)
    mapping = {0: 3, 1: 2, 2: 0, 3: 1}    # true -> fitted relabeling
    fitted = np.array([mapping[v] for v in truth])
    got = match_labels(truth, fitted, k_true=4, k_fit=4)
    for t, f in mapping.items():
        assert got[f] == t


def test_participant_ids_are_zero_padded():
    cohort = generate_cohort(small_spec(n_participants=12))
    assert cohort.participants[0] == "P01"
    assert cohort.participants[-1] == "P12"
