"""Day-to-day routine transition dynamics.

For each participant (and split segment) a K x K transition matrix is
counted over consecutive calendar days and row-normalized. Rows whose
source cluster never starts a transition stay undefined (NaN), never
imputed. Because every participant is labeled by the same pooled model,
cluster ids align across people and matrices are directly comparable.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, Incomparable, InsufficientData
from .signature import jsd

MAX_GAP_DAYS = 1   # label pairs further apart than this do not count


@dataclass
class TransitionMatrix:
    """Row-stochastic transition estimate plus its raw counts."""

    counts: np.ndarray         # (K, K) integer-valued
    probabilities: np.ndarray  # (K, K); undefined rows are all-NaN
    n_transitions: int

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def defined_rows(self) -> np.ndarray:
        """Boolean mask of rows with at least one outgoing transition."""
        return self.counts.sum(axis=1) > 0


def count_transitions(labels: Sequence[int], dates: Sequence[dt.date], k: int,
                      max_gap_days: int = MAX_GAP_DAYS) -> TransitionMatrix:
    """Count cluster->cluster steps between days at most `max_gap_days` apart.

    Labels and dates must be date-sorted and aligned; a gap larger than
    the threshold breaks the chain without contributing a transition.
    """
    labels = np.asarray(labels, dtype=int)
    if len(labels) != len(dates):
        raise DomainError(f"{len(labels)} labels vs {len(dates)} dates")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels outside [0, {k})")
    if max_gap_days < 1:
        raise DomainError(f"max_gap_days must be >= 1, got {max_gap_days}")
    counts = np.zeros((k, k))
    for i in range(len(labels) - 1):
        delta = (dates[i + 1] - dates[i]).days
        if delta <= 0:
            raise DomainError(f"dates not strictly increasing at index {i}")
        if delta <= max_gap_days:
            counts[labels[i], labels[i + 1]] += 1.0
    row_sums = counts.sum(axis=1)
    probs = np.full((k, k), np.nan)
    defined = row_sums > 0
    probs[defined] = counts[defined] / row_sums[defined, None]
    return TransitionMatrix(counts=counts, probabilities=probs,
                            n_transitions=int(counts.sum()))


def transition_distance(t1: TransitionMatrix, t2: TransitionMatrix) -> float:
    """Mean JSD between matching defined rows of two transition matrices.

    Rows undefined in either matrix are skipped; if no row is defined in
    both, the pair is Incomparable. Rows are weighted equally regardless
    of how many transitions support them.
    """
    if t1.k != t2.k:
        raise DomainError(f"matrix sizes differ: {t1.k} vs {t2.k}")
    common = t1.defined_rows() & t2.defined_rows()
    if not common.any():
        raise Incomparable("no transition row is defined in both matrices")
    vals = [jsd(t1.probabilities[r], t2.probabilities[r])
            for r in np.flatnonzero(common)]
    return float(np.mean(vals))


@dataclass
class TransitionPersistenceRecord:
    """Within/between transition-matrix distances for one participant."""

    participant_id: str
    segment_days: int
    d_self: float
    d_ref: float
    n_reference_peers: int
    mat1: TransitionMatrix
    mat2: TransitionMatrix


def split_half_transitions(
    label_dates_by_participant: dict[str, tuple[Sequence[int], Sequence[dt.date]]],
    k: int,
    segment_days: int,
    max_gap_days: int = MAX_GAP_DAYS,
) -> dict[str, tuple[TransitionMatrix, TransitionMatrix]]:
    """Per-segment transition matrices for qualifying participants."""
    from .signature import split_segments
    out: dict[str, tuple[TransitionMatrix, TransitionMatrix]] = {}
    for pid in sorted(label_dates_by_participant):
        labels, dates = label_dates_by_participant[pid]
        labels = np.asarray(labels, dtype=int)
        spans = split_segments(labels.size, segment_days)
        if spans is None:
            continue
        out[pid] = (
            count_transitions(labels[spans[0]], list(dates[spans[0]]), k, max_gap_days),
            count_transitions(labels[spans[1]], list(dates[spans[1]]), k, max_gap_days),
        )
    return out


def _pairwise_transition_distances(mats: list[TransitionMatrix]) -> np.ndarray:
    """All-pairs transition distance; NaN where a pair shares no defined row."""
    from .signature import pairwise_jsd
    n = len(mats)
    k = mats[0].k
    defined = np.stack([m.defined_rows() for m in mats])
    probs = np.stack([m.probabilities for m in mats])
    acc = np.zeros((n, n))
    cnt = np.zeros((n, n))
    for r in range(k):
        idx = np.flatnonzero(defined[:, r])
        if idx.size == 0:
            continue
        block = pairwise_jsd(probs[idx, r, :])
        acc[np.ix_(idx, idx)] += block
        cnt[np.ix_(idx, idx)] += 1.0
    with np.errstate(invalid="ignore"):
        return np.where(cnt > 0, acc / np.where(cnt > 0, cnt, 1.0), np.nan)


def transition_persistence(
    halves: dict[str, tuple[TransitionMatrix, TransitionMatrix]],
    segment_days: int,
    reference: str = "mean",
) -> list[TransitionPersistenceRecord]:
    """d_self / d_ref over transition matrices, mirroring the signature
    version. Incomparable peer pairs are skipped; a participant with no
    comparable peer gets d_ref = NaN and zero peers."""
    if reference not in ("mean", "median"):
        raise DomainError(f"unknown reference aggregation: {reference!r}")
    pids = sorted(halves)
    if len(pids) < 2:
        raise InsufficientData(
            f"persistence comparison needs >= 2 qualifying participants, got {len(pids)}")
    firsts = [halves[pid][0] for pid in pids]
    seconds = [halves[pid][1] for pid in pids]
    peer1 = _pairwise_transition_distances(firsts)
    peer2 = _pairwise_transition_distances(seconds)
    peer = 0.5 * (peer1 + peer2)
    agg = np.mean if reference == "mean" else np.median
    records: list[TransitionPersistenceRecord] = []
    for i, pid in enumerate(pids):
        m1, m2 = halves[pid]
        d_self = transition_distance(m1, m2)
        peer_vals = np.delete(peer[i], i)
        peer_vals = peer_vals[np.isfinite(peer_vals)]
        d_ref = float(agg(peer_vals)) if peer_vals.size else math.nan
        records.append(TransitionPersistenceRecord(
            participant_id=pid, segment_days=segment_days,
            d_self=float(d_self), d_ref=d_ref,
            n_reference_peers=int(peer_vals.size), mat1=m1, mat2=m2))
    return records


def pooled_mean_matrix(mats: Sequence[TransitionMatrix]) -> np.ndarray:
    """Average of per-participant probability matrices, NaN rows excluded
    cellwise (a cohort-level descriptive, not a fitted chain)."""
    if not mats:
        raise InsufficientData("no transition matrices to average")
    stack = np.stack([m.probabilities for m in mats])
    with np.errstate(invalid="ignore"):
        return np.nanmean(stack, axis=0)
