"""Rank-ordered routine signatures and persistence distances.

A participant's signature over a block of days is the vector of cluster
occupancy proportions sorted in descending order. Sorting discards the
cluster identities, so two people are compared on the *shape* of their
routine allocation (how concentrated their days are in their own top
routines), not on which routines those are. Signatures always carry K
entries; clusters a participant never visits contribute trailing zeros.

Persistence is measured by splitting each participant's retained days
into two contiguous segments and comparing the two signatures:
d_self is the distance between a person's own halves, d_ref the mean
distance to the other participants' segment-matched signatures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EmptySegment, InsufficientData

DISTANCE_METRICS = ("jsd", "cosine")


# ---------------------------------------------------------------------------
# Signature construction
# ---------------------------------------------------------------------------

def cluster_counts(labels: Sequence[int], k: int) -> np.ndarray:
    """Occupancy counts over clusters 0..k-1."""
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels outside [0, {k})")
    return np.bincount(labels, minlength=k).astype(float)


@dataclass
class Signature:
    """Descending cluster-proportion vector with its rank->cluster map."""

    proportions: np.ndarray     # length K, sorted descending, sums to 1
    cluster_order: np.ndarray   # cluster id at each rank
    counts: np.ndarray          # day counts at each rank
    n_days: int

    @property
    def k(self) -> int:
        return self.proportions.shape[0]


def rank_signature(labels: Sequence[int], k: int) -> Signature:
    """Signature of a day-label sequence: proportions sorted descending.

    Count ties keep the lower cluster index first, so the rank->cluster
    map is deterministic.
    """
    counts = cluster_counts(labels, k)
    n_days = int(counts.sum())
    if n_days == 0:
        raise EmptySegment("cannot build a signature from zero days")
    order = np.lexsort((np.arange(k), -counts))
    sorted_counts = counts[order]
    return Signature(proportions=sorted_counts / n_days,
                     cluster_order=order,
                     counts=sorted_counts,
                     n_days=n_days)


def top_k_share(sig: Signature, k: int) -> float:
    """Summed proportion of the k most frequent routine types."""
    if not (1 <= k <= sig.k):
        raise DomainError(f"k must be in [1, {sig.k}], got {k}")
    return float(sig.proportions[:k].sum())


# ---------------------------------------------------------------------------
# Distances between probability vectors
# ---------------------------------------------------------------------------

def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def _entropy_bits_rows(p: np.ndarray) -> np.ndarray:
    """Entropy along the last axis with 0 * log(0) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log2(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def jsd_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rowwise JSD between aligned stacks of probability vectors."""
    h_m = _entropy_bits_rows(0.5 * (p + q))
    d = h_m - 0.5 * (_entropy_bits_rows(p) + _entropy_bits_rows(q))
    return np.clip(d, 0.0, 1.0)


def pairwise_jsd(p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    """All-pairs JSD between rows of p and rows of q (default p itself)."""
    q = p if q is None else q
    h_p = _entropy_bits_rows(p)
    h_q = _entropy_bits_rows(q)
    m = 0.5 * (p[:, None, :] + q[None, :, :])
    d = _entropy_bits_rows(m) - 0.5 * (h_p[:, None] + h_q[None, :])
    return np.clip(d, 0.0, 1.0)


def cosine_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rowwise cosine distance between aligned stacks of vectors."""
    num = np.einsum("ij,ij->i", p, q)
    den = np.linalg.norm(p, axis=1) * np.linalg.norm(q, axis=1)
    if np.any(den == 0.0):
        raise DomainError("cosine distance undefined for a zero vector")
    return 1.0 - np.clip(num / den, -1.0, 1.0)


def pairwise_cosine(p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    q = p if q is None else q
    np_ = np.linalg.norm(p, axis=1)
    nq = np.linalg.norm(q, axis=1)
    if np.any(np_ == 0.0) or np.any(nq == 0.0):
        raise DomainError("cosine distance undefined for a zero vector")
    sim = (p @ q.T) / np.outer(np_, nq)
    return 1.0 - np.clip(sim, -1.0, 1.0)


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence, base 2, bounded in [0, 1].

    H((p+q)/2) - (H(p) + H(q))/2 with 0*log(0) = 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0):
            raise DomainError(f"{name} has negative entries")
        total = v.sum()
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise DomainError(f"{name} sums to {total}, not 1")
    m = 0.5 * (p + q)
    d = _entropy_bits(m) - 0.5 * (_entropy_bits(p) + _entropy_bits(q))
    # Clamp the tiny negative / >1 excursions float arithmetic can produce.
    return min(1.0, max(0.0, d))


def cosine_distance(p: Sequence[float], q: Sequence[float]) -> float:
    """1 - cosine similarity; zero vectors are a domain error."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"shape mismatch: {p.shape} vs {q.shape}")
    np_, nq = float(np.linalg.norm(p)), float(np.linalg.norm(q))
    if np_ == 0.0 or nq == 0.0:
        raise DomainError("cosine distance undefined for a zero vector")
    sim = float(p @ q) / (np_ * nq)
    return 1.0 - min(1.0, max(-1.0, sim))


def signature_distance(sig1: Signature | np.ndarray, sig2: Signature | np.ndarray,
                       metric: str = "jsd") -> float:
    p = sig1.proportions if isinstance(sig1, Signature) else np.asarray(sig1, float)
    q = sig2.proportions if isinstance(sig2, Signature) else np.asarray(sig2, float)
    fn = _metric_fn(metric)
    return fn(p, q)


def _metric_fn(metric: str) -> Callable[[np.ndarray, np.ndarray], float]:
    if metric == "jsd":
        return jsd
    if metric == "cosine":
        return cosine_distance
    raise DomainError(f"unknown distance metric: {metric!r} (use one of {DISTANCE_METRICS})")


# ---------------------------------------------------------------------------
# Split-half persistence
# ---------------------------------------------------------------------------

def split_segments(n_days: int, segment_days: int) -> tuple[slice, slice] | None:
    """Two contiguous same-length windows over a participant's retained days.

    Days beyond 2*segment_days are surplus and ignored. Participants with
    fewer than 2*segment_days retained days do not qualify (returns None).
    """
    if segment_days < 1:
        raise DomainError(f"segment_days must be >= 1, got {segment_days}")
    if n_days < 2 * segment_days:
        return None
    return slice(0, segment_days), slice(segment_days, 2 * segment_days)


@dataclass
class PersistenceRecord:
    """One participant's within/between distances for one segmentation."""

    participant_id: str
    segment_days: int
    metric: str
    d_self: float
    d_ref: float
    n_reference_peers: int
    sig1: Signature
    sig2: Signature


def split_half_signatures(
    labels_by_participant: dict[str, Sequence[int]],
    k: int,
    segment_days: int,
) -> dict[str, tuple[Signature, Signature]]:
    """First/second-window signatures for every qualifying participant."""
    out: dict[str, tuple[Signature, Signature]] = {}
    for pid in sorted(labels_by_participant):
        labels = np.asarray(labels_by_participant[pid], dtype=int)
        spans = split_segments(labels.size, segment_days)
        if spans is None:
            continue
        out[pid] = (rank_signature(labels[spans[0]], k),
                    rank_signature(labels[spans[1]], k))
    return out


def persistence_distances(
    halves: dict[str, tuple[Signature, Signature]],
    segment_days: int,
    metric: str = "jsd",
    reference: str = "mean",
) -> list[PersistenceRecord]:
    """d_self and d_ref per participant.

    d_self compares a participant's two segment signatures. d_ref
    aggregates, over every other participant j, the segment-matched
    average (d(sig_i1, sig_j1) + d(sig_i2, sig_j2)) / 2; `reference`
    picks mean (default) or median aggregation.
    """
    if reference not in ("mean", "median"):
        raise DomainError(f"unknown reference aggregation: {reference!r}")
    _metric_fn(metric)
    pids = sorted(halves)
    if len(pids) < 2:
        raise InsufficientData(
            f"persistence comparison needs >= 2 qualifying participants, got {len(pids)}")
    first = np.stack([halves[pid][0].proportions for pid in pids])
    second = np.stack([halves[pid][1].proportions for pid in pids])
    if metric == "jsd":
        d_self = jsd_rows(first, second)
        peer = 0.5 * (pairwise_jsd(first) + pairwise_jsd(second))
    else:
        d_self = cosine_rows(first, second)
        peer = 0.5 * (pairwise_cosine(first) + pairwise_cosine(second))
    agg = np.mean if reference == "mean" else np.median
    records: list[PersistenceRecord] = []
    for i, pid in enumerate(pids):
        peer_vals = np.delete(peer[i], i)
        records.append(PersistenceRecord(
            participant_id=pid, segment_days=segment_days, metric=metric,
            d_self=float(d_self[i]), d_ref=float(agg(peer_vals)),
            n_reference_peers=len(pids) - 1,
            sig1=halves[pid][0], sig2=halves[pid][1]))
    return records
