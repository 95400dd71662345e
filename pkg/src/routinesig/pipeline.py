"""End-to-end orchestration: ingest, fit, analyze, and export.

Datasets with several group keys (e.g. academic years) are processed as
independent pools: one model per group, one set of exports per group,
with persistence peers drawn only from the same group. Output filenames
get a `_<group>` suffix only when more than one group is present.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .errors import DomainError, InsufficientData, SchemaError
from .gmm import MixtureModel, component_separation, fit_mixture, sweep_mixtures
from .ingest import (FEATURE_NAMES, DayRecord, ExclusionAudit, FeatureMatrix,
                     ParticipantProfile, apply_exclusions_with_audit, standardize)
from .reports import write_csv_atomic
from .signature import (Signature, persistence_distances, rank_signature,
                        split_half_signatures, top_k_share)
from .stats import build_design, fit_ols, fit_random_intercept, paired_test
from .transitions import (TransitionMatrix, split_half_transitions,
                          transition_persistence)

DATASET_FORMAT = "routinesig-dataset"
DATASET_VERSION = 1

SIGNATURE_HEADER = ["participant_id", "segment_id", "rank", "cluster_id",
                    "count", "proportion"]
PERSISTENCE_HEADER = ["participant_id", "variant", "metric", "d_self", "d_ref",
                      "n_reference_peers"]
TRANSITION_HEADER = ["participant_id", "segment_id", "from_cluster", "to_cluster",
                     "count", "probability"]
CLUSTER_SUMMARY_HEADER = (["cluster_id", "n_days", "share", "n_weekday", "n_weekend",
                           "weekday_share", "weekend_share"]
                          + [f"centroid_{name}" for name in FEATURE_NAMES])


# ---------------------------------------------------------------------------
# Ingest stage
# ---------------------------------------------------------------------------

def ingest_records(records: Sequence[DayRecord]) -> tuple[FeatureMatrix, ExclusionAudit]:
    """Exclusion rules then within-participant standardization."""
    kept, audit = apply_exclusions_with_audit(records)
    if not kept:
        raise InsufficientData("no rows survive the exclusion rules")
    return standardize(kept), audit


def dataset_meta(config: RunConfig) -> dict[str, object]:
    return {"format": DATASET_FORMAT, "version": DATASET_VERSION,
            "normalized": "true", "run_config": config.semantic_hash()}


def write_dataset_csv(matrix: FeatureMatrix, path: str, config: RunConfig) -> None:
    header = ["participant_id", "date", "group_key"] + list(matrix.feature_names)
    rows = []
    for i, meta in enumerate(matrix.rows):
        rows.append([meta.participant_id, meta.date.isoformat(), meta.group_key]
                    + [float(v) for v in matrix.values[i]])
    write_csv_atomic(path, header, rows, meta=dataset_meta(config))


# ---------------------------------------------------------------------------
# Cluster summary
# ---------------------------------------------------------------------------

@dataclass
class ClusterSummary:
    """Per-cluster occupancy, weekday/weekend split, and centroids."""

    counts: np.ndarray          # (K,) day counts
    weekday_counts: np.ndarray
    weekend_counts: np.ndarray
    centroids: np.ndarray       # (K, N); empty clusters are NaN rows

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def shares(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total > 0 else np.full(self.k, np.nan)

    def weekend_share(self, cluster: int) -> float:
        n = self.counts[cluster]
        return float(self.weekend_counts[cluster] / n) if n > 0 else math.nan

    def rows(self) -> list[list[object]]:
        shares = self.shares()
        out: list[list[object]] = []
        for j in range(self.k):
            n = self.counts[j]
            wd, we = self.weekday_counts[j], self.weekend_counts[j]
            row: list[object] = [j, int(n), float(shares[j]),
                                 int(wd), int(we),
                                 float(wd / n) if n > 0 else math.nan,
                                 float(we / n) if n > 0 else math.nan]
            row.extend(float(v) for v in self.centroids[j])
            out.append(row)
        return out


def cluster_summary(labels: Sequence[int], matrix: FeatureMatrix, k: int) -> ClusterSummary:
    """Occupancy, weekday/weekend counts, and mean standardized features
    per cluster. Empty clusters keep zero counts and NaN centroids."""
    labels = np.asarray(labels, dtype=int)
    if labels.size != matrix.n_rows:
        raise DomainError(f"{labels.size} labels vs {matrix.n_rows} rows")
    counts = np.bincount(labels, minlength=k).astype(float)
    weekday = np.zeros(k)
    for i, meta in enumerate(matrix.rows):
        if meta.weekday_flag:
            weekday[labels[i]] += 1
    centroids = np.full((k, matrix.values.shape[1]), np.nan)
    for j in range(k):
        mask = labels == j
        if mask.any():
            centroids[j] = matrix.values[mask].mean(axis=0)
    return ClusterSummary(counts=counts, weekday_counts=weekday,
                          weekend_counts=counts - weekday, centroids=centroids)


# ---------------------------------------------------------------------------
# Per-group analysis
# ---------------------------------------------------------------------------

def _variant(kind: str, segment_days: int) -> str:
    return f"{kind}-{segment_days}d"


def _segment_id(segment_days: int, half: int) -> str:
    return f"{segment_days}d-{half}"


@dataclass
class GroupAnalysis:
    """Every export and statistic for one group's pooled model."""

    group_key: str
    model: MixtureModel
    matrix: FeatureMatrix
    labels: np.ndarray
    clusters: ClusterSummary
    full_signatures: dict[str, Signature]
    signature_rows: list[list[object]] = dc_field(default_factory=list)
    persistence_rows: list[list[object]] = dc_field(default_factory=list)
    transition_rows: list[list[object]] = dc_field(default_factory=list)
    paired_tests: dict[str, dict[str, object]] = dc_field(default_factory=dict)
    persistence_values: dict[tuple[str, str], tuple[list[str], np.ndarray, np.ndarray]] = dc_field(default_factory=dict)
    mean_transitions: np.ndarray | None = None
    rank_curves: dict[int, tuple[np.ndarray, np.ndarray]] = dc_field(default_factory=dict)
    summary: dict[str, object] = dc_field(default_factory=dict)


def _signature_export_rows(pid: str, segment_id: str, sig: Signature) -> list[list[object]]:
    return [[pid, segment_id, rank + 1, int(sig.cluster_order[rank]),
             int(sig.counts[rank]), float(sig.proportions[rank])]
            for rank in range(sig.k)]


def _transition_export_rows(pid: str, segment_id: str,
                            mat: TransitionMatrix) -> list[list[object]]:
    rows = []
    for a in range(mat.k):
        for b in range(mat.k):
            p = mat.probabilities[a, b]
            rows.append([pid, segment_id, a, b, int(mat.counts[a, b]),
                         float(p) if not math.isnan(p) else math.nan])
    return rows


def _paired_summary(names: list[str], d_self: np.ndarray, d_ref: np.ndarray,
                    alpha: float) -> dict[str, object]:
    finite = np.isfinite(d_self) & np.isfinite(d_ref)
    doc: dict[str, object] = {
        "n_eligible": int(len(names)),
        "n_compared": int(finite.sum()),
        "mean_d_self": float(d_self[finite].mean()) if finite.any() else math.nan,
        "sd_d_self": float(d_self[finite].std(ddof=1)) if finite.sum() > 1 else math.nan,
        "mean_d_ref": float(d_ref[finite].mean()) if finite.any() else math.nan,
        "sd_d_ref": float(d_ref[finite].std(ddof=1)) if finite.sum() > 1 else math.nan,
        "alpha": alpha,
    }
    if finite.sum() >= 2:
        res = paired_test(d_self[finite], d_ref[finite])
        doc["test"] = res.to_dict()
        doc["rejects"] = (not res.degenerate) and res.t_p < alpha
    else:
        doc["test"] = None
        doc["rejects"] = None
        doc["note"] = "fewer than 2 comparable participants"
    return doc


def analyze_group(matrix: FeatureMatrix, model: MixtureModel,
                  config: RunConfig, group_key: str) -> GroupAnalysis:
    """Assignments, signatures, transitions, persistence, and paired tests
    for one group's rows under its pooled model."""
    labels = model.assign(matrix.values)
    k = model.k
    clusters = cluster_summary(labels, matrix, k)

    by_pid = matrix.participant_rows()
    labels_by_pid = {pid: labels[idx] for pid, idx in by_pid.items()}
    dates_by_pid = {pid: [matrix.rows[i].date for i in idx] for pid, idx in by_pid.items()}

    out = GroupAnalysis(group_key=group_key, model=model, matrix=matrix,
                        labels=labels, clusters=clusters,
                        full_signatures={pid: rank_signature(labs, k)
                                         for pid, labs in labels_by_pid.items()})

    for pid in sorted(out.full_signatures):
        out.signature_rows.extend(_signature_export_rows(pid, "full",
                                                         out.full_signatures[pid]))

    all_transition_mats: list[TransitionMatrix] = []
    for seg in config.segment_days:
        halves = split_half_signatures(labels_by_pid, k, seg)
        for pid in sorted(halves):
            out.signature_rows.extend(_signature_export_rows(pid, _segment_id(seg, 1), halves[pid][0]))
            out.signature_rows.extend(_signature_export_rows(pid, _segment_id(seg, 2), halves[pid][1]))
        for metric in config.metrics:
            variant = _variant("signature", seg)
            key = f"{variant}|{metric}"
            if len(halves) >= 2:
                records = persistence_distances(halves, seg, metric=metric,
                                                reference=config.reference)
                names = [r.participant_id for r in records]
                d_self = np.array([r.d_self for r in records])
                d_ref = np.array([r.d_ref for r in records])
                out.persistence_rows.extend(
                    [r.participant_id, variant, metric, r.d_self, r.d_ref,
                     r.n_reference_peers] for r in records)
                out.persistence_values[(variant, metric)] = (names, d_self, d_ref)
                out.paired_tests[key] = _paired_summary(names, d_self, d_ref, config.alpha)
            else:
                out.paired_tests[key] = {"n_eligible": len(halves), "test": None,
                                         "rejects": None,
                                         "note": "fewer than 2 qualifying participants"}

        t_halves = split_half_transitions(
            {pid: (labels_by_pid[pid], dates_by_pid[pid]) for pid in labels_by_pid},
            k, seg, max_gap_days=config.max_gap_days)
        for pid in sorted(t_halves):
            out.transition_rows.extend(_transition_export_rows(pid, _segment_id(seg, 1), t_halves[pid][0]))
            out.transition_rows.extend(_transition_export_rows(pid, _segment_id(seg, 2), t_halves[pid][1]))
            all_transition_mats.extend(t_halves[pid])
        variant = _variant("transition", seg)
        key = f"{variant}|jsd"
        if len(t_halves) >= 2:
            records_t = transition_persistence(t_halves, seg, reference=config.reference)
            names = [r.participant_id for r in records_t]
            d_self = np.array([r.d_self for r in records_t])
            d_ref = np.array([r.d_ref for r in records_t])
            out.persistence_rows.extend(
                [r.participant_id, variant, "jsd", r.d_self, r.d_ref,
                 r.n_reference_peers] for r in records_t)
            out.persistence_values[(variant, "jsd")] = (names, d_self, d_ref)
            out.paired_tests[key] = _paired_summary(names, d_self, d_ref, config.alpha)
        else:
            out.paired_tests[key] = {"n_eligible": len(t_halves), "test": None,
                                     "rejects": None,
                                     "note": "fewer than 2 qualifying participants"}

    if all_transition_mats:
        from .transitions import pooled_mean_matrix
        out.mean_transitions = pooled_mean_matrix(all_transition_mats)

    out.rank_curves[k] = _rank_curve(out.full_signatures)
    if config.k_range is not None:
        lo, hi = config.k_range
        for k_alt in range(lo, hi + 1):
            if k_alt == k or k_alt > matrix.n_rows:
                continue
            alt = fit_mixture(matrix.values, k_alt, model.structure,
                              seed=config.seed, n_restarts=config.n_restarts,
                              feature_names=matrix.feature_names)
            alt_labels = alt.assign(matrix.values)
            sigs = {pid: rank_signature(alt_labels[idx], k_alt)
                    for pid, idx in by_pid.items()}
            out.rank_curves[k_alt] = _rank_curve(sigs)

    top2 = [top_k_share(sig, min(2, sig.k)) for sig in out.full_signatures.values()]
    sep = component_separation(model)
    out.summary = {
        "group_key": group_key,
        "n_participants": len(by_pid),
        "n_days": int(matrix.n_rows),
        "k": k,
        "structure": model.structure,
        "bic": model.bic,
        "loglik": model.loglik,
        "converged": model.converged,
        "separation_mean": sep.mean_distance,
        "separation_min": sep.min_distance,
        "top2_share_mean": float(np.mean(top2)) if top2 else math.nan,
        "top2_share_sd": float(np.std(top2, ddof=1)) if len(top2) > 1 else math.nan,
        "paired_tests": out.paired_tests,
    }
    return out


def _rank_curve(signatures: dict[str, Signature]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and SD of ranked proportions across participants."""
    mat = np.stack([sig.proportions for sig in signatures.values()])
    sd = mat.std(axis=0, ddof=1) if mat.shape[0] > 1 else np.zeros(mat.shape[1])
    return mat.mean(axis=0), sd


# ---------------------------------------------------------------------------
# Regressions
# ---------------------------------------------------------------------------

TRAIT_NAMES = ["extraversion", "agreeableness", "conscientiousness",
               "neuroticism", "openness"]


def _design_rows(names: list[str], profiles: dict[str, ParticipantProfile]
                 ) -> tuple[list[dict[str, object]], list[str]]:
    rows, kept = [], []
    for pid in names:
        prof = profiles.get(pid)
        if prof is None:
            continue
        row: dict[str, object] = {"gender": prof.gender, "age_bin": prof.age_bin}
        row.update(prof.traits())
        rows.append(row)
        kept.append(pid)
    return rows, kept


def _categorical_spec(rows: list[dict[str, object]]) -> dict[str, tuple[str, list[str]]]:
    from .ingest import AGE_BINS
    genders = sorted({str(r["gender"]) for r in rows})
    ages = [b for b in AGE_BINS if b in {str(r["age_bin"]) for r in rows}]
    spec: dict[str, tuple[str, list[str]]] = {}
    if len(genders) > 1:
        ref = "Female" if "Female" in genders else genders[0]
        spec["gender"] = (ref, genders)
    if len(ages) > 1:
        spec["age_bin"] = (ages[0], ages)
    return spec


def regression_report(analyses: list[GroupAnalysis],
                      profiles: dict[str, ParticipantProfile] | None,
                      config: RunConfig) -> dict[str, object]:
    """OLS of d_self on demographics and traits per (group, variant), plus
    one participant-random-intercept model across groups when participants
    repeat; otherwise the mixed entry records why it was skipped."""
    if not profiles:
        return {"skipped": "no profiles file provided"}
    doc: dict[str, object] = {"ols": {}, "mixed": None}
    pooled: dict[str, list[tuple[str, float]]] = {}
    for analysis in analyses:
        group_doc: dict[str, object] = {}
        for (variant, metric), (names, d_self, _) in sorted(analysis.persistence_values.items()):
            if metric != "jsd":
                continue
            rows, kept = _design_rows(names, profiles)
            if len(rows) < len(TRAIT_NAMES) + 3:
                group_doc[variant] = {"skipped": f"only {len(rows)} profiled participants"}
                continue
            y = np.array([d_self[names.index(pid)] for pid in kept])
            design = build_design(rows, TRAIT_NAMES, _categorical_spec(rows))
            try:
                res = fit_ols(y, design, alpha=config.alpha)
            except (DomainError, InsufficientData) as exc:
                group_doc[variant] = {"skipped": str(exc)}
                continue
            group_doc[variant] = {
                "n": res.n, "r_squared": res.r_squared,
                "adj_r_squared": res.adj_r_squared,
                "coefficients": res.coef_table(),
            }
            pooled.setdefault(variant, []).extend(zip(kept, y))
        doc["ols"][analysis.group_key or "all"] = group_doc  # type: ignore[index]

    primary = _variant("signature", config.segment_days[0])
    obs = pooled.get(primary, [])
    n_repeat = len(obs) - len({pid for pid, _ in obs})
    if n_repeat < 1:
        doc["mixed"] = {"skipped": "no participant observed in more than one group"}
        return doc
    names = [pid for pid, _ in obs]
    y = np.array([v for _, v in obs])
    rows, kept = _design_rows(names, profiles)
    design = build_design(rows, TRAIT_NAMES, _categorical_spec(rows))
    try:
        res = fit_random_intercept(y, design, kept, alpha=config.alpha)
    except (DomainError, InsufficientData) as exc:
        doc["mixed"] = {"skipped": str(exc)}
        return doc
    doc["mixed"] = {
        "variant": primary,
        "n": res.n, "n_groups": res.n_groups,
        "sigma2_intercept": res.sigma2_intercept,
        "sigma2_residual": res.sigma2_residual,
        "r2_marginal": res.r2_marginal,
        "r2_conditional": res.r2_conditional,
        "coefficients": res.coef_table(),
    }
    return doc


# ---------------------------------------------------------------------------
# Fit + write helpers
# ---------------------------------------------------------------------------

def fit_groups(matrix: FeatureMatrix, config: RunConfig,
               mode: str) -> dict[str, MixtureModel | object]:
    """Fit per group: mode 'fit' pins one (K, structure); 'sweep' runs the
    BIC grid and returns SweepResult per group."""
    out: dict[str, object] = {}
    for group in matrix.groups():
        sub = matrix.subset(matrix.group_indices(group))
        if mode == "fit":
            k = config.pin_k if config.pin_k is not None else 8
            structure = config.structures[0] if len(config.structures) == 1 else "full"
            out[group] = fit_mixture(sub.values, k, structure, seed=config.seed,
                                     n_restarts=config.n_restarts,
                                     feature_names=sub.feature_names)
        elif mode == "sweep":
            ks = list(range(config.k_min, config.k_max + 1))
            out[group] = sweep_mixtures(sub.values, ks, config.structures,
                                        seed=config.seed,
                                        n_restarts=config.n_restarts,
                                        feature_names=sub.feature_names)
        else:
            raise DomainError(f"unknown fit mode: {mode!r}")
    return out  # type: ignore[return-value]


def group_suffix(group_key: str, n_groups: int) -> str:
    if n_groups <= 1:
        return ""
    safe = re.sub(r"[^A-Za-z0-9_.-]+", "-", group_key) or "default"
    return f"_{safe}"


def check_model_matches(model: MixtureModel, matrix: FeatureMatrix) -> None:
    if model.feature_names and list(matrix.feature_names) != list(model.feature_names):
        raise SchemaError("model and dataset feature schemas differ")
    if model.n_features != matrix.values.shape[1]:
        raise SchemaError(f"model expects {model.n_features} features, dataset has "
                          f"{matrix.values.shape[1]}")
