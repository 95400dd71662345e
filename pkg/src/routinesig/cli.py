"""Command-line interface.

Subcommands: ingest, fit, sweep, analyze, synth, report. Global flags
--seed, --out-dir, and --config (a JSON run-config document); individual
flags override the config file. Exit codes: 0 success, 2 input error,
3 computation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Sequence

import numpy as np

from . import figures
from .config import RunConfig, load_config, override
from .errors import (DomainError, EmptySegment, Incomparable, InsufficientData,
                     MissingData, RankError, RoutinesigError, SchemaError,
                     SingularFit, SweepFailed)
from .gmm import MixtureModel, SweepResult, load_model, model_to_dict
from .ingest import (DAILY_HEADER, ExclusionAudit, FeatureMatrix,
                     derive_daily_records, load_accel_csv, load_daily_csv,
                     load_dataset_csv, load_episode_csv, load_profiles_csv,
                     matrix_from_records)
from .pipeline import (CLUSTER_SUMMARY_HEADER, PERSISTENCE_HEADER,
                       SIGNATURE_HEADER, TRANSITION_HEADER, GroupAnalysis,
                       analyze_group, check_model_matches, fit_groups,
                       group_suffix, ingest_records, regression_report,
                       write_dataset_csv)
from .reports import write_csv_atomic, write_json_atomic
from .synth import CohortSpec, generate_cohort

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COMPUTE = 3

_INPUT_ERRORS = (SchemaError, MissingData, DomainError, FileNotFoundError,
                 IsADirectoryError, PermissionError)
_COMPUTE_ERRORS = (SingularFit, SweepFailed, Incomparable, InsufficientData,
                   EmptySegment, RankError)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _k_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routinesig",
        description="Routine-signature mining over daily behavioral records")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="master random seed")
        p.add_argument("--out-dir", required=True, help="output directory")
        p.add_argument("--config", default=None, help="JSON run-config file")

    p = sub.add_parser("ingest", help="derive, exclude, and standardize daily records")
    common(p)
    p.add_argument("--daily", default=None, help="daily feature CSV")
    p.add_argument("--lock", default=None, help="raw lock-episode CSV")
    p.add_argument("--accel", default=None, help="raw accelerometer CSV")
    p.add_argument("--screen", default=None, help="raw screen-episode CSV")
    p.add_argument("--group-key", default="", help="group label for raw-sensor records")

    p = sub.add_parser("fit", help="fit one pinned (K, structure) mixture")
    common(p)
    p.add_argument("--dataset", required=True, help="normalized dataset CSV")
    p.add_argument("--pin-k", type=int, default=None, help="number of components (default 8)")
    p.add_argument("--structure", default=None,
                   choices=["full", "tied", "diagonal", "spherical"])
    p.add_argument("--n-restarts", type=int, default=None)

    p = sub.add_parser("sweep", help="BIC sweep over K and covariance structures")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k-min", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--structures", type=_str_list, default=None,
                   help="comma-separated structure names")
    p.add_argument("--n-restarts", type=int, default=None)

    p = sub.add_parser("analyze", help="signatures, transitions, persistence, stats, figures")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, help="model JSON from fit/sweep")
    p.add_argument("--profiles", default=None, help="participant profiles CSV")
    p.add_argument("--segment-days", type=_int_list, default=None,
                   help="comma-separated split-half segment lengths")
    p.add_argument("--metrics", type=_str_list, default=None,
                   help="signature distance metrics (jsd,cosine)")
    p.add_argument("--reference", default=None, choices=["mean", "median"],
                   help="d_ref peer aggregation")
    p.add_argument("--max-gap-days", type=int, default=None)
    p.add_argument("--k-range", type=_k_range, default=None, metavar="LO:HI",
                   help="extra rank-curve series for K in LO..HI")

    p = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    common(p)
    p.add_argument("--participants", type=int, default=None)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mode", default=None, choices=["iid", "markov"])
    p.add_argument("--weight-concentration", type=float, default=None)
    p.add_argument("--chain-concentration", type=float, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--weekend-cluster", type=int, default=None)
    p.add_argument("--weekend-boost", type=float, default=None)
    p.add_argument("--missing-rate", type=float, default=None)
    p.add_argument("--group-key", default="")

    p = sub.add_parser("report", help="re-render figures and summary from exports")
    common(p)

    return parser


def _build_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for attr, field in (("pin_k", "pin_k"), ("k_min", "k_min"), ("k_max", "k_max"),
                        ("structures", "structures"), ("n_restarts", "n_restarts"),
                        ("segment_days", "segment_days"), ("metrics", "metrics"),
                        ("reference", "reference"), ("max_gap_days", "max_gap_days"),
                        ("k_range", "k_range")):
        if hasattr(args, attr) and getattr(args, attr) is not None:
            overrides[field] = getattr(args, attr)
    if getattr(args, "structure", None) is not None:
        overrides["structures"] = [args.structure]
    for attr, field in (("participants", "synth_participants"), ("days", "synth_days"),
                        ("k", "synth_k"), ("mode", "synth_mode"),
                        ("weight_concentration", "synth_weight_concentration"),
                        ("chain_concentration", "synth_chain_concentration"),
                        ("separation", "synth_separation"),
                        ("weekend_cluster", "synth_weekend_cluster"),
                        ("weekend_boost", "synth_weekend_boost"),
                        ("missing_rate", "synth_missing_rate")):
        if hasattr(args, attr) and getattr(args, attr) is not None:
            overrides[field] = getattr(args, attr)
    return override(config, **overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> None:
    sources = [s for s in (args.daily, args.lock, args.accel, args.screen) if s]
    if not sources:
        raise SchemaError("ingest needs --daily or at least one raw-sensor input")
    if args.daily and (args.lock or args.accel or args.screen):
        raise SchemaError("--daily cannot be combined with raw-sensor inputs")

    if args.daily:
        records, meta = load_daily_csv(args.daily)
        if not records:
            raise SchemaError(f"{args.daily}: no data rows")
        if meta.get("normalized") == "true":
            # Already-processed input passes through untouched, which makes
            # re-ingesting our own output byte-stable.
            matrix = matrix_from_records(records)
            audit = ExclusionAudit(rows_in=len(records), rows_out=len(records),
                                   participants_in=len({(r.group_key, r.participant_id)
                                                        for r in records}))
            audit.participants_out = audit.participants_in
        else:
            matrix, audit = ingest_records(records)
    else:
        lock = load_episode_csv(args.lock) if args.lock else {}
        accel = load_accel_csv(args.accel) if args.accel else {}
        screen = load_episode_csv(args.screen) if args.screen else {}
        records = derive_daily_records(lock, accel, screen, group_key=args.group_key)
        if not records:
            raise SchemaError("raw-sensor inputs produced no day records")
        matrix, audit = ingest_records(records)

    dataset_path = os.path.join(args.out_dir, "dataset.csv")
    write_dataset_csv(matrix, dataset_path, config)
    audit_doc = {"format": "routinesig-audit", "version": 1,
                 "run_config": config.semantic_hash()}
    audit_doc.update(audit.to_dict())
    write_json_atomic(audit_doc, os.path.join(args.out_dir, "audit.json"))
    print(f"wrote {dataset_path} ({matrix.n_rows} rows, "
          f"{audit.participants_out} participants)")


def _write_model(model: MixtureModel, path: str, config: RunConfig) -> None:
    doc = model_to_dict(model)
    doc["run_config"] = config.semantic_hash()
    write_json_atomic(doc, path)


def cmd_fit(args: argparse.Namespace, config: RunConfig) -> None:
    matrix, _ = load_dataset_csv(args.dataset)
    models = fit_groups(matrix, config, mode="fit")
    n_groups = len(models)
    for group, model in models.items():
        path = os.path.join(args.out_dir, f"model{group_suffix(group, n_groups)}.json")
        _write_model(model, path, config)  # type: ignore[arg-type]
        m: MixtureModel = model  # type: ignore[assignment]
        print(f"wrote {path} (K={m.k} {m.structure}, BIC={m.bic:.1f}, "
              f"converged={m.converged})")


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> None:
    matrix, _ = load_dataset_csv(args.dataset)
    results = fit_groups(matrix, config, mode="sweep")
    n_groups = len(results)
    meta = {"format": "routinesig-sweep", "version": 1,
            "run_config": config.semantic_hash()}
    header = ["k", "structure", "bic", "loglik", "n_params", "mean_bhattacharyya",
              "converged", "error"]
    for group, result in results.items():
        sweep: SweepResult = result  # type: ignore[assignment]
        sfx = group_suffix(group, n_groups)
        sweep_path = os.path.join(args.out_dir, f"sweep{sfx}.csv")
        rows = [[e["k"], e["structure"], e["bic"], e["loglik"], e["n_params"],
                 e["mean_bhattacharyya"], e["converged"], e["error"]]
                for e in sweep.table()]
        write_csv_atomic(sweep_path, header, rows, meta=meta)
        model_path = os.path.join(args.out_dir, f"model{sfx}.json")
        _write_model(sweep.best, model_path, config)
        print(f"wrote {sweep_path}; best K={sweep.best.k} {sweep.best.structure} "
              f"(BIC={sweep.best.bic:.1f})")


def _model_path_for_group(model_arg: str, group: str, n_groups: int) -> str:
    if n_groups <= 1:
        return model_arg
    base, ext = os.path.splitext(model_arg)
    return f"{base}{group_suffix(group, n_groups)}{ext}"


def _write_group_outputs(analysis: GroupAnalysis, out_dir: str, sfx: str,
                         config: RunConfig) -> None:
    meta = {"format": "routinesig-export", "version": 1,
            "run_config": config.semantic_hash()}
    write_csv_atomic(os.path.join(out_dir, f"signatures{sfx}.csv"),
                     SIGNATURE_HEADER, analysis.signature_rows, meta=meta)
    write_csv_atomic(os.path.join(out_dir, f"persistence{sfx}.csv"),
                     PERSISTENCE_HEADER, analysis.persistence_rows, meta=meta)
    write_csv_atomic(os.path.join(out_dir, f"transitions{sfx}.csv"),
                     TRANSITION_HEADER, analysis.transition_rows, meta=meta)
    write_csv_atomic(os.path.join(out_dir, f"cluster_summary{sfx}.csv"),
                     CLUSTER_SUMMARY_HEADER, analysis.clusters.rows(), meta=meta)
    tests_doc = {"format": "routinesig-paired-tests", "version": 1,
                 "run_config": config.semantic_hash(),
                 "group_key": analysis.group_key,
                 "tests": analysis.paired_tests}
    write_json_atomic(tests_doc, os.path.join(out_dir, f"paired_tests{sfx}.json"))
    summary_doc = {"format": "routinesig-summary", "version": 1,
                   "run_config": config.semantic_hash()}
    summary_doc.update(analysis.summary)
    write_json_atomic(summary_doc, os.path.join(out_dir, f"summary{sfx}.json"))

    figures.centroid_heatmap(analysis.clusters.centroids,
                             list(analysis.matrix.feature_names),
                             os.path.join(out_dir, f"fig_centroids{sfx}.svg"))
    figures.cluster_day_counts(analysis.clusters.counts,
                               os.path.join(out_dir, f"fig_cluster_days{sfx}.svg"))
    shares = analysis.clusters
    n = np.where(shares.counts > 0, shares.counts, np.nan)
    figures.weekday_weekend_bars(shares.weekday_counts / n, shares.weekend_counts / n,
                                 os.path.join(out_dir, f"fig_weekday_weekend{sfx}.svg"))
    if analysis.mean_transitions is not None:
        figures.transition_heatmap(analysis.mean_transitions,
                                   os.path.join(out_dir, f"fig_transitions{sfx}.svg"))
    figures.rank_proportion_curves(analysis.rank_curves,
                                   os.path.join(out_dir, f"fig_rank_curves{sfx}.svg"))


def cmd_analyze(args: argparse.Namespace, config: RunConfig) -> None:
    matrix, _ = load_dataset_csv(args.dataset)
    profiles = load_profiles_csv(args.profiles) if args.profiles else None
    groups = matrix.groups()
    analyses: list[GroupAnalysis] = []
    for group in groups:
        sub = matrix.subset(matrix.group_indices(group))
        model = load_model(_model_path_for_group(args.model, group, len(groups)))
        check_model_matches(model, sub)
        analysis = analyze_group(sub, model, config, group)
        analyses.append(analysis)
        sfx = group_suffix(group, len(groups))
        _write_group_outputs(analysis, args.out_dir, sfx, config)
        tests = analysis.paired_tests
        shown = next(iter(tests.values())) if tests else {}
        print(f"analyzed group {group or '(default)'}: "
              f"{analysis.summary['n_participants']} participants, "
              f"{analysis.summary['n_days']} days, K={model.k}; "
              f"first paired test n={shown.get('n_compared', 0)}")
    reg_doc = {"format": "routinesig-regressions", "version": 1,
               "run_config": config.semantic_hash()}
    reg_doc.update(regression_report(analyses, profiles, config))
    write_json_atomic(reg_doc, os.path.join(args.out_dir, "regressions.json"))
    write_json_atomic(config.to_dict(), os.path.join(args.out_dir, "run_config.json"))
    print(f"wrote exports to {args.out_dir}")


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> None:
    spec = CohortSpec(
        n_participants=config.synth_participants,
        n_days=config.synth_days,
        k=config.synth_k,
        weight_concentration=config.synth_weight_concentration,
        mode=config.synth_mode,
        chain_concentration=config.synth_chain_concentration,
        separation=config.synth_separation,
        weekend_cluster=config.synth_weekend_cluster,
        weekend_boost=config.synth_weekend_boost,
        missing_rate=config.synth_missing_rate,
        group_key=args.group_key,
        seed=config.seed,
    )
    spec.validate()
    cohort = generate_cohort(spec)
    meta = {"format": "routinesig-daily", "version": 1,
            "run_config": config.semantic_hash()}
    daily_path = os.path.join(args.out_dir, "daily.csv")
    rows = []
    for rec in cohort.to_records():
        rows.append([rec.participant_id, rec.date.isoformat(), rec.group_key]
                    + [rec.features[name] for name in DAILY_HEADER[3:]])
    write_csv_atomic(daily_path, DAILY_HEADER, rows, meta=meta)

    profile_header = ["participant_id", "age_bin", "gender", "extraversion",
                      "agreeableness", "conscientiousness", "neuroticism", "openness"]
    profile_rows = []
    for pid in cohort.participants:
        prof = cohort.profiles[pid]
        profile_rows.append([prof.participant_id, prof.age_bin, prof.gender,
                             prof.extraversion, prof.agreeableness,
                             prof.conscientiousness, prof.neuroticism, prof.openness])
    profiles_path = os.path.join(args.out_dir, "profiles.csv")
    write_csv_atomic(profiles_path, profile_header, profile_rows, meta=meta)

    truth_doc = cohort.ground_truth_dict()
    truth_doc["run_config"] = config.semantic_hash()
    truth_path = os.path.join(args.out_dir, "ground_truth.json")
    write_json_atomic(truth_doc, truth_path)
    n_rows = sum(len(d) for d in cohort.dates)
    print(f"wrote {daily_path} ({n_rows} rows), {profiles_path}, {truth_path}")


# ---------------------------------------------------------------------------
# Report (figures from saved exports)
# ---------------------------------------------------------------------------

def _read_export_csv(path: str) -> tuple[list[str], list[list[str]]]:
    header: list[str] | None = None
    rows: list[list[str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                rows.append(cells)
    if header is None:
        raise SchemaError(f"{path}: empty export")
    return header, rows


def _suffixes_in(out_dir: str) -> list[str]:
    sfx = []
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("cluster_summary") and name.endswith(".csv"):
            sfx.append(name[len("cluster_summary"):-len(".csv")])
    if not sfx:
        raise SchemaError(f"{out_dir}: no cluster_summary CSV found; run analyze first")
    return sfx


def cmd_report(args: argparse.Namespace, config: RunConfig) -> None:
    out_dir = args.out_dir
    for sfx in _suffixes_in(out_dir):
        header, rows = _read_export_csv(os.path.join(out_dir, f"cluster_summary{sfx}.csv"))
        col = {name: i for i, name in enumerate(header)}
        k = len(rows)
        counts = np.array([float(r[col["n_days"]]) for r in rows])
        wd_share = np.array([float(r[col["weekday_share"]]) if r[col["weekday_share"]] else np.nan
                             for r in rows])
        we_share = np.array([float(r[col["weekend_share"]]) if r[col["weekend_share"]] else np.nan
                             for r in rows])
        feat_cols = [name for name in header if name.startswith("centroid_")]
        centroids = np.array([[float(r[col[c]]) if r[col[c]] else np.nan for c in feat_cols]
                              for r in rows])
        figures.centroid_heatmap(centroids, [c[len("centroid_"):] for c in feat_cols],
                                 os.path.join(out_dir, f"fig_centroids{sfx}.svg"))
        figures.cluster_day_counts(counts,
                                   os.path.join(out_dir, f"fig_cluster_days{sfx}.svg"))
        figures.weekday_weekend_bars(wd_share, we_share,
                                     os.path.join(out_dir, f"fig_weekday_weekend{sfx}.svg"))

        t_path = os.path.join(out_dir, f"transitions{sfx}.csv")
        if os.path.exists(t_path):
            t_header, t_rows = _read_export_csv(t_path)
            tcol = {name: i for i, name in enumerate(t_header)}
            sums = np.zeros((k, k))
            seen = np.zeros((k, k))
            for r in t_rows:
                cell = r[tcol["probability"]]
                if cell == "":
                    continue
                a, b = int(r[tcol["from_cluster"]]), int(r[tcol["to_cluster"]])
                sums[a, b] += float(cell)
                seen[a, b] += 1
            with np.errstate(invalid="ignore"):
                mean_mat = np.where(seen > 0, sums / np.where(seen > 0, seen, 1), np.nan)
            figures.transition_heatmap(mean_mat,
                                       os.path.join(out_dir, f"fig_transitions{sfx}.svg"))

        s_path = os.path.join(out_dir, f"signatures{sfx}.csv")
        if os.path.exists(s_path):
            s_header, s_rows = _read_export_csv(s_path)
            scol = {name: i for i, name in enumerate(s_header)}
            by_pid: dict[str, dict[int, float]] = {}
            for r in s_rows:
                if r[scol["segment_id"]] != "full":
                    continue
                pid = r[scol["participant_id"]]
                by_pid.setdefault(pid, {})[int(r[scol["rank"]])] = float(r[scol["proportion"]])
            if by_pid:
                n_ranks = max(len(v) for v in by_pid.values())
                mat = np.array([[v[rank] for rank in range(1, n_ranks + 1)]
                                for v in by_pid.values() if len(v) == n_ranks])
                sd = mat.std(axis=0, ddof=1) if mat.shape[0] > 1 else np.zeros(mat.shape[1])
                figures.rank_proportion_curves({n_ranks: (mat.mean(axis=0), sd)},
                                               os.path.join(out_dir, f"fig_rank_curves{sfx}.svg"))
        print(f"re-rendered figures for suffix {sfx!r} in {out_dir}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        _COMMANDS[args.command](args, config)
    except _COMPUTE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RoutinesigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
