"""Routine-signature mining for daily behavioral data.

Pipeline: per-day feature records -> exclusions + within-person
z-normalization -> pooled Gaussian mixture day clustering (EM, BIC
selection) -> rank-ordered routine signatures and day-to-day transition
matrices -> within/between-person persistence distances -> paired tests
and regressions. A seeded synthetic cohort generator with recorded
ground truth backs the whole chain with recoverable answers.
"""

from .config import RunConfig, load_config
from .errors import (DomainError, EmptySegment, Incomparable, InsufficientData,
                     MissingData, RankError, RoutinesigError, SchemaError,
                     SingularFit, SweepFailed)
from .gmm import (MixtureModel, SweepResult, bhattacharyya_distance, bic,
                  component_separation, fit_mixture, load_model,
                  parameter_count, save_model, sweep_mixtures)
from .ingest import (FEATURE_NAMES, DayRecord, FeatureMatrix,
                     ParticipantProfile, apply_exclusions, load_daily_csv,
                     load_dataset_csv, load_profiles_csv, standardize)
from .pipeline import ClusterSummary, analyze_group, cluster_summary, ingest_records
from .signature import (Signature, cosine_distance, jsd, persistence_distances,
                        rank_signature, signature_distance,
                        split_half_signatures, split_segments, top_k_share)
from .stats import (Design, MixedModelResult, PairedTestResult,
                    RegressionResult, build_design, fit_ols,
                    fit_random_intercept, paired_test)
from .synth import (CohortSpec, SyntheticCohort, generate_cohort, match_labels,
                    recovery_ari)
from .transitions import (TransitionMatrix, count_transitions,
                          split_half_transitions, transition_distance,
                          transition_persistence)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
