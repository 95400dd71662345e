"""Gaussian mixture day clustering.

Pooled expectation-maximization over all participant-days with four
covariance structures (full, tied, diagonal, spherical), BIC-driven
selection over a (K, structure) grid, and Bhattacharyya distances between
fitted components as the separation diagnostic.

All linear algebra on covariances goes through Cholesky factors; explicit
inverses and determinants are never formed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import DomainError, SchemaError, SingularFit, SweepFailed
from .seeding import derive_rng

COV_STRUCTURES = ("full", "tied", "diagonal", "spherical")

REG_COVAR = 1e-6          # diagonal ridge added after every M-step
TOL = 1e-6                # relative log-likelihood convergence threshold
MAX_ITER = 500
DEGENERATE_MASS = 1e-10   # components below this are reseeded

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Parameter counting and scoring
# ---------------------------------------------------------------------------

def covariance_param_count(structure: str, k: int, n_features: int) -> int:
    """Free covariance parameters for a K-component mixture."""
    n = n_features
    if structure == "full":
        return k * n * (n + 1) // 2
    if structure == "tied":
        return n * (n + 1) // 2
    if structure == "diagonal":
        return k * n
    if structure == "spherical":
        return k
    raise DomainError(f"unknown covariance structure: {structure!r}")


def parameter_count(structure: str, k: int, n_features: int) -> int:
    """Total free parameters: weights (K-1) + means (K*N) + covariance."""
    return (k - 1) + k * n_features + covariance_param_count(structure, k, n_features)


def bic(loglik: float, n_params: int, n_rows: int) -> float:
    """Bayesian information criterion, -2*loglik + p*ln(M). Lower is better."""
    if n_rows < 1:
        raise DomainError("BIC needs at least one row")
    return -2.0 * loglik + n_params * math.log(n_rows)


# ---------------------------------------------------------------------------
# Covariance representation
# ---------------------------------------------------------------------------

def _full_covariances(structure: str, covariances: np.ndarray,
                      k: int, n: int) -> np.ndarray:
    """Expand any structure's storage into per-component (K, N, N) matrices."""
    if structure == "full":
        return covariances
    if structure == "tied":
        return np.broadcast_to(covariances, (k, n, n)).copy()
    if structure == "diagonal":
        out = np.zeros((k, n, n))
        for j in range(k):
            np.fill_diagonal(out[j], covariances[j])
        return out
    if structure == "spherical":
        out = np.zeros((k, n, n))
        for j in range(k):
            np.fill_diagonal(out[j], covariances[j])
        return out
    raise DomainError(f"unknown covariance structure: {structure!r}")


def _chol_per_component(cov_full: np.ndarray) -> list[np.ndarray]:
    chols = []
    for j in range(cov_full.shape[0]):
        try:
            chols.append(cholesky(cov_full[j], lower=True))
        except np.linalg.LinAlgError as exc:
            raise SingularFit(f"component {j} covariance is not positive definite") from exc
    return chols


def _log_gaussian(x: np.ndarray, mean: np.ndarray, chol_lower: np.ndarray) -> np.ndarray:
    """Log density of N(mean, L L^T) at each row of x."""
    n = x.shape[1]
    dev = x - mean
    z = solve_triangular(chol_lower, dev.T, lower=True).T
    maha = np.einsum("ij,ij->i", z, z)
    log_det = 2.0 * np.sum(np.log(np.diag(chol_lower)))
    return -0.5 * (n * _LOG_2PI + log_det + maha)


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------

@dataclass
class MixtureModel:
    """A fitted Gaussian mixture over the 13-feature day space.

    `covariances` storage depends on `structure`: (K,N,N) for full,
    (N,N) for tied, (K,N) for diagonal, (K,) for spherical.
    """

    structure: str
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    n_rows: int
    feature_names: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def n_params(self) -> int:
        return parameter_count(self.structure, self.k, self.n_features)

    @property
    def bic(self) -> float:
        return bic(self.loglik, self.n_params, self.n_rows)

    def full_covariances(self) -> np.ndarray:
        return _full_covariances(self.structure, self.covariances,
                                 self.k, self.n_features)

    def _chols(self) -> list[np.ndarray]:
        return _chol_per_component(self.full_covariances())

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        """Per-row mixture log density."""
        return logsumexp(self._weighted_log_prob(x), axis=1)

    def _weighted_log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DomainError(f"expected (M, {self.n_features}) input, got {x.shape}")
        chols = self._chols()
        out = np.empty((x.shape[0], self.k))
        for j in range(self.k):
            out[:, j] = math.log(self.weights[j]) + _log_gaussian(x, self.means[j], chols[j])
        return out

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        wlp = self._weighted_log_prob(x)
        return np.exp(wlp - logsumexp(wlp, axis=1, keepdims=True))

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Hard cluster labels (argmax responsibility; ties to lower index)."""
        return np.argmax(self._weighted_log_prob(x), axis=1)

    def separation(self) -> "SeparationSummary":
        return component_separation(self)


# ---------------------------------------------------------------------------
# EM internals
# ---------------------------------------------------------------------------

def _kmeans_pp_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial means by squared-distance sampling."""
    m = x.shape[0]
    means = np.empty((k, x.shape[1]))
    first = int(rng.integers(m))
    means[0] = x[first]
    d2 = np.sum((x - means[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            means[j] = x[int(rng.integers(m))]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            means[j] = x[min(idx, m - 1)]
        d2 = np.minimum(d2, np.sum((x - means[j]) ** 2, axis=1))
    return means


def _init_covariances(structure: str, x: np.ndarray, k: int) -> np.ndarray:
    """Pooled data covariance replicated per component, per structure."""
    n = x.shape[1]
    pooled = np.cov(x, rowvar=False, ddof=0)
    pooled = np.atleast_2d(pooled) + REG_COVAR * np.eye(n)
    if structure == "full":
        return np.tile(pooled, (k, 1, 1))
    if structure == "tied":
        return pooled
    if structure == "diagonal":
        return np.tile(np.diag(pooled), (k, 1))
    if structure == "spherical":
        return np.full(k, float(np.diag(pooled).mean()))
    raise DomainError(f"unknown covariance structure: {structure!r}")


def _m_step(x: np.ndarray, resp: np.ndarray, structure: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = x.shape
    k = resp.shape[1]
    nk = resp.sum(axis=0)
    weights = nk / m
    safe_nk = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ x) / safe_nk[:, None]
    if structure == "full":
        cov = np.empty((k, n, n))
        for j in range(k):
            dev = x - means[j]
            cj = (resp[:, j, None] * dev).T @ dev / safe_nk[j]
            cov[j] = 0.5 * (cj + cj.T)    # exact symmetry, lossless tril storage
            cov[j][np.diag_indices(n)] += REG_COVAR
    elif structure == "tied":
        cov = np.zeros((n, n))
        for j in range(k):
            dev = x - means[j]
            cov += (resp[:, j, None] * dev).T @ dev
        cov /= m
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices(n)] += REG_COVAR
    elif structure == "diagonal":
        cov = np.empty((k, n))
        for j in range(k):
            dev = x - means[j]
            cov[j] = (resp[:, j] @ (dev * dev)) / safe_nk[j] + REG_COVAR
    elif structure == "spherical":
        cov = np.empty(k)
        for j in range(k):
            dev = x - means[j]
            cov[j] = (resp[:, j] @ np.einsum("ij,ij->i", dev, dev)) / (safe_nk[j] * n) + REG_COVAR
    else:
        raise DomainError(f"unknown covariance structure: {structure!r}")
    return weights, means, cov


def _run_em(x: np.ndarray, k: int, structure: str,
            rng: np.random.Generator) -> MixtureModel:
    m, n = x.shape
    means = _kmeans_pp_means(x, k, rng)
    cov = _init_covariances(structure, x, k)
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    ll = -np.inf
    converged = False
    n_iter = 0
    for n_iter in range(1, MAX_ITER + 1):
        # E step
        cf = _full_covariances(structure, cov, k, n)
        chols = _chol_per_component(cf)
        wlp = np.empty((m, k))
        for j in range(k):
            if weights[j] <= 0.0:
                wlp[:, j] = -np.inf
            else:
                wlp[:, j] = math.log(weights[j]) + _log_gaussian(x, means[j], chols[j])
        row_ll = logsumexp(wlp, axis=1)
        ll = float(row_ll.sum())
        resp = np.exp(wlp - row_ll[:, None])

        # Reseed any component that has collapsed to (numerically) zero mass
        # from the point the current model explains worst.
        nk = resp.sum(axis=0)
        dead = np.flatnonzero(nk < DEGENERATE_MASS * m)
        if dead.size:
            for j in dead:
                worst = int(np.argmin(row_ll))
                means[j] = x[worst]
                resp[:, j] = 0.0
                resp[worst] = 0.0
                resp[worst, j] = 1.0
            resp /= resp.sum(axis=1, keepdims=True)
            prev_ll = -np.inf

        weights, means, cov = _m_step(x, resp, structure)

        if np.isfinite(prev_ll):
            denom = max(abs(prev_ll), abs(ll), 1.0)
            if abs(ll - prev_ll) / denom < TOL:
                converged = True
                break
        prev_ll = ll

    model = MixtureModel(structure=structure, weights=weights, means=means,
                         covariances=cov, loglik=0.0, n_iter=n_iter,
                         converged=converged, n_rows=m)
    # ll above lags the final M step; report the returned parameters' value
    model.loglik = float(model.log_prob(x).sum())
    return model


def fit_mixture(x: np.ndarray, k: int, structure: str = "full", *,
                seed: int = 0, n_restarts: int = 2,
                feature_names: Sequence[str] | None = None) -> MixtureModel:
    """Fit a K-component mixture by EM, keeping the best of `n_restarts`.

    Restarts differ only in their k-means++ seeding stream, so the whole
    fit is a pure function of (x, k, structure, seed, n_restarts).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got shape {x.shape}")
    m, n = x.shape
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if m < k:
        raise DomainError(f"cannot fit {k} components to {m} rows")
    if structure not in COV_STRUCTURES:
        raise DomainError(f"unknown covariance structure: {structure!r}")
    if n_restarts < 1:
        raise DomainError("n_restarts must be >= 1")

    best: MixtureModel | None = None
    failures: list[str] = []
    for r in range(n_restarts):
        rng = derive_rng(seed, "gmm", structure, k, r)
        try:
            model = _run_em(x, k, structure, rng)
        except SingularFit as exc:
            failures.append(f"restart {r}: {exc}")
            continue
        if best is None or model.loglik > best.loglik:
            best = model
    if best is None:
        raise SingularFit("all EM restarts failed: " + "; ".join(failures))
    best.feature_names = list(feature_names) if feature_names else []
    return best


# ---------------------------------------------------------------------------
# Model sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepEntry:
    k: int
    structure: str
    bic: float
    loglik: float
    n_params: int
    mean_bhattacharyya: float
    converged: bool
    error: str | None = None


@dataclass
class SweepResult:
    entries: list[SweepEntry]
    best: MixtureModel

    def table(self) -> list[dict[str, object]]:
        return [{"k": e.k, "structure": e.structure, "bic": e.bic,
                 "loglik": e.loglik, "n_params": e.n_params,
                 "mean_bhattacharyya": e.mean_bhattacharyya,
                 "converged": e.converged, "error": e.error or ""}
                for e in self.entries]


def sweep_mixtures(x: np.ndarray, ks: Sequence[int],
                   structures: Sequence[str] = COV_STRUCTURES, *,
                   seed: int = 0, n_restarts: int = 2,
                   feature_names: Sequence[str] | None = None) -> SweepResult:
    """Fit every (K, structure) pair and keep the lowest-BIC model.

    Ties break toward fewer parameters, then smaller K, then the earlier
    structure in `structures`. Singular cells are recorded, not fatal;
    only an all-singular grid raises SweepFailed.
    """
    entries: list[SweepEntry] = []
    best: MixtureModel | None = None
    best_key: tuple[float, int, int, int] | None = None
    for si, structure in enumerate(structures):
        for k in ks:
            try:
                model = fit_mixture(x, k, structure, seed=seed,
                                    n_restarts=n_restarts,
                                    feature_names=feature_names)
            except (SingularFit, DomainError) as exc:
                entries.append(SweepEntry(k=k, structure=structure, bic=math.nan,
                                          loglik=math.nan, n_params=0,
                                          mean_bhattacharyya=math.nan,
                                          converged=False, error=str(exc)))
                continue
            entries.append(SweepEntry(k=k, structure=structure, bic=model.bic,
                                      loglik=model.loglik, n_params=model.n_params,
                                      mean_bhattacharyya=component_separation(model).mean_distance,
                                      converged=model.converged))
            key = (model.bic, model.n_params, k, si)
            if best_key is None or key < best_key:
                best, best_key = model, key
    if best is None:
        raise SweepFailed("every (k, structure) cell failed to fit")
    return SweepResult(entries=entries, best=best)


# ---------------------------------------------------------------------------
# Component separation
# ---------------------------------------------------------------------------

def bhattacharyya_distance(mean1: np.ndarray, cov1: np.ndarray,
                           mean2: np.ndarray, cov2: np.ndarray) -> float:
    """Bhattacharyya distance between two Gaussians.

    (1/8) dm' S^-1 dm + (1/2) ln( det S / sqrt(det C1 det C2) ) with
    S = (C1 + C2)/2, computed through Cholesky factors.
    """
    mean1 = np.asarray(mean1, dtype=float)
    mean2 = np.asarray(mean2, dtype=float)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    avg = 0.5 * (cov1 + cov2)
    try:
        l_avg = cholesky(avg, lower=True)
        l1 = cholesky(cov1, lower=True)
        l2 = cholesky(cov2, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularFit("covariance not positive definite in separation") from exc
    dm = mean2 - mean1
    z = solve_triangular(l_avg, dm, lower=True)
    term_mean = 0.125 * float(z @ z)
    logdet_avg = 2.0 * float(np.sum(np.log(np.diag(l_avg))))
    logdet_1 = 2.0 * float(np.sum(np.log(np.diag(l1))))
    logdet_2 = 2.0 * float(np.sum(np.log(np.diag(l2))))
    term_cov = 0.5 * (logdet_avg - 0.5 * (logdet_1 + logdet_2))
    return term_mean + term_cov


@dataclass
class SeparationSummary:
    pairwise: np.ndarray        # (K, K) symmetric, zero diagonal
    mean_distance: float
    min_distance: float

    def to_dict(self) -> dict[str, object]:
        return {"mean_distance": self.mean_distance,
                "min_distance": self.min_distance,
                "pairwise": self.pairwise.tolist()}


def component_separation(model: MixtureModel) -> SeparationSummary:
    """Pairwise Bhattacharyya distances between all fitted components."""
    k = model.k
    cf = model.full_covariances()
    pairwise = np.zeros((k, k))
    vals = []
    for i in range(k):
        for j in range(i + 1, k):
            d = bhattacharyya_distance(model.means[i], cf[i], model.means[j], cf[j])
            pairwise[i, j] = pairwise[j, i] = d
            vals.append(d)
    if not vals:
        return SeparationSummary(pairwise=pairwise, mean_distance=math.nan,
                                 min_distance=math.nan)
    return SeparationSummary(pairwise=pairwise,
                             mean_distance=float(np.mean(vals)),
                             min_distance=float(np.min(vals)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MODEL_FORMAT = "routinesig-model"
MODEL_VERSION = 1


def _tril_flat(mat: np.ndarray) -> list[float]:
    n = mat.shape[0]
    return [float(mat[i, j]) for i in range(n) for j in range(i + 1)]


def _tril_unflat(flat: Sequence[float], n: int) -> np.ndarray:
    out = np.zeros((n, n))
    it = iter(flat)
    for i in range(n):
        for j in range(i + 1):
            out[i, j] = next(it)
            out[j, i] = out[i, j]
    return out


def model_to_dict(model: MixtureModel) -> dict[str, object]:
    """Lossless JSON form; full/tied covariances stored as the lower
    triangle in row-major order."""
    if model.structure == "full":
        cov: object = [_tril_flat(model.covariances[j]) for j in range(model.k)]
    elif model.structure == "tied":
        cov = _tril_flat(model.covariances)
    else:
        cov = model.covariances.tolist()
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "structure": model.structure,
        "k": model.k,
        "n_features": model.n_features,
        "feature_names": list(model.feature_names),
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "covariances": cov,
        "loglik": model.loglik,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "n_rows": model.n_rows,
    }


def model_from_dict(doc: dict[str, object]) -> MixtureModel:
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a mixture model document: format={doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model version: {doc.get('version')!r}")
    structure = str(doc["structure"])
    k = int(doc["k"])  # type: ignore[arg-type]
    n = int(doc["n_features"])  # type: ignore[arg-type]
    raw_cov = doc["covariances"]
    if structure == "full":
        cov = np.stack([_tril_unflat(flat, n) for flat in raw_cov])  # type: ignore[union-attr]
    elif structure == "tied":
        cov = _tril_unflat(raw_cov, n)  # type: ignore[arg-type]
    else:
        cov = np.asarray(raw_cov, dtype=float)
    model = MixtureModel(
        structure=structure,
        weights=np.asarray(doc["weights"], dtype=float),
        means=np.asarray(doc["means"], dtype=float),
        covariances=cov,
        loglik=float(doc["loglik"]),  # type: ignore[arg-type]
        n_iter=int(doc["n_iter"]),  # type: ignore[arg-type]
        converged=bool(doc["converged"]),
        n_rows=int(doc["n_rows"]),  # type: ignore[arg-type]
        feature_names=[str(s) for s in doc.get("feature_names", [])],  # type: ignore[union-attr]
    )
    if model.means.shape != (k, n):
        raise DomainError(f"means shape {model.means.shape} != ({k}, {n})")
    return model


def save_model(model: MixtureModel, path: str) -> None:
    from .reports import write_json_atomic
    write_json_atomic(model_to_dict(model), path)


def load_model(path: str) -> MixtureModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
