"""Statistical comparisons and regression models.

Paired tests contrast each participant's within-person distance against
their between-person reference (d_self vs d_ref). Regressions relate a
participant-level outcome (typically d_self) to demographics and trait
scores, either by ordinary least squares with classical standard errors
or by a random-intercept linear mixed model estimated with REML.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm, rankdata
from scipy.stats import t as t_dist

from .errors import DomainError, InsufficientData, RankError

ALPHA_DEFAULT = 0.05


# ---------------------------------------------------------------------------
# Paired location tests
# ---------------------------------------------------------------------------

@dataclass
class PairedTestResult:
    """Paired t-test plus Wilcoxon signed-rank on the same differences."""

    n: int
    mean_diff: float
    sd_diff: float
    t_stat: float
    t_df: int
    t_p: float
    wilcoxon_w: float
    wilcoxon_z: float
    wilcoxon_p: float
    n_zero_diffs: int
    degenerate: bool = False    # zero-variance differences; p-values unusable

    def to_dict(self) -> dict[str, object]:
        return dict(self.__dict__)


def paired_test(x: Sequence[float], y: Sequence[float]) -> PairedTestResult:
    """Two-sided paired comparison of x against y.

    The t branch uses df = n - 1 on the raw differences. The Wilcoxon
    branch drops zero differences, ranks |d| with average ranks, applies
    the tie-corrected normal approximation with continuity correction,
    and reports W+ (the positive-rank sum).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"paired samples must be equal-length vectors, got "
                          f"{x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise InsufficientData(f"paired test needs n >= 2, got {n}")
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise DomainError("paired test inputs must be finite")
    d = x - y

    mean_diff = float(d.mean())
    sd_diff = float(d.std(ddof=1))
    df = n - 1
    if sd_diff == 0.0:
        return PairedTestResult(n=n, mean_diff=mean_diff, sd_diff=0.0,
                                t_stat=math.nan, t_df=df, t_p=math.nan,
                                wilcoxon_w=math.nan, wilcoxon_z=math.nan,
                                wilcoxon_p=math.nan, n_zero_diffs=int((d == 0).sum()),
                                degenerate=True)
    t_stat = mean_diff / (sd_diff / math.sqrt(n))
    t_p = 2.0 * float(t_dist.sf(abs(t_stat), df))

    nz = d[d != 0.0]
    n_zero = n - nz.size
    if nz.size < 1:
        w_plus, z, w_p = math.nan, math.nan, math.nan
    else:
        ranks = rankdata(np.abs(nz))
        w_plus = float(ranks[nz > 0].sum())
        m = nz.size
        mean_w = m * (m + 1) / 4.0
        # Tie correction subtracts sum(t^3 - t)/48 from the null variance.
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
        var_w = m * (m + 1) * (2 * m + 1) / 24.0 - tie_term
        if var_w <= 0.0:
            z, w_p = math.nan, math.nan
        else:
            delta = w_plus - mean_w
            cc = 0.5 * np.sign(delta) if delta != 0.0 else 0.0
            z = float((delta - cc) / math.sqrt(var_w))
            w_p = 2.0 * float(norm.sf(abs(z)))
    return PairedTestResult(n=n, mean_diff=mean_diff, sd_diff=sd_diff,
                            t_stat=float(t_stat), t_df=df, t_p=min(1.0, t_p),
                            wilcoxon_w=w_plus, wilcoxon_z=z,
                            wilcoxon_p=min(1.0, w_p) if not math.isnan(w_p) else w_p,
                            n_zero_diffs=n_zero)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

@dataclass
class Design:
    """Numeric design matrix with named columns (intercept first)."""

    matrix: np.ndarray
    columns: list[str]


def build_design(rows: list[dict[str, object]], numeric: Sequence[str],
                 categorical: dict[str, tuple[str, list[str]]]) -> Design:
    """Intercept + numeric columns + one-hot categories (reference dropped).

    `categorical` maps column name -> (reference level, ordered levels).
    Unknown category levels are a domain error.
    """
    n = len(rows)
    cols: list[str] = ["intercept"]
    mats: list[np.ndarray] = [np.ones(n)]
    for name in numeric:
        vals = np.empty(n)
        for i, row in enumerate(rows):
            v = row.get(name)
            if v is None or (isinstance(v, float) and not math.isfinite(v)):
                raise DomainError(f"row {i}: missing numeric predictor {name!r}")
            vals[i] = float(v)  # type: ignore[arg-type]
        cols.append(name)
        mats.append(vals)
    for name, (ref, levels) in categorical.items():
        for level in levels:
            if level == ref:
                continue
            vals = np.zeros(n)
            for i, row in enumerate(rows):
                lv = str(row.get(name))
                if lv not in levels:
                    raise DomainError(f"row {i}: unknown {name!r} level {lv!r}")
                vals[i] = 1.0 if lv == level else 0.0
            cols.append(f"{name}[{level}]")
            mats.append(vals)
    return Design(matrix=np.column_stack(mats), columns=cols)


def _check_rank(x: np.ndarray, columns: list[str]) -> None:
    """Raise RankError naming the dependent columns if x is rank deficient."""
    n, p = x.shape
    if n <= p:
        raise InsufficientData(f"{n} rows cannot identify {p} coefficients")
    # Pivoted QR exposes which columns fail to add rank.
    from scipy.linalg import qr
    _, r, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(n, p) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < p:
        bad = sorted(columns[j] for j in piv[rank:])
        raise RankError(bad)


# ---------------------------------------------------------------------------
# Ordinary least squares
# ---------------------------------------------------------------------------

@dataclass
class RegressionResult:
    """Coefficient table plus fit summaries for a linear model."""

    columns: list[str]
    coef: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    df_resid: float
    n: int
    r_squared: float
    adj_r_squared: float
    sigma2: float
    extra: dict[str, float] = field(default_factory=dict)

    def coef_table(self) -> list[dict[str, object]]:
        return [{"term": c, "coef": float(self.coef[j]), "se": float(self.se[j]),
                 "t": float(self.t_stats[j]), "p": float(self.p_values[j]),
                 "ci_low": float(self.ci_low[j]), "ci_high": float(self.ci_high[j])}
                for j, c in enumerate(self.columns)]


def fit_ols(y: Sequence[float], design: Design,
            alpha: float = ALPHA_DEFAULT) -> RegressionResult:
    """OLS with classical (homoskedastic) standard errors.

    Solves through an orthogonal factorization rather than normal
    equations; t-based p-values and confidence intervals use n - p
    residual degrees of freedom.
    """
    y = np.asarray(y, dtype=float)
    x = design.matrix
    if y.ndim != 1 or y.size != x.shape[0]:
        raise DomainError(f"outcome length {y.size} != design rows {x.shape[0]}")
    if np.any(~np.isfinite(y)):
        raise DomainError("outcome contains non-finite values")
    _check_rank(x, design.columns)
    n, p = x.shape
    q, r = np.linalg.qr(x)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - x @ coef
    df = n - p
    rss = float(resid @ resid)
    sigma2 = rss / df
    r_inv = np.linalg.solve(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.diag(cov))
    t_stats = coef / se
    p_values = 2.0 * t_dist.sf(np.abs(t_stats), df)
    crit = float(t_dist.ppf(1.0 - alpha / 2.0, df))
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else math.nan
    adj = 1.0 - (1.0 - r2) * (n - 1) / df if tss > 0 else math.nan
    return RegressionResult(columns=list(design.columns), coef=coef, se=se,
                            t_stats=t_stats, p_values=np.minimum(p_values, 1.0),
                            ci_low=coef - crit * se, ci_high=coef + crit * se,
                            df_resid=float(df), n=n, r_squared=r2,
                            adj_r_squared=adj, sigma2=sigma2)


# ---------------------------------------------------------------------------
# Random-intercept mixed model (REML)
# ---------------------------------------------------------------------------

@dataclass
class MixedModelResult(RegressionResult):
    """Adds the variance decomposition of a random-intercept fit."""

    sigma2_intercept: float = math.nan
    sigma2_residual: float = math.nan
    theta: float = math.nan     # sigma2_intercept / sigma2_residual
    reml_loglik: float = math.nan
    n_groups: int = 0
    r2_marginal: float = math.nan
    r2_conditional: float = math.nan


def _reml_pieces(y: np.ndarray, x: np.ndarray, groups: list[np.ndarray],
                 theta: float) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Profiled REML quantities at variance ratio theta.

    With V* = I + theta * Z Z' block diagonal per group,
    (I + theta 11')^{-1} = I - theta/(1 + theta n_g) 11', so X'V*^{-1}X,
    X'V*^{-1}y and y'V*^{-1}y come from groupwise sums and log det V* is
    sum(log(1 + theta n_g)). Returns (logdet V*, X'V*^{-1}X, X'V*^{-1}y,
    GLS residual sum of squares).
    """
    p = x.shape[1]
    xtvx = np.zeros((p, p))
    xtvy = np.zeros(p)
    ytvy = 0.0
    logdet_v = 0.0
    for idx in groups:
        xg, yg = x[idx], y[idx]
        ng = idx.size
        shrink = theta / (1.0 + theta * ng)
        sx = xg.sum(axis=0)
        sy = yg.sum()
        xtvx += xg.T @ xg - shrink * np.outer(sx, sx)
        xtvy += xg.T @ yg - shrink * sx * sy
        ytvy += float(yg @ yg) - shrink * sy * sy
        logdet_v += math.log1p(theta * ng)
    coef = np.linalg.solve(xtvx, xtvy)
    rss = ytvy - float(xtvy @ coef)
    return logdet_v, xtvx, xtvy, float(rss)


def _profiled_deviance(y: np.ndarray, x: np.ndarray, groups: list[np.ndarray],
                       theta: float) -> float:
    n, p = x.shape
    logdet_v, xtvx, _, rss = _reml_pieces(y, x, groups, theta)
    sign, logdet_xx = np.linalg.slogdet(xtvx)
    if sign <= 0 or rss <= 0:
        return math.inf
    return logdet_v + logdet_xx + (n - p) * math.log(rss)


def fit_random_intercept(y: Sequence[float], design: Design,
                         group_ids: Sequence[object],
                         alpha: float = ALPHA_DEFAULT) -> MixedModelResult:
    """Random-intercept linear mixed model, REML.

    The REML criterion is profiled down to the single variance ratio
    theta = sigma2_intercept / sigma2_residual, scanned on a coarse grid
    and polished with bounded scalar minimization. Fixed-effect inference
    is Wald (normal) on the GLS coefficients at the REML variance
    estimates. Marginal R^2 is var(X beta) over total modeled variance;
    conditional R^2 adds the intercept variance to the numerator.
    """
    y = np.asarray(y, dtype=float)
    x = design.matrix
    if y.size != x.shape[0]:
        raise DomainError(f"outcome length {y.size} != design rows {x.shape[0]}")
    if len(group_ids) != y.size:
        raise DomainError(f"{len(group_ids)} group ids != {y.size} rows")
    if np.any(~np.isfinite(y)):
        raise DomainError("outcome contains non-finite values")
    _check_rank(x, design.columns)
    n, p = x.shape
    uniq: dict[object, list[int]] = {}
    for i, g in enumerate(group_ids):
        uniq.setdefault(g, []).append(i)
    groups = [np.asarray(ix, dtype=int) for _, ix in sorted(uniq.items(), key=lambda kv: str(kv[0]))]
    if len(groups) < 2:
        raise InsufficientData("random intercept needs >= 2 groups")

    obj = lambda th: _profiled_deviance(y, x, groups, th)
    grid = np.concatenate(([0.0], np.logspace(-4.0, 4.0, 33)))
    grid_vals = [obj(t) for t in grid]
    i0 = int(np.argmin(grid_vals))
    lo = grid[max(i0 - 1, 0)]
    hi = grid[min(i0 + 1, grid.size - 1)]
    if hi <= lo:
        hi = lo + 1.0
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    theta = float(res.x) if res.fun <= grid_vals[i0] else float(grid[i0])
    theta = max(theta, 0.0)

    logdet_v, xtvx, xtvy, rss = _reml_pieces(y, x, groups, theta)
    coef = np.linalg.solve(xtvx, xtvy)
    sigma2_resid = rss / (n - p)
    sigma2_int = theta * sigma2_resid
    cov = sigma2_resid * np.linalg.inv(xtvx)
    se = np.sqrt(np.diag(cov))
    z = coef / se
    p_values = 2.0 * norm.sf(np.abs(z))
    crit = float(norm.ppf(1.0 - alpha / 2.0))

    sign, logdet_xx = np.linalg.slogdet(xtvx)
    reml_ll = -0.5 * (logdet_v + logdet_xx + (n - p) * (math.log(rss)
               + 1.0 + math.log(2.0 * math.pi) - math.log(n - p)))

    fitted_fixed = x @ coef
    var_fixed = float(np.var(fitted_fixed))
    denom = var_fixed + sigma2_int + sigma2_resid
    r2_marg = var_fixed / denom if denom > 0 else math.nan
    r2_cond = (var_fixed + sigma2_int) / denom if denom > 0 else math.nan

    return MixedModelResult(columns=list(design.columns), coef=coef, se=se,
                            t_stats=z, p_values=np.minimum(p_values, 1.0),
                            ci_low=coef - crit * se, ci_high=coef + crit * se,
                            df_resid=float(n - p), n=n, r_squared=r2_marg,
                            adj_r_squared=math.nan, sigma2=sigma2_resid,
                            sigma2_intercept=sigma2_int,
                            sigma2_residual=sigma2_resid, theta=theta,
                            reml_loglik=float(reml_ll), n_groups=len(groups),
                            r2_marginal=r2_marg, r2_conditional=r2_cond)
