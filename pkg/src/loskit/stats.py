"""Statistical analysis: grouped descriptives, Kruskal-Wallis with tie correction,
and a random-intercept linear mixed model fitted by expectation-maximization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.special import gammaincc

from .errors import (
    DomainError,
    EmptyGroup,
    EmptyInput,
    LengthMismatch,
    RankDeficientDesign,
    TooFewGroups,
)


@dataclass(frozen=True)
class GroupRow:
    """Descriptive statistics of the values falling in one group."""

    group: Hashable
    n: int
    percent: float
    median: float
    std: float
    q25: float
    q75: float
    min: float
    max: float


@dataclass(frozen=True)
class GroupDescriptives:
    rows: tuple[GroupRow, ...]

    def __iter__(self):
        return iter(self.rows)

    def row(self, group: Hashable) -> GroupRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group)


def group_descriptives(
    values: Sequence[float],
    groups: Sequence[Hashable],
    order: Sequence[Hashable] | None = None,
) -> GroupDescriptives:
    """Per-group n, %, median, sample std, quartiles, min, max.

    Quantiles use linear interpolation between order statistics (type 7);
    a single-value group reports std 0. Row order follows ``order`` when
    given, otherwise sorted group labels.
    """
    if len(values) != len(groups):
        raise LengthMismatch(f"{len(values)} values vs {len(groups)} group labels")
    if len(values) == 0:
        raise EmptyInput("no values")
    arr = np.asarray(values, dtype=np.float64)
    by_group: dict[Hashable, list[int]] = {}
    for i, g in enumerate(groups):
        by_group.setdefault(g, []).append(i)
    labels = list(order) if order is not None else sorted(by_group)
    total = len(values)
    rows = []
    for g in labels:
        idx = by_group.get(g)
        if not idx:
            continue
        v = arr[idx]
        q25, med, q75 = np.quantile(v, (0.25, 0.5, 0.75))
        rows.append(
            GroupRow(
                group=g,
                n=len(v),
                percent=100.0 * len(v) / total,
                median=float(med),
                std=float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                q25=float(q25),
                q75=float(q75),
                min=float(v.min()),
                max=float(v.max()),
            )
        )
    return GroupDescriptives(tuple(rows))


COMORBIDITY_BINS = ("0", "1", "2", "3+")
ELIXHAUSER_BINS = ("Low", "Moderate", "High", "Very High")


def discretize_comorbidity(count: int) -> str:
    """Bin a comorbidity count into 0 / 1 / 2 / 3+."""
    if count < 0:
        raise DomainError(f"comorbidity count must be >= 0, got {count}")
    return COMORBIDITY_BINS[min(count, 3)]


def discretize_elixhauser(score: int) -> str:
    """Bin an Elixhauser score: Low (-inf,2], Moderate [3,5], High [6,10], Very High [11,inf)."""
    if score <= 2:
        return "Low"
    if score <= 5:
        return "Moderate"
    if score <= 10:
        return "High"
    return "Very High"


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability Q(df/2, x/2)."""
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if df < 1:
        raise DomainError(f"df must be >= 1, got {df}")
    return float(gammaincc(df / 2.0, x / 2.0))


def _midranks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ranks 1..N with ties averaged; also returns the tie-run sizes."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    n = len(values)
    ranks = np.empty(n, dtype=np.float64)
    boundaries = np.nonzero(sorted_vals[1:] != sorted_vals[:-1])[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    tie_sizes = ends - starts
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks, tie_sizes


@dataclass(frozen=True)
class KwResult:
    H: float
    H_corrected: float
    df: int
    p: float
    degenerate: bool = False


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KwResult:
    """Kruskal-Wallis rank test across independent groups, with tie correction.

    H is computed from mid-ranks; the tie correction divides by
    1 - sum(t^3 - t)/(N^3 - N). When every value is identical the result is
    flagged degenerate with H = 0 and p = 1.
    """
    if len(groups) < 2:
        raise TooFewGroups(f"need >= 2 groups, got {len(groups)}")
    sizes = [len(g) for g in groups]
    if any(s == 0 for s in sizes):
        raise EmptyGroup("every group must contain at least one value")
    pooled = np.concatenate([np.asarray(g, dtype=np.float64) for g in groups])
    n_total = len(pooled)
    ranks, tie_sizes = _midranks(pooled)

    h = 0.0
    offset = 0
    for size in sizes:
        mean_rank = ranks[offset : offset + size].mean()
        h += size * (mean_rank - (n_total + 1) / 2.0) ** 2
        offset += size
    h *= 12.0 / (n_total * (n_total + 1))

    tie_term = float(np.sum(tie_sizes**3 - tie_sizes)) / (n_total**3 - n_total)
    df = len(groups) - 1
    if tie_term >= 1.0:
        return KwResult(H=0.0, H_corrected=0.0, df=df, p=1.0, degenerate=True)
    h_corrected = h / (1.0 - tie_term)
    return KwResult(
        H=float(h),
        H_corrected=float(h_corrected),
        df=df,
        p=chi_square_sf(h_corrected, df),
    )


@dataclass(frozen=True)
class MixedModelFit:
    """Random-intercept linear mixed model estimates."""

    beta: np.ndarray
    beta_se: np.ndarray
    sigma_u2: float
    sigma_e2: float
    loglik: float
    loglik_history: tuple[float, ...] = field(repr=False, default=())
    converged: bool = False
    n_iter: int = 0
    single_group: bool = False
    term_names: tuple[str, ...] = ()


def _marginal_loglik(
    resid: np.ndarray,
    group_idx: np.ndarray,
    group_sizes: np.ndarray,
    sigma_u2: float,
    sigma_e2: float,
) -> float:
    n = len(resid)
    s_g = np.bincount(group_idx, weights=resid)
    denom = sigma_e2 + group_sizes * sigma_u2
    quad = (np.sum(resid**2) - np.sum(sigma_u2 * s_g**2 / denom)) / sigma_e2
    logdet = np.sum((group_sizes - 1) * np.log(sigma_e2) + np.log(denom))
    return float(-0.5 * (n * np.log(2 * np.pi) + logdet + quad))


def fit_random_intercept(
    y: Sequence[float],
    X: np.ndarray,
    group_ids: Sequence[Hashable],
    *,
    term_names: Sequence[str] | None = None,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> MixedModelFit:
    """Fit y = X beta + u_g + e with u_g ~ N(0, sigma_u^2), e ~ N(0, sigma_e^2).

    Estimation is expectation-maximization on the marginal likelihood,
    stopping when the log-likelihood improves by less than ``tol`` or after
    ``max_iter`` iterations. Standard errors are Wald, from (X' V^-1 X)^-1
    at the final variance estimates. With a single group the fit falls back
    to ordinary least squares with sigma_u2 = 0 and the single_group flag.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(y) != X.shape[0] or len(group_ids) != len(y):
        raise LengthMismatch("y, X rows, and group_ids must align")
    n, p = X.shape
    if n == 0:
        raise EmptyInput("no rows")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientDesign(f"design matrix rank < {p}")
    names = tuple(term_names) if term_names is not None else tuple(f"x{j}" for j in range(p))

    _, group_idx = np.unique(np.asarray(group_ids, dtype=object), return_inverse=True)
    n_groups = int(group_idx.max()) + 1
    group_sizes = np.bincount(group_idx).astype(np.float64)

    xtx_inv_xt = np.linalg.solve(X.T @ X, X.T)
    beta = xtx_inv_xt @ y
    resid = y - X @ beta
    sigma_e2 = max(float(np.mean(resid**2)), 1e-12)

    if n_groups < 2:
        se = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * sigma_e2 * n / max(n - p, 1))
        ll = _marginal_loglik(resid, group_idx, group_sizes, 0.0, sigma_e2)
        return MixedModelFit(
            beta=beta,
            beta_se=se,
            sigma_u2=0.0,
            sigma_e2=sigma_e2,
            loglik=ll,
            loglik_history=(ll,),
            converged=True,
            n_iter=0,
            single_group=True,
            term_names=names,
        )

    group_means = np.bincount(group_idx, weights=resid) / group_sizes
    sigma_u2 = max(float(np.var(group_means)), 1e-6)

    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # E-step: posterior mean/variance of each group intercept.
        resid = y - X @ beta
        s_g = np.bincount(group_idx, weights=resid)
        denom = sigma_e2 + group_sizes * sigma_u2
        m_g = sigma_u2 * s_g / denom
        v_g = sigma_u2 * sigma_e2 / denom
        # M-step: conditional maximization over beta, then the variances.
        beta = xtx_inv_xt @ (y - m_g[group_idx])
        sigma_u2 = float(np.mean(m_g**2 + v_g))
        r = y - X @ beta - m_g[group_idx]
        sigma_e2 = float((np.sum(r**2) + np.sum(group_sizes * v_g)) / n)
        sigma_e2 = max(sigma_e2, 1e-12)
        ll = _marginal_loglik(y - X @ beta, group_idx, group_sizes, sigma_u2, sigma_e2)
        history.append(ll)
        if len(history) >= 2:
            if ll - history[-2] < tol:
                converged = True
                break

    # Wald covariance from the GLS information matrix.
    denom = sigma_e2 + group_sizes * sigma_u2
    info = X.T @ X / sigma_e2
    for g in range(n_groups):
        xg_sum = np.sum(X[group_idx == g], axis=0)
        info -= (sigma_u2 / (sigma_e2 * denom[g])) * np.outer(xg_sum, xg_sum)
    beta_se = np.sqrt(np.diag(np.linalg.inv(info)))

    return MixedModelFit(
        beta=beta,
        beta_se=beta_se,
        sigma_u2=sigma_u2,
        sigma_e2=sigma_e2,
        loglik=history[-1],
        loglik_history=tuple(history),
        converged=converged,
        n_iter=it,
        term_names=names,
    )


def build_year_design(
    predictor: Sequence[float],
    years: Sequence[int],
    reference_year: int | None = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Design matrix [intercept, predictor, year dummies, predictor x year interactions].

    The earliest (or given) year is the reference level and gets no dummy.
    """
    x = np.asarray(predictor, dtype=np.float64)
    yr = np.asarray(years, dtype=np.int64)
    if len(x) != len(yr):
        raise LengthMismatch(f"{len(x)} predictor values vs {len(yr)} years")
    levels = sorted(set(yr.tolist()))
    ref = reference_year if reference_year is not None else levels[0]
    dummies = [lev for lev in levels if lev != ref]
    columns = [np.ones(len(x)), x]
    names = ["intercept", "predictor"]
    for lev in dummies:
        columns.append((yr == lev).astype(np.float64))
        names.append(f"year_{lev}")
    for lev in dummies:
        columns.append(x * (yr == lev))
        names.append(f"predictor:year_{lev}")
    return np.column_stack(columns), tuple(names)


def wald_term_table(fit: MixedModelFit) -> list[tuple[str, float, float, float, float]]:
    """Rows of (term, estimate, std error, z, two-sided p) for every coefficient."""
    rows = []
    for name, est, se in zip(fit.term_names, fit.beta, fit.beta_se):
        z = est / se if se > 0 else float("inf")
        p = chi_square_sf(z * z, 1) if np.isfinite(z) else 0.0
        rows.append((name, float(est), float(se), float(z), float(p)))
    return rows
