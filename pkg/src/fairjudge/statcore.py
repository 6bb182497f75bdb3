"""Native statistics engine for the audit regressions.

One-way fixed-effects OLS via within-group demeaning, cluster-robust
covariance with the conventional small-sample correction, t / Wald
inference, and exact log-space binomial tail probabilities. All functions
are pure and safe to call concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats as spstats

# Relative pivot threshold below which a column is treated as collinear.
RANK_TOL = 1e-10


class StatError(Exception):
    """Invalid input to a statistical routine."""


class UnidentifiedLabelError(StatError):
    """No within-group variation left: the treated effect cannot be estimated."""


@dataclass(frozen=True)
class RegressionFrame:
    """Outcome, treated-indicator matrix, and group (document) assignment."""

    y: np.ndarray
    X: np.ndarray
    group_ids: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        g = np.asarray(self.group_ids)
        if X.ndim != 2:
            raise StatError("X must be a 2-D matrix")
        if not (len(y) == X.shape[0] == len(g)):
            raise StatError(
                f"row mismatch: y={len(y)}, X={X.shape[0]}, groups={len(g)}"
            )
        if X.shape[1] != len(self.column_names):
            raise StatError("column_names must match X's column count")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "group_ids", g)

    @property
    def n_obs(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class RegressionResult:
    """Coefficients and cluster-robust inference for one (model, label) regression.

    Unidentified (collinear or annihilated) coefficients are NaN, with the
    `identified` mask telling which entries are estimated.
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    per_coef_p: np.ndarray
    joint_p: float
    residual_dof: int
    n_obs: int
    n_groups: int
    n_dropped_singletons: int
    column_names: tuple[str, ...]
    identified: tuple[bool, ...]

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def to_json(self) -> str:
        """Diagnostic dump, NaN-safe."""
        def clean(x):
            return [None if (isinstance(v, float) and math.isnan(v)) else v for v in x]

        return json.dumps(
            {
                "coefficients": clean(self.coefficients.tolist()),
                "covariance": [clean(row) for row in self.covariance.tolist()],
                "per_coef_p": clean(self.per_coef_p.tolist()),
                "joint_p": self.joint_p,
                "residual_dof": self.residual_dof,
                "n_obs": self.n_obs,
                "n_groups": self.n_groups,
                "n_dropped_singletons": self.n_dropped_singletons,
                "column_names": list(self.column_names),
                "identified": list(self.identified),
            }
        )


@dataclass(frozen=True)
class BernoulliTestResult:
    """Binomial tail test: chance of >= k significant results out of N at threshold tau."""

    n_trials: int
    n_significant: int
    threshold: float
    p_value: float


def _group_index(group_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(group_ids, return_inverse=True)
    counts = np.bincount(inverse)
    return uniq, inverse, counts


def drop_singletons(frame: RegressionFrame) -> tuple[RegressionFrame, int]:
    """Remove rows whose group has a single observation.

    Singleton rows are annihilated by demeaning and would distort the
    degrees of freedom if kept.
    """
    _, inverse, counts = _group_index(frame.group_ids)
    keep = counts[inverse] > 1
    dropped = int((~keep).sum())
    if dropped == 0:
        return frame, 0
    return (
        RegressionFrame(
            y=frame.y[keep],
            X=frame.X[keep],
            group_ids=frame.group_ids[keep],
            column_names=frame.column_names,
        ),
        dropped,
    )


def within_demean(frame: RegressionFrame) -> RegressionFrame:
    """Subtract group means from y and every X column (one-way absorption)."""
    _, inverse, counts = _group_index(frame.group_ids)
    if np.any(counts == 1):
        raise StatError("singleton groups present; call drop_singletons first")

    def demean(col: np.ndarray) -> np.ndarray:
        means = np.bincount(inverse, weights=col) / counts
        return col - means[inverse]

    y = demean(frame.y)
    X = np.column_stack([demean(frame.X[:, j]) for j in range(frame.X.shape[1])]) \
        if frame.X.shape[1] else frame.X.copy()
    return RegressionFrame(y=y, X=X, group_ids=frame.group_ids, column_names=frame.column_names)


def ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Least squares via rank-revealing (pivoted) QR.

    Returns (coefficients, residuals, dropped_columns). Collinear columns
    (relative pivot below RANK_TOL) get NaN coefficients and are listed in
    dropped_columns.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise StatError("X and y are not row-aligned")
    n, k = X.shape
    if k == 0:
        raise StatError("no columns to regress on")

    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    pivot0 = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > RANK_TOL * pivot0)) if pivot0 > 0 else 0
    if rank == 0:
        raise StatError("zero usable columns after rank filtering")

    kept = piv[:rank]
    dropped = sorted(int(j) for j in piv[rank:])
    z = Q[:, :rank].T @ y
    beta_kept = scipy.linalg.solve_triangular(R[:rank, :rank], z)
    coefficients = np.full(k, np.nan)
    coefficients[kept] = beta_kept
    residuals = y - X[:, kept] @ beta_kept
    return coefficients, residuals, dropped


def cluster_robust_cov(
    X: np.ndarray, residuals: np.ndarray, clusters: np.ndarray
) -> np.ndarray:
    """Cluster-robust sandwich covariance with small-sample factor.

    V = c * (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1,
    c = (G / (G-1)) * ((n-1) / (n-K)).
    """
    X = np.asarray(X, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    clusters = np.asarray(clusters)
    n, k = X.shape
    if not (n == len(residuals) == len(clusters)):
        raise StatError("X, residuals, clusters are not row-aligned")
    uniq, inverse, _ = _group_index(clusters)
    n_groups = len(uniq)
    if n_groups < 2:
        raise StatError(f"need >= 2 clusters, got {n_groups}")

    xtx = X.T @ X
    try:
        bread = scipy.linalg.inv(xtx)
    except scipy.linalg.LinAlgError as exc:
        raise StatError("X'X is singular") from exc

    scores = X * residuals[:, None]
    group_sums = np.zeros((n_groups, k))
    np.add.at(group_sums, inverse, scores)
    meat = group_sums.T @ group_sums

    c = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k))
    cov = c * bread @ meat @ bread
    return (cov + cov.T) / 2


def fe_regress(frame: RegressionFrame) -> RegressionResult:
    """Fixed-effects regression with document-clustered inference.

    Pipeline: drop singletons, demean within groups, pivoted-QR OLS,
    sandwich covariance. Per-coefficient p-values use t(G-1); the joint
    null (all treated coefficients zero) uses an F(J_identified, G-1)
    Wald statistic.
    """
    if frame.n_obs == 0:
        raise StatError("empty regression frame")
    kept_frame, n_singletons = drop_singletons(frame)
    if kept_frame.n_obs == 0:
        raise UnidentifiedLabelError("all groups are singletons; nothing identifies the effect")

    demeaned = within_demean(kept_frame)
    try:
        coefficients, residuals, dropped = ols(demeaned.X, demeaned.y)
    except StatError as exc:
        raise UnidentifiedLabelError(
            f"no within-document variation in treated indicators: {exc}"
        ) from None

    identified = tuple(not math.isnan(c) for c in coefficients)
    kept_idx = [j for j, ok in enumerate(identified) if ok]
    n = kept_frame.n_obs
    _, _, counts = _group_index(kept_frame.group_ids)
    n_groups = len(counts)
    n_identified = len(kept_idx)

    cov_kept = cluster_robust_cov(demeaned.X[:, kept_idx], residuals, kept_frame.group_ids)

    j_total = len(frame.column_names)
    covariance = np.full((j_total, j_total), np.nan)
    for a, ja in enumerate(kept_idx):
        for b, jb in enumerate(kept_idx):
            covariance[ja, jb] = cov_kept[a, b]

    beta = coefficients[kept_idx]
    se = np.sqrt(np.maximum(np.diag(cov_kept), 0.0))
    dof_t = n_groups - 1
    per_coef_p = np.full(j_total, np.nan)
    for pos, j in enumerate(kept_idx):
        if se[pos] > 0:
            t = beta[pos] / se[pos]
            per_coef_p[j] = 2 * spstats.t.sf(abs(t), dof_t)
        else:
            # Degenerate exact fit: zero coefficient is trivially null.
            per_coef_p[j] = 1.0 if beta[pos] == 0 else 0.0

    joint_p = _wald_joint_p(beta, cov_kept, n_identified, dof_t)
    residual_dof = n - n_groups - n_identified

    return RegressionResult(
        coefficients=coefficients,
        covariance=covariance,
        per_coef_p=per_coef_p,
        joint_p=joint_p,
        residual_dof=residual_dof,
        n_obs=n,
        n_groups=n_groups,
        n_dropped_singletons=n_singletons,
        column_names=frame.column_names,
        identified=identified,
    )


def _wald_joint_p(beta: np.ndarray, cov: np.ndarray, n_identified: int, dof: int) -> float:
    if n_identified == 0:
        return float("nan")
    if np.allclose(beta, 0.0):
        return 1.0
    if not np.any(cov):
        # Zero covariance with nonzero coefficients: infinitely precise
        # estimate, the null is rejected outright.
        return 0.0
    # pinvh tolerates the near-singular covariances that exact-fit frames
    # produce; it equals the plain inverse whenever cov is well conditioned.
    w = float(beta @ scipy.linalg.pinvh(cov) @ beta)
    if w < 0:
        w = 0.0
    f = w / n_identified
    return float(spstats.f.sf(f, n_identified, dof))


def binomial_tail(n_trials: int, k: int, tau: float) -> float:
    """Upper binomial tail P[K >= k], K ~ Binomial(n_trials, tau).

    Computed in log space with smallest-terms-first summation, so it stays
    exact far below double underflow of individual naive products.
    """
    if n_trials < 0 or not (0 <= k <= n_trials):
        raise StatError(f"need 0 <= k <= N, got k={k}, N={n_trials}")
    if not (0 < tau < 1):
        raise StatError(f"tau must be in (0, 1), got {tau}")
    if k == 0:
        return 1.0

    log_tau = math.log(tau)
    log_1m = math.log1p(-tau)
    lg_n1 = math.lgamma(n_trials + 1)
    terms = [
        lg_n1 - math.lgamma(l + 1) - math.lgamma(n_trials - l + 1) + l * log_tau + (n_trials - l) * log_1m
        for l in range(k, n_trials + 1)
    ]
    terms.sort()
    peak = terms[-1]
    total = 0.0
    for t in terms:
        total += math.exp(t - peak)
    return min(1.0, math.exp(peak + math.log(total)))


def bernoulli_test(n_trials: int, n_significant: int, tau: float) -> BernoulliTestResult:
    """Package a binomial tail test over significance counts."""
    if n_trials == 0:
        p = 1.0
    else:
        p = binomial_tail(n_trials, n_significant, tau)
    return BernoulliTestResult(
        n_trials=n_trials, n_significant=n_significant, threshold=tau, p_value=p
    )
