"""GEE estimation of the marginal ZIP model with robust variances.

The mean model is ``log mu_i = beta1 + beta2 * r_i`` with a cluster-level
arm indicator ``r_i``, fitted with an independence working correlation and
per-subject working variances ``mu_i * (1 + odds(p_i) * mu_i)``.  The
structural-zero probabilities enter as plug-in values ``p_hat`` and are
themselves estimated by an expectation-solution (ES) iteration: latent zero
indicators are replaced by their posterior means given the current fit, and
the zero-model moment equations are re-solved.

Because the design contains only the intercept and the arm indicator, every
estimating equation depends on the data through per-arm totals (subjects,
outcome sums, zero counts) and per-cluster residual sums.  The solvers work
on those sufficient statistics directly, which keeps the leave-one-cluster-
out refits of the Jackknife exact and cheap.

Variance scale conventions (important):

  * :func:`sandwich_variance` returns the model-based covariance of
    ``sqrt(N) * beta_hat`` (entries are O(1) as N grows);
  * :func:`jackknife_variance` returns the resampling covariance of
    ``beta_hat`` itself (entries shrink like 1/N).

:meth:`GeeFit.sigma2_sq` reconciles the two scales for Wald testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, EstimationError
from .power import normal_quantile, t_quantile
from .simulate import TrialDataset


@dataclass(frozen=True)
class _ArmTotals:
    """Sufficient statistics of one arm: subjects, outcome sum, zero count."""

    m: float
    s: float
    z: float

    def without(self, m: float, s: float, z: float) -> "_ArmTotals":
        return _ArmTotals(self.m - m, self.s - s, self.z - z)


class _ClusterStats:
    """Per-cluster aggregates of a dataset, in cluster order."""

    def __init__(self, data: TrialDataset):
        n = data.n_clusters
        self.ids = np.empty(n, dtype=np.int64)
        self.arm = np.empty(n, dtype=np.int64)
        self.m = np.empty(n, dtype=np.float64)
        self.ysum = np.empty(n, dtype=np.float64)
        self.nzero = np.empty(n, dtype=np.float64)
        for i, cluster in enumerate(data.clusters):
            self.ids[i] = cluster.cluster_id
            self.arm[i] = cluster.arm
            self.m[i] = cluster.size
            self.ysum[i] = float(cluster.outcomes.sum())
            self.nzero[i] = float(np.count_nonzero(cluster.outcomes == 0))
        self.n = n

    def arm_totals(self, arm: int) -> _ArmTotals:
        mask = self.arm == arm
        return _ArmTotals(
            float(self.m[mask].sum()),
            float(self.ysum[mask].sum()),
            float(self.nzero[mask].sum()),
        )


def _require_both_arms(t0: _ArmTotals, t1: _ArmTotals) -> None:
    if t0.m <= 0 or t1.m <= 0:
        raise EstimationError("both arms must be present in the data")
    if t0.s <= 0:
        raise EstimationError("control arm has all-zero outcomes; log-mean undefined")
    if t1.s <= 0:
        raise EstimationError(
            "intervention arm has all-zero outcomes; log-mean undefined"
        )


def _fit_beta_totals(
    t0: _ArmTotals,
    t1: _ArmTotals,
    p0: float,
    p1: float,
    beta_init: Optional[tuple[float, float]],
    tol: float,
    max_iter: int,
) -> tuple[float, float, int, bool, list[tuple[float, float]]]:
    """Newton-Raphson solve of the weighted mean-model score on arm totals."""
    _require_both_arms(t0, t1)
    odds0 = p0 / (1.0 - p0)
    odds1 = p1 / (1.0 - p1)
    if beta_init is None:
        mean0 = t0.s / t0.m
        mean1 = t1.s / t1.m
        b1 = math.log(mean0 + 1e-6)
        b2 = math.log((mean1 + 1e-6) / (mean0 + 1e-6))
    else:
        b1, b2 = beta_init
    trace = [(b1, b2)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu0 = math.exp(b1)
        mu1 = math.exp(b1 + b2)
        w0 = 1.0 / (1.0 + odds0 * mu0)
        w1 = 1.0 / (1.0 + odds1 * mu1)
        # score components and the 2x2 information [[x+y, y], [y, y]]
        u1 = w0 * (t0.s - t0.m * mu0) + w1 * (t1.s - t1.m * mu1)
        u2 = w1 * (t1.s - t1.m * mu1)
        x = w0 * t0.m * mu0
        y = w1 * t1.m * mu1
        if not (math.isfinite(u1) and math.isfinite(u2)) or x <= 0.0 or y <= 0.0:
            return b1, b2, iterations, False, trace
        d1 = (u1 - u2) / x
        d2 = u2 / y - d1
        b1 += d1
        b2 += d2
        trace.append((b1, b2))
        if max(abs(d1), abs(d2)) < tol:
            converged = True
            break
    return b1, b2, iterations, converged, trace


def _zero_posterior_weight(p: float, lam: float) -> float:
    """Posterior probability that an observed zero is structural."""
    if p <= 0.0:
        return 0.0
    return 1.0 / (1.0 + ((1.0 - p) / p) * math.exp(-lam))


def _logit(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p / (1.0 - p))


def _alpha_from_p(p0: float, p1: float) -> np.ndarray:
    """Zero-model coefficients (intercept, arm contrast) on the logit scale."""
    a1 = _logit(p0)
    a2 = _logit(p1) - a1
    if math.isnan(a2):  # both arms at the boundary: the contrast is 0, not nan
        a2 = 0.0
    return np.array([a1, a2])


def _fit_es_totals(
    t0: _ArmTotals,
    t1: _ArmTotals,
    init: Optional[tuple[tuple[float, float], tuple[float, float]]],
    es_tol: float,
    beta_tol: float,
    max_iter: int,
) -> tuple[tuple[float, float], tuple[float, float], int, bool, bool, int]:
    """ES iteration on arm totals.

    Returns ``(beta, p, iterations, converged, degenerate, beta_iterations)``.
    ``init`` optionally carries ``(beta, p)`` starting values (used by the
    leave-one-out refits); otherwise the zero-fraction logistic fit
    initializes ``p`` and the arm log-means initialize ``beta``.
    """
    _require_both_arms(t0, t1)
    zero_frac0 = t0.z / t0.m
    zero_frac1 = t1.z / t1.m
    # Zero-fraction logistic fit: for an intercept+arm model the estimates
    # are the arm-wise proportions mapped through the logit.
    if init is None:
        beta: Optional[tuple[float, float]] = None
        p0, p1 = zero_frac0, zero_frac1
    else:
        beta, (p0, p1) = init
    degenerate = zero_frac0 <= 0.0 or zero_frac1 <= 0.0
    p0 = min(p0, 1.0 - 1e-12) if zero_frac0 > 0.0 else 0.0
    p1 = min(p1, 1.0 - 1e-12) if zero_frac1 > 0.0 else 0.0

    converged = False
    iterations = 0
    beta_iterations = 0
    for iterations in range(1, max_iter + 1):
        b1, b2, beta_iterations, beta_ok, _ = _fit_beta_totals(
            t0, t1, p0, p1, beta, beta_tol, max_iter
        )
        if not beta_ok:
            return (b1, b2), (p0, p1), iterations, False, degenerate, beta_iterations
        mu0 = math.exp(b1)
        mu1 = math.exp(b1 + b2)
        # Zero-model moment equations zero at the arm means of the posterior
        # weights, i.e. p_new = weight * observed zero fraction.
        p0_new = _zero_posterior_weight(p0, mu0 / (1.0 - p0)) * zero_frac0
        p1_new = _zero_posterior_weight(p1, mu1 / (1.0 - p1)) * zero_frac1
        change = 0.0
        if beta is not None:
            change = max(abs(b1 - beta[0]), abs(b2 - beta[1]))
        for old, new in ((p0, p0_new), (p1, p1_new)):
            a_old, a_new = _logit(old), _logit(new)
            if a_old == a_new:  # covers the stable boundary p == 0
                continue
            if math.isinf(a_old) or math.isinf(a_new):
                change = math.inf
            else:
                change = max(change, abs(a_new - a_old))
        beta = (b1, b2)
        p0, p1 = p0_new, p1_new
        if iterations > 1 and change < es_tol:
            converged = True
            break
    assert beta is not None
    return beta, (p0, p1), iterations, converged, degenerate, beta_iterations


@dataclass
class BetaFit:
    """Mean-model fit: estimates plus the Newton-Raphson iteration trace."""

    beta: np.ndarray
    iterations: int
    converged: bool
    trace: list[tuple[float, float]]


@dataclass
class ESFit:
    """Joint fit of the mean model and the structural-zero model.

    ``alpha_hat`` parameterizes the zero model on the logit scale
    (intercept, arm contrast); components are ``-inf`` when the fit is
    degenerate because an arm contains no zeros at all.
    """

    alpha_hat: np.ndarray
    p_hat: tuple[float, float]
    beta_hat: np.ndarray
    iterations: int
    converged: bool
    degenerate: bool


@dataclass
class GeeFit:
    """Complete fit: estimates, both variance matrices, and diagnostics.

    ``sigma_naive`` is the sandwich covariance of ``sqrt(N) * beta_hat``;
    ``sigma_jackknife`` is the leave-one-cluster-out covariance of
    ``beta_hat`` (``None`` when not computed).  Use :meth:`sigma2_sq` or the
    ``se_*`` properties rather than mixing the raw scales.
    """

    beta_hat: np.ndarray
    alpha_hat: np.ndarray
    p_hat: tuple[float, float]
    sigma_naive: np.ndarray
    sigma_jackknife: Optional[np.ndarray]
    converged: bool
    iterations: int
    degenerate: bool
    n_clusters: int

    def sigma2_sq(self, estimator: str = "naive") -> float:
        """Variance of sqrt(N) * beta2_hat under the chosen estimator."""
        if estimator == "naive":
            return float(self.sigma_naive[1, 1])
        if estimator == "jackknife":
            if self.sigma_jackknife is None:
                raise EstimationError("jackknife variance was not computed")
            return float(self.n_clusters * self.sigma_jackknife[1, 1])
        raise DomainError(f"estimator must be 'naive' or 'jackknife', got {estimator!r}")

    @property
    def se_naive(self) -> np.ndarray:
        """Standard errors of beta_hat from the sandwich estimator."""
        return np.sqrt(np.diag(self.sigma_naive) / self.n_clusters)

    @property
    def se_jackknife(self) -> Optional[np.ndarray]:
        """Standard errors of beta_hat from the Jackknife estimator."""
        if self.sigma_jackknife is None:
            return None
        return np.sqrt(np.diag(self.sigma_jackknife))


@dataclass(frozen=True)
class WaldTest:
    """Two-sided Wald decision for the overall-effect hypothesis."""

    statistic: float
    reference: str
    df: Optional[int]
    critical_value: float
    reject: bool
    alpha_level: float


def fit_beta(
    data: TrialDataset,
    p_hat: tuple[float, float],
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> BetaFit:
    """Fit the mean model by Newton-Raphson given plug-in zero probabilities.

    With the cluster-level arm indicator as the only covariate the working
    weights are constant within arm and cancel from the score, so the
    solution equals the arm-wise log sample means; the iteration is retained
    because it also certifies the score actually zeroes out.

    Raises:
        EstimationError: an arm is absent or has all-zero outcomes.
    """
    p0, p1 = p_hat
    for p in (p0, p1):
        if not (0.0 <= p < 1.0):
            raise DomainError(f"plug-in p must lie in [0, 1), got {p}")
    stats = _ClusterStats(data)
    b1, b2, iterations, converged, trace = _fit_beta_totals(
        stats.arm_totals(0), stats.arm_totals(1), p0, p1, None, tol, max_iter
    )
    return BetaFit(
        beta=np.array([b1, b2]), iterations=iterations, converged=converged, trace=trace
    )


def conditional_zero_mean(y: int, p: float, lam: float) -> float:
    """Posterior mean of the structural-zero indicator given an outcome.

    Positive outcomes cannot be structural zeros.  For an observed zero the
    posterior probability of the structural component is
    ``[1 + ((1 - p) / p) * exp(-lam)]**-1``; when ``p == 0`` no structural
    zeros exist and the value is 0.
    """
    if y < 0:
        raise DomainError(f"counts must be nonnegative, got {y}")
    if not (0.0 <= p < 1.0):
        raise DomainError(f"p must lie in [0, 1), got {p}")
    if not (lam > 0.0):
        raise DomainError(f"lam must be positive, got {lam}")
    if y > 0:
        return 0.0
    return _zero_posterior_weight(p, lam)


def fit_alpha_es(
    data: TrialDataset,
    *,
    es_tol: float = 1e-6,
    beta_tol: float = 1e-8,
    max_iter: int = 100,
) -> ESFit:
    """Estimate the zero model and mean model jointly by expectation-solution.

    The zero-fraction logistic fit initializes the zero model; each pass
    refits the mean model at the current plug-in probabilities, replaces the
    latent indicators by their posterior means, and re-solves the zero-model
    moment equations.  Stops when the largest change across all estimates
    drops below ``es_tol``.

    A fit is flagged ``degenerate`` when an arm contains no zeros, pinning
    its probability to the boundary 0 (logit ``-inf``).
    """
    stats = _ClusterStats(data)
    beta, p, iterations, converged, degenerate, _ = _fit_es_totals(
        stats.arm_totals(0), stats.arm_totals(1), None, es_tol, beta_tol, max_iter
    )
    return ESFit(
        alpha_hat=_alpha_from_p(*p),
        p_hat=p,
        beta_hat=np.array(beta),
        iterations=iterations,
        converged=converged,
        degenerate=degenerate,
    )


def _sandwich_from_stats(
    stats: _ClusterStats, beta_hat: np.ndarray, p_hat: tuple[float, float]
) -> np.ndarray:
    mu = np.exp(beta_hat[0] + beta_hat[1] * stats.arm.astype(np.float64))
    odds = np.array([p_hat[0] / (1.0 - p_hat[0]), p_hat[1] / (1.0 - p_hat[1])])
    weight = 1.0 / (1.0 + odds[stats.arm] * mu)
    residual_sum = stats.ysum - stats.m * mu

    q = np.zeros(2)
    v = np.zeros(2)
    for arm in (0, 1):
        mask = stats.arm == arm
        q[arm] = float((stats.m[mask] * mu[mask] * weight[mask]).sum())
        v[arm] = float(((weight[mask] * residual_sum[mask]) ** 2).sum())
    if q[0] <= 0.0 or q[1] <= 0.0:
        raise EstimationError("singular weight matrix: an arm is absent")

    n = stats.n
    a_mat = np.array([[q[0] + q[1], q[1]], [q[1], q[1]]]) / n
    v_mat = np.array([[v[0] + v[1], v[1]], [v[1], v[1]]]) / n
    a_inv = np.linalg.inv(a_mat)
    sigma = a_inv @ v_mat @ a_inv
    return (sigma + sigma.T) / 2.0


def sandwich_variance(
    data: TrialDataset, beta_hat: np.ndarray, p_hat: tuple[float, float]
) -> np.ndarray:
    """Sandwich covariance of ``sqrt(N) * beta_hat``.

    Assembles the weighted information and the squared cluster residual
    sums (residuals within a cluster are summed before squaring, which is
    what captures the within-cluster covariance) and returns
    ``A**-1 V A**-1``.

    Raises:
        EstimationError: the information matrix is singular (one-arm data).
    """
    return _sandwich_from_stats(_ClusterStats(data), np.asarray(beta_hat), p_hat)


def jackknife_variance(
    data: TrialDataset,
    *,
    es_tol: float = 1e-6,
    beta_tol: float = 1e-8,
    max_iter: int = 100,
    _full: Optional[tuple[tuple[float, float], tuple[float, float]]] = None,
) -> np.ndarray:
    """Leave-one-cluster-out covariance of ``beta_hat``.

    Refits the complete ES pipeline on every dataset with one cluster
    removed (initialized at the full-data estimates, with one fresh-start
    retry on non-convergence) and combines the deviations from the
    full-data estimate with the small-sample factor ``(N - 2) / N``.

    Resampling at cluster level preserves the within-cluster correlation.

    Raises:
        EstimationError: fewer than 3 clusters, a removal empties an arm or
            leaves it all-zero, or a refit fails to converge after retry.
    """
    stats = _ClusterStats(data)
    if stats.n < 3:
        raise EstimationError(f"jackknife needs at least 3 clusters, got {stats.n}")
    totals = (stats.arm_totals(0), stats.arm_totals(1))
    if _full is None:
        beta, p, _, converged, _, _ = _fit_es_totals(
            totals[0], totals[1], None, es_tol, beta_tol, max_iter
        )
        if not converged:
            raise EstimationError("full-data fit did not converge")
    else:
        beta, p = _full
    full_init = (beta, p)

    deviations = np.empty((stats.n, 2))
    for i in range(stats.n):
        arm = int(stats.arm[i])
        reduced = list(totals)
        reduced[arm] = totals[arm].without(stats.m[i], stats.ysum[i], stats.nzero[i])
        if reduced[arm].m <= 0:
            raise EstimationError(
                f"removing cluster {stats.ids[i]} empties arm {arm}"
            )
        try:
            loo_beta, _, _, ok, _, _ = _fit_es_totals(
                reduced[0], reduced[1], full_init, es_tol, beta_tol, max_iter
            )
            if not ok:  # single retry from the fresh initialization
                loo_beta, _, _, ok, _, _ = _fit_es_totals(
                    reduced[0], reduced[1], None, es_tol, beta_tol, max_iter
                )
        except EstimationError as exc:
            raise EstimationError(
                f"leave-one-out refit without cluster {stats.ids[i]} failed: {exc}"
            ) from exc
        if not ok:
            raise EstimationError(
                f"leave-one-out refit without cluster {stats.ids[i]} did not converge"
            )
        deviations[i, 0] = loo_beta[0] - beta[0]
        deviations[i, 1] = loo_beta[1] - beta[1]

    sigma = (stats.n - 2) / stats.n * (deviations.T @ deviations)
    return (sigma + sigma.T) / 2.0


def wald_test(
    beta2_hat: float,
    sigma2_sq: float,
    n_clusters: int,
    reference: str = "t",
    alpha_level: float = 0.05,
    df: Optional[int] = None,
) -> WaldTest:
    """Two-sided Wald test of no overall effect.

    The statistic is ``sqrt(N) * beta2_hat / sqrt(sigma2_sq)`` with
    ``sigma2_sq`` on the sqrt(N) scale (see :meth:`GeeFit.sigma2_sq`).
    Rejection requires the absolute statistic to strictly exceed the
    reference quantile; a statistic exactly at the quantile is retained.
    ``df`` defaults to ``n_clusters - 2`` for the t reference.
    """
    if not (sigma2_sq > 0.0):
        raise DomainError(f"sigma2_sq must be positive, got {sigma2_sq}")
    if not (0.0 < alpha_level < 1.0):
        raise DomainError(f"alpha_level must lie in (0, 1), got {alpha_level}")
    statistic = math.sqrt(n_clusters) * beta2_hat / math.sqrt(sigma2_sq)
    if reference == "normal":
        critical = normal_quantile(1.0 - alpha_level / 2.0)
        used_df = None
    elif reference == "t":
        used_df = n_clusters - 2 if df is None else df
        critical = t_quantile(used_df, 1.0 - alpha_level / 2.0)
    else:
        raise DomainError(f"reference must be 'normal' or 't', got {reference!r}")
    return WaldTest(
        statistic=statistic,
        reference=reference,
        df=used_df,
        critical_value=critical,
        reject=abs(statistic) > critical,
        alpha_level=alpha_level,
    )


def fit_zip(
    data: TrialDataset,
    *,
    jackknife: bool = True,
    es_tol: float = 1e-6,
    beta_tol: float = 1e-8,
    max_iter: int = 100,
) -> GeeFit:
    """Fit the full model and both variance estimators on a dataset."""
    stats = _ClusterStats(data)
    totals = (stats.arm_totals(0), stats.arm_totals(1))
    beta, p, iterations, converged, degenerate, _ = _fit_es_totals(
        totals[0], totals[1], None, es_tol, beta_tol, max_iter
    )
    beta_arr = np.array(beta)
    sigma_naive = _sandwich_from_stats(stats, beta_arr, p)
    sigma_jack = None
    if jackknife:
        sigma_jack = jackknife_variance(
            data,
            es_tol=es_tol,
            beta_tol=beta_tol,
            max_iter=max_iter,
            _full=(beta, p),
        )
    return GeeFit(
        beta_hat=beta_arr,
        alpha_hat=_alpha_from_p(*p),
        p_hat=p,
        sigma_naive=sigma_naive,
        sigma_jackknife=sigma_jack,
        converged=converged,
        iterations=iterations,
        degenerate=degenerate,
        n_clusters=stats.n,
    )
