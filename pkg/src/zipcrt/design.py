"""Marginal zero-inflated Poisson (ZIP) model and design-stage parameter math.

A ZIP outcome is a two-component mixture: with probability ``p`` the
observation is a structural zero, otherwise it is a Poisson draw with mean
``lam``.  The marginal mean is ``mu = (1 - p) * lam`` and the marginal
variance is ``mu + (p / (1 - p)) * mu**2``, so any ``p > 0`` produces
overdispersion relative to a Poisson outcome with the same mean.

Everything in this module is a pure function of its inputs: profiles for the
two trial arms, the effect decomposition on the log-mean scale, and the
within-cluster covariance implied by exchangeable correlation of the latent
structural-zero indicators (``rho_s``) and of the latent Poisson components
(``rho_u``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError

# Absolute tolerance for internal consistency identities (e.g. mu == (1-p)*lam).
IDENTITY_TOL = 1e-12


def _odds(p: float) -> float:
    """Structural-zero odds p/(1-p), with the p == 0 case exactly 0."""
    return p / (1.0 - p)


@dataclass(frozen=True)
class ArmProfile:
    """ZIP parameters of one trial arm.

    Attributes:
        mu: marginal mean of the outcome, ``mu = (1 - p) * lam``.
        p: probability that an observation is a structural zero, in [0, 1).
        lam: mean of the Poisson component.
    """

    mu: float
    p: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.mu > 0.0 and math.isfinite(self.mu)):
            raise DomainError(f"mu must be positive and finite, got {self.mu}")
        if not (0.0 <= self.p < 1.0):
            raise DomainError(f"p must lie in [0, 1), got {self.p}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise DomainError(f"lam must be positive and finite, got {self.lam}")
        if abs(self.mu - (1.0 - self.p) * self.lam) > IDENTITY_TOL:
            raise DomainError(
                f"inconsistent profile: mu={self.mu} != (1-p)*lam="
                f"{(1.0 - self.p) * self.lam}"
            )

    @classmethod
    def from_mean(cls, mu: float, p: float) -> "ArmProfile":
        """Build a profile from the marginal mean and structural-zero probability."""
        if not (0.0 <= p < 1.0):
            raise DomainError(f"p must lie in [0, 1), got {p}")
        return cls(mu=mu, p=p, lam=mu / (1.0 - p))

    @classmethod
    def from_poisson(cls, lam: float, p: float) -> "ArmProfile":
        """Build a profile from the Poisson-component mean and structural-zero probability."""
        if not (0.0 <= p < 1.0):
            raise DomainError(f"p must lie in [0, 1), got {p}")
        return cls(mu=(1.0 - p) * lam, p=p, lam=lam)


@dataclass(frozen=True)
class ClusterSizeModel:
    """Distribution of the number of subjects per cluster.

    Supported kinds:
      * ``discrete_uniform``: uniform over the integers ``lo..hi``.
      * ``truncated_poisson``: Poisson(``rate``) conditioned on ``lo..hi``.
      * ``fixed``: every cluster has exactly ``lo`` (== ``hi``) subjects.

    ``eta_m`` and ``sigma2_m`` are the exact mean and variance of the declared
    distribution (truncated-Poisson moments by direct summation of the
    renormalized mass function).
    """

    kind: str
    lo: int
    hi: int
    rate: Optional[float] = None
    eta_m: float = field(init=False, compare=False)
    sigma2_m: float = field(init=False, compare=False)

    def __post_init__(self) -> None:
        if self.lo < 1:
            raise DomainError(f"cluster sizes must be >= 1, got lo={self.lo}")
        if self.hi < self.lo:
            raise DomainError(f"empty support: lo={self.lo} > hi={self.hi}")
        if self.kind == "discrete_uniform":
            n = self.hi - self.lo + 1
            eta = (self.lo + self.hi) / 2.0
            sigma2 = (n * n - 1) / 12.0
        elif self.kind == "truncated_poisson":
            if self.rate is None or self.rate <= 0.0:
                raise DomainError(f"truncated_poisson requires rate > 0, got {self.rate}")
            support = np.arange(self.lo, self.hi + 1)
            pmf = stats.poisson.pmf(support, self.rate)
            total = pmf.sum()
            if total <= 0.0:
                raise DomainError(
                    f"truncated_poisson({self.rate}) has no mass on [{self.lo}, {self.hi}]"
                )
            pmf = pmf / total
            eta = float(np.dot(support, pmf))
            sigma2 = float(np.dot(support.astype(float) ** 2, pmf)) - eta * eta
        elif self.kind == "fixed":
            if self.lo != self.hi:
                raise DomainError("fixed cluster size requires lo == hi")
            eta = float(self.lo)
            sigma2 = 0.0
        else:
            raise DomainError(f"unknown cluster size kind: {self.kind!r}")
        object.__setattr__(self, "eta_m", float(eta))
        object.__setattr__(self, "sigma2_m", float(max(sigma2, 0.0)))

    @classmethod
    def discrete_uniform(cls, lo: int, hi: int) -> "ClusterSizeModel":
        return cls(kind="discrete_uniform", lo=lo, hi=hi)

    @classmethod
    def truncated_poisson(cls, rate: float, lo: int, hi: int) -> "ClusterSizeModel":
        return cls(kind="truncated_poisson", lo=lo, hi=hi, rate=rate)

    @classmethod
    def fixed(cls, m: int) -> "ClusterSizeModel":
        return cls(kind="fixed", lo=m, hi=m)


@dataclass(frozen=True)
class DesignInputs:
    """Complete design-stage specification of a two-arm cluster trial.

    Attributes:
        control: ZIP profile of the control arm.
        intervention: ZIP profile of the intervention arm.
        beta1: log marginal mean of the control arm.
        beta2: log of the marginal-mean ratio intervention/control (the
            overall effect on the log scale).  May be 0 for null-scenario
            data generation; sample-size operations then refuse to run.
        rho_s: exchangeable within-cluster correlation of the structural-zero
            indicators, in [0, 1).
        rho_u: exchangeable within-cluster correlation of the Poisson
            components, in [0, 1).
        r_bar: probability that a cluster is allocated to the intervention
            arm, in (0, 1).
        cluster_sizes: distribution of cluster sizes.
        alpha: two-sided type I error rate.
        power: target power (1 - type II error rate).
    """

    control: ArmProfile
    intervention: ArmProfile
    beta1: float
    beta2: float
    rho_s: float
    rho_u: float
    r_bar: float
    cluster_sizes: ClusterSizeModel
    alpha: float = 0.05
    power: float = 0.8

    def __post_init__(self) -> None:
        if abs(math.exp(self.beta1) - self.control.mu) > IDENTITY_TOL:
            raise DomainError(
                f"exp(beta1)={math.exp(self.beta1)} != control mean {self.control.mu}"
            )
        if abs(math.exp(self.beta1 + self.beta2) - self.intervention.mu) > IDENTITY_TOL:
            raise DomainError(
                f"exp(beta1+beta2)={math.exp(self.beta1 + self.beta2)} != "
                f"intervention mean {self.intervention.mu}"
            )
        for name in ("rho_s", "rho_u"):
            rho = getattr(self, name)
            if not (0.0 <= rho < 1.0):
                raise DomainError(f"{name} must lie in [0, 1), got {rho}")
        if not (0.0 < self.r_bar < 1.0):
            raise DomainError(f"r_bar must lie strictly in (0, 1), got {self.r_bar}")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (0.0 < self.power < 1.0):
            raise DomainError(f"power must lie in (0, 1), got {self.power}")

    def arm(self, arm_indicator: int) -> ArmProfile:
        """Profile for arm 0 (control) or 1 (intervention)."""
        return self.intervention if arm_indicator else self.control

    def under_null(self) -> "DesignInputs":
        """The same design with no intervention effect (both arms == control).

        Used to generate null-scenario data while the original design keeps
        the effect size used for sample-size calculation.
        """
        return DesignInputs(
            control=self.control,
            intervention=self.control,
            beta1=self.beta1,
            beta2=0.0,
            rho_s=self.rho_s,
            rho_u=self.rho_u,
            r_bar=self.r_bar,
            cluster_sizes=self.cluster_sizes,
            alpha=self.alpha,
            power=self.power,
        )


def build_design(
    *,
    beta2: float,
    p1: float,
    mu1: Optional[float] = None,
    beta1: Optional[float] = None,
    q: Optional[float] = None,
    p2: Optional[float] = None,
    rho_s: float,
    rho_u: float,
    r_bar: float = 0.5,
    cluster_sizes: ClusterSizeModel,
    alpha: float = 0.05,
    power: float = 0.8,
) -> DesignInputs:
    """Assemble a :class:`DesignInputs` from designer-facing parameters.

    The control mean is given either as ``mu1`` or as its log ``beta1``
    (exactly one of the two).  The intervention arm's structural-zero
    probability is resolved from ``q`` (the fraction of the log-scale effect
    attributed to the change in structural zeros) or given directly as
    ``p2``; if both are supplied they must agree to 1e-6.  When neither is
    supplied, ``q = 0.5`` is used as the neutral default.

    Raises:
        ConfigError: missing or contradictory parameters (named in the message).
        DomainError: resolved parameters outside their admissible ranges.
    """
    if (mu1 is None) == (beta1 is None):
        raise ConfigError("exactly one of 'mu1' or 'beta1' must be given")
    if beta1 is None:
        if mu1 is None or mu1 <= 0.0:
            raise ConfigError(f"'mu1' must be positive, got {mu1}")
        beta1 = math.log(mu1)
    mu1_resolved = math.exp(beta1)
    mu2 = math.exp(beta1 + beta2)

    if q is None and p2 is None:
        q = 0.5
    if q is not None:
        p2_from_q_value = p2_from_q(p1, beta2, q)
        if p2 is not None and abs(p2 - p2_from_q_value) > 1e-6:
            raise ConfigError(
                f"contradictory zero structure: 'p2'={p2} but 'q'={q} implies "
                f"p2={p2_from_q_value:.8f} (fields: p1, p2, q, beta2)"
            )
        p2 = p2_from_q_value
    assert p2 is not None
    if not (0.0 <= p2 < 1.0):
        raise DomainError(f"resolved p2={p2} outside [0, 1)")

    return DesignInputs(
        control=ArmProfile.from_mean(mu1_resolved, p1),
        intervention=ArmProfile.from_mean(mu2, p2),
        beta1=beta1,
        beta2=beta2,
        rho_s=rho_s,
        rho_u=rho_u,
        r_bar=r_bar,
        cluster_sizes=cluster_sizes,
        alpha=alpha,
        power=power,
    )


def marginal_variance(arm: ArmProfile) -> float:
    """Marginal variance of a ZIP outcome: ``mu + (p/(1-p)) * mu**2``.

    Equals the mean exactly when ``p == 0`` (pure Poisson) and exceeds it,
    i.e. is overdispersed, whenever ``p > 0``.
    """
    return arm.mu + _odds(arm.p) * arm.mu**2


def zero_probability(arm: ArmProfile, *, legacy: bool = False) -> float:
    """Probability that a ZIP outcome equals zero.

    The mixture mass at zero is ``p + (1 - p) * exp(-lam)``: a structural
    zero, or a sampling zero from the Poisson component.

    With ``legacy=True`` the additive expression ``exp(-lam) + p`` is
    returned instead.  That form overweights the Poisson zeros (it omits the
    ``1 - p`` factor) and can exceed 1; it is kept only so results quoted
    from sources using the additive form can be reproduced and compared.
    """
    if legacy:
        return math.exp(-arm.lam) + arm.p
    return arm.p + (1.0 - arm.p) * math.exp(-arm.lam)


def p2_from_q(p1: float, beta2: float, q: float) -> float:
    """Intervention-arm structural-zero probability implied by effect split ``q``.

    ``q`` is the fraction of the overall log-scale effect ``beta2`` carried
    by the change in structural-zero probability; the two arms then satisfy
    ``log(1 - p2) - log(1 - p1) = q * beta2``, i.e.
    ``p2 = 1 - exp(q * beta2) * (1 - p1)``.

    Raises:
        DomainError: ``q`` outside [0, 1], ``p1`` outside [0, 1), or a
            resolved ``p2`` outside [0, 1) (possible when ``beta2 > 0``).
    """
    if not (0.0 <= p1 < 1.0):
        raise DomainError(f"p1 must lie in [0, 1), got {p1}")
    if not (0.0 <= q <= 1.0):
        raise DomainError(f"q must lie in [0, 1], got {q}")
    p2 = 1.0 - math.exp(q * beta2) * (1.0 - p1)
    if not (0.0 <= p2 < 1.0):
        raise DomainError(
            f"p2={p2:.8f} outside [0, 1) for p1={p1}, beta2={beta2}, q={q}"
        )
    return p2


class EffectDecomposition(NamedTuple):
    """Split of the overall log-scale effect into its two sources."""

    poisson_log_effect: float
    zero_log_effect: float
    q: Optional[float]


def decompose_effect(design: DesignInputs) -> EffectDecomposition:
    """Split ``beta2`` into Poisson-mean and structural-zero components.

    The overall effect satisfies
    ``beta2 = [log lam2 - log lam1] + [log(1-p2) - log(1-p1)]``.
    ``q`` is the structural-zero share ``zero_log_effect / beta2``, reported
    as ``None`` when ``beta2 == 0`` (the share is then undefined).
    """
    poisson_log_effect = math.log(design.intervention.lam) - math.log(design.control.lam)
    zero_log_effect = math.log(1.0 - design.intervention.p) - math.log(
        1.0 - design.control.p
    )
    q = zero_log_effect / design.beta2 if design.beta2 != 0.0 else None
    return EffectDecomposition(poisson_log_effect, zero_log_effect, q)


def infer_p1_from_observed(
    mean: float,
    zero_proportion: float,
    *,
    legacy: bool = False,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Back out the structural-zero probability from observed summaries.

    Given an observed marginal mean and zero proportion, solves
    ``p + (1 - p) * exp(-mean / (1 - p)) = zero_proportion`` for ``p`` by
    bisection on [0, 1 - 1e-9].  The objective is continuous and strictly
    increasing in ``p`` (derivative ``1 - exp(-lam) * (1 + lam) > 0``), so
    the root is unique when it exists.

    Returns 0 when the observed zero proportion does not exceed the pure
    Poisson mass ``exp(-mean)`` (no zero inflation is needed).

    With ``legacy=True`` the additive zero-mass expression
    ``exp(-mean/(1-p)) + p`` is inverted instead; see
    :func:`zero_probability` for why that variant exists.

    Raises:
        DomainError: invalid summaries, or no root in [0, 1 - 1e-9).
    """
    if not (mean > 0.0 and math.isfinite(mean)):
        raise DomainError(f"mean must be positive and finite, got {mean}")
    if not (0.0 < zero_proportion < 1.0):
        raise DomainError(f"zero_proportion must lie in (0, 1), got {zero_proportion}")

    def objective(p: float) -> float:
        lam = mean / (1.0 - p)
        if legacy:
            return p + math.exp(-lam) - zero_proportion
        return p + (1.0 - p) * math.exp(-lam) - zero_proportion

    lo, hi = 0.0, 1.0 - 1e-9
    f_lo = objective(lo)
    if f_lo >= 0.0:
        return 0.0
    f_hi = objective(hi)
    if f_hi < 0.0:
        raise DomainError(
            f"zero proportion {zero_proportion} unreachable for mean {mean}: "
            "no root in [0, 1)"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = objective(mid)
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def pairwise_covariance_factor(
    arm: ArmProfile, rho_s: float, rho_u: float, *, legacy: bool = False
) -> float:
    """Within-cluster covariance of two distinct subjects' ZIP outcomes.

    For subjects j != j' sharing a cluster, exchangeable correlation rho_s of
    the structural-zero indicators and rho_u of the Poisson components imply

        Cov(y_j, y_j') = mu * rho_u * [1 - p * (1 - rho_s)]
                         + mu**2 * rho_s * p / (1 - p).

    This is obtained by enumerating the three structural-zero patterns of
    the pair, weighting each conditional cross-moment by its probability;
    the covariance vanishes exactly when ``rho_u == 0`` and ``p * rho_s == 0``.

    With ``legacy=True`` a superseded closed-form variant is evaluated
    instead.  It disagrees with the pattern-enumeration covariance (and with
    simulated data) and is exposed only for diagnostic comparison; never use
    it for design calculations.
    """
    if not (0.0 <= rho_s < 1.0 and 0.0 <= rho_u < 1.0):
        raise DomainError(f"ICCs must lie in [0, 1), got rho_s={rho_s}, rho_u={rho_u}")
    mu, p = arm.mu, arm.p
    if legacy:
        return mu * (
            _odds(p) * rho_s
            - 2.0 * (mu + 2.0) * p * p * (rho_s - 1.0)
            + p * (rho_s - 1.0) * (rho_u + 2.0)
            + rho_u
        )
    return mu * rho_u * (1.0 - p * (1.0 - rho_s)) + mu**2 * rho_s * _odds(p)
