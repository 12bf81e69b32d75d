"""Shared fixtures and independent oracles used across the test modules."""

import numpy as np
import pytest

from zipcrt import ClusterSizeModel, build_design

DU_34_56 = ClusterSizeModel.discrete_uniform(34, 56)
DU_10_80 = ClusterSizeModel.discrete_uniform(10, 80)
TRUNPOIS = ClusterSizeModel.truncated_poisson(45.0, 20, 70)


def grid_design(cluster_sizes=DU_34_56, rho=0.03, q=0.5, beta2=-0.431, p1=0.5):
    """A cell of the reference grid: control mean 1, half structural zeros."""
    return build_design(
        mu1=1.0, beta2=beta2, p1=p1, q=q, rho_s=rho, rho_u=rho,
        r_bar=0.5, cluster_sizes=cluster_sizes, alpha=0.05, power=0.8,
    )


@pytest.fixture
def config_a():
    """The baseline scenario: DU(34,56), both ICCs 0.03, q = 0.5."""
    return grid_design()


def enumerated_pair_covariance(mu, p, rho_s, rho_u):
    """Brute-force pair covariance: enumerate the structural-zero patterns.

    For a within-cluster pair, condition on whether each member is a
    structural zero, multiply each pattern's probability (exchangeable
    correlated Bernoulli pair) by the conditional cross-moment
    E[(y - mu)(y' - mu) | pattern], and sum.  Kept deliberately independent
    of the closed form it checks.
    """
    lam = mu / (1.0 - p)
    prob_both = p * p + p * (1.0 - p) * rho_s
    prob_one = 2.0 * p * (1.0 - p) * (1.0 - rho_s)  # either member, not both
    prob_neither = (1.0 - p) * (1.0 - p + rho_s * p)
    # both structural: outcomes are (0, 0)
    cross_both = mu * mu
    # one structural: (0, u') with u' ~ Poisson(lam) independent of the zeros
    cross_one = -mu * (lam - mu)
    # neither: (u, u') with Cov(u, u') = rho_u * lam and common mean lam
    cross_neither = rho_u * lam + (lam - mu) ** 2
    return (
        prob_both * cross_both
        + prob_one * cross_one
        + prob_neither * cross_neither
    )


def pooled_pair_correlation(matrix):
    """Pairwise within-row correlation pooled over an (n, m) sample matrix."""
    values = np.asarray(matrix, dtype=float)
    centered = values - values.mean()
    row_sums = centered.sum(axis=1)
    row_squares = (centered**2).sum(axis=1)
    m = values.shape[1]
    pair_products = ((row_sums**2 - row_squares) / 2.0).sum()
    n_pairs = values.shape[0] * m * (m - 1) / 2.0
    return (pair_products / n_pairs) / centered.var()
