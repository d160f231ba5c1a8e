"""Marginal count distributions under gamma and discrete priors."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from ..tables import BaselineMatrix, ContingencyTable, expected_baseline

__all__ = [
    "nb_logpmf",
    "nb_marginal",
    "poisson_logpmf",
    "gamma_mixture_logmarginal",
    "grid_log_likelihoods",
    "CellData",
    "cell_data",
]


def nb_logpmf(n, shape, rate, E):
    """log P(N = n) for N | lam ~ Poisson(lam E), lam ~ Gamma(shape, rate).

    Integrating out lam gives a negative binomial with success probability
    ``rate / (E + rate)``::

        Gamma(n + shape) / (Gamma(shape) n!) * (rate/(E+rate))**shape * (E/(E+rate))**n

    Broadcasts over all arguments. ``E = 0`` yields ``log 1{n = 0}``.
    """
    n = np.asarray(n, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    denom = np.log(E + rate)
    with np.errstate(divide="ignore"):
        out = (
            gammaln(n + shape)
            - gammaln(shape)
            - gammaln(n + 1.0)
            + shape * (np.log(rate) - denom)
            + xlogy(n, E)
            - n * denom
        )
    return out


def nb_marginal(n, shape, rate, E) -> float:
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    if E < 0 or n < 0:
        raise ValueError("E and n must be nonnegative")
    if E == 0:
        return 1.0 if n == 0 else 0.0
    return float(np.exp(nb_logpmf(n, shape, rate, E)))


def poisson_logpmf(n, mu):
    n = np.asarray(n, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return xlogy(n, mu) - mu - gammaln(n + 1.0)


def gamma_mixture_logmarginal(n, E, shapes, rates, weights):
    """Per-cell log marginal probability under a gamma-mixture prior."""
    n = np.asarray(n, dtype=np.float64)[:, None]
    E = np.asarray(E, dtype=np.float64)[:, None]
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=np.float64))
    return logsumexp(logw + nb_logpmf(n, shapes, rates, E), axis=1)


def grid_log_likelihoods(n, E, support):
    """C x K matrix of log Poisson(n_c; v_k E_c)."""
    n = np.asarray(n, dtype=np.float64)[:, None]
    E = np.asarray(E, dtype=np.float64)[:, None]
    return poisson_logpmf(n, np.asarray(support)[None, :] * E)


class CellData:
    """Flattened counts and baselines for fitting.

    ``n`` and ``E`` cover only the cells with ``E > 0``; ``mask`` marks them
    within the original ``shape``.
    """

    def __init__(self, counts, expected):
        counts = np.asarray(counts)
        expected = np.asarray(expected, dtype=np.float64)
        if counts.shape != expected.shape:
            raise ValueError("counts and expected counts must have the same shape")
        if (counts < 0).any() or (expected < 0).any():
            raise ValueError("counts and expected counts must be nonnegative")
        self.shape = counts.shape
        self.mask = expected > 0
        self.n = counts[self.mask].astype(np.float64).ravel()
        self.E = expected[self.mask].ravel()
        self.excluded = int((~self.mask).sum())

    @property
    def size(self):
        return self.n.size

    @property
    def ratios(self):
        return self.n / self.E


def cell_data(table, E=None) -> CellData:
    """Normalise ``(table, E)`` arguments of the fitters.

    ``table`` is a :class:`ContingencyTable` or an array of counts; ``E`` a
    :class:`BaselineMatrix`, an array, or ``None`` for the independence
    baseline of ``table``.
    """
    if isinstance(table, ContingencyTable):
        counts = table.counts
        if E is None:
            E = expected_baseline(table)
    else:
        counts = np.asarray(table)
        if E is None:
            raise ValueError("expected counts are required when counts are given as an array")
    if isinstance(E, BaselineMatrix):
        E = E.expected
    return CellData(counts, E)
