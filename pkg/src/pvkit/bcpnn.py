"""BCPNN information component with a normal posterior approximation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTable
from .tables import ContingencyTable

__all__ = ["IcResult", "estimate_beta", "ic", "bcpnn_signals"]

_LOG2 = np.log(2.0)


@dataclass(frozen=True, eq=False)
class IcResult:
    """Per-cell IC mean and variance (log2 units); ``ic025 = mean - 1.96 sd``."""

    ic_mean: np.ndarray
    ic_variance: np.ndarray
    ic025: np.ndarray
    beta_hat: np.ndarray


def _beta(n, ni, nj):
    # Beta(1, beta) prior mean 1/(1+beta) matched to ((ni+1)/(n+2)) * ((nj+1)/(n+2)).
    return (n + 2.0) ** 2 / ((ni + 1.0) * (nj + 1.0)) - 1.0


def estimate_beta(table: ContingencyTable, i: int, j: int) -> float:
    n = float(table.grand_total)
    return float(_beta(n, float(table.row_totals[i]), float(table.col_totals[j])))


def ic(table: ContingencyTable) -> IcResult:
    n = float(table.grand_total)
    if n <= 0:
        raise DegenerateTable("grand total is zero")
    nij = table.counts.astype(np.float64)
    ni = table.row_totals.astype(np.float64)[:, None]
    nj = table.col_totals.astype(np.float64)[None, :]
    beta = _beta(n, ni, nj) * np.ones_like(nij)

    mean = np.log2((nij + 1.0) * (n + 2.0) ** 2 / ((n + beta) * (ni + 1.0) * (nj + 1.0)))
    var = (
        (n - nij + beta - 1.0) / ((nij + 1.0) * (1.0 + n + beta))
        + (n - ni + 1.0) / ((ni + 1.0) * (n + 3.0))
        + (n - nj + 1.0) / ((nj + 1.0) * (n + 3.0))
    ) / _LOG2**2
    return IcResult(mean, var, mean - 1.96 * np.sqrt(var), beta)


def bcpnn_signals(results: IcResult, threshold: float = 0.0) -> np.ndarray:
    """Flag cells whose lower 2.5% IC bound exceeds ``threshold``."""
    return results.ic025 > threshold
