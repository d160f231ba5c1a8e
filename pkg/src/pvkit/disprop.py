"""Proportional reporting ratio (PRR) and reporting odds ratio (ROR)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tables import ContingencyTable

__all__ = [
    "Z95",
    "DisproportionalityResult",
    "prr",
    "ror",
    "flag_signals",
    "parse_threshold_rule",
]

Z95 = 1.96


@dataclass(frozen=True, eq=False)
class DisproportionalityResult:
    """Cell-wise estimates for one method; undefined cells hold NaN."""

    method: str
    estimate: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    defined: np.ndarray

    @property
    def shape(self):
        return self.estimate.shape

    def cell(self, i, j):
        """``(estimate, ci_low, ci_high, defined)`` for one cell."""
        return (
            float(self.estimate[i, j]),
            float(self.ci_low[i, j]),
            float(self.ci_high[i, j]),
            bool(self.defined[i, j]),
        )


def _cells(table):
    n = table.counts.astype(np.float64)
    ni = table.row_totals.astype(np.float64)[:, None]
    nj = table.col_totals.astype(np.float64)[None, :]
    total = float(table.grand_total)
    a = n
    b = ni - n
    c = nj - n
    d = total - ni - nj + n
    return a, b, c, d


def _finish(method, log_est, var, defined):
    sd = np.sqrt(np.where(defined, var, np.nan))
    est = np.where(defined, np.exp(log_est), np.nan)
    low = np.where(defined, np.exp(log_est - Z95 * sd), np.nan)
    high = np.where(defined, np.exp(log_est + Z95 * sd), np.nan)
    return DisproportionalityResult(method, est, low, high, defined)


def prr(table: ContingencyTable) -> DisproportionalityResult:
    """PRR with a log-scale 95% interval.

    A cell is undefined when N_ij = 0, N_.j - N_ij = 0, or the AE row covers
    the whole table (no "other AEs" mass).
    """
    a, b, c, d = _cells(table)
    rows = a + b
    others = c + d
    defined = (a > 0) & (c > 0) & (rows > 0) & (others > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_est = np.log(a) - np.log(rows) - np.log(c) + np.log(others)
        var = 1.0 / a - 1.0 / rows + 1.0 / c - 1.0 / others
    return _finish("prr", log_est, var, defined)


def ror(table: ContingencyTable) -> DisproportionalityResult:
    """ROR with a log-scale 95% interval (variance 1/a + 1/b + 1/c + 1/d).

    Undefined whenever any of the four 2x2 cells is zero.
    """
    a, b, c, d = _cells(table)
    defined = (a > 0) & (b > 0) & (c > 0) & (d > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_est = np.log(a) - np.log(b) - np.log(c) + np.log(d)
        var = 1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d
    return _finish("ror", log_est, var, defined)


_RULE_FIELDS = {"estimate": "estimate", "est": "estimate", "ci_low": "ci_low", "ci_high": "ci_high"}


def parse_threshold_rule(rule: str):
    """Parse ``'estimate>2'`` or ``'ci_low>1'`` into ``(field, threshold)``."""
    field, sep, value = rule.replace(" ", "").partition(">")
    if not sep or field.lower() not in _RULE_FIELDS:
        raise ValueError(f"unsupported threshold rule {rule!r}; use 'estimate>t' or 'ci_low>t'")
    return _RULE_FIELDS[field.lower()], float(value)


def flag_signals(results: DisproportionalityResult, threshold_rule="ci_low>1") -> np.ndarray:
    """Boolean signal matrix; undefined cells are never flagged."""
    if isinstance(threshold_rule, str):
        field, threshold = parse_threshold_rule(threshold_rule)
    else:
        field, threshold = threshold_rule
    values = getattr(results, field)
    with np.errstate(invalid="ignore"):
        return results.defined & (values > threshold)
