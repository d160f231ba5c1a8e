"""Per-cell posterior of the signal strength and rule-based signal calls."""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincc, gammaincinv

from ..tables import BaselineMatrix, ContingencyTable, expected_baseline
from .marginal import nb_logpmf, poisson_logpmf
from .priors import DISCRETE_GRID, GAMMA_MIXTURE, EfronPrior, MixturePrior

__all__ = [
    "EPSILON",
    "CUTOFF",
    "PosteriorSummary",
    "posterior_cell",
    "posterior_summaries",
    "EbRule",
    "parse_eb_rule",
    "EbSignalTable",
    "eb_signal_table",
]

EPSILON = 0.001
CUTOFF = 0.95
QUANTILE_TOL = 1e-10


def _normalise_log(logw, axis=-1):
    logw = np.asarray(logw, dtype=np.float64)
    top = np.max(logw, axis=axis, keepdims=True)
    w = np.exp(logw - top)
    return w / w.sum(axis=axis, keepdims=True)


def _as_prior(prior):
    if isinstance(prior, EfronPrior):
        return prior.as_discrete()
    if not isinstance(prior, MixturePrior):
        raise TypeError("prior must be a MixturePrior or EfronPrior")
    return prior


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Posterior of the signal strength of one cell.

    ``kind`` says whether the posterior is a gamma mixture (``shapes``,
    ``rates``, ``weights``) or a grid distribution (``support``, ``masses``).
    ``prior_only`` marks cells with ``E = 0``, whose posterior is the prior.
    """

    kind: str
    N: int
    E: float
    median: float
    q05: float
    q95: float
    prob_signal: float
    mean: float
    epsilon: float = EPSILON
    prior_only: bool = False
    shapes: np.ndarray | None = None
    rates: np.ndarray | None = None
    weights: np.ndarray | None = None
    support: np.ndarray | None = None
    masses: np.ndarray | None = None

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == GAMMA_MIXTURE:
            return np.sum(
                self.weights * gammainc(self.shapes, self.rates * np.maximum(x, 0.0)[..., None]),
                axis=-1,
            )
        return np.sum(self.masses * (self.support <= x[..., None]), axis=-1)

    def quantile(self, p: float) -> float:
        if self.kind == GAMMA_MIXTURE:
            return float(_mixture_quantiles(self.shapes[None], self.rates[None], self.weights[None], p)[0])
        return float(_grid_quantiles(self.support, self.masses[None], p)[0])


# --- vectorised kernels; leading axis indexes cells ------------------------


def _mixture_quantiles(shapes, rates, weights, p):
    """Quantile ``p`` of each row's gamma mixture by bisection on the CDF."""
    comp_q = gammaincinv(shapes, p) / rates
    lo = comp_q.min(axis=1)
    hi = comp_q.max(axis=1)
    single = (weights > 0).sum(axis=1) == 1
    exact = np.where(single, np.sum(np.where(weights > 0, comp_q, 0.0), axis=1), np.nan)
    todo = ~single & (hi - lo > QUANTILE_TOL * np.maximum(1.0, hi))
    lo, hi = lo.copy(), hi.copy()
    while todo.any():
        mid = 0.5 * (lo[todo] + hi[todo])
        cdf = np.sum(weights[todo] * gammainc(shapes[todo], rates[todo] * mid[:, None]), axis=1)
        below = cdf < p
        idx = np.flatnonzero(todo)
        lo[idx[below]] = mid[below]
        hi[idx[~below]] = mid[~below]
        todo[idx] = hi[idx] - lo[idx] > QUANTILE_TOL * np.maximum(1.0, hi[idx])
    out = 0.5 * (lo + hi)
    return np.where(single, exact, out)


def _grid_quantiles(support, masses, p):
    """Smallest support point whose posterior CDF reaches ``p``."""
    cdf = np.cumsum(masses, axis=1)
    idx = np.argmax(cdf >= p - 1e-12, axis=1)
    return support[idx]


def _gamma_posterior(prior, N, E):
    logw = np.log(prior.weights)[None, :] + nb_logpmf(
        N[:, None], prior.shapes[None, :], prior.rates[None, :], E[:, None]
    )
    weights = _normalise_log(logw)
    shapes = prior.shapes[None, :] + N[:, None]
    rates = prior.rates[None, :] + E[:, None]
    return shapes, rates, weights


def _grid_posterior(prior, N, E):
    with np.errstate(divide="ignore"):
        logm = np.log(prior.masses)[None, :] + poisson_logpmf(
            N[:, None], prior.support[None, :] * E[:, None]
        )
    return _normalise_log(logm)


def posterior_summaries(prior, N, E, epsilon: float = EPSILON) -> dict:
    """Vectorised posterior summaries for arrays of counts and baselines.

    Returns a dict of 1-d arrays: ``median``, ``q05``, ``q95``,
    ``prob_signal``, ``mean`` and ``prior_only`` (cells with ``E = 0``,
    summarised by the prior itself).
    """
    prior = _as_prior(prior)
    N = np.asarray(N, dtype=np.float64).ravel()
    E = np.asarray(E, dtype=np.float64).ravel()
    if N.shape != E.shape:
        raise ValueError("N and E must have the same shape")
    if (N < 0).any() or (E < 0).any():
        raise ValueError("N and E must be nonnegative")
    prior_only = E == 0
    # the prior is the posterior under N = 0, E = 0
    N = np.where(prior_only, 0.0, N)
    threshold = 1.0 + epsilon
    if prior.kind == GAMMA_MIXTURE:
        shapes, rates, weights = _gamma_posterior(prior, N, E)
        out = {
            "median": _mixture_quantiles(shapes, rates, weights, 0.5),
            "q05": _mixture_quantiles(shapes, rates, weights, 0.05),
            "q95": _mixture_quantiles(shapes, rates, weights, 0.95),
            "prob_signal": np.sum(weights * gammaincc(shapes, rates * threshold), axis=1),
            "mean": np.sum(weights * shapes / rates, axis=1),
        }
    else:
        masses = _grid_posterior(prior, N, E)
        s = prior.support
        out = {
            "median": _grid_quantiles(s, masses, 0.5),
            "q05": _grid_quantiles(s, masses, 0.05),
            "q95": _grid_quantiles(s, masses, 0.95),
            "prob_signal": masses[:, s > threshold].sum(axis=1),
            "mean": masses @ s,
        }
    out["prob_signal"] = np.clip(out["prob_signal"], 0.0, 1.0)
    out["prior_only"] = prior_only
    return out


def posterior_cell(prior, N, E, epsilon: float = EPSILON) -> PosteriorSummary:
    """Posterior of the signal strength for one cell with count ``N``."""
    if N < 0 or int(N) != N:
        raise ValueError("N must be a nonnegative integer")
    if E < 0:
        raise ValueError("E must be nonnegative")
    prior = _as_prior(prior)
    s = posterior_summaries(prior, [N], [E], epsilon)
    common = dict(
        N=int(N),
        E=float(E),
        median=float(s["median"][0]),
        q05=float(s["q05"][0]),
        q95=float(s["q95"][0]),
        prob_signal=float(s["prob_signal"][0]),
        mean=float(s["mean"][0]),
        epsilon=epsilon,
        prior_only=bool(s["prior_only"][0]),
    )
    n_eff = np.array([0.0 if E == 0 else float(N)])
    if prior.kind == GAMMA_MIXTURE:
        shapes, rates, weights = _gamma_posterior(prior, n_eff, np.array([float(E)]))
        return PosteriorSummary(GAMMA_MIXTURE, shapes=shapes[0], rates=rates[0], weights=weights[0], **common)
    masses = _grid_posterior(prior, n_eff, np.array([float(E)]))
    return PosteriorSummary(DISCRETE_GRID, support=prior.support, masses=masses[0], **common)


# --- decision rules ----------------------------------------------------------

_MEASURES = {
    "prob": "prob_signal",
    "prob_signal": "prob_signal",
    "1-prob": "one_minus_prob",
    "eb05": "q05",
    "q05": "q05",
    "median": "median",
    "eb50": "median",
    "eb95": "q95",
    "q95": "q95",
    "mean": "mean",
}
_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}
_RULE = re.compile(r"^\s*([a-z0-9_\-]+?)\s*(>=|<=|>|<)\s*([-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class EbRule:
    measure: str
    op: str
    threshold: float
    text: str

    def apply(self, summaries: dict) -> np.ndarray:
        if self.measure == "one_minus_prob":
            values = 1.0 - summaries["prob_signal"]
        else:
            values = summaries[self.measure]
        return _OPS[self.op](values, self.threshold)


def parse_eb_rule(rule: str) -> EbRule:
    """Parse rules such as ``prob>0.95``, ``1-prob<0.05`` or ``eb05>2``."""
    m = _RULE.match(rule.lower().replace(" ", ""))
    if not m or m.group(1) not in _MEASURES:
        raise ValueError(
            f"unrecognised rule {rule!r}; expected <measure><op><number> with measure in "
            + ", ".join(sorted(_MEASURES))
        )
    try:
        threshold = float(m.group(3))
    except ValueError:
        raise ValueError(f"bad threshold in rule {rule!r}") from None
    return EbRule(_MEASURES[m.group(1)], m.group(2), threshold, rule)


@dataclass(frozen=True, eq=False)
class EbSignalTable:
    """Posterior summaries and decisions laid out like the contingency table."""

    N: np.ndarray
    E: np.ndarray
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    prob_signal: np.ndarray
    mean: np.ndarray
    decision: np.ndarray
    prior_only: np.ndarray
    rule: str
    epsilon: float
    extra: dict = field(default_factory=dict)


def eb_signal_table(prior, table, E=None, rule: str = "prob>0.95", epsilon: float = EPSILON) -> EbSignalTable:
    """Posterior summaries for every cell and the decision under ``rule``.

    Cells with ``E = 0`` get prior-based summaries and are never signals.
    """
    parsed = parse_eb_rule(rule)
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
    E = np.asarray(E, dtype=np.float64)
    if E.shape != counts.shape:
        raise ValueError("counts and expected counts must have the same shape")
    s = posterior_summaries(prior, counts, E, epsilon)
    decision = parsed.apply(s) & ~s["prior_only"]
    shape = counts.shape
    return EbSignalTable(
        N=np.asarray(counts).copy(),
        E=E.copy(),
        median=s["median"].reshape(shape),
        q05=s["q05"].reshape(shape),
        q95=s["q95"].reshape(shape),
        prob_signal=s["prob_signal"].reshape(shape),
        mean=s["mean"].reshape(shape),
        decision=decision.reshape(shape),
        prior_only=s["prior_only"].reshape(shape),
        rule=rule,
        epsilon=epsilon,
    )
