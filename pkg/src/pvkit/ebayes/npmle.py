"""Discrete nonparametric prior on a fixed grid (NPMLE) and grid selection."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import GridFailure
from .marginal import cell_data, grid_log_likelihoods
from .priors import MixturePrior

__all__ = ["select_grid", "fit_km", "km_loglik", "GRID_FLOOR"]

# Smallest grid point; stands in for a structural-zero signal strength.
GRID_FLOOR = 1e-4


def select_grid(table, E=None, K: int = 120, upper_quantile=0.999, safety=2.0) -> np.ndarray:
    """Histogram-equalised grid of signal strengths.

    Points sit at equally spaced quantiles of the observed ratios N/E,
    clipped to ``[max(1e-4, min ratio), safety * q_0.999]``. The floor point
    (representing 0), the value 1 and the upper end are always included, so
    the grid can hold fewer than ``K`` points when quantiles coincide.
    """
    if K < 10:
        raise ValueError("K must be at least 10")
    cells = cell_data(table, E)
    if cells.size == 0:
        raise GridFailure("no cells with positive expected count")
    ratios = cells.ratios
    lo = max(GRID_FLOOR, float(ratios.min()))
    hi = safety * float(np.quantile(ratios, upper_quantile))
    hi = max(hi, 1.0, lo)
    levels = np.linspace(0.0, 1.0, K - 2)
    inner = np.clip(np.quantile(ratios, levels), lo, hi)
    grid = np.unique(np.concatenate([[GRID_FLOOR, lo, 1.0, hi], inner]))
    # merge points closer than floating noise
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * grid[1:]])
    return grid[keep]


def _scaled_likelihoods(cells, support):
    logp = grid_log_likelihoods(cells.n, cells.E, support)
    shift = logp.max(axis=1, keepdims=True)
    return np.exp(logp - shift), shift.ravel()


def km_loglik(prior: MixturePrior, table, E=None) -> float:
    cells = cell_data(table, E)
    with np.errstate(divide="ignore"):
        logp = grid_log_likelihoods(cells.n, cells.E, prior.support) + np.log(prior.masses)
    return float(logsumexp(logp, axis=1).sum())


def _newton_proposal(lik, g):
    """Newton step for the masses on their current support, kept inside the simplex."""
    act = g > 1e-12
    L = lik[:, act]
    inv = 1.0 / (L @ g[act])
    grad = L.T @ inv
    B = L * inv[:, None]
    neg_h = B.T @ B
    m = int(act.sum())
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = neg_h
    kkt[:m, m] = kkt[m, :m] = 1.0
    try:
        sol = np.linalg.solve(kkt, np.append(grad, 0.0))
    except np.linalg.LinAlgError:
        return None
    d = sol[:m]
    if not np.all(np.isfinite(d)):
        return None
    ga = g[act]
    neg = d < 0
    t = 1.0
    if neg.any():
        t = min(1.0, 0.99 * float(np.min(-ga[neg] / d[neg])))
    out = g.copy()
    out[act] = np.maximum(ga + t * d, 0.0)
    return out / out.sum()


def fit_km(table, E=None, support=None, tol: float = 1e-9, max_iter: int = 5000) -> MixturePrior:
    """NPMLE of grid masses by EM (multiplicative updates).

    Each step sets ``g_k <- g_k * mean_c(P_ck / f_c)``, which cannot lower the
    marginal log-likelihood. Stops when the relative improvement drops below
    ``tol`` or after ``max_iter`` steps.
    """
    cells = cell_data(table, E)
    if support is None:
        support = select_grid(table, E)
    support = np.asarray(support, dtype=np.float64)
    if support.ndim != 1 or support.size == 0 or (support <= 0).any() or (np.diff(support) <= 0).any():
        raise ValueError("support must be positive and strictly increasing")
    if support.size == 1:
        point = MixturePrior.discrete(support, [1.0])
        ll = km_loglik(point, table, E)
        return MixturePrior.discrete(
            support, [1.0], method="km", iterations=0, converged=True,
            loglik=ll, objective_trace=[ll], excluded_cells=cells.excluded,
        )

    lik, shift = _scaled_likelihoods(cells, support)
    offset = float(shift.sum())

    def em(g):
        g = g * (lik.T @ (1.0 / (lik @ g))) / lik.shape[0]
        return g / g.sum()

    def objective(g):
        return float(np.log(lik @ g).sum()) + offset

    g = np.full(support.size, 1.0 / support.size)
    obj = objective(g)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # Two EM steps, then squared-extrapolation (SQUAREM) and Newton
        # proposals, each kept only when it beats the current candidate.
        g1 = em(g)
        g2 = em(g1)
        candidate, cand_obj = g2, objective(g2)
        r = g1 - g
        v = g2 - g1 - r
        vnorm = np.linalg.norm(v)
        if vnorm > 0:
            step = -np.linalg.norm(r) / vnorm
            if step < -1.0:
                proposal = np.maximum(g - 2.0 * step * r + step * step * v, 0.0)
                if proposal.sum() > 0:
                    proposal = em(proposal / proposal.sum())
                    prop_obj = objective(proposal)
                    if prop_obj > cand_obj:
                        candidate, cand_obj = proposal, prop_obj
        newton = _newton_proposal(lik, candidate)
        if newton is not None:
            newton = em(newton)
            newton_obj = objective(newton)
            if newton_obj > cand_obj:
                candidate, cand_obj = newton, newton_obj
        g = candidate
        trace.append(cand_obj)
        done = abs(cand_obj - obj) <= tol * max(1.0, abs(cand_obj))
        obj = cand_obj
        if done:
            converged = True
            break
    return MixturePrior.discrete(
        support, g, method="km", iterations=it, converged=converged,
        loglik=obj, objective_trace=trace, excluded_cells=cells.excluded,
    )
