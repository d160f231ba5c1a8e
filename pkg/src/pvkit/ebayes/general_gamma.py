"""
Sparse overfitted gamma mixture prior ("general-gamma").

Starts from ``K`` gamma components (default 100) and lets a Dirichlet(a)
penalty with ``a < 1`` on the weights switch most of them off. Fitting is
expectation / conditional maximisation:

* E-step: component responsibilities of every cell.
* CM-1: weights. The Dirichlet log-density is unbounded on the simplex
  boundary, so it is smoothed as ``(a - 1) * sum_k log(w_k + eta)`` with
  ``eta`` equal to the activity threshold (1e-6). Its tangent minorant plus
  the usual EM bound gives a closed-form update up to one scalar root.
* CM-2: each component's (shape, rate) by a Newton step in log coordinates
  on its responsibility-weighted marginal log-likelihood, with step halving
  until that term does not decrease.

Both CM steps raise the same surrogate, so the penalised objective is
non-decreasing. From iteration 50 on, weights below the threshold are set to
exactly zero when doing so does not lower the objective.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import digamma, gammaln, logsumexp, polygamma, softmax

from .marginal import cell_data, nb_logpmf
from .priors import MixturePrior

__all__ = ["fit_general_gamma", "general_gamma_loglik", "ACTIVE_THRESHOLD"]

ACTIVE_THRESHOLD = 1e-6
PRUNE_AFTER = 50
_LOG_BOUNDS = (-9.0, 12.0)  # log shape and log rate
_MAX_STEP = 2.0
_MAX_HALVINGS = 10
_POLISH_EVERY = 50
_POLISH_MAXITER = 100


class _Counts:
    """Cells with their distinct counts, for caching gamma-function terms."""

    def __init__(self, n, E):
        self.n = n
        self.E = E
        self.uniq, self.inv = np.unique(n, return_inverse=True)
        self.logE = np.log(E)
        self.lognfact = gammaln(n + 1.0)

    def by_count(self, fn, shapes):
        """``fn(n + shape)`` for every cell/component via the distinct counts."""
        return fn(self.uniq[:, None] + shapes[None, :])[self.inv]

    def logpmf(self, shapes, rates):
        lg = self.by_count(gammaln, shapes)
        logden = np.log(self.E[:, None] + rates[None, :])
        return (
            lg
            - gammaln(shapes)[None, :]
            - self.lognfact[:, None]
            + shapes[None, :] * (np.log(rates)[None, :] - logden)
            + (self.n * self.logE)[:, None]
            - self.n[:, None] * logden
        )


def _penalty(weights, a, eta):
    return (a - 1.0) * float(np.log(weights + eta).sum())


def _objective(loglik, weights, a, eta):
    return loglik + _penalty(weights, a, eta)


def _update_weights(resp_sums, weights, a, eta):
    """Maximise sum_k n_k log w_k + sum_k d_k w_k over the simplex."""
    d = (a - 1.0) / (weights + eta)
    live = resp_sums > 0
    n, dl = resp_sums[live], d[live]
    new = np.zeros_like(weights)
    if abs(a - 1.0) < 1e-15:
        new[live] = n / n.sum()
        return new
    k = int(np.argmax(dl))
    top = dl[k]

    def excess(mu):
        return float(np.sum(n / (mu - dl))) - 1.0

    # excess is decreasing on (top, inf): positive just above top, and
    # nonpositive once mu - top reaches the total responsibility
    lo = top + 0.5 * min(n[k], 1.0)
    hi = top + n.sum()
    if excess(hi) >= 0:
        mu = hi
    else:
        mu = brentq(excess, lo, hi, xtol=1e-14 * max(1.0, abs(top)), rtol=1e-15, maxiter=500)
    new[live] = n / (mu - dl)
    return new / new.sum()


def _cm_shape_rate(data, resp, shapes, rates, logf):
    """One guarded Newton step per component; returns new params and log f."""
    n = data.n[:, None]
    E = data.E[:, None]
    a = shapes[None, :]
    b = rates[None, :]
    denom = E + b
    dig = data.by_count(digamma, shapes) - digamma(shapes)[None, :]
    tri = data.by_count(lambda x: polygamma(1, x), shapes) - polygamma(1, shapes)[None, :]
    g_a = (resp * (dig + np.log(b) - np.log(denom))).sum(0)
    g_b = (resp * (a / b - (a + n) / denom)).sum(0)
    h_aa = (resp * tri).sum(0)
    h_bb = (resp * (-a / b**2 + (a + n) / denom**2)).sum(0)
    h_ab = (resp * (1.0 / b - 1.0 / denom)).sum(0)

    # log coordinates u = log shape, v = log rate
    gu, gv = shapes * g_a, rates * g_b
    huu = shapes**2 * h_aa + gu
    hvv = rates**2 * h_bb + gv
    huv = shapes * rates * h_ab
    det = huu * hvv - huv**2
    newton = (huu < 0) & (det > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        su = np.where(newton, -(hvv * gu - huv * gv) / det, 0.0)
        sv = np.where(newton, -(-huv * gu + huu * gv) / det, 0.0)
    scale = np.abs(huu) + np.abs(hvv) + 1e-12
    su = np.where(newton, su, gu / scale)
    sv = np.where(newton, sv, gv / scale)
    norm = np.hypot(su, sv)
    shrink = np.where(norm > _MAX_STEP, _MAX_STEP / np.maximum(norm, 1e-300), 1.0)
    su, sv = su * shrink, sv * shrink

    u0, v0 = np.log(shapes), np.log(rates)
    base = (resp * logf).sum(0)
    t = np.ones_like(shapes)
    # components carrying almost no cells are left where they are
    pending = (resp.sum(0) > 1e-8 * resp.shape[0]) & (np.hypot(su, sv) > 1e-12)
    out_s, out_r, out_f = shapes.copy(), rates.copy(), logf.copy()
    for _ in range(_MAX_HALVINGS):
        if not pending.any():
            break
        idx = np.flatnonzero(pending)
        u = np.clip(u0[idx] + t[idx] * su[idx], *_LOG_BOUNDS)
        v = np.clip(v0[idx] + t[idx] * sv[idx], *_LOG_BOUNDS)
        trial_f = data.logpmf(np.exp(u), np.exp(v))
        value = (resp[:, idx] * trial_f).sum(0)
        ok = value >= base[idx]
        good = idx[ok]
        out_s[good] = np.exp(u[ok])
        out_r[good] = np.exp(v[ok])
        out_f[:, good] = trial_f[:, ok]
        pending[good] = False
        t[idx[~ok]] *= 0.5
    return out_s, out_r, out_f


def _log_mixture(weights, logf):
    act = weights > 0
    terms = np.log(weights[act])[None, :] + logf[:, act]
    top = terms.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True))).ravel()


def _prune(weights, logf, obj, a, eta):
    """Zero the weights below the activity threshold if that does not hurt."""
    small = (weights > 0) & (weights < ACTIVE_THRESHOLD)
    if not small.any() or not ((weights > 0) & ~small).any():
        return None
    trial = np.where(small, 0.0, weights)
    trial /= trial.sum()
    logmix = _log_mixture(trial, logf)
    ll = float(logmix.sum())
    trial_obj = _objective(ll, trial, a, eta)
    if trial_obj < obj:
        return None
    logf[:, small] = -np.inf
    return trial, logmix, ll, trial_obj


def _polish(data, shapes, rates, weights, a, eta):
    """L-BFGS-B on the penalised objective over the active components."""
    act = np.flatnonzero(weights > 0)
    m = act.size
    fixed = (a - 1.0) * (weights.size - m) * np.log(eta)
    n = data.n[:, None]
    E = data.E[:, None]

    def negobj(x):
        u, v, z = x[:m], x[m:2 * m], x[2 * m:]
        sh, ra = np.exp(u), np.exp(v)
        w = softmax(z)
        terms = np.log(np.maximum(w, 1e-300))[None, :] + data.logpmf(sh, ra)
        ll = logsumexp(terms, axis=1)
        resp = np.exp(terms - ll[:, None])
        denom = E + ra[None, :]
        dig = data.by_count(digamma, sh) - digamma(sh)[None, :]
        gu = sh * (resp * (dig + np.log(ra)[None, :] - np.log(denom))).sum(0)
        gv = (resp * (sh[None, :] - ra[None, :] * (sh[None, :] + n) / denom)).sum(0)
        q = w / (w + eta)
        gz = (resp - w[None, :]).sum(0) + (a - 1.0) * (q - w * q.sum())
        value = ll.sum() + (a - 1.0) * np.log(w + eta).sum() + fixed
        return -value, -np.concatenate([gu, gv, gz])

    z0 = np.log(weights[act])
    z0 -= z0.max()
    x0 = np.concatenate([np.log(shapes[act]), np.log(rates[act]), np.maximum(z0, -40.0)])
    bounds = [_LOG_BOUNDS] * (2 * m) + [(-40.0, 0.0)] * m
    try:
        res = minimize(negobj, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": _POLISH_MAXITER, "ftol": 1e-15, "gtol": 1e-9})
    except (ValueError, FloatingPointError):
        return None
    if not np.isfinite(res.fun):
        return None
    new_s, new_r, new_w = shapes.copy(), rates.copy(), np.zeros_like(weights)
    new_s[act] = np.exp(res.x[:m])
    new_r[act] = np.exp(res.x[m:2 * m])
    new_w[act] = softmax(res.x[2 * m:])
    keep = new_w > 0
    logf = np.full((data.n.size, weights.size), -np.inf)
    logf[:, keep] = data.logpmf(new_s[keep], new_r[keep])
    return new_s, new_r, new_w, logf


def _merged(shapes, rates, weights, k, j):
    """Moment-matched gamma replacing components ``k`` and ``j``."""
    w = weights[[k, j]]
    m = shapes[[k, j]] / rates[[k, j]]
    v = shapes[[k, j]] / rates[[k, j]] ** 2
    wt = w.sum()
    mean = (w * m).sum() / wt
    var = (w * (v + m * m)).sum() / wt - mean * mean
    var = max(var, mean * mean * 1e-8)
    return mean * mean / var, mean / var, wt


def _removal_candidates(shapes, rates, weights, k):
    """Trial parameter sets with component ``k`` merged into its nearest neighbour or dropped."""
    act = np.flatnonzero(weights > 0)
    others = act[act != k]
    logm = np.log(shapes / rates)
    j = others[np.argmin(np.abs(logm[others] - logm[k]))]
    s, r, w = shapes.copy(), rates.copy(), weights.copy()
    s[j], r[j], w[j] = _merged(shapes, rates, weights, k, j)
    w[k] = 0.0
    yield s, r, w / w.sum()
    w = weights.copy()
    w[k] = 0.0
    yield shapes, rates, w / w.sum()


def _try_deletions(data, shapes, rates, weights, obj, a, eta):
    """Remove one active component (smallest weight first) if that pays off.

    The component is first merged into its nearest neighbour by moment
    matching, then, failing that, dropped outright; each trial is refined by
    the joint polish before comparison.
    """
    act = np.flatnonzero(weights > 0)
    if act.size < 2:
        return None
    for k in act[np.argsort(weights[act])]:
        for t_shapes, t_rates, t_weights in _removal_candidates(shapes, rates, weights, k):
            t_shapes = np.clip(t_shapes, np.exp(_LOG_BOUNDS[0]), np.exp(_LOG_BOUNDS[1]))
            t_rates = np.clip(t_rates, np.exp(_LOG_BOUNDS[0]), np.exp(_LOG_BOUNDS[1]))
            polished = _polish(data, t_shapes, t_rates, t_weights, a, eta)
            if polished is None:
                continue
            p_shapes, p_rates, p_weights, p_logf = polished
            p_mix = _log_mixture(p_weights, p_logf)
            p_ll = float(p_mix.sum())
            p_obj = _objective(p_ll, p_weights, a, eta)
            if p_obj > obj:
                return p_shapes, p_rates, p_weights, p_logf, p_mix, p_ll, p_obj
    return None


def _initial_components(ratios, K):
    levels = (np.arange(K) + 0.5) / K
    means = np.quantile(ratios, levels)
    floor = 1e-3
    means = np.maximum(means, floor)
    # spread tied quantiles (e.g. many zero ratios) on a log scale
    means = np.sort(means)
    for k in range(1, K):
        if means[k] <= means[k - 1] * 1.0001:
            means[k] = means[k - 1] * 1.05
    shapes = np.full(K, 2.0)
    return shapes, shapes / means


def general_gamma_loglik(prior: MixturePrior, table, E=None) -> float:
    cells = cell_data(table, E)
    terms = np.log(prior.weights)[None, :] + nb_logpmf(
        cells.n[:, None], prior.shapes, prior.rates, cells.E[:, None]
    )
    return float(logsumexp(terms, axis=1).sum())


def fit_general_gamma(
    table,
    E=None,
    K: int = 100,
    dirichlet_alpha: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 2000,
    init=None,
) -> MixturePrior:
    """Fit the sparse overfitted gamma mixture.

    Parameters
    ----------
    table, E
        Counts and expected counts, as for the other fitters.
    K : int
        Number of components to start from.
    dirichlet_alpha : float
        Dirichlet concentration, in (0, 1]; smaller is sparser.
    tol : float
        Stop when the penalised objective improves by less than ``tol``
        relative to its magnitude.
    init : tuple of arrays, optional
        ``(shapes, rates, weights)`` to start from instead of the
        quantile-based default.

    Returns
    -------
    MixturePrior
        The components with nonzero weight. ``fit_info`` has the objective
        trace, the unpenalised log-likelihood, the number of active
        components and a ``converged`` flag.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 0.0 < dirichlet_alpha <= 1.0:
        raise ValueError("dirichlet_alpha must lie in (0, 1]")
    cells = cell_data(table, E)
    if cells.size == 0:
        raise ValueError("no cells with positive expected count")
    data = _Counts(cells.n, cells.E)
    a, eta = float(dirichlet_alpha), ACTIVE_THRESHOLD

    if init is None:
        shapes, rates = _initial_components(cells.ratios, K)
        weights = np.full(K, 1.0 / K)
    else:
        shapes, rates, weights = (np.asarray(x, dtype=np.float64).copy() for x in init)
        weights = weights / weights.sum()
        K = shapes.size

    active = weights > 0
    logf = np.full((data.n.size, K), -np.inf)
    logf[:, active] = data.logpmf(shapes[active], rates[active])

    logmix = _log_mixture(weights, logf)
    loglik = float(logmix.sum())
    obj = _objective(loglik, weights, a, eta)
    trace = [obj]
    converged, pruned_at, polished_at, deleted_at = False, [], [], []
    last_polish = -_POLISH_EVERY
    it = 0
    for it in range(1, max_iter + 1):
        act = np.flatnonzero(weights > 0)
        resp = np.exp(np.log(weights[act])[None, :] + logf[:, act] - logmix[:, None])
        new_w = np.zeros(K)
        new_w[act] = _update_weights(resp.sum(0), weights[act], a, eta)
        s, r, lf = _cm_shape_rate(data, resp, shapes[act], rates[act], logf[:, act])
        shapes[act], rates[act], logf[:, act] = s, r, lf
        logf[:, act[new_w[act] == 0]] = -np.inf
        weights = new_w

        logmix = _log_mixture(weights, logf)
        loglik = float(logmix.sum())
        new_obj = _objective(loglik, weights, a, eta)
        if it >= PRUNE_AFTER:
            pruned = _prune(weights, logf, new_obj, a, eta)
            if pruned is not None:
                weights, logmix, loglik, new_obj = pruned
                pruned_at.append(it)

        gain = abs(new_obj - obj) / max(1.0, abs(new_obj))
        done = gain <= tol
        if not done and it >= PRUNE_AFTER and it - last_polish >= _POLISH_EVERY:
            # EM-type steps crawl once components overlap; a joint
            # quasi-Newton move is kept only when it raises the objective
            last_polish = it
            polished = _polish(data, shapes, rates, weights, a, eta)
            if polished is not None:
                p_shapes, p_rates, p_weights, p_logf = polished
                p_mix = _log_mixture(p_weights, p_logf)
                p_ll = float(p_mix.sum())
                p_obj = _objective(p_ll, p_weights, a, eta)
                if p_obj > new_obj:
                    shapes, rates, weights, logf = p_shapes, p_rates, p_weights, p_logf
                    logmix, loglik, new_obj = p_mix, p_ll, p_obj
                    pruned = _prune(weights, logf, new_obj, a, eta)
                    if pruned is not None:
                        weights, logmix, loglik, new_obj = pruned
                    polished_at.append(it)

        if done:
            # removing a component can raise the penalised objective even
            # when no small step does; resume ECM after a successful one
            deleted = _try_deletions(data, shapes, rates, weights, new_obj, a, eta)
            if deleted is not None:
                shapes, rates, weights, logf, logmix, loglik, new_obj = deleted
                deleted_at.append(it)
                done = False

        trace.append(new_obj)
        obj = new_obj
        if done:
            converged = True
            break

    keep = weights > 0
    order = np.argsort(shapes[keep] / rates[keep])
    w = weights[keep][order]
    return MixturePrior.gamma_mixture(
        shapes[keep][order],
        rates[keep][order],
        w / w.sum(),
        method="general-gamma",
        K=K,
        dirichlet_alpha=a,
        iterations=it,
        converged=converged,
        objective=obj,
        loglik=loglik,
        objective_trace=trace,
        active_components=int((w > ACTIVE_THRESHOLD).sum()),
        prune_iterations=pruned_at,
        polish_iterations=polished_at,
        deletion_iterations=deleted_at,
        excluded_cells=cells.excluded,
    )
