"""
Likelihood ratio tests for AE-drug association with Monte Carlo nulls.

Statistics are kept on the log scale. For the multinomial-null tests the
row marginals, drug total and grand total are held at their observed values
in every replicate. Replicates are generated in fixed blocks with one keyed
stream per (drug, block), so p-values depend only on ``(seed, reps)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from . import rng
from .errors import DegenerateMarginals, ImpossibleBaseline
from .tables import ContingencyTable, expected_baseline

__all__ = [
    "LrtRates",
    "TestResult",
    "ZipNullFit",
    "lrt_rates",
    "log_lr_cell",
    "log_lr_column",
    "mlr_drug",
    "mc_null_pvalue",
    "ext_mlr",
    "fit_zip_p0",
    "fit_zip_null",
    "pseudo_lr_cells",
    "pseudo_lrt",
]

# Stream domains keep the multinomial and parametric-bootstrap draws apart.
_MULTINOMIAL = 0
_BOOTSTRAP = 1
# drug key for whole-table bootstrap streams; column keys are >= 0
_WHOLE_TABLE = 2**31 - 1

# Replicate statistics within this relative distance of the observed value
# count as ties (>=).
_TIE_RTOL = 1e-10

P0_UPPER = 1.0 - 1e-6


@dataclass(frozen=True)
class LrtRates:
    p_ij: float
    q_ij: float
    p_0j: float


@dataclass(eq=False)
class TestResult:
    """Outcome of one Monte Carlo calibrated test.

    ``cell_statistics`` and ``cell_p_values`` hold the per-AE statistics of
    the tested drug and their p-values against the null distribution of the
    maximum, which is what per-pair signal calls are based on.
    """

    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    decision: bool
    replications: int
    seed: int
    argmax_ae: int | None = None
    drug_index: int | None = None
    model: str = "lrt"
    alpha: float = 0.05
    cell_statistics: np.ndarray | None = None
    cell_p_values: np.ndarray | None = None
    null_statistics: np.ndarray | None = field(default=None, repr=False)

    @property
    def cell_decisions(self):
        if self.cell_p_values is None:
            return None
        return self.cell_p_values < self.alpha


@dataclass(frozen=True)
class ZipNullFit:
    p0_hat: float
    loglik: float
    degenerate: bool = False
    note: str = ""


def _marginals(table):
    return (
        table.row_totals.astype(np.int64),
        table.col_totals.astype(np.int64),
        int(table.grand_total),
    )


def lrt_rates(table: ContingencyTable, i: int, j: int) -> LrtRates:
    ni, nj, n = _marginals(table)
    nij = int(table.counts[i, j])
    if ni[i] <= 0 or n <= ni[i]:
        raise DegenerateMarginals(f"row {i} has N_i.={ni[i]} with N..={n}")
    return LrtRates(nij / ni[i], (nj[j] - nij) / (n - ni[i]), nj[j] / n)


def log_lr_column(nij, ni, nj, n, one_sided=False):
    """Log LR for every row of one drug column.

    ``nij`` may carry leading replicate axes; the last axis runs over AEs.
    Rows with ``N_i. = 0`` carry no information and score 0.
    """
    nij = np.asarray(nij, dtype=np.int64)
    ni = np.asarray(ni, dtype=np.int64)
    nj = int(nj)
    n = int(n)
    if nj == 0:
        return np.zeros(nij.shape)
    rest = nj - nij
    # p_hat / p0 = N_ij N.. / (N_i. N_.j) and q_hat / p0 = (N_.j - N_ij) N.. / (N_.j (N.. - N_i.));
    # numerators and denominators are exact integers so equality gives ratio 1.0.
    live = ni > 0
    den1 = np.where(live, ni * nj, 1).astype(np.float64)
    den2 = np.where(n > ni, nj * (n - ni), 1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (nij * n).astype(np.float64) / den1
        r2 = (rest * n).astype(np.float64) / den2
    llr = xlogy(nij, r1) + xlogy(rest, r2)
    llr = np.where(live, np.maximum(llr, 0.0), 0.0)
    if one_sided:
        # p_hat > q_hat  <=>  N_ij (N.. - N_i.) > (N_.j - N_ij) N_i.
        llr = np.where(nij * (n - ni) > rest * ni, llr, 0.0)
    return llr


def log_lr_cell(table: ContingencyTable, i: int, j: int, one_sided: bool = False) -> float:
    """Log likelihood ratio of one AE-drug cell (0 log 0 taken as 0)."""
    ni, nj, n = _marginals(table)
    if ni[i] <= 0:
        raise DegenerateMarginals(f"row {i} is empty")
    if n <= 0:
        raise DegenerateMarginals("grand total is zero")
    return float(log_lr_column(table.counts[i, j], ni[i], nj[j], n, one_sided))


def mlr_drug(table: ContingencyTable, j: int, one_sided: bool = False):
    """Maximum log LR over AEs for drug ``j`` and the AE attaining it.

    Ties go to the smallest AE index.
    """
    ni, nj, n = _marginals(table)
    if n <= 0:
        raise DegenerateMarginals("grand total is zero")
    cells = log_lr_column(table.counts[:, j], ni, nj[j], n, one_sided)
    k = int(np.argmax(cells))
    return float(cells[k]), k


def _pvalue(observed, null_max):
    null_max = np.asarray(null_max)
    tol = _TIE_RTOL * max(1.0, abs(observed))
    count = int(np.count_nonzero(null_max >= observed - tol))
    return (1 + count) / (null_max.size + 1)


def _cell_pvalues(cells, null_max):
    srt = np.sort(null_max)
    tol = _TIE_RTOL * np.maximum(1.0, np.abs(cells))
    # number of replicate maxima >= cell statistic
    ge = srt.size - np.searchsorted(srt, cells - tol, side="left")
    return (1.0 + ge) / (srt.size + 1.0)


def _run_blocks(fn, reps, threads):
    jobs = list(rng.blocks(reps))
    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    else:
        parts = [fn(*job) for job in jobs]
    return np.concatenate(parts) if parts else np.empty(0)


def _multinomial_null(ni, nj, n, one_sided, seed, drug, reps, threads):
    """Replicate maxima of the column statistic under the conditional multinomial."""
    probs = ni / float(n)
    probs = probs / probs.sum()

    def block(b, start, stop):
        gen = rng.stream(seed, _MULTINOMIAL, drug, b)
        draws = gen.multinomial(int(nj), probs, size=stop - start)
        return log_lr_column(draws, ni, nj, n, one_sided).max(axis=-1)

    return _run_blocks(block, reps, threads)


def _check_reps(reps):
    if int(reps) < 1:
        raise ValueError("reps must be >= 1")
    return int(reps)


def mc_null_pvalue(
    table: ContingencyTable,
    j: int,
    reps: int = 999,
    seed: int = 0,
    one_sided: bool = True,
    alpha: float = 0.05,
    threads: int = 1,
) -> TestResult:
    """Per-drug LRT with a Monte Carlo p-value ``(1 + #{null >= obs}) / (reps + 1)``."""
    reps = _check_reps(reps)
    ni, nj, n = _marginals(table)
    cells = log_lr_column(table.counts[:, j], ni, nj[j], n, one_sided)
    k = int(np.argmax(cells))
    observed = float(cells[k])
    if nj[j] == 0:
        return TestResult(
            observed, 1.0, False, reps, seed, k, j, "lrt", alpha,
            cells, np.ones_like(cells), np.zeros(0),
        )
    null_max = _multinomial_null(ni, nj[j], n, one_sided, seed, j, reps, threads)
    p = _pvalue(observed, null_max)
    return TestResult(
        observed, p, p < alpha, reps, seed, k, j, "lrt", alpha,
        cells, _cell_pvalues(cells, null_max), null_max,
    )


def ext_mlr(
    table: ContingencyTable,
    drug_indices,
    reps: int = 999,
    seed: int = 0,
    one_sided: bool = True,
    alpha: float = 0.05,
    threads: int = 1,
) -> TestResult:
    """Global test over a drug class: max over drugs of the per-drug maximum.

    Each drug column is resampled independently from its own conditional
    multinomial; replicate maxima are taken across the class.
    """
    reps = _check_reps(reps)
    drugs = [int(m) for m in drug_indices]
    if not drugs:
        raise ValueError("drug_indices is empty")
    for m in drugs:
        if not 0 <= m < table.shape[1]:
            raise IndexError(f"drug index {m} out of range")
    ni, nj, n = _marginals(table)
    best, best_ae, best_drug = -np.inf, 0, drugs[0]
    null_max = np.zeros(reps)
    cells_by_drug = {}
    for m in drugs:
        cells = log_lr_column(table.counts[:, m], ni, nj[m], n, one_sided)
        cells_by_drug[m] = cells
        k = int(np.argmax(cells))
        if cells[k] > best:
            best, best_ae, best_drug = float(cells[k]), k, m
        if nj[m] > 0:
            null_max = np.maximum(
                null_max, _multinomial_null(ni, nj[m], n, one_sided, seed, m, reps, threads)
            )
    p = _pvalue(best, null_max)
    cells = cells_by_drug[best_drug]
    return TestResult(
        best, p, p < alpha, reps, seed, best_ae, best_drug, "ext-lrt", alpha,
        cells, _cell_pvalues(cells, null_max), null_max,
    )


# -- pseudo-LRT ----------------------------------------------------------------


def _zip_loglik(p0, zero_e, pos_loglik_poisson, n_pos):
    """ZIP log-likelihood given cached Poisson pieces; ``p0 < 1``."""
    zeros = float(np.log(p0 + (1.0 - p0) * np.exp(-zero_e)).sum())
    return zeros + n_pos * math.log1p(-p0) + pos_loglik_poisson


def _golden_max(f, lo, hi, tol):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_zip_p0(counts, expected, tol: float = 1e-6) -> ZipNullFit:
    """Profile MLE of the structural-zero proportion with signal strength fixed at 1.

    Cells with zero expectation are skipped. The log-likelihood is concave in
    ``p0`` so a golden-section search on ``[0, 1 - 1e-6]`` finds the maximum.
    """
    counts = np.asarray(counts, dtype=np.float64).ravel()
    expected = np.asarray(expected, dtype=np.float64).ravel()
    bad = (expected <= 0) & (counts > 0)
    if bad.any():
        raise ImpossibleBaseline("positive count with zero expected count")
    keep = expected > 0
    counts, expected = counts[keep], expected[keep]
    zero = counts == 0
    zero_e = expected[zero]
    pos_n, pos_e = counts[~zero], expected[~zero]
    pos_ll = float((xlogy(pos_n, pos_e) - pos_e - gammaln(pos_n + 1.0)).sum())
    n_pos = int(pos_n.size)

    def ll(p0):
        return _zip_loglik(p0, zero_e, pos_ll, n_pos)

    if zero_e.size == 0:
        return ZipNullFit(0.0, ll(0.0), False, "no zero cells; p0 fixed at 0")
    if n_pos == 0:
        return ZipNullFit(P0_UPPER, ll(P0_UPPER), True, "all cells zero; p0 at upper bound")
    # derivative at p0 = 0 decides whether the boundary is optimal
    slope0 = float(np.expm1(zero_e).sum()) - n_pos
    if slope0 <= 0:
        return ZipNullFit(0.0, ll(0.0), False, "no excess zeros")
    p0 = _golden_max(ll, 0.0, P0_UPPER, tol)
    return ZipNullFit(p0, ll(p0), False, "")


def fit_zip_null(table: ContingencyTable, selected_columns=None, tol: float = 1e-6) -> ZipNullFit:
    """Fit the shared structural-zero proportion over the selected drug columns."""
    cols = list(selected_columns) if selected_columns is not None else table.non_reference_columns()
    expected = expected_baseline(table).expected
    return fit_zip_p0(table.counts[:, cols], expected[:, cols], tol)


def pseudo_lr_cells(counts, expected, model: str = "poisson", p0: float = 0.0):
    """One-sided per-cell log LR under the relative-reporting-rate model.

    The signal strength is profiled as ``max(N/E, 1)``. Under the ZIP model
    the structural-zero proportion is shared between null and alternative.
    """
    n = np.asarray(counts, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if ((e <= 0) & (n > 0)).any():
        raise ImpossibleBaseline("positive count with zero expected count")
    pos = (n > e) & (e > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if model == "poisson":
            stat = np.where(pos, xlogy(n, n / e) - (n - e), 0.0)
        elif model == "zip":
            lam = np.where(pos, n / e, 1.0)
            stat = np.where(
                pos,
                _zip_logpmf(n, lam * e, p0) - _zip_logpmf(n, e, p0),
                0.0,
            )
        else:
            raise ValueError(f"unknown model {model!r}")
    return np.maximum(stat, 0.0)


def _zip_logpmf(n, theta, p0):
    poisson = xlogy(n, theta) - theta - gammaln(n + 1.0)
    zero = np.log(p0 + (1.0 - p0) * np.exp(-theta))
    return np.where(n == 0, zero, np.log1p(-p0) + poisson)


def _bootstrap_null(expected, model, p0, seed, drug, reps, threads):
    """Replicate maxima for one column with its baseline held fixed."""
    e = np.asarray(expected, dtype=np.float64)

    def block(b, start, stop):
        gen = rng.stream(seed, _BOOTSTRAP, drug, b)
        draws = gen.poisson(e, size=(stop - start, e.size))
        if model == "zip" and p0 > 0:
            draws = np.where(gen.random((stop - start, e.size)) < p0, 0, draws)
        return pseudo_lr_cells(draws, e, model, p0).max(axis=-1)

    return _run_blocks(block, reps, threads)


# cells drawn per vectorised call in the whole-table bootstrap
_TABLE_CHUNK_CELLS = 4_000_000


def _table_bootstrap_null(expected, drugs, model, p0, seed, reps, threads):
    """Replicate maxima per drug when the baseline is estimated from the table.

    Every cell of a replicate table is drawn from the fitted null and the
    baseline is re-estimated from the replicate's own marginals, so the null
    distribution accounts for the plug-in estimation of E.
    """
    e = np.asarray(expected, dtype=np.float64)
    cols = np.asarray(drugs, dtype=np.intp)
    chunk = max(1, min(rng.BLOCK_SIZE, _TABLE_CHUNK_CELLS // max(e.size, 1)))

    def block(b, start, stop):
        gen = rng.stream(seed, _BOOTSTRAP, _WHOLE_TABLE, b)
        out = []
        for lo in range(start, stop, chunk):
            n = min(chunk, stop - lo)
            draws = gen.poisson(e, size=(n,) + e.shape)
            if model == "zip" and p0 > 0:
                draws = np.where(gen.random(draws.shape) < p0, 0, draws)
            ni = draws.sum(axis=2, keepdims=True).astype(np.float64)
            nj = draws[:, :, cols].sum(axis=1, keepdims=True).astype(np.float64)
            total = draws.sum(axis=(1, 2)).astype(np.float64)[:, None, None]
            with np.errstate(invalid="ignore", divide="ignore"):
                e_star = np.where(total > 0, ni * nj / total, 0.0)
            out.append(pseudo_lr_cells(draws[:, :, cols], e_star, model, p0).max(axis=1))
        return np.concatenate(out)

    return _run_blocks(block, reps, threads).reshape(reps, cols.size)


def pseudo_lrt(
    table: ContingencyTable,
    drug_indices=None,
    model: str = "poisson",
    reps: int = 999,
    seed: int = 0,
    alpha: float = 0.05,
    threads: int = 1,
    expected=None,
    zip_fit: ZipNullFit | None = None,
) -> list[TestResult]:
    """Pseudo-LRT per drug with a parametric-bootstrap null.

    Without ``expected`` the baseline is the independence baseline of
    ``table``; null replicates then draw the whole table from Poisson(E_ij)
    or ZIP(E_ij, p0_hat) and re-estimate E from each replicate. A supplied
    ``expected`` is treated as external and held fixed, and only the drug
    column is redrawn.
    """
    reps = _check_reps(reps)
    if model not in ("poisson", "zip"):
        raise ValueError(f"unknown model {model!r}")
    drugs = list(drug_indices) if drug_indices is not None else table.non_reference_columns()
    plug_in = expected is None
    e_all = expected_baseline(table).expected if plug_in else np.asarray(expected, float)
    p0 = 0.0
    if model == "zip":
        if zip_fit is None:
            zip_fit = fit_zip_p0(table.counts[:, drugs], e_all[:, drugs])
        p0 = zip_fit.p0_hat
    if plug_in and drugs:
        table_null = _table_bootstrap_null(e_all, drugs, model, p0, seed, reps, threads)
    out = []
    for idx, j in enumerate(drugs):
        cells = pseudo_lr_cells(table.counts[:, j], e_all[:, j], model, p0)
        k = int(np.argmax(cells))
        observed = float(cells[k])
        if plug_in:
            null_max = table_null[:, idx]
        else:
            null_max = _bootstrap_null(e_all[:, j], model, p0, seed, j, reps, threads)
        p = _pvalue(observed, null_max)
        out.append(
            TestResult(
                observed, p, p < alpha, reps, seed, k, j, f"pseudo-lrt-{model}", alpha,
                cells, _cell_pvalues(cells, null_max), null_max,
            )
        )
    return out
