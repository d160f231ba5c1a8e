import numpy as np
import pytest
from scipy import integrate, optimize, stats

from pvkit.tables import OTHER_AES, OTHER_DRUGS, ContingencyTable


def make_table(counts, ref_row=False, ref_col=False):
    counts = np.asarray(counts)
    I, J = counts.shape
    aes = [f"AE{i}" for i in range(I)]
    drugs = [f"D{j}" for j in range(J)]
    if ref_row:
        aes[-1] = OTHER_AES
    if ref_col:
        drugs[-1] = OTHER_DRUGS
    return ContingencyTable(
        aes, drugs, counts,
        reference_row_index=I - 1 if ref_row else None,
        reference_col_index=J - 1 if ref_col else None,
    )


def independent_counts(row_weights, col_weights, scale=1):
    """Integer table with N_ij = N_i. N_.j / N.. exactly."""
    r = np.asarray(row_weights, dtype=np.int64)
    c = np.asarray(col_weights, dtype=np.int64)
    return np.outer(r, c) * scale


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def random_table(rng):
    return make_table(rng.integers(0, 40, size=(20, 6)), ref_col=True)


def mixture_cells(gen, weights, shapes, rates, size, e_low=1.0, e_high=50.0):
    """Counts N ~ Poisson(lam E) with lam drawn from a gamma mixture."""
    comp = gen.choice(len(weights), size=size, p=weights)
    lam = gen.gamma(np.asarray(shapes)[comp], 1.0 / np.asarray(rates)[comp])
    E = gen.uniform(e_low, e_high, size)
    return gen.poisson(lam * E), E, lam


def quadrature_summary(prior, N, E, eps=0.001):
    """Posterior of a gamma-mixture prior by direct numerical integration."""
    def unnorm(lam):
        dens = sum(w * stats.gamma.pdf(lam, a, scale=1 / b) for a, b, w in zip(prior.shapes, prior.rates, prior.weights))
        return dens * stats.poisson.pmf(N, lam * E)

    # extend past every posterior component's far tail so no mass is truncated
    tail = max(stats.gamma.isf(1e-15, a + N, scale=1 / (b + E)) for a, b in zip(prior.shapes, prior.rates))
    upper = max(10 * max(N / E, 1.0), tail)
    peaks = [max(N / E, 1e-3), 1.0]
    opts = dict(epsabs=0, epsrel=1e-12, limit=500, points=peaks)
    Z, _ = integrate.quad(unnorm, 0, upper, **opts)

    def cdf(x):
        return integrate.quad(unnorm, 0, x, epsabs=0, epsrel=1e-12, limit=500,
                              points=[p for p in peaks if p < x] or None)[0] / Z

    def q(p):
        return optimize.brentq(lambda x: cdf(x) - p, 1e-9, upper, xtol=1e-13, rtol=1e-13)

    return {"median": q(0.5), "q05": q(0.05), "q95": q(0.95), "prob_signal": 1 - cdf(1 + eps)}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
