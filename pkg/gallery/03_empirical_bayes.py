"""
Empirical-Bayes shrinkage of signal strengths
=============================================

Cells with a small baseline can show a large O/E by chance. Four priors
for the signal strength are fitted to the same simulated table and the
posterior summaries of a few cells are compared.
"""

import numpy as np

from pvkit import expected_baseline
from pvkit.ebayes import eb_signal_table, fit_general_gamma, fit_gps, fit_km, posterior_cell, select_efron
from pvkit.simulate import SimScenario, gen_poisson_table

gen = np.random.default_rng(3)
I, J = 150, 5
lam = np.ones((I, J))
lam[:, :4][gen.random((I, 4)) < 0.08] = 4.0
scenario = SimScenario(I=I, J=J, row_marginals=gen.lognormal(1.5, 1.0, I), col_totals=[800] * 4 + [30000],
                       signal_map=lam, seed=5, reference_col=True)
table = gen_poisson_table(scenario)
E = expected_baseline(table).expected

efron, _ = select_efron(table)
priors = {
    "GPS": fit_gps(table),
    "general gamma": fit_general_gamma(table),
    "KM": fit_km(table),
    "Efron": efron,
}
for name, prior in priors.items():
    print(f"{name:14s} prior mean {prior.mean():.3f}")

# A noisy cell (small E) against a well-measured one with a similar ratio.
drug = table.counts[:, :4]
ratio = np.where(E[:, :4] > 0, drug / E[:, :4], 0)
small = np.unravel_index(np.argmax(np.where(E[:, :4] < 1, ratio, 0)), ratio.shape)
large = np.unravel_index(np.argmax(np.where(E[:, :4] > 20, ratio, 0)), ratio.shape)
for i, j in (small, large):
    n, e = int(table.counts[i, j]), float(E[i, j])
    print(f"\nN = {n}, E = {e:.2f}, O/E = {n / e:.2f}, planted lambda = {lam[i, j]}")
    for name, prior in priors.items():
        s = posterior_cell(prior, n, e)
        print(f"  {name:14s} median {s.median:.2f}  90% [{s.q05:.2f}, {s.q95:.2f}]  P(signal) {s.prob_signal:.3f}")

# Decisions over the whole table.
truth = scenario.truth[:, :4]
for name, rule in (("GPS", "eb05>2"), ("general gamma", "prob>0.95")):
    d = eb_signal_table(priors[name], table, E, rule=rule).decision[:, :4]
    print(f"\n{name} {rule}: {d.sum()} signals, {(d & truth).sum()} of {truth.sum()} planted cells found")
