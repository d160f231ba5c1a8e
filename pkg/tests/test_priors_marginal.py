import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from pvkit.ebayes import EfronPrior, MixturePrior, nb_marginal
from pvkit.ebayes.marginal import cell_data, nb_logpmf
from pvkit.ebayes.priors import prior_from_json
from pvkit.ebayes.efron import structure_matrix


def test_geometric_case():
    assert nb_marginal(0, 1, 1, 1) == pytest.approx(0.5, abs=1e-15)


def test_quadrature():
    def integrand(lam):
        return stats.poisson.pmf(1, lam * 0.01) * stats.gamma.pdf(lam, 0.5, scale=1 / 0.5)

    val, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert nb_marginal(1, 0.5, 0.5, 0.01) == pytest.approx(val, abs=1e-8)


@given(st.integers(0, 40), st.floats(0.2, 20), st.floats(0.2, 20), st.floats(0.05, 30))
def test_matches_scipy_negative_binomial(n, shape, rate, E):
    want = stats.nbinom.logpmf(n, shape, rate / (E + rate))
    assert float(nb_logpmf(n, shape, rate, E)) == pytest.approx(want, rel=1e-9, abs=1e-11)


def test_normalisation():
    total = sum(nb_marginal(n, 2, 3, 5) for n in range(501))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_zero_baseline():
    assert nb_marginal(0, 2, 3, 0) == 1.0
    assert nb_marginal(3, 2, 3, 0) == 0.0


def test_bad_parameters():
    with pytest.raises(ValueError):
        nb_marginal(1, 0, 1, 1)
    with pytest.raises(ValueError):
        nb_marginal(-1, 1, 1, 1)


def test_mixture_weights_validated():
    with pytest.raises(ValueError):
        MixturePrior.gamma_mixture([1, 2], [1, 1], [0.5, 0.6])
    p = MixturePrior.gamma_mixture([1, 2], [1, 1], [0.25, 0.75])
    assert abs(sum(c.weight for c in p.components) - 1) <= 1e-10


def test_discrete_support_validated():
    with pytest.raises(ValueError):
        MixturePrior.discrete([1.0, 1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        MixturePrior.discrete([0.0, 1.0], [0.5, 0.5])


def test_active_renormalises():
    p = MixturePrior.gamma_mixture([1, 2, 3], [1, 1, 1], [0.5, 0.5 - 1e-9, 1e-9]).active()
    assert p.n_components == 2 and abs(p.weights.sum() - 1) < 1e-12


def test_json_round_trip():
    p = MixturePrior.gamma_mixture([0.5, 4.0], [0.5, 1.0], [0.9, 0.1], method="gps", loglik=-12.5)
    back = prior_from_json(p.to_json())
    np.testing.assert_array_equal(back.shapes, p.shapes)
    np.testing.assert_array_equal(back.weights, p.weights)
    d = MixturePrior.discrete([0.5, 1.0, 3.0], [0.2, 0.5, 0.3])
    back = prior_from_json(d.to_json())
    np.testing.assert_array_equal(back.support, d.support)
    assert json.loads(d.to_json())["kind"] == d.kind


def test_efron_prior_masses_normalised():
    support = np.geomspace(0.01, 20, 40)
    Q = structure_matrix(support, 5)
    prior = EfronPrior(support, np.array([0.3, -1.0, 2.0, 0.1, -0.5]), Q, 1.0, 5, {})
    assert abs(prior.masses.sum() - 1) <= 1e-10
    np.testing.assert_allclose(np.log(prior.masses), Q @ prior.alpha - prior.normalizer, rtol=1e-12)
    back = prior_from_json(prior.to_json())
    np.testing.assert_allclose(back.masses, prior.masses, rtol=1e-12)


def test_cell_data_excludes_zero_baseline():
    cells = cell_data(np.array([[1, 2], [0, 3]]), np.array([[1.0, 0.0], [2.0, 3.0]]))
    assert cells.size == 3 and cells.excluded == 1


def test_cell_data_needs_baseline_for_arrays():
    with pytest.raises(ValueError):
        cell_data(np.array([[1]]))
