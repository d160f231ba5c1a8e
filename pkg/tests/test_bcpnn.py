import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pvkit.bcpnn import bcpnn_signals, estimate_beta, ic, IcResult
from pvkit.errors import DegenerateTable

from conftest import independent_counts, make_table

LN2 = math.log(2)


def ic_oracle(nij, ni, nj, n):
    beta = (n + 2) ** 2 / ((ni + 1) * (nj + 1)) - 1
    mean = math.log2((nij + 1) * (n + 2) ** 2 / ((n + beta) * (ni + 1) * (nj + 1)))
    var = ((n - nij + beta - 1) / ((nij + 1) * (1 + n + beta))
           + (n - ni + 1) / ((ni + 1) * (n + 3))
           + (n - nj + 1) / ((nj + 1) * (n + 3))) / LN2**2
    return beta, mean, var


def test_beta_smallest_case():
    t = make_table([[1, 0], [0, 1]])
    assert estimate_beta(t, 0, 0) == pytest.approx(3.0, abs=1e-12)


def test_beta_all_ones():
    t = make_table(np.ones((2, 2), int))
    for i in range(2):
        for j in range(2):
            assert estimate_beta(t, i, j) == pytest.approx(3.0, abs=1e-12)


def test_all_ones_ic():
    t = make_table(np.ones((2, 2), int))
    res = ic(t)
    beta, mean, var = ic_oracle(1, 2, 2, 4)
    assert res.beta_hat[0, 0] == pytest.approx(beta, abs=1e-12)
    assert res.ic_mean[0, 0] == pytest.approx(mean, abs=1e-12)
    assert res.ic_variance[0, 0] == pytest.approx(var, abs=1e-12)


def test_fixture_recomputation(rng):
    t = make_table(rng.integers(0, 60, size=(10, 5)))
    res = ic(t)
    n = int(t.grand_total)
    for i in range(10):
        for j in range(5):
            beta, mean, var = ic_oracle(int(t.counts[i, j]), int(t.row_totals[i]), int(t.col_totals[j]), n)
            assert res.beta_hat[i, j] == pytest.approx(beta, rel=1e-12)
            assert res.ic_mean[i, j] == pytest.approx(mean, abs=1e-12)
            assert res.ic_variance[i, j] == pytest.approx(var, rel=1e-10)
            assert res.ic025[i, j] == pytest.approx(mean - 1.96 * math.sqrt(var), abs=1e-10)


def test_balanced_large_table_near_zero():
    t = make_table(independent_counts([3, 5, 2], [4, 1, 6], scale=1000))
    assert t.counts.min() >= 1000
    assert np.all(np.abs(ic(t).ic_mean) < 0.02)


def test_empty_table():
    with pytest.raises(DegenerateTable):
        ic(make_table(np.zeros((2, 2), int)))


def test_signal_rule():
    res = IcResult(np.array([[2.0, 0.0]]), np.array([[0.01, 0.5]]),
                   np.array([[2.0 - 1.96 * 0.1, -1.96 * math.sqrt(0.5)]]), np.array([[1.0, 1.0]]))
    assert res.ic025[0, 0] == pytest.approx(1.804)
    assert bcpnn_signals(res).tolist() == [[True, False]]


def test_signal_scan_oracle(random_table):
    res = ic(random_table)
    for thr in (0.0, 0.5):
        assert np.array_equal(bcpnn_signals(res, thr), res.ic025 > thr)


tables = arrays(np.int64, st.tuples(st.integers(2, 5), st.integers(2, 4)), elements=st.integers(1, 300))


@given(tables)
def test_variance_positive_and_ordering(counts):
    res = ic(make_table(counts))
    assert np.all(res.ic_variance > 0)
    assert np.all(res.ic025 <= res.ic_mean)


@given(tables)
def test_transpose_symmetry(counts):
    a = ic(make_table(counts)).ic_mean
    b = ic(make_table(counts.T)).ic_mean
    np.testing.assert_allclose(a, b.T, rtol=1e-12, atol=1e-12)


def test_variance_decreases_in_cell_count():
    # grow N_ij while keeping N_i., N_.j, N.. fixed by moving mass off-diagonal
    variances = []
    for k in range(0, 40, 5):
        t = make_table([[10 + k, 60 - k], [60 - k, 200 + k]])
        variances.append(ic(t).ic_variance[0, 0])
    assert all(a > b for a, b in zip(variances, variances[1:]))
