import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ascon_sca.ascon_core import SBOX, candidate_bits
from ascon_sca.leakage_est import (DEGREES, MASKS, LeakageModel, correlate_and_rank, design_matrix,
                                   enumerate_candidates, fit_leakage, hamming_weight_model, low_order_leakage,
                                   monomial_vector, msb_model, pair_sensitive, recluster_and_rank)


def monomials(x):
    """Reference monomial evaluation straight from the bit-product definition."""
    bits = [(x >> j) & 1 for j in range(5)]
    out = []
    for u in MASKS:
        out.append(float(np.prod([bits[j] for j in range(5) if (int(u) >> j) & 1])))
    return np.array(out)


def test_basis_order():
    assert MASKS[0] == 0 and len(MASKS) == 32 and sorted(MASKS) == list(range(32))
    assert list(DEGREES) == sorted(DEGREES)
    assert (DEGREES <= 2).sum() == 16


def test_monomial_vector_examples():
    np.testing.assert_array_equal(monomial_vector(0), np.eye(32)[0])
    np.testing.assert_array_equal(monomial_vector(31), np.ones(32))
    for x in range(32):
        np.testing.assert_array_equal(monomial_vector(x), monomials(x))
    assert len(monomial_vector(5, m0=1)) == 6
    with pytest.raises(ValueError):
        monomial_vector(32)


def test_reference_models():
    xs = np.arange(32)
    np.testing.assert_array_equal(hamming_weight_model().evaluate(xs), [bin(x).count("1") for x in xs])
    np.testing.assert_array_equal(msb_model().evaluate(xs), xs >> 4)


@given(st.lists(st.floats(-10, 10), min_size=32, max_size=32))
def test_from_table_reproduces_table(values):
    np.testing.assert_allclose(LeakageModel.from_table(values).evaluate(np.arange(32)), values, atol=1e-9)


def _low_order_model(rng):
    a = np.where(DEGREES <= 2, rng.normal(size=32), 0.0)
    return LeakageModel(a)


@given(st.integers(0, 2**31 - 1))
def test_fit_recovers_low_order_model_on_full_coverage(seed):
    rng = np.random.default_rng(seed)
    model = _low_order_model(rng)
    xs = rng.permutation(np.tile(np.arange(32), 3))
    fit = fit_leakage(model.evaluate(xs), xs)
    np.testing.assert_allclose(fit.coefficients, model.coefficients, atol=1e-8)
    np.testing.assert_allclose(low_order_leakage(fit, xs, 2), model.evaluate(xs), atol=1e-8)


@pytest.mark.parametrize("method", ["minnorm", "graded"])
@given(seed=st.integers(0, 2**31 - 1), size=st.integers(1, 32))
def test_fit_is_exact_on_observed_values(method, seed, size):
    rng = np.random.default_rng(seed)
    model = _low_order_model(rng)
    xs = rng.choice(32, size=size, replace=False)
    fit = fit_leakage(model.evaluate(xs), xs, method=method)
    assert np.max(np.abs(fit.evaluate(xs) - model.evaluate(xs))) < 1e-8


@given(st.integers(0, 2**31 - 1), st.integers(1, 32))
def test_graded_fit_keeps_low_order_labels_low_order(seed, size):
    rng = np.random.default_rng(seed)
    model = _low_order_model(rng)
    xs = rng.choice(32, size=size, replace=False)
    fit = fit_leakage(model.evaluate(xs), xs, method="graded")
    np.testing.assert_allclose(fit.truncated(2).evaluate(xs), model.evaluate(xs), atol=1e-8)


def test_duplicates_do_not_change_an_exact_fit():
    xs = np.array([0, 3, 5, 9, 17])
    y = hamming_weight_model().evaluate(xs)
    once = fit_leakage(y, xs)
    many = fit_leakage(np.repeat(y, [1, 4, 2, 7, 3]), np.repeat(xs, [1, 4, 2, 7, 3]))
    np.testing.assert_allclose(once.coefficients, many.coefficients, atol=1e-10)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_leakage([], [])
    with pytest.raises(ValueError):
        fit_leakage([1.0, np.nan], [0, 1])
    with pytest.raises(ValueError):
        fit_leakage([1.0], [0], method="other")


@given(st.integers(0, 2**31 - 1), st.integers(0, 5))
def test_truncation_is_idempotent(seed, m0):
    model = LeakageModel(np.random.default_rng(seed).normal(size=32))
    once = model.truncated(m0)
    np.testing.assert_array_equal(once.truncated(m0).coefficients, once.coefficients)
    assert np.all(once.coefficients[DEGREES > m0] == 0)


def test_recluster_example():
    f = np.array([[0.0, 1.0], [0.0, 3.0], [2.0, 1.0], [2.0, 5.0]])
    rank, gap = recluster_and_rank(f, np.array([0.0, 0.0, 1.0, 1.0]))
    np.testing.assert_allclose(gap, [2.0, 1.0])
    assert rank == 2.0
    assert recluster_and_rank(f, np.ones(4)) == (0.0, pytest.approx(np.zeros(2)))


def test_correlation_rank_example():
    f = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 0.0], [4.0, 1.0]])
    rank, rho = correlate_and_rank(f, np.array([4.0, 3.0, 2.0, 1.0]))
    assert rank == pytest.approx(1.0)
    assert rho[1] == pytest.approx(abs(np.corrcoef([0, 1, 0, 1], [4, 3, 2, 1])[0, 1]))
    assert correlate_and_rank(f, np.ones(4))[0] == 0.0


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_rank_statistics_are_affine_invariant_in_lstar(seed, a, b):
    rng = np.random.default_rng(seed)
    f, l = rng.normal(size=(30, 3)), rng.normal(size=30)
    assert correlate_and_rank(f, a * l + b)[0] == pytest.approx(correlate_and_rank(f, l)[0])
    np.testing.assert_allclose(recluster_and_rank(f, a * l + b)[1], recluster_and_rank(f, l)[1])


def test_pair_sensitive_matches_scalar_assembly():
    rng = np.random.default_rng(0)
    sel, nh, nl = rng.integers(0, 2, (3, 50))
    iv = (1, 0)
    for c in range(16):
        kb = candidate_bits(c)
        want = [SBOX[(iv[s] << 4) | (kb[s][0] << 3) | (kb[s][1] << 2) | (h << 1) | l] for s, h, l in zip(sel, nh, nl)]
        np.testing.assert_array_equal(pair_sensitive(c, sel, nh, nl, iv), want)


def _ideal_pair(n, true, seed, kind="hw"):
    """Features that are exactly the leakage of the true candidate's values."""
    rng = np.random.default_rng(seed)
    sel, nh, nl = rng.integers(0, 2, (3, n))
    xs = pair_sensitive(true, sel, nh, nl, (1, 1))
    leak = hamming_weight_model().evaluate(xs) if kind == "hw" else msb_model().evaluate(xs)
    return leak[:, None], sel, nh, nl


def test_enumeration_shape_and_parallel_equivalence():
    f, sel, nh, nl = _ideal_pair(200, 6, 0)
    labels = f[:, 0] + np.random.default_rng(1).normal(0, 0.3, 200)
    a = enumerate_candidates(f, sel, nh, nl, labels, (1, 1))
    b = enumerate_candidates(f, sel, nh, nl, labels, (1, 1), workers=4)
    assert a.ranks.shape == (16,) and a.detail.shape == (16, 1)
    np.testing.assert_array_equal(a.ranks, b.ranks)
    assert sorted(a.order) == list(range(16))
    assert a.to_text().count("\n") == 17


def test_true_candidate_correlates_perfectly_with_true_labels():
    f, sel, nh, nl = _ideal_pair(300, 11, 2)
    # without truncation the fit reproduces the labels on observed values
    table = enumerate_candidates(f, sel, nh, nl, f[:, 0], (1, 1), m0=5)
    assert table.ranks[11] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(8))
def test_null_model_gives_no_clear_winner(seed):
    # features carry no leakage: the top two candidates stay within 10 %
    rng = np.random.default_rng(seed)
    n = 4000
    sel, nh, nl = rng.integers(0, 2, (3, n))
    table = enumerate_candidates(rng.normal(size=(n, 16)), sel, nh, nl, rng.normal(size=n), (0, 1))
    top = np.sort(table.ranks)[::-1]
    assert (top[0] - top[1]) / top[0] < 0.1


def test_hamming_labels_fit_and_survive_degree_one_truncation():
    xs = np.repeat(np.arange(32), 2)
    y = np.array([bin(int(x)).count("1") for x in xs]) / 5
    fit = fit_leakage(y, xs)
    assert np.max(np.abs(fit.evaluate(xs) - y)) < 1e-10
    np.testing.assert_allclose(low_order_leakage(fit, xs, 1), y, atol=1e-10)
    part = np.array([1, 6, 7, 20, 30])
    graded = fit_leakage(y[part * 2], part, method="graded")
    np.testing.assert_allclose(low_order_leakage(graded, part, 1), y[part * 2], atol=1e-10)


def test_constant_labels_give_constant_model():
    xs = np.array([3, 9, 9, 22])
    fit = fit_leakage(np.full(4, 2.5), xs)
    np.testing.assert_allclose(fit.evaluate(xs), 2.5, atol=1e-12)
    graded = fit_leakage(np.full(4, 2.5), xs, method="graded")
    assert graded.constant == pytest.approx(2.5)
    np.testing.assert_allclose(graded.coefficients[1:], 0.0, atol=1e-12)


def test_no_truncation_at_full_degree():
    model = LeakageModel(np.random.default_rng(0).normal(size=32))
    np.testing.assert_array_equal(low_order_leakage(model, np.arange(32), 5), model.evaluate(np.arange(32)))


@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_fit_residual_is_orthogonal_to_design(seed, n):
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, 32, n)
    y = rng.normal(size=n)
    resid = y - fit_leakage(y, xs).evaluate(xs)
    assert np.max(np.abs(design_matrix(xs).T @ resid)) < 1e-8


def test_recluster_on_lstar_itself_matches_direct_partition():
    rng = np.random.default_rng(2)
    l = rng.normal(size=51)
    top = l > l.mean()
    rank, _ = recluster_and_rank(l, l)
    assert rank == pytest.approx(l[top].mean() - l[~top].mean())
    perm = rng.permutation(51)
    assert recluster_and_rank(l[perm], l[perm])[0] == pytest.approx(rank)


def test_rank_table_ties_go_to_lower_candidate():
    from ascon_sca.leakage_est import RankTable
    t = RankTable(ranks=np.array([1.0, 2.0, 2.0] + [0.0] * 13), detail=np.zeros((16, 1)))
    assert list(t.order[:3]) == [1, 2, 0]
    assert t.position(2) == 2 and t.best == 1
