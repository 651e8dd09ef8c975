import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xsep.errors import ArgumentError
from xsep.momp import GroupedDictionary, SparsityBudget, momp, momp_batch


def unit_gaussian(rows, cols, rng):
    A = rng.standard_normal((rows, cols))
    return A / np.linalg.norm(A, axis=0)


def plain_omp(A, b, s):
    """Textbook OMP with lowest-index tie-break, used as an oracle."""
    support = []
    r = b.copy()
    x = np.zeros(0)
    for _ in range(s):
        if np.linalg.norm(r) < 1e-12 * np.linalg.norm(b):
            break
        corr = np.abs(A.T @ r)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        x, *_ = np.linalg.lstsq(A[:, support], b, rcond=None)
        r = b - A[:, support] @ x
    out = np.zeros(A.shape[1])
    out[support] = x
    return out, support


def test_zero_signal():
    D = GroupedDictionary.stacked(np.eye(4), 2)
    code = momp(np.zeros(4), D, SparsityBudget(1, 1))
    assert not code.z.any() and not code.v.any() and code.support == []


def test_identity_dictionary_example():
    D = GroupedDictionary.stacked(np.eye(4), 2)
    code = momp(np.array([0.0, 5.0, 0.0, 3.0]), D, SparsityBudget(1, 1))
    assert code.support == [1, 3]
    np.testing.assert_allclose(code.z, [0, 5])
    np.testing.assert_allclose(code.v, [0, 3])


def test_ties_go_to_lower_index():
    D = GroupedDictionary.stacked(np.eye(3), 3)
    code = momp(np.array([1.0, 1.0, 1.0]), D, SparsityBudget(1, 0))
    assert code.support == [0]


def test_group_budget_forces_other_group():
    # the innovation atom correlates best but its budget is zero
    theta = np.array([[1.0, 0.0], [0.0, 1.0]])
    D = GroupedDictionary(theta, [0], [1])
    code = momp(np.array([0.1, 5.0]), D, SparsityBudget(1, 0))
    assert code.support == [0]
    assert code.v[0] == 0


def test_non_contiguous_groups():
    rng = np.random.default_rng(0)
    theta = unit_gaussian(10, 6, rng)
    D = GroupedDictionary(theta, [1, 3, 5], [0, 2, 4])
    b = theta[:, 3] * 2 - theta[:, 0]
    code = momp(b, D, SparsityBudget(1, 1))
    assert sorted(code.support) == [0, 3]
    np.testing.assert_allclose(code.z, [0, 2, 0], atol=1e-12)
    np.testing.assert_allclose(code.v, [-1, 0, 0], atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_matches_plain_omp_without_innovation_budget(seed):
    rng = np.random.default_rng(seed)
    A = unit_gaussian(16, 12, rng)
    theta = np.hstack([A, unit_gaussian(16, 5, rng)])
    b = rng.standard_normal(16)
    D = GroupedDictionary.stacked(theta, 12)
    code = momp(b, D, SparsityBudget(4, 0))
    ref, support = plain_omp(A, b, 4)
    assert code.support == support
    np.testing.assert_allclose(code.z, ref, atol=1e-10)
    assert not code.v.any()


def test_exhaustive_support_oracle():
    rng = np.random.default_rng(42)
    ratios = []
    for _ in range(30):
        theta = unit_gaussian(6, 8, rng)
        D = GroupedDictionary.stacked(theta, 4)
        b = rng.standard_normal(6)
        code = momp(b, D, SparsityBudget(1, 1))
        w = np.concatenate([code.z, code.v])
        res = np.linalg.norm(b - theta @ w)
        best = min(
            np.linalg.norm(b - theta[:, [i, j]] @ np.linalg.lstsq(theta[:, [i, j]], b, rcond=None)[0])
            for i, j in itertools.product(range(4), range(4, 8))
        )
        ratios.append(res / best)
    assert np.median(ratios) <= 1.10
    assert np.mean(np.array(ratios) <= 1.10) >= 0.8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 4), st.integers(0, 4))
def test_budgets_orthogonality_monotone_residual(seed, s_z, s_v):
    if s_z + s_v == 0:
        s_z = 1
    rng = np.random.default_rng(seed)
    theta = unit_gaussian(12, 10, rng)
    D = GroupedDictionary.stacked(theta, 5)
    b = rng.standard_normal(12)
    coefs, supports = momp_batch(b[:, None], D, SparsityBudget(s_z, s_v))
    sel = [int(k) for k in supports[0] if k >= 0]
    assert len(set(sel)) == len(sel)
    assert sum(k < 5 for k in sel) <= s_z
    assert sum(k >= 5 for k in sel) <= s_v
    assert np.count_nonzero(coefs[:5, 0]) <= s_z and np.count_nonzero(coefs[5:, 0]) <= s_v
    r = b - theta @ coefs[:, 0]
    assert np.linalg.norm(theta[:, sel].T @ r) <= 1e-9 * np.linalg.norm(b)
    # residuals of the support prefixes never increase
    prev = np.linalg.norm(b)
    for k in range(1, len(sel) + 1):
        S = sel[:k]
        rk = np.linalg.norm(b - theta[:, S] @ np.linalg.lstsq(theta[:, S], b, rcond=None)[0])
        assert rk <= prev + 1e-12
        prev = rk


@pytest.mark.parametrize("c", [0.001, 3.0, 1e5])
def test_positive_scaling(c):
    rng = np.random.default_rng(7)
    theta = unit_gaussian(20, 30, rng)
    D = GroupedDictionary.stacked(theta, 15)
    b = rng.standard_normal(20)
    a = momp(b, D, SparsityBudget(3, 2))
    s = momp(c * b, D, SparsityBudget(3, 2))
    assert a.support == s.support
    np.testing.assert_allclose(s.z, c * a.z, rtol=1e-9, atol=1e-12 * c)
    np.testing.assert_allclose(s.v, c * a.v, rtol=1e-9, atol=1e-12 * c)


def test_batch_equals_single_and_is_order_independent():
    rng = np.random.default_rng(3)
    theta = unit_gaussian(20, 30, rng)
    D = GroupedDictionary.stacked(theta, 15)
    B = rng.standard_normal((20, 25))
    coefs, _ = momp_batch(B, D, SparsityBudget(2, 3))
    perm = rng.permutation(25)
    coefs_p, _ = momp_batch(B[:, perm], D, SparsityBudget(2, 3))
    assert np.array_equal(coefs_p, coefs[:, perm])
    for j in (0, 11, 24):
        code = momp(B[:, j], D, SparsityBudget(2, 3))
        assert np.array_equal(np.concatenate([code.z, code.v]), coefs[:, j])


def test_masked_rows_equal_row_removal():
    rng = np.random.default_rng(5)
    theta = unit_gaussian(16, 20, rng)
    D = GroupedDictionary.stacked(theta, 10)
    B = rng.standard_normal((16, 6))
    M = (rng.random((16, 6)) > 0.3).astype(float)
    coefs, _ = momp_batch(B, D, SparsityBudget(2, 2), M)
    for j in range(6):
        keep = M[:, j] > 0
        ref, _ = momp_batch(B[keep, j][:, None], GroupedDictionary.stacked(theta[keep], 10), SparsityBudget(2, 2))
        np.testing.assert_allclose(coefs[:, j], ref[:, 0], atol=1e-10)


def test_early_exit_on_exact_fit():
    D = GroupedDictionary.stacked(np.eye(4), 2)
    code = momp(np.array([0.0, 2.0, 0.0, 0.0]), D, SparsityBudget(2, 2))
    assert code.support == [1]


def test_invalid_inputs():
    with pytest.raises(ArgumentError):
        SparsityBudget(0, 0)
    with pytest.raises(ArgumentError):
        SparsityBudget(-1, 2)
    with pytest.raises(ArgumentError):
        GroupedDictionary(np.eye(3), [0], [1])
    with pytest.raises(ArgumentError):
        GroupedDictionary.stacked(np.array([[1.0, 0.0], [0.0, 0.0]]), 1)
    D = GroupedDictionary.stacked(np.eye(4), 2)
    with pytest.raises(ArgumentError):
        momp(np.ones(4), D, SparsityBudget(3, 1))
    with pytest.raises(ArgumentError):
        momp(np.array([np.nan, 0, 0, 0]), D, SparsityBudget(1, 1))
    with pytest.raises(ArgumentError):
        momp(np.ones(3), D, SparsityBudget(1, 1))


def planted_recovery(rows, gamma, d, trials, seed):
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        theta = unit_gaussian(rows, gamma + d, rng)
        D = GroupedDictionary.stacked(theta, gamma)
        S = np.concatenate([rng.choice(gamma, 2, replace=False), gamma + rng.choice(d, 3, replace=False)])
        w = np.zeros(gamma + d)
        w[S] = rng.uniform(-1, 1, 5)
        code = momp(theta @ w, D, SparsityBudget(2, 3))
        hits += set(code.support) == set(S.tolist())
    return 100.0 * hits / trials


def test_planted_support_recovery_small():
    # 40 stacked rows (n = 20 per modality), 30 + 30 atoms
    assert planted_recovery(40, 30, 30, 200, seed=11) >= 95.0
