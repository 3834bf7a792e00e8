from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sldl.correlation import (
    accumulate_walk,
    build_cooccurrence,
    build_transfer,
    dump_matrix,
    row_normalize,
    transfer_matrix,
)

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def _fraction_transfer(A_hat, steps):
    """Exact rational accumulation, for comparison with floating point."""
    c = len(A_hat)
    A = [[Fraction(v).limit_denominator(10**6) for v in row] for row in A_hat]

    def mul(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(c)) for j in range(c)] for i in range(c)]

    P, total, gamma = A, [row[:] for row in A], Fraction(1)
    for _ in range(steps):
        P = mul(P, A)
        gamma /= 2
        total = [[total[i][j] + gamma * P[i][j] for j in range(c)] for i in range(c)]
    return [[v / sum(row) for v in row] for row in total]


def test_swap_fixture_two_steps():
    P = transfer_matrix(SWAP, steps=2)
    assert_allclose(P, [[2 / 7, 5 / 7], [5 / 7, 2 / 7]], atol=1e-12, rtol=0)


def test_swap_fixture_matches_exact_rationals():
    exact = _fraction_transfer(SWAP, 2)
    assert exact == [[Fraction(2, 7), Fraction(5, 7)], [Fraction(5, 7), Fraction(2, 7)]]


def test_schedule_halves():
    _, sched = accumulate_walk(np.eye(3), 4)
    assert sched == (1.0, 0.5, 0.25, 0.125, 0.0625)


def test_zero_steps_is_identity_map():
    A_hat = row_normalize(np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]]))
    assert_allclose(transfer_matrix(A_hat, 0), A_hat)


def test_cooccurrence_has_self_loops_and_is_symmetric():
    Y = sp.csr_matrix(np.array([[1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 0, 0]]))
    A = build_cooccurrence(Y)
    assert_array_equal(A, [[1, 1, 0, 0], [1, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 0]])
    assert_array_equal(A, A.T)


def test_row_normalize_empty_row_becomes_identity():
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 2.0, 2.0]])
    assert_allclose(row_normalize(A), [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]])


def test_build_transfer_unused_label_keeps_mass_on_itself():
    Y = sp.csr_matrix(np.array([[1, 1, 0], [1, 0, 0]]))
    t = build_transfer(Y, 4)
    assert_allclose(t.P_hat[2], [0, 0, 1])
    assert_allclose(t.P_hat.sum(axis=1), 1.0)


def test_rejects_non_stochastic_input():
    with pytest.raises(ValueError):
        accumulate_walk(np.array([[0.5, 0.4], [0.5, 0.5]]), 2)
    with pytest.raises(ValueError):
        accumulate_walk(np.ones((2, 3)) / 3, 2)
    with pytest.raises(ValueError):
        accumulate_walk(SWAP, -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.integers(0, 5))
def test_matches_rational_oracle(seed, c, steps):
    rng = np.random.default_rng(seed)
    Y = sp.csr_matrix((rng.random((12, c)) < 0.35).astype(np.int8))
    t = build_transfer(Y, steps)
    exact = np.array(_fraction_transfer(t.A_hat, steps), dtype=np.float64)
    assert_allclose(t.P_hat, exact, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_row_stochastic_random_labels(seed):
    rng = np.random.default_rng(seed)
    n, c = rng.integers(1, 40), rng.integers(1, 30)
    Y = sp.csr_matrix((rng.random((n, c)) < rng.uniform(0.01, 0.5)).astype(np.int8))
    P = build_transfer(Y).P_hat
    assert np.all(P >= 0)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_dump_matrix_round_trips(tmp_path):
    P = transfer_matrix(SWAP, 3)
    path = tmp_path / "p.txt"
    dump_matrix(path, P)
    assert_array_equal(np.loadtxt(path), P)
