import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fiberent.core import (Alphabet, BlockLaw, ConditionalKernel, ContextMarginal, InvalidLawError, SupportFace,
                           block_law, block_law_of, context_marginal, is_stationary_consistent, kernel_of,
                           shift_successor)

from helpers import random_stationary_law

PERSISTENT = [0.45, 0.05, 0.05, 0.45]


def test_context_marginal_examples():
    assert np.allclose(context_marginal(block_law([0.25] * 4, 2, 1)).masses, [0.5, 0.5])
    assert np.allclose(context_marginal(block_law(PERSISTENT, 2, 1)).masses, [0.5, 0.5])
    assert np.array_equal(context_marginal(block_law([1, 0, 0, 0], 2, 1)).masses, [1.0, 0.0])


def test_stationary_consistency_examples():
    ok, resid = is_stationary_consistent(block_law(PERSISTENT, 2, 1))
    assert ok and resid == 0.0
    ok, resid = is_stationary_consistent(block_law([0.9, 0.1, 0, 0], 2, 1))
    assert not ok and resid == pytest.approx(0.1)
    pi = np.array([0.2, 0.5, 0.3])
    assert is_stationary_consistent(block_law(np.outer(pi, pi).ravel(), 3, 1))[0]


def test_kernel_of_examples():
    k = kernel_of(block_law([0.25] * 4, 2, 1))
    assert all(np.allclose(row, [0.5, 0.5]) for row in k.rows)
    k = kernel_of(block_law(PERSISTENT, 2, 1))
    assert np.allclose(k.rows[0], [0.9, 0.1]) and np.allclose(k.rows[1], [0.1, 0.9])
    k = kernel_of(block_law([0.6, 0.4, 0, 0], 2, 1))
    assert k.rows[1] is None and list(k.active) == [True, False]


def test_block_law_of_examples():
    a = Alphabet(2)
    u = block_law_of(ContextMarginal(a, 1, [0.5, 0.5]), ConditionalKernel(a, 1, ([0.9, 0.1], [0.1, 0.9])))
    assert np.allclose(u.probs, PERSISTENT)
    u = block_law_of(ContextMarginal(a, 1, [1, 0]), ConditionalKernel(a, 1, ([1, 0], None)))
    assert np.array_equal(u.probs, [1, 0, 0, 0])
    u = block_law_of(ContextMarginal(a, 1, [0.7, 0.3]), ConditionalKernel(a, 1, ([0.3, 0.7], [0.3, 0.7])))
    assert np.allclose(u.probs, [0.21, 0.49, 0.09, 0.21])


def test_block_law_of_missing_row():
    a = Alphabet(2)
    with pytest.raises(InvalidLawError, match="kernel incomplete"):
        block_law_of(ContextMarginal(a, 1, [0.5, 0.5]), ConditionalKernel(a, 1, ([1, 0], None)))


@pytest.mark.parametrize("probs", [[0.5, 0.5, 0.1, -0.1], [0.3, 0.3, 0.3, 0.3], [0.5, 0.5, 0.0]])
def test_invalid_block_laws_rejected(probs):
    with pytest.raises(InvalidLawError):
        block_law(probs, 2, 1)


def test_invalid_kernel_and_face():
    with pytest.raises(InvalidLawError):
        ConditionalKernel(Alphabet(2), 1, ([0.5, 0.6], [0.5, 0.5]))
    with pytest.raises(ValueError):
        SupportFace([False, False])


@pytest.mark.parametrize("n,r", [(n, r) for n in (1, 2, 3) for r in (1, 2, 3)])
def test_index_bijection_exhaustive(n, r):
    a = Alphabet(n)
    blocks = list(itertools.product(range(n), repeat=r + 1))
    assert [a.index(b) for b in blocks] == list(range(n ** (r + 1)))
    assert all(a.symbols(a.index(b), r + 1) == b for b in blocks)
    assert list(a.blocks(r + 1)) == blocks


def test_shift_successor_matches_symbols():
    a = Alphabet(3)
    succ = shift_successor(3, 2)
    for i, block in enumerate(a.blocks(3)):
        assert a.symbols(int(succ[i]), 2) == block[1:]


@given(st.integers(2, 4), st.integers(1, 2), st.integers(0, 2 ** 32 - 1))
def test_round_trip_positive_laws(n, r, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(n ** (r + 1)))
    u = block_law(probs, n, r)
    eta = context_marginal(u)
    assert abs(eta.masses.sum() - 1) <= 1e-12
    back = block_law_of(eta, kernel_of(u))
    assert np.max(np.abs(back.probs - u.probs)) <= 1e-12


@given(st.integers(2, 3), st.integers(1, 2), st.integers(0, 2 ** 32 - 1))
def test_kernel_round_trip_on_active_contexts(n, r, seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(n ** (r + 1)))
    probs.reshape(-1, n)[0] = 0.0
    probs /= probs.sum()
    u = block_law(probs, n, r)
    p = kernel_of(u)
    q = kernel_of(block_law_of(context_marginal(u), p))
    for a, b in zip(p.rows, q.rows):
        assert (a is None) == (b is None)
        if a is not None:
            assert np.allclose(a, b, atol=1e-12)


def test_stationary_helper_is_consistent():
    rng = np.random.default_rng(1)
    u = block_law(random_stationary_law(rng, 3, 2), 3, 2)
    assert is_stationary_consistent(u, 1e-12)[0]


def test_serialization_round_trips():
    u = block_law([0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0], 2, 2)
    assert np.array_equal(BlockLaw.from_json(u.to_json()).probs, u.probs)
    assert np.array_equal(BlockLaw.from_csv(u.to_csv(), 2).probs, u.probs)
    assert u.to_csv().splitlines()[0] == "c_1,c_2,a,prob"
    assert BlockLaw.from_dict(u.to_dict()) == u
