import math

import numpy as np
import pytest

from fiberent.closed_form import (NotStationaryError, RBlockLaw, binary_fixed_mean_maximizer, iid_maximizer,
                                  markov_extension, project_shift_invariant)
from fiberent.constraints import build_constraint_system, r_block_features
from fiberent.core import block_law, context_marginal, is_stationary_consistent, kernel_of
from fiberent.entropy import conditional_mutual_information, entropy_rate_value
from fiberent.solver import brute_force_maximizer

from helpers import h2, q_law, random_stationary_law


def test_iid_examples():
    u = iid_maximizer([0.5, 0.5])
    assert np.allclose(u.probs, 0.25) and entropy_rate_value(u.probs, 2) == pytest.approx(math.log(2))
    u = iid_maximizer([0.7, 0.3])
    assert np.allclose(u.probs, [0.49, 0.21, 0.21, 0.09])
    assert entropy_rate_value(u.probs, 2) == pytest.approx(0.610864, abs=1e-6)
    u = iid_maximizer([1.0, 0.0])
    assert np.array_equal(u.probs, [1, 0, 0, 0]) and entropy_rate_value(u.probs, 2) == 0.0


def test_iid_dominates_q_family():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.uniform(0.05, 0.95)
        star = iid_maximizer([1 - m, m])
        j_star = entropy_rate_value(star.probs, 2)
        q = rng.uniform(0, min(m, 1 - m))
        u = q_law(m, q)
        j = entropy_rate_value(u, 2)
        assert j <= j_star + 1e-10
        if np.max(np.abs(u - star.probs)) > 1e-6:
            assert j < j_star


def test_markov_extension_examples():
    mu = RBlockLaw(2, 1, [0.3, 0.7])
    assert np.allclose(markov_extension(mu).probs, iid_maximizer([0.3, 0.7]).probs)
    u = markov_extension(RBlockLaw(2, 2, [0.45, 0.05, 0.05, 0.45]))
    assert u.probs[1] == pytest.approx(0.045) and u.probs[0] == pytest.approx(0.405)
    pi = np.array([0.2, 0.8])
    triple = np.einsum("i,j,k->ijk", pi, pi, pi).ravel()
    assert np.allclose(markov_extension(RBlockLaw(2, 2, np.outer(pi, pi).ravel())).probs, triple)


def test_markov_extension_invariants():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, r = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        mu = RBlockLaw(n, r, random_stationary_law(rng, n, r - 1) if r > 1 else rng.dirichlet(np.ones(n)))
        u = markov_extension(mu)
        assert np.max(np.abs(context_marginal(u).masses - mu.probs)) <= 1e-12
        assert is_stationary_consistent(u, 1e-12)[0]
        assert conditional_mutual_information(u) <= 1e-10
        # kernel depends on the context only through its suffix
        if r > 1:
            k = kernel_of(u).matrix()
            s = np.arange(n ** r) % n ** (r - 1)
            for c in range(n ** r):
                assert np.allclose(k[c], k[s == s[c]][0])


def test_null_context_row():
    mu3 = RBlockLaw(3, 2, [0.5, 0, 0, 0, 0.5, 0, 0, 0, 0])    # symbol 2 never occurs
    u = markov_extension(mu3)
    assert is_stationary_consistent(u)[0]
    u2 = markov_extension(mu3, null_context_row=[1, 0, 0])
    assert np.array_equal(u.probs, u2.probs)   # null suffix carries no mass either way


def test_not_stationary():
    mu = RBlockLaw(2, 2, [0.4, 0.3, 0.1, 0.2])
    with pytest.raises(NotStationaryError, match="mu not stationary"):
        markov_extension(mu)
    fixed = markov_extension(mu, reproject=True)
    assert is_stationary_consistent(fixed, 1e-12)[0]
    assert project_shift_invariant(mu).shift_residual() <= 1e-12


def test_binary_fixed_mean():
    u, P = binary_fixed_mean_maximizer(0.5)
    assert np.allclose(u.probs, 0.25)
    u, P = binary_fixed_mean_maximizer(0.3)
    assert np.allclose(P, [[0.7, 0.3], [0.7, 0.3]])
    assert P[0, 1] == pytest.approx(0.3) and P[1, 0] == pytest.approx(0.7)
    assert entropy_rate_value(u.probs, 2) == pytest.approx(h2(0.3), abs=1e-14)
    u, _ = binary_fixed_mean_maximizer(0.0)
    assert np.array_equal(u.probs, [1, 0, 0, 0])
    with pytest.raises(ValueError):
        binary_fixed_mean_maximizer(1.5)


def test_brute_force_agrees_with_markov_extension():
    rng = np.random.default_rng(8)
    for _ in range(3):
        mu = RBlockLaw(2, 2, random_stationary_law(rng, 2, 1))
        bf = brute_force_maximizer(build_constraint_system(r_block_features(mu.probs, 2)))
        assert np.max(np.abs(bf.probs - markov_extension(mu).probs)) <= 1e-4


def test_rblock_json():
    mu = RBlockLaw(2, 2, [0.45, 0.05, 0.05, 0.45])
    assert np.array_equal(RBlockLaw.from_dict(mu.to_dict()).probs, mu.probs)
