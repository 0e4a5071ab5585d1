import numpy as np
import pytest
from scipy.stats import chisquare

from fiberent.core import Alphabet, ConditionalKernel, ContextMarginal
from fiberent.empirical import empirical_block_law
from fiberent.realization import (GENERATOR, HiddenAction, SamplePath, build_random_mapping,
                                  rotation_preserves_measure, simulate, simulate_with_hidden_action)

A2 = Alphabet(2)


def chain(a, b):
    m = a / (a + b)
    return ConditionalKernel(A2, 1, ([1 - a, a], [b, 1 - b])), ContextMarginal(A2, 1, [1 - m, m])


def transition_rows(path, n_symbols, r):
    counts = empirical_block_law(path, r).counts.reshape(-1, n_symbols)
    return counts, counts / counts.sum(axis=1, keepdims=True)


def test_breakpoint_examples():
    F = build_random_mapping(ConditionalKernel(A2, 1, ([0.9, 0.1], [0.5, 0.5])))
    assert np.allclose(F.breakpoints[0], [0, 0.9, 1])
    F = build_random_mapping(ConditionalKernel(Alphabet(4), 1, [[0.25] * 4] * 4))
    assert np.allclose(F.breakpoints[0], [0, 0.25, 0.5, 0.75, 1])
    F = build_random_mapping(ConditionalKernel(A2, 1, ([0.3, 0.7], None)))
    assert np.allclose(F.breakpoints[1], [0, 0.5, 1]) and F.inactive == (1,)


def test_interval_lengths_reproduce_rows():
    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.ones(3), size=9)
    F = build_random_mapping(ConditionalKernel(Alphabet(3), 2, tuple(rows)))
    assert np.max(np.abs(F.interval_lengths() - rows)) <= 1e-12
    assert np.all(np.diff(F.breakpoints, axis=1) >= 0)


def test_half_open_intervals():
    F = build_random_mapping(ConditionalKernel(A2, 1, ([0.5, 0.5], [0.5, 0.5])))
    assert F(0, 0.0) == 0 and F(0, 0.4999999) == 0 and F(0, 0.5) == 1 and F(0, 0.9999) == 1
    F = build_random_mapping(ConditionalKernel(Alphabet(3), 1, [[0.5, 0.0, 0.5]] * 3))
    assert F(0, 0.5) == 2                       # empty interval is never hit


def test_deterministic_kernel_orbit():
    p = ConditionalKernel(A2, 1, ([0, 1], [1, 0]))
    F = build_random_mapping(p)
    eta = ContextMarginal(A2, 1, [1.0, 0.0])
    for seed in (1, 2, 3):
        assert simulate(F, eta, 10, seed).symbols.tolist() == [0, 1] * 5


def test_seed_determinism_and_header():
    F = build_random_mapping(chain(0.2, 0.3)[0])
    eta = chain(0.2, 0.3)[1]
    a, b = simulate(F, eta, 500, 9), simulate(F, eta, 500, 9)
    assert np.array_equal(a.symbols, b.symbols)
    assert not np.array_equal(a.symbols, simulate(F, eta, 500, 10).symbols)
    assert a.header()["generator"] == GENERATOR and a.header()["seed"] == 9


def test_identity_action_reproduces_path():
    k, eta = chain(0.2, 0.3)
    F = build_random_mapping(k)
    hidden = HiddenAction.iid([0.0, 0.0])
    path, Z = simulate_with_hidden_action(F, eta, hidden, 2000, 5)
    assert np.array_equal(path.symbols, simulate(F, eta, 2000, 5).symbols)
    assert set(Z.tolist()) <= {0, 1}


@pytest.mark.parametrize("theta", [0.0, 0.3, 0.7, 1 / 3, 0.123456789])
def test_rotations_preserve_measure(theta):
    assert rotation_preserves_measure(theta) <= 1e-12


def test_markov_hidden_process():
    hidden = HiddenAction([0.1, 0.6], [[0.9, 0.1], [0.2, 0.8]], [1.0, 0.0])
    Z = hidden.sample_states(20000, np.random.default_rng(0))
    assert Z[0] == 0
    stay = np.mean(Z[1:][Z[:-1] == 0] == 0)
    assert stay == pytest.approx(0.9, abs=0.02)
    with pytest.raises(ValueError):
        HiddenAction([0.1, 0.2], [[0.5, 0.6], [0.5, 0.5]])


def test_sample_path_io():
    p = SamplePath([0, 1, 1, 0], 2, 1, seed=3, kernel_id="k")
    for fmt in ("text", "csv"):
        q = SamplePath.loads(p.dumps(fmt))
        assert np.array_equal(q.symbols, p.symbols) and q.seed == 3 and q.kernel_id == "k"
    big = SamplePath([11, 0, 3], 12, 1)
    assert np.array_equal(SamplePath.loads(big.dumps("csv")).symbols, [11, 0, 3])
    with pytest.raises(ValueError):
        SamplePath([0, 2], 2, 1)


@pytest.mark.statistical
def test_iid_mean():
    F = build_random_mapping(ConditionalKernel(A2, 1, ([0.5, 0.5], [0.5, 0.5])))
    path = simulate(F, ContextMarginal(A2, 1, [0.5, 0.5]), 100_000, 1)
    assert abs(path.symbols.mean() - 0.5) <= 3 * 0.5 / np.sqrt(100_000)


@pytest.mark.statistical
def test_two_block_frequencies():
    k, eta = chain(0.1, 0.1)
    path = simulate(build_random_mapping(k), eta, 1_000_000, 2)
    est = empirical_block_law(path, 1)
    assert np.max(np.abs(est.u_hat - [0.45, 0.05, 0.05, 0.45])) <= 0.005


@pytest.mark.statistical
@pytest.mark.parametrize("thetas", [None, (0.3, 0.7)])
def test_hidden_rotation_invariance(thetas):
    k, eta = chain(0.3, 0.7)                      # iid Bernoulli(0.3) written as a chain
    F = build_random_mapping(k)
    if thetas is None:
        path = simulate(F, eta, 1_000_000, 4)
    else:
        path, _ = simulate_with_hidden_action(F, eta, HiddenAction.iid(thetas), 1_000_000, 4)
    counts, rows = transition_rows(path, 2, 1)
    P = k.matrix()
    assert np.max(np.abs(rows - P)) <= 0.005
    for c in range(2):
        assert chisquare(counts[c], counts[c].sum() * P[c]).pvalue > 0.001
