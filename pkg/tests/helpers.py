"""Independent oracles shared by the tests (plain loops, no package internals)."""

import itertools
import math

import numpy as np


def h2(p):
    return -sum(x * math.log(x) for x in (p, 1 - p) if x > 0)


def entropy_rate_loops(probs, n, r):
    """-sum u log(u / eta) with explicit context loops."""
    total = 0.0
    for c in range(n ** r):
        row = probs[c * n:(c + 1) * n]
        eta = sum(row)
        for x in row:
            if x > 0:
                total -= x * math.log(x / eta)
    return total


def stationary_context_law(kernel, n, r):
    """Stationary law of the context chain c -> (c_2..c_r, a) by power iteration on a dense matrix."""
    k = n ** r
    M = np.zeros((k, k))
    for c in range(k):
        for a in range(n):
            M[c, (c * n + a) % k] += kernel[c, a]
    w, v = np.linalg.eig(M.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return pi / pi.sum()


def random_stationary_law(rng, n, r, alpha=1.0):
    """Strictly positive stationary-consistent block law from a random kernel."""
    kernel = rng.dirichlet(np.full(n, alpha), size=n ** r)
    eta = stationary_context_law(kernel, n, r)
    return (eta[:, None] * kernel).ravel()


def all_blocks(n, length):
    return list(itertools.product(range(n), repeat=length))


def q_law(m, q):
    return np.array([1 - m - q, q, q, m - q])
