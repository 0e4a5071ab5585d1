"""Entropy-rate functional, its derivatives, and the gap / CMI functionals.

All logarithms are natural; values are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BlockLaw, is_stationary_consistent

CMI_CLAMP = 1e-10


class ConsistencyError(RuntimeError):
    """A quantity that must be nonnegative came out clearly negative."""


class BoundaryError(ValueError):
    pass


def xlogx(x) -> np.ndarray:
    """Elementwise ``x log x`` with ``0 log 0 = 0``."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def shannon_entropy(p) -> float:
    return float(-np.sum(xlogx(p)))


def binary_entropy(p: float) -> float:
    return shannon_entropy([p, 1.0 - p])


def conditional_entropy(joint: np.ndarray) -> float:
    """``H(Y|X)`` for a joint table with conditioning variable on rows."""
    joint = np.asarray(joint, float)
    return float(-np.sum(xlogx(joint)) + np.sum(xlogx(joint.sum(axis=1))))


@dataclass(frozen=True)
class EntropyReport:
    value_nats: float
    per_context: np.ndarray


def entropy_rate(u: BlockLaw) -> EntropyReport:
    t = u.table()
    eta = t.sum(axis=1)
    # J = -sum u log u + sum eta log eta; the per-context split uses the same terms
    per_context = -xlogx(t).sum(axis=1) + xlogx(eta)
    value = float(-np.sum(xlogx(t)) + np.sum(xlogx(eta)))
    return EntropyReport(value, per_context)


def entropy_rate_value(probs: np.ndarray, n_symbols: int) -> float:
    """J on a raw array (no validation); used in inner loops."""
    t = np.asarray(probs, float).reshape(-1, n_symbols)
    return float(-np.sum(xlogx(t)) + np.sum(xlogx(t.sum(axis=1))))


def entropy_gradient(u: BlockLaw | np.ndarray, n_symbols: int | None = None,
                     coords=None) -> np.ndarray:
    """``dJ/du(c,a) = log eta(c) - log u(c,a)``.

    Evaluated on ``coords`` (default: the active coordinates ``u > 0``);
    every other entry of the result is NaN. Explicitly requesting a
    coordinate where ``u`` vanishes raises :class:`BoundaryError`.
    """
    if isinstance(u, BlockLaw):
        probs, n_symbols = u.probs, u.n_symbols
    else:
        probs = np.asarray(u, float)
    t = probs.reshape(-1, n_symbols)
    eta = np.repeat(t.sum(axis=1), n_symbols)
    if coords is None:
        coords = np.flatnonzero(probs > 0)
    coords = np.asarray(coords)
    if np.any(probs[coords] <= 0):
        bad = int(coords[np.argmax(probs[coords] <= 0)])
        raise BoundaryError(f"gradient undefined at boundary (coordinate {bad} has u=0)")
    grad = np.full(probs.size, np.nan)
    grad[coords] = np.log(eta[coords]) - np.log(probs[coords])
    return grad


def hessian_matrix(probs: np.ndarray, n_symbols: int, coords=None) -> np.ndarray:
    """Hessian of J on the given coordinates: ``-diag(1/u) + sum_c 1_c 1_c^T / eta(c)``."""
    probs = np.asarray(probs, float)
    if coords is None:
        coords = np.arange(probs.size)
    coords = np.asarray(coords)
    u = probs[coords]
    if np.any(u <= 0):
        raise BoundaryError("Hessian undefined where u = 0")
    ctx = coords // n_symbols
    eta = probs.reshape(-1, n_symbols).sum(axis=1)
    same = (ctx[:, None] == ctx[None, :]).astype(float)
    return same / eta[ctx][:, None] - np.diag(1.0 / u)


def _right_window_table(u: BlockLaw) -> np.ndarray:
    """Law of ``(X_1^{r-1}, X_r)`` as a ``(|A|^{r-1}, |A|)`` table."""
    n, r = u.n_symbols, u.r
    w = u.probs.reshape(n, n ** r).sum(axis=0)
    return w.reshape(n ** (r - 1), n)


def conditional_mutual_information(u: BlockLaw, tol: float = 1e-10) -> float:
    """``I_u(X_0; X_r | X_1^{r-1})`` as a difference of conditional entropies.

    For ``r = 1`` the conditioning block is empty and the first term is ``H(X_1)``.
    """
    ok, resid = is_stationary_consistent(u, tol)
    if not ok:
        raise ValueError(f"CMI requires a stationary-consistent law (residual {resid:.3g})")
    value = conditional_entropy(_right_window_table(u)) - conditional_entropy(u.table())
    if value < -CMI_CLAMP:
        raise ConsistencyError(f"conditional mutual information {value!r} < 0")
    return max(value, 0.0)


def conditional_mutual_information_kl(u: BlockLaw) -> float:
    """Same quantity via the triple-sum KL form (cross-check route)."""
    n, r = u.n_symbols, u.r
    full = u.probs.reshape(n, n ** (r - 1), n)          # (x0, s, a)
    p_x0_s = full.sum(axis=2)                          # (x0, s)
    p_s_a = full.sum(axis=0)                           # (s, a)
    p_s = p_s_a.sum(axis=1)                            # (s,)
    total = 0.0
    for x0, s, a in zip(*np.nonzero(full > 0)):
        p = full[x0, s, a]
        total += p * np.log(p * p_s[s] / (p_x0_s[x0, s] * p_s_a[s, a]))
    return float(total)


def r_block_conditional_entropy(mu, n_symbols: int) -> float:
    """``H_mu(X_r | X_1^{r-1})`` for a law on ``A^r`` (last symbol given the rest)."""
    mu = np.asarray(getattr(mu, "probs", mu), float)
    return conditional_entropy(mu.reshape(-1, n_symbols))


def gap_fixed_r_block(mu, u: BlockLaw, tol: float = 1e-10) -> float:
    """``Delta_mu(u) = H_mu(X_r|X_1^{r-1}) - J(u)`` for ``u`` in ``U(mu)``."""
    mu = np.asarray(getattr(mu, "probs", mu), float)
    if mu.size != u.n_contexts:
        raise ValueError("mu must be a law on A^r")
    eta = u.table().sum(axis=1)
    dev = float(np.max(np.abs(eta - mu)))
    if dev > tol:
        raise ValueError(f"not in U(mu): context marginal differs from mu by {dev:.3g}")
    ok, resid = is_stationary_consistent(u, tol)
    if not ok:
        raise ValueError(f"not in U(mu): stationarity residual {resid:.3g}")
    return r_block_conditional_entropy(mu, u.n_symbols) - entropy_rate(u).value_nats
