"""Closed-form maximizers: i.i.d. under a fixed marginal, Markov extension under a fixed r-block law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Alphabet, BlockLaw, InvalidLawError, PROB_TOL

SHIFT_TOL = 1e-10


class NotStationaryError(ValueError):
    pass


@dataclass(frozen=True)
class RBlockLaw:
    """Law ``mu`` on ``A^r``."""

    alphabet: Alphabet
    r: int
    probs: np.ndarray

    def __post_init__(self):
        if not isinstance(self.alphabet, Alphabet):
            object.__setattr__(self, "alphabet", Alphabet(int(self.alphabet)))
        probs = np.array(self.probs, float).ravel()
        if probs.size != self.alphabet.size ** self.r:
            raise InvalidLawError(f"RBlockLaw needs {self.alphabet.size ** self.r} entries")
        if probs.min() < 0 or abs(probs.sum() - 1) > PROB_TOL:
            raise InvalidLawError("RBlockLaw entries must be nonnegative and sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def shift_residual(self) -> float:
        """Max gap between left and right ``(r-1)``-block marginals."""
        n, r = self.alphabet.size, self.r
        if r == 1:
            return 0.0
        left = self.probs.reshape(n, n ** (r - 1)).sum(axis=0)
        right = self.probs.reshape(n ** (r - 1), n).sum(axis=1)
        return float(np.max(np.abs(left - right)))

    def to_dict(self) -> dict:
        return {"alphabet": self.alphabet.size, "r": self.r, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RBlockLaw":
        return cls(Alphabet(int(d["alphabet"])), int(d["r"]), d["probs"])


def project_shift_invariant(mu: RBlockLaw) -> RBlockLaw:
    """Nearest (Euclidean) shift-invariant law with the same total mass.

    The shift-invariance and normalization constraints are linear, so this is
    an orthogonal projection; small negative entries from the projection are
    clipped and the result is projected again.
    """
    n, r = mu.alphabet.size, mu.r
    if r == 1:
        return mu
    N = n ** r
    idx = np.arange(N)
    C = np.zeros((n ** (r - 1), N))
    C[idx // n, idx] += 1.0
    C[idx % n ** (r - 1), idx] -= 1.0
    A = np.vstack([np.ones((1, N)), C])
    b = np.concatenate([[1.0], np.zeros(C.shape[0])])
    x = mu.probs.copy()
    for _ in range(20):
        x = x - np.linalg.lstsq(A, A @ x - b, rcond=None)[0]
        if x.min() >= 0:
            break
        x = np.clip(x, 0.0, None)
    x = np.clip(x, 0.0, None)
    return RBlockLaw(mu.alphabet, r, x / x.sum())


def iid_maximizer(pi) -> BlockLaw:
    pi = np.asarray(pi, float)
    if pi.min() < 0 or abs(pi.sum() - 1) > PROB_TOL:
        raise InvalidLawError("pi must be a probability vector")
    return BlockLaw(Alphabet(pi.size), 1, np.outer(pi, pi).ravel())


def markov_extension(mu: RBlockLaw, null_context_row=None, reproject: bool = False,
                     tol: float = SHIFT_TOL) -> BlockLaw:
    """The ``(r-1)``-step Markov extension ``u*(c, a) = mu(c) q(a | c_2..c_r)``.

    ``q(a|s) = mu(s, a) / mu(s)``; suffixes with ``mu(s) = 0`` use
    ``null_context_row`` (uniform by default). With ``r = 1`` the suffix is
    empty and the result is ``mu (x) mu``.
    """
    if not isinstance(mu, RBlockLaw):
        raise TypeError("mu must be an RBlockLaw")
    if reproject:
        mu = project_shift_invariant(mu)
    resid = mu.shift_residual()
    if resid > tol:
        raise NotStationaryError(f"mu not stationary: shift residual {resid:.3g}")
    n, r = mu.alphabet.size, mu.r
    default = np.full(n, 1.0 / n) if null_context_row is None else np.asarray(null_context_row, float)
    suffix_joint = mu.probs.reshape(n ** (r - 1), n)      # (s, a): law of the last r symbols
    suffix_mass = suffix_joint.sum(axis=1)
    q = np.empty_like(suffix_joint)
    for s, mass in enumerate(suffix_mass):
        q[s] = suffix_joint[s] / mass if mass > 0 else default
    suffix_of_context = np.arange(n ** r) % n ** (r - 1)
    u = mu.probs[:, None] * q[suffix_of_context]
    return BlockLaw(mu.alphabet, r, u.ravel())


def binary_fixed_mean_maximizer(m: float) -> tuple[BlockLaw, np.ndarray]:
    if not 0.0 <= m <= 1.0:
        raise ValueError("mean must lie in [0, 1]")
    pi = np.array([1.0 - m, m])
    return iid_maximizer(pi), np.vstack([pi, pi])
