"""Random-mapping realization of a kernel and simulation with hidden actions.

Uniform variates come from numpy's counter-based Philox generator. A seed is
expanded with :class:`numpy.random.SeedSequence` into three independent
sub-streams: the initial context, the driving uniforms ``U_t`` and the
hidden process. The stream layout is versioned by :data:`GENERATOR`.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Alphabet, ConditionalKernel, ContextMarginal

GENERATOR = "philox-seedseq-v1"
STREAM_INIT, STREAM_UNIFORM, STREAM_HIDDEN = 0, 1, 2


def streams(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


@dataclass(frozen=True)
class RandomMapping:
    """Cumulative breakpoints ``0 = b_0 <= ... <= b_|A| = 1`` per context."""

    alphabet: Alphabet
    r: int
    breakpoints: np.ndarray          # (contexts, |A| + 1)
    inactive: tuple = ()

    def interval_lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints, axis=1)

    def __call__(self, context: int, v: float) -> int:
        """Symbol whose half-open interval ``[b_a, b_{a+1})`` contains ``v``."""
        row = self.breakpoints[context]
        a = bisect_right(row.tolist(), v) - 1
        return min(max(a, 0), self.alphabet.size - 1)


def build_random_mapping(p: ConditionalKernel, inactive_row: Optional[Sequence[float]] = None) -> RandomMapping:
    n = p.alphabet.size
    fill = np.full(n, 1.0 / n) if inactive_row is None else np.asarray(inactive_row, float)
    rows = p.matrix(fill)
    bp = np.zeros((rows.shape[0], n + 1))
    bp[:, 1:] = np.cumsum(rows, axis=1)
    bp[:, -1] = 1.0
    inactive = tuple(int(c) for c in np.flatnonzero(~p.active))
    return RandomMapping(p.alphabet, p.r, bp, inactive)


@dataclass(frozen=True)
class SamplePath:
    symbols: np.ndarray
    n_symbols: int
    r: int
    seed: Optional[int] = None
    kernel_id: str = ""
    generator: str = GENERATOR

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int64).ravel()
        if s.size and (s.min() < 0 or s.max() >= self.n_symbols):
            raise ValueError("path contains symbols outside the alphabet")
        object.__setattr__(self, "symbols", s)

    def __len__(self) -> int:
        return int(self.symbols.size)

    def header(self) -> dict:
        return {"alphabet": self.n_symbols, "r": self.r, "seed": self.seed,
                "kernel_id": self.kernel_id, "generator": self.generator, "length": len(self)}

    def to_text(self) -> str:
        if self.n_symbols > 10:
            raise ValueError("text format needs single-digit symbols; use CSV")
        return "".join(map(str, self.symbols.tolist()))

    def to_csv(self) -> str:
        return "\n".join(map(str, self.symbols.tolist())) + "\n"

    def dumps(self, fmt: str = "text") -> str:
        body = self.to_text() if fmt == "text" else self.to_csv()
        return json.dumps(self.header()) + "\n" + body

    @classmethod
    def loads(cls, text: str) -> "SamplePath":
        head, _, body = text.partition("\n")
        meta = json.loads(head)
        body = body.strip()
        if "\n" in body or "," in body or meta["alphabet"] > 10:
            symbols = [int(x) for x in body.replace(",", "\n").split()]
        else:
            symbols = [int(ch) for ch in body]
        return cls(np.array(symbols), meta["alphabet"], meta["r"], meta.get("seed"),
                   meta.get("kernel_id", ""), meta.get("generator", GENERATOR))


def _run(F: RandomMapping, eta: ContextMarginal, n: int, init_rng, uniforms: np.ndarray,
         shift: Optional[np.ndarray] = None) -> np.ndarray:
    A, r = F.alphabet.size, F.r
    n_ctx = A ** r
    ctx = int(init_rng.choice(n_ctx, p=eta.masses))
    first = list(F.alphabet.symbols(ctx, r))
    bps = [row[1:-1].tolist() for row in F.breakpoints]
    out = np.empty(n, dtype=np.int64)
    out[:r] = first
    u = uniforms.tolist()
    if shift is not None:
        s = shift.tolist()
        u = [(x + y) % 1.0 for x, y in zip(u, s)]
    for t in range(r, n):
        a = bisect_right(bps[ctx], u[t - r])
        out[t] = a
        ctx = (ctx * A + a) % n_ctx
    return out


def simulate(F: RandomMapping, eta: ContextMarginal, n: int, seed: int, kernel_id: str = "") -> SamplePath:
    """Path ``Y_0..Y_{n-1}``: initial context from ``eta``, then ``Y_t = F(context, U_t)``."""
    if n < F.r:
        raise ValueError("n must be at least r")
    init, uni, _ = streams(seed)
    U = uni.random(n - F.r)
    path = _run(F, eta, n, init, U)
    return SamplePath(path, F.alphabet.size, F.r, seed, kernel_id)


@dataclass(frozen=True)
class HiddenAction:
    """Circle rotations ``T_z(v) = (v + theta_z) mod 1`` driven by a hidden process.

    The hidden process is Markov with ``transition`` (rows ``z -> z'``) started
    from ``initial``; an i.i.d. process has identical rows.
    """

    thetas: np.ndarray
    transition: np.ndarray
    initial: np.ndarray = field(default=None)

    def __post_init__(self):
        th = np.asarray(self.thetas, float) % 1.0
        P = np.atleast_2d(np.asarray(self.transition, float))
        if P.shape != (th.size, th.size) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12):
            raise ValueError("hidden transition must be a stochastic matrix over the hidden states")
        init = P[0] if self.initial is None else np.asarray(self.initial, float)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", init)

    @classmethod
    def iid(cls, thetas, probs=None) -> "HiddenAction":
        th = np.asarray(thetas, float)
        probs = np.full(th.size, 1.0 / th.size) if probs is None else np.asarray(probs, float)
        return cls(th, np.tile(probs, (th.size, 1)), probs)

    def apply(self, z, v):
        return (np.asarray(v, float) + self.thetas[np.asarray(z)]) % 1.0

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = self.thetas.size
        z = np.empty(n, dtype=np.int64)
        if n == 0:
            return z
        draws = rng.random(n)
        cum = np.cumsum(self.transition, axis=1)
        z0 = int(np.searchsorted(np.cumsum(self.initial), draws[0], side="right"))
        z[0] = min(z0, k - 1)
        if np.allclose(self.transition, self.transition[0]):
            z[1:] = np.minimum(np.searchsorted(cum[0], draws[1:], side="right"), k - 1)
            return z
        for t in range(1, n):
            z[t] = min(int(np.searchsorted(cum[z[t - 1]], draws[t], side="right")), k - 1)
        return z


def rotation_preserves_measure(theta: float, grid: int = 1 << 12) -> float:
    """Max error in pushing ``grid`` equal cells of ``[0,1)`` through a rotation.

    A rotation maps each cell ``[i/N, (i+1)/N)`` to an arc of the same length,
    split at most once at 1. The result covers both the per-cell length error
    and the error in the total length of the images.
    """
    left = (np.arange(grid) / grid + theta) % 1.0
    right = left + 1.0 / grid
    lengths = np.where(right <= 1.0, right - left, (1.0 - left) + (right - 1.0))
    gaps = np.diff(np.append(np.sort(left), np.sort(left)[0] + 1.0))   # images tile the circle
    return float(max(np.max(np.abs(lengths - 1.0 / grid)), abs(lengths.sum() - 1.0),
                     np.max(np.abs(gaps - 1.0 / grid))))


def simulate_with_hidden_action(F: RandomMapping, eta: ContextMarginal, hidden: HiddenAction,
                                n: int, seed: int, kernel_id: str = ""):
    """``Y_t = F(context, T_{Z_t}(U_t))`` with ``(Z_t)`` drawn from its own sub-stream."""
    if n < F.r:
        raise ValueError("n must be at least r")
    init, uni, hid = streams(seed)
    U = uni.random(n - F.r)
    Z = hidden.sample_states(n - F.r, hid)
    path = _run(F, eta, n, init, U, hidden.thetas[Z])
    return SamplePath(path, F.alphabet.size, F.r, seed, kernel_id), Z
