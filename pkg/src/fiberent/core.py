"""Block laws on A^{r+1}, their context marginals and conditional kernels.

Symbols are the integers ``0..|A|-1``. A block ``(c_1, ..., c_r, a)`` is stored
at the lexicographic index ``sum_k s_k |A|^{L-1-k}``, so a block-law array
reshaped to ``(|A|**r, |A|)`` has contexts on rows and the final symbol on
columns.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-12


class InvalidLawError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValueError("alphabet size must be positive")

    def n_blocks(self, length: int) -> int:
        return self.size ** length

    def index(self, symbols: Sequence[int]) -> int:
        idx = 0
        for s in symbols:
            if not 0 <= s < self.size:
                raise ValueError(f"symbol {s} outside alphabet of size {self.size}")
            idx = idx * self.size + int(s)
        return idx

    def symbols(self, index: int, length: int) -> tuple[int, ...]:
        if not 0 <= index < self.size ** length:
            raise ValueError(f"index {index} outside A^{length}")
        out = []
        for _ in range(length):
            index, s = divmod(index, self.size)
            out.append(s)
        return tuple(reversed(out))

    def blocks(self, length: int):
        """All blocks of the given length in index order."""
        return itertools.product(range(self.size), repeat=length)


def _as_alphabet(alphabet) -> Alphabet:
    return alphabet if isinstance(alphabet, Alphabet) else Alphabet(int(alphabet))


def _frozen(arr) -> np.ndarray:
    a = np.array(arr, dtype=float)
    a.setflags(write=False)
    return a


def _check_distribution(probs: np.ndarray, expected: int, tol: float, what: str):
    if probs.ndim != 1 or probs.size != expected:
        raise InvalidLawError(f"{what}: expected {expected} entries, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise InvalidLawError(f"{what}: non-finite entries")
    if probs.min() < 0:
        raise InvalidLawError(f"{what}: negative entry {probs.min()!r}")
    total = float(np.sum(probs))
    if abs(total - 1.0) > tol:
        raise InvalidLawError(f"{what}: entries sum to {total!r}, not 1")


@dataclass(frozen=True)
class BlockLaw:
    """Probability law ``u(c, a)`` on ``A^{r+1}`` with memory ``r``."""

    alphabet: Alphabet
    r: int
    probs: np.ndarray
    tol: float = field(default=PROB_TOL, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _as_alphabet(self.alphabet))
        if int(self.r) < 1:
            raise InvalidLawError("memory r must be >= 1")
        object.__setattr__(self, "r", int(self.r))
        probs = _frozen(self.probs).ravel()
        _check_distribution(probs, self.alphabet.size ** (self.r + 1), self.tol, "BlockLaw")
        object.__setattr__(self, "probs", probs)

    def __eq__(self, other):
        if not isinstance(other, BlockLaw):
            return NotImplemented
        return self.alphabet == other.alphabet and self.r == other.r and np.array_equal(self.probs, other.probs)

    __hash__ = None

    @property
    def n_symbols(self) -> int:
        return self.alphabet.size

    @property
    def n_contexts(self) -> int:
        return self.alphabet.size ** self.r

    def table(self) -> np.ndarray:
        """View as a ``(contexts, symbols)`` matrix."""
        return self.probs.reshape(self.n_contexts, self.n_symbols)

    def __getitem__(self, block) -> float:
        return float(self.probs[self.alphabet.index(block)])

    def to_dict(self) -> dict:
        return {"alphabet": self.n_symbols, "r": self.r, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict, tol: float = PROB_TOL) -> "BlockLaw":
        for key in ("alphabet", "r", "probs"):
            if key not in d:
                raise InvalidLawError(f"BlockLaw JSON missing field '{key}'")
        return cls(Alphabet(int(d["alphabet"])), int(d["r"]), np.asarray(d["probs"], float), tol)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BlockLaw":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"c_{k + 1}" for k in range(self.r)] + ["a", "prob"])
        for i, block in enumerate(self.alphabet.blocks(self.r + 1)):
            w.writerow(list(block) + [repr(float(self.probs[i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_symbols: int) -> "BlockLaw":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        r = len(header) - 2
        alphabet = Alphabet(n_symbols)
        probs = np.zeros(alphabet.size ** (r + 1))
        for row in body:
            probs[alphabet.index([int(x) for x in row[:-1]])] = float(row[-1])
        return cls(alphabet, r, probs)


@dataclass(frozen=True)
class ContextMarginal:
    alphabet: Alphabet
    r: int
    masses: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _as_alphabet(self.alphabet))
        masses = _frozen(self.masses).ravel()
        _check_distribution(masses, self.alphabet.size ** self.r, PROB_TOL, "ContextMarginal")
        object.__setattr__(self, "masses", masses)


@dataclass(frozen=True)
class ConditionalKernel:
    """Rows ``p(.|c)``; a row of ``None`` marks an inactive (zero-mass) context."""

    alphabet: Alphabet
    r: int
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _as_alphabet(self.alphabet))
        rows = []
        for k, row in enumerate(self.rows):
            if row is None:
                rows.append(None)
                continue
            row = _frozen(row)
            _check_distribution(row, self.alphabet.size, PROB_TOL, f"kernel row {k}")
            rows.append(row)
        if len(rows) != self.alphabet.size ** self.r:
            raise InvalidLawError("kernel must have one row per context")
        object.__setattr__(self, "rows", tuple(rows))

    @property
    def active(self) -> np.ndarray:
        return np.array([row is not None for row in self.rows])

    def matrix(self, fill: Optional[np.ndarray] = None) -> np.ndarray:
        """Dense ``(contexts, symbols)`` matrix; inactive rows take ``fill`` (default NaN)."""
        n = self.alphabet.size
        if fill is None:
            fill = np.full(n, np.nan)
        return np.array([fill if row is None else row for row in self.rows], dtype=float)


@dataclass(frozen=True)
class SupportFace:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool).ravel()
        if not mask.any():
            raise ValueError("support face must allow at least one coordinate")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, n_coords: int) -> "SupportFace":
        return cls(np.ones(n_coords, dtype=bool))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __len__(self):
        return int(self.mask.size)


def block_law(probs, n_symbols: int, r: int, tol: float = PROB_TOL) -> BlockLaw:
    """Convenience constructor from a flat array."""
    return BlockLaw(Alphabet(n_symbols), r, np.asarray(probs, float), tol)


def context_marginal(u: BlockLaw) -> ContextMarginal:
    return ContextMarginal(u.alphabet, u.r, u.table().sum(axis=1))


def left_right_marginals(probs: np.ndarray, n_symbols: int, r: int):
    """Left and right r-block marginals of an array over A^{r+1}.

    ``left[c] = sum_alpha u(alpha, c)`` and ``right[c] = sum_beta u(c, beta)``.
    """
    t = np.asarray(probs, float).reshape(n_symbols, n_symbols ** r)
    left = t.sum(axis=0)
    right = np.asarray(probs, float).reshape(n_symbols ** r, n_symbols).sum(axis=1)
    return left, right


def is_stationary_consistent(u: BlockLaw, tol: float = PROB_TOL) -> tuple[bool, float]:
    left, right = left_right_marginals(u.probs, u.n_symbols, u.r)
    resid = float(np.max(np.abs(left - right)))
    return resid <= tol, resid


def kernel_of(u: BlockLaw) -> ConditionalKernel:
    t = u.table()
    eta = t.sum(axis=1)
    rows = tuple(None if eta[c] <= 0 else t[c] / eta[c] for c in range(u.n_contexts))
    return ConditionalKernel(u.alphabet, u.r, rows)


def block_law_of(eta: ContextMarginal, p: ConditionalKernel) -> BlockLaw:
    if eta.alphabet != p.alphabet or eta.r != p.r:
        raise InvalidLawError("marginal and kernel disagree on alphabet or r")
    t = np.zeros((eta.masses.size, eta.alphabet.size))
    for c, mass in enumerate(eta.masses):
        if mass <= 0:
            continue
        if p.rows[c] is None:
            raise InvalidLawError(f"kernel incomplete: context {c} has mass {mass} but no row")
        t[c] = mass * p.rows[c]
    return BlockLaw(eta.alphabet, eta.r, t.ravel())


def shift_successor(n_symbols: int, r: int) -> np.ndarray:
    """Index of the shifted context ``sigma(c, a) = (c_2, ..., c_r, a)`` per block."""
    idx = np.arange(n_symbols ** (r + 1))
    return idx % (n_symbols ** r)
