"""Linear description of the feasible class and its tangent geometry.

A :class:`ConstraintSystem` stacks, over the ``|A|^{r+1}`` block coordinates,

* one normalization row ``sum u = 1``,
* one row per retained feature ``sum u G_j = b_j``,
* one stationarity row per context ``sum_b u(c, b) - sum_a u(a, c) = 0``,

and carries a :class:`~fiberent.core.SupportFace`; coordinates outside the
face are held at zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import Alphabet, BlockLaw, ContextMarginal, SupportFace

RANK_RTOL = 1e-10

NORMALIZATION = "normalization"
MOMENT = "moment"
STATIONARITY = "stationarity"


class NoRightInverseError(ValueError):
    pass


class LeftFaceError(ValueError):
    pass


def nullspace(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (as columns) of ``ker A``.

    Singular values ``<= rtol * sigma_max`` count as zero.
    """
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[1]
    if A.shape[0] == 0 or not np.any(A):
        return np.eye(n)
    _, s, vh = np.linalg.svd(A)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].T.copy()


def matrix_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    A = np.atleast_2d(np.asarray(A, float))
    if A.size == 0 or not np.any(A):
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class FeatureSet:
    """Retained observables ``G_j`` (rows of ``tables``) and their targets ``b``."""

    n_symbols: int
    r: int
    tables: np.ndarray
    targets: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        n_coords = self.n_symbols ** (self.r + 1)
        tables = np.array(self.tables, dtype=float).reshape(-1, n_coords)
        targets = np.array(self.targets, dtype=float).ravel()
        if tables.shape[0] != targets.size:
            raise ValueError(f"{tables.shape[0]} feature tables but {targets.size} targets")
        names = tuple(self.names) or tuple(f"G{j + 1}" for j in range(targets.size))
        if len(names) != targets.size:
            raise ValueError("one name per feature required")
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "names", names)

    @property
    def m(self) -> int:
        return int(self.targets.size)

    @property
    def n_coords(self) -> int:
        return self.n_symbols ** (self.r + 1)

    def with_targets(self, targets) -> "FeatureSet":
        return FeatureSet(self.n_symbols, self.r, self.tables, targets, self.names)

    def evaluate(self, probs) -> np.ndarray:
        """Moment map ``u -> (sum u G_j)_j``."""
        return self.tables @ np.asarray(getattr(probs, "probs", probs), float)

    def to_dict(self) -> dict:
        return {
            "alphabet": self.n_symbols,
            "r": self.r,
            "features": [{"name": n, "table": t.tolist()} for n, t in zip(self.names, self.tables)],
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSet":
        for key in ("alphabet", "r", "features", "targets"):
            if key not in d:
                raise ValueError(f"FeatureSet JSON missing field '{key}'")
        feats = d["features"]
        n_coords = int(d["alphabet"]) ** (int(d["r"]) + 1)
        for k, f in enumerate(feats):
            if "table" not in f:
                raise ValueError(f"FeatureSet JSON: features[{k}] missing field 'table'")
            if len(f["table"]) != n_coords:
                raise ValueError(f"FeatureSet JSON: features[{k}].table must have {n_coords} entries")
        tables = np.array([f["table"] for f in feats], float).reshape(len(feats), n_coords)
        names = tuple(f.get("name", f"G{k + 1}") for k, f in enumerate(feats))
        return cls(int(d["alphabet"]), int(d["r"]), tables, d["targets"], names)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSet":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def empty_features(n_symbols: int, r: int) -> FeatureSet:
    return FeatureSet(n_symbols, r, np.zeros((0, n_symbols ** (r + 1))), [])


def symbol_indicator(n_symbols: int, r: int, symbol: int) -> np.ndarray:
    """``G(c, a) = 1{a = symbol}``; for a binary alphabet and symbol 1 this is the mean."""
    table = np.zeros((n_symbols ** r, n_symbols))
    table[:, symbol] = 1.0
    return table.ravel()


def context_indicator(n_symbols: int, r: int, context: int) -> np.ndarray:
    table = np.zeros((n_symbols ** r, n_symbols))
    table[context, :] = 1.0
    return table.ravel()


def mean_features(m: float) -> FeatureSet:
    """Binary, ``r = 1``: the single retained observable ``P(Y = 1) = m``."""
    return FeatureSet(2, 1, symbol_indicator(2, 1, 1)[None, :], [m], ("mean",))


def marginal_features(pi) -> FeatureSet:
    """``r = 1``: pin the one-point marginal ``pi`` through context indicators."""
    pi = np.asarray(pi, float)
    n = pi.size
    tables = np.array([context_indicator(n, 1, c) for c in range(n)])
    return FeatureSet(n, 1, tables, pi, tuple(f"ctx{c}" for c in range(n)))


def r_block_features(mu, n_symbols: int) -> FeatureSet:
    """Pin the full context marginal to the ``r``-block law ``mu``."""
    mu = np.asarray(getattr(mu, "probs", mu), float)
    r = int(round(np.log(mu.size) / np.log(n_symbols)))
    if n_symbols ** r != mu.size:
        raise ValueError("mu size is not a power of the alphabet size")
    tables = np.array([context_indicator(n_symbols, r, c) for c in range(mu.size)])
    alphabet = Alphabet(n_symbols)
    names = tuple("ctx" + "".join(map(str, alphabet.symbols(c, r))) for c in range(mu.size))
    return FeatureSet(n_symbols, r, tables, mu, names)


def stationarity_rows(n_symbols: int, r: int) -> np.ndarray:
    n_ctx = n_symbols ** r
    rows = np.zeros((n_ctx, n_ctx * n_symbols))
    idx = np.arange(n_ctx * n_symbols)
    rows[idx // n_symbols, idx] += 1.0          # right marginal: u(c, .)
    rows[idx % n_ctx, idx] -= 1.0               # left marginal: u(., c)
    return rows


@dataclass(frozen=True)
class ConstraintSystem:
    features: FeatureSet
    face: SupportFace
    matrix: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    row_kinds: tuple = field(repr=False)

    @property
    def n_symbols(self) -> int:
        return self.features.n_symbols

    @property
    def r(self) -> int:
        return self.features.r

    @property
    def n_coords(self) -> int:
        return self.features.n_coords

    def rows_of(self, *kinds) -> np.ndarray:
        return np.array([k in kinds for k in self.row_kinds])

    def with_targets(self, targets) -> "ConstraintSystem":
        return build_constraint_system(self.features.with_targets(targets), self.face)

    def with_face(self, face: SupportFace) -> "ConstraintSystem":
        return build_constraint_system(self.features, face)

    def residuals(self, probs) -> np.ndarray:
        probs = np.asarray(getattr(probs, "probs", probs), float)
        return self.matrix @ probs - self.rhs

    def report(self, probs=None) -> dict:
        out = {
            "n_coords": self.n_coords,
            "face": self.face.mask.astype(int).tolist(),
            "row_kinds": list(self.row_kinds),
            "rank": matrix_rank(self.matrix[:, self.face.mask]),
        }
        if probs is not None:
            out["residuals"] = self.residuals(probs).tolist()
        return out


def build_constraint_system(features: FeatureSet, face: Optional[SupportFace] = None) -> ConstraintSystem:
    n, r = features.n_symbols, features.r
    n_coords = features.n_coords
    if face is None:
        face = SupportFace.full(n_coords)
    if len(face) != n_coords:
        raise ValueError(f"face has {len(face)} coordinates, expected {n_coords}")
    n_ctx = n ** r
    matrix = np.vstack([np.ones((1, n_coords)), features.tables, stationarity_rows(n, r)])
    rhs = np.concatenate([[1.0], features.targets, np.zeros(n_ctx)])
    kinds = (NORMALIZATION,) + (MOMENT,) * features.m + (STATIONARITY,) * n_ctx
    matrix.setflags(write=False)
    rhs.setflags(write=False)
    return ConstraintSystem(features, face, matrix, rhs, kinds)


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal directions (rows of ``vectors``) spanning the tangent space."""

    vectors: np.ndarray
    face: SupportFace

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[0])

    def coordinates(self, h) -> np.ndarray:
        return self.vectors @ np.asarray(h, float)

    def embed(self, t) -> np.ndarray:
        return np.asarray(t, float) @ self.vectors


def _tangent(matrix: np.ndarray, face: SupportFace) -> TangentBasis:
    Z = nullspace(matrix[:, face.mask])
    vectors = np.zeros((Z.shape[1], face.mask.size))
    vectors[:, face.mask] = Z.T
    return TangentBasis(vectors, face)


def tangent_space_basis(system: ConstraintSystem) -> TangentBasis:
    return _tangent(system.matrix, system.face)


def structural_tangent_basis(system: ConstraintSystem) -> TangentBasis:
    """Tangent space of the stationary laws on the face, moments left free."""
    keep = system.rows_of(NORMALIZATION, STATIONARITY)
    return _tangent(system.matrix[keep], system.face)


@dataclass(frozen=True)
class MarginalPinning:
    span_test: Optional[ContextMarginal]
    augmented_test: Optional[ContextMarginal]
    span_residual: float
    augmented_residual: float


def _pinned(basis_rows: np.ndarray, rhs: np.ndarray, system: ConstraintSystem, tol: float):
    """Write every context indicator as ``y @ basis_rows``; return implied masses."""
    n, r = system.n_symbols, system.r
    face = system.face.mask
    B = basis_rows[:, face]
    masses, worst = [], 0.0
    for c in range(n ** r):
        target = context_indicator(n, r, c)[face]
        if B.shape[0] == 0:
            worst = max(worst, float(np.max(np.abs(target))))
            masses.append(np.nan)
            continue
        y, *_ = np.linalg.lstsq(B.T, target, rcond=None)
        worst = max(worst, float(np.max(np.abs(B.T @ y - target))))
        masses.append(float(y @ rhs))
    if worst > tol:
        return None, worst
    masses = np.clip(np.array(masses), 0.0, None)
    return ContextMarginal(Alphabet(n), r, masses / masses.sum()), worst


def marginal_pinning(system: ConstraintSystem, tol: float = 1e-10) -> MarginalPinning:
    """Both strengths of the fixed-context-marginal test.

    The span test asks whether each context indicator lies in
    ``span{1, G_1, ..., G_m}``; the augmented test also admits the
    stationarity rows.
    """
    span_rows = system.rows_of(NORMALIZATION, MOMENT)
    span, span_res = _pinned(system.matrix[span_rows], system.rhs[span_rows], system, tol)
    if system.features.m == 0:
        span = None
    aug, aug_res = _pinned(system.matrix, system.rhs, system, tol)
    if system.features.m == 0:
        aug = None
    return MarginalPinning(span, aug, span_res, aug_res)


def context_marginal_fixed(system: ConstraintSystem, augmented: bool = False,
                           tol: float = 1e-10) -> Optional[ContextMarginal]:
    pin = marginal_pinning(system, tol)
    return pin.augmented_test if augmented else pin.span_test


@dataclass(frozen=True)
class FeasiblePoint:
    status: str                      # "feasible" | "infeasible"
    law: Optional[BlockLaw]
    residual: float
    active: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _analytic_center(x: np.ndarray, A: np.ndarray, b: np.ndarray, max_iters: int = 100) -> np.ndarray:
    """Maximize ``sum log x`` over ``{A x = b}`` starting from a positive feasible ``x``."""
    Z = nullspace(A)
    if Z.shape[1] == 0:
        return x
    for _ in range(max_iters):
        g = Z.T @ (1.0 / x)
        H = (Z.T * (1.0 / x ** 2)) @ Z
        d = Z @ np.linalg.solve(H, g)
        decrement = float(g @ np.linalg.solve(H, g))
        if decrement < 1e-20:
            break
        neg = d < 0
        t = 1.0 if not neg.any() else min(1.0, 0.99 * float(np.min(-x[neg] / d[neg])))
        f0 = np.sum(np.log(x))
        while t > 1e-16:
            xn = x + t * d
            if np.all(xn > 0) and np.sum(np.log(xn)) >= f0 + 0.25 * t * decrement:
                break
            t *= 0.5
        x = x + t * d
        if decrement < 1e-14:
            break
    return x


def _project_affine(x: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    for _ in range(3):
        x = x - np.linalg.lstsq(A, A @ x - b, rcond=None)[0]
    return x


def find_feasible_point(system: ConstraintSystem, tol: float = 1e-9) -> FeasiblePoint:
    """Relative-interior feasible point (analytic center of the minimal face).

    Each face coordinate is maximized by a linear program; coordinates that
    cannot become positive are dropped, the average of the LP solutions is a
    relative-interior point, and a Newton phase moves it to the analytic
    center ``argmax sum log u``.
    """
    face = system.face.mask
    A, b = system.matrix[:, face], system.rhs
    x_ls = np.linalg.lstsq(A, b, rcond=None)[0]
    eq_resid = float(np.max(np.abs(A @ x_ls - b)))
    if eq_resid > tol:
        return FeasiblePoint("infeasible", None, eq_resid)
    k = A.shape[1]
    solutions, best = [], np.zeros(k)
    for i in range(k):
        if best[i] > tol:
            continue
        c = np.zeros(k)
        c[i] = -1.0
        res = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * k, method="highs")
        if res.status == 2:
            return FeasiblePoint("infeasible", None, eq_resid if eq_resid > 0 else float(tol))
        if res.status != 0:
            raise RuntimeError(f"phase-1 LP failed: {res.message}")
        xi = np.clip(res.x, 0.0, None)
        solutions.append(xi)
        best = np.maximum(best, xi)
    pos = best > tol
    x = np.mean(solutions, axis=0)[pos]
    Ap = A[:, pos]
    x = _project_affine(x, Ap, b)
    if np.any(x <= 0):
        raise RuntimeError("phase-1 projection left the positive orthant")
    x = _analytic_center(x, Ap, b)
    x = _project_affine(x, Ap, b)
    probs = np.zeros(system.n_coords)
    active = np.zeros(system.n_coords, dtype=bool)
    active[np.flatnonzero(face)[pos]] = True
    probs[active] = x
    resid = float(np.max(np.abs(system.residuals(probs))))
    law = BlockLaw(Alphabet(system.n_symbols), system.r, probs)
    return FeasiblePoint("feasible", law, resid, active)


@dataclass(frozen=True)
class RightInverse:
    operator: np.ndarray      # (n_coords, m)
    base_targets: np.ndarray

    @property
    def norm(self) -> float:
        if self.operator.size == 0:
            return 0.0
        return float(np.linalg.norm(self.operator, 2))


def moment_right_inverse(system: ConstraintSystem) -> RightInverse:
    """Minimal-norm right inverse of the moment map on the structural tangent space."""
    W = structural_tangent_basis(system).vectors.T          # (n_coords, k)
    T = system.features.tables
    M = T @ W
    if matrix_rank(M) < system.features.m:
        raise NoRightInverseError("no right inverse: restricted moment map is rank deficient")
    R = W @ np.linalg.pinv(M)
    return RightInverse(R, system.features.targets)


def local_feasible_continuation(u_star: BlockLaw, system: ConstraintSystem, b_new) -> BlockLaw:
    """``u(b) = u* + R (b - b0)`` with ``R`` the minimal-norm right inverse."""
    face = system.face.mask
    if np.any(u_star.probs[face] <= 0):
        raise LeftFaceError("u_star must be strictly positive on the face")
    R = moment_right_inverse(system)
    b0 = system.features.evaluate(u_star)
    probs = u_star.probs + R.operator @ (np.asarray(b_new, float) - b0)
    if np.any(probs[face] <= 0):
        raise LeftFaceError("left face: continuation exits the face interior")
    probs[~face] = 0.0
    return BlockLaw(u_star.alphabet, u_star.r, probs)
