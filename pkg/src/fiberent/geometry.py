"""Second-order geometry of the entropy rate on a fixed-support face.

A :class:`LocalChart` is affine: ``u(b, xi) = u0 + (b - b0) @ Db + (xi - xi0) @ Dxi``.
All chart derivatives are exact pushes of the block-coordinate gradient and
Hessian through ``Db`` and ``Dxi``; finite differences appear only in the
cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSystem, TangentBasis, moment_right_inverse, tangent_space_basis
from .core import BlockLaw
from .entropy import BoundaryError, entropy_rate_value, hessian_matrix

NEGDEF_RTOL = 1e-10


class NotDifferentiableError(ValueError):
    pass


def hessian_quadratic_form(u: BlockLaw | np.ndarray, h, n_symbols: Optional[int] = None) -> float:
    """``D^2 J(u)[h, h] = -sum h^2/u + sum_c (sum_a h(c, a))^2 / eta(c)``."""
    if isinstance(u, BlockLaw):
        probs, n_symbols = u.probs, u.n_symbols
    else:
        probs = np.asarray(u, float)
    h = np.asarray(h, float)
    if np.any((probs <= 0) & (h != 0)):
        raise BoundaryError("direction moves a zero-mass coordinate")
    pos = probs > 0
    eta = probs.reshape(-1, n_symbols).sum(axis=1)
    row = h.reshape(-1, n_symbols).sum(axis=1)
    live = eta > 0
    return float(-np.sum(h[pos] ** 2 / probs[pos]) + np.sum(row[live] ** 2 / eta[live]))


def _restricted_hessian(u: BlockLaw, vectors: np.ndarray) -> np.ndarray:
    support = np.flatnonzero(np.any(vectors != 0, axis=0))
    H = hessian_matrix(u.probs, u.n_symbols, support)
    V = vectors[:, support]
    M = V @ H @ V.T
    return (M + M.T) / 2


@dataclass(frozen=True)
class NullDirections:
    vectors: np.ndarray              # rows, in block coordinates
    eigenvalues: np.ndarray          # full spectrum of the restricted Hessian
    alphas: np.ndarray               # row-rescaling factors alpha(c), one row per vector
    proportionality_residual: float

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[0])


def row_rescaling_factors(u: np.ndarray, h: np.ndarray, n_symbols: int):
    """Best ``alpha(c)`` with ``h(c, .) ~ alpha(c) u(c, .)`` and the max deviation."""
    tu = np.asarray(u, float).reshape(-1, n_symbols)
    th = np.asarray(h, float).reshape(-1, n_symbols)
    eta = tu.sum(axis=1)
    alpha = np.divide(th.sum(axis=1), eta, out=np.zeros_like(eta), where=eta > 0)
    return alpha, float(np.max(np.abs(th - alpha[:, None] * tu)))


def null_directions(u: BlockLaw, basis: TangentBasis, rtol: float = NEGDEF_RTOL) -> NullDirections:
    """Null space of the Hessian restricted to ``basis``; each vector is checked
    to be a row-rescaling of ``u``."""
    k = basis.dimension
    if k == 0:
        return NullDirections(np.zeros((0, u.probs.size)), np.zeros(0), np.zeros((0, u.n_contexts)), 0.0)
    M = _restricted_hessian(u, basis.vectors)
    w, V = np.linalg.eigh(M)
    scale = max(float(np.max(np.abs(w))), 1.0)
    null = np.abs(w) <= rtol * scale
    vecs = (V[:, null].T @ basis.vectors)
    alphas, worst = [], 0.0
    for h in vecs:
        a, dev = row_rescaling_factors(u.probs, h, u.n_symbols)
        alphas.append(a)
        worst = max(worst, dev)
    alphas = np.array(alphas).reshape(len(vecs), u.n_contexts)
    return NullDirections(vecs, w, alphas, worst)


@dataclass(frozen=True)
class StrictConcavity:
    strict: bool
    witness: Optional[tuple] = None  # (sample index, direction h, alpha)


def strict_concavity_on_face(u_samples: Sequence[BlockLaw], basis: TangentBasis) -> StrictConcavity:
    """Check that no tangent direction is a row-rescaling at any sample.

    Uses the restricted Hessian: a nonzero tangent ``h`` is rowwise
    proportional to ``u`` exactly when ``D^2 J(u)[h, h] = 0``, so an empty
    null space at a sample covers every direction in the span of ``basis``.
    """
    if basis.dimension == 0:
        return StrictConcavity(True)
    for i, u in enumerate(u_samples):
        nd = null_directions(u, basis)
        if nd.dimension:
            return StrictConcavity(False, (i, nd.vectors[0], nd.alphas[0]))
    return StrictConcavity(True)


@dataclass(frozen=True)
class LocalChart:
    base: BlockLaw
    b0: np.ndarray
    xi0: np.ndarray
    b_directions: np.ndarray         # (m, n_coords)
    xi_directions: np.ndarray        # (k, n_coords)

    def __post_init__(self):
        for name in ("b0", "xi0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        n = self.base.probs.size
        for name in ("b_directions", "xi_directions"):
            arr = np.asarray(getattr(self, name), float).reshape(-1, n)
            object.__setattr__(self, name, arr)
        D = np.vstack([self.b_directions, self.xi_directions])
        if D.shape[0] and np.linalg.matrix_rank(D) < D.shape[0]:
            raise ValueError("chart directions must be linearly independent")

    @property
    def n_symbols(self) -> int:
        return self.base.n_symbols

    @property
    def support(self) -> np.ndarray:
        return self.base.probs > 0

    def point(self, b, xi) -> np.ndarray:
        b = np.atleast_1d(np.asarray(b, float))
        xi = np.atleast_1d(np.asarray(xi, float))
        return self.base.probs + (b - self.b0) @ self.b_directions + (xi - self.xi0) @ self.xi_directions

    def value(self, b, xi) -> float:
        p = self.point(b, xi)
        if np.any(p[self.support] <= 0) or np.any(p[~self.support] != 0):
            raise BoundaryError("chart point leaves the face interior")
        return entropy_rate_value(p, self.n_symbols)

    def derivatives(self, b=None, xi=None):
        """Gradient and Hessian blocks of ``J~`` at ``(b, xi)`` (default: base)."""
        b = self.b0 if b is None else b
        xi = self.xi0 if xi is None else xi
        p = self.point(b, xi)
        sup = np.flatnonzero(self.support)
        t = p.reshape(-1, self.n_symbols)
        eta = np.repeat(t.sum(axis=1), self.n_symbols)
        g = np.log(eta[sup]) - np.log(p[sup])
        H = hessian_matrix(p, self.n_symbols, sup)
        Db, Dx = self.b_directions[:, sup], self.xi_directions[:, sup]
        return {
            "b": Db @ g,
            "xi": Dx @ g,
            "bb": Db @ H @ Db.T,
            "xixi": Dx @ H @ Dx.T,
            "xib": Dx @ H @ Db.T,
        }


def canonical_chart(system: ConstraintSystem, u0: BlockLaw) -> LocalChart:
    """b-directions are minimal-norm preimages of the moment basis; xi-directions
    an orthonormal basis of the moment map's kernel in the tangent space."""
    R = moment_right_inverse(system)
    xi = tangent_space_basis(system).vectors
    b0 = system.features.evaluate(u0)
    return LocalChart(u0, b0, np.zeros(xi.shape[0]), R.operator.T, xi)


def fixed_mean_chart(m: float) -> LocalChart:
    """Binary ``r = 1`` flow chart ``u(m, q) = (1 - m - q, q, q, m - q)`` at the
    selected point ``q = m (1 - m)``; here ``b = m`` and ``xi = q``."""
    if not 0.0 < m < 1.0:
        raise ValueError("mean must lie in (0, 1)")
    q = m * (1 - m)
    base = BlockLaw(2, 1, [1 - m - q, q, q, m - q])
    return LocalChart(base, [m], [q], [[-1.0, 0.0, 0.0, 1.0]], [[-1.0, 1.0, 1.0, -1.0]])


@dataclass(frozen=True)
class FiberHessian:
    xixi: np.ndarray
    xib: np.ndarray


def fiber_hessian(chart: LocalChart) -> FiberHessian:
    d = chart.derivatives()
    return FiberHessian(d["xixi"], d["xib"])


def _require_selector_regular(chart: LocalChart, grad_tol: float = 1e-8):
    d = chart.derivatives()
    k = chart.xi_directions.shape[0]
    if k == 0:
        return d
    if np.max(np.abs(d["xi"])) > grad_tol:
        raise NotDifferentiableError(
            f"selector not differentiable here: fiber gradient {np.max(np.abs(d['xi'])):.3g} != 0")
    w = np.linalg.eigvalsh((d["xixi"] + d["xixi"].T) / 2)
    scale = max(abs(float(np.trace(d["xixi"]))) / k, 1e-300)
    if w.max() > -NEGDEF_RTOL * scale:
        raise NotDifferentiableError("selector not differentiable here: fiber Hessian not negative definite")
    return d


def resolve_fiber(chart: LocalChart, b, xi_start=None, tol: float = 1e-13, max_iters: int = 100) -> np.ndarray:
    """``s(b)``: maximize ``J~(b, .)`` over the fiber coordinates by damped Newton."""
    xi = np.array(chart.xi0 if xi_start is None else xi_start, float)
    if xi.size == 0:
        return xi
    for _ in range(max_iters):
        d = chart.derivatives(b, xi)
        step = -np.linalg.solve(d["xixi"], d["xi"])
        if np.max(np.abs(d["xi"])) <= tol:
            break
        t, v0 = 1.0, chart.value(b, xi)
        while t > 1e-12:
            try:
                if chart.value(b, xi + t * step) >= v0 - 1e-15:
                    break
            except BoundaryError:
                pass
            t *= 0.5
        xi = xi + t * step
    return xi


def value_function(chart: LocalChart, b) -> float:
    return chart.value(b, resolve_fiber(chart, b))


@dataclass(frozen=True)
class SelectorJacobian:
    matrix: np.ndarray               # (k, m) = Ds(b0)
    finite_difference: Optional[np.ndarray]
    max_discrepancy: float


def selector_jacobian(chart: LocalChart, delta: float = 1e-4, check: bool = True) -> SelectorJacobian:
    """``Ds(b0) = -[d2_xixi J~]^{-1} d2_xib J~``, with a re-solve cross-check."""
    d = _require_selector_regular(chart)
    k, m = chart.xi_directions.shape[0], chart.b_directions.shape[0]
    if k == 0:
        return SelectorJacobian(np.zeros((0, m)), np.zeros((0, m)), 0.0)
    Ds = -np.linalg.solve(d["xixi"], d["xib"])
    if not check:
        return SelectorJacobian(Ds, None, float("nan"))
    fd = np.zeros_like(Ds)
    for j in range(m):
        e = np.zeros(m)
        e[j] = delta
        fd[:, j] = (resolve_fiber(chart, chart.b0 + e) - resolve_fiber(chart, chart.b0 - e)) / (2 * delta)
    return SelectorJacobian(Ds, fd, float(np.max(np.abs(Ds - fd))))


@dataclass(frozen=True)
class EnvelopeReport:
    dv: np.ndarray
    dv_fd: np.ndarray
    d2v: np.ndarray
    d2v_fd: np.ndarray
    dv_error: float
    d2v_error: float

    def passed(self, dv_tol: float = 1e-5, d2v_tol: float = 1e-3) -> bool:
        return self.dv_error <= dv_tol and self.d2v_error <= d2v_tol


def envelope_check(chart: LocalChart, delta: float = 1e-4) -> EnvelopeReport:
    """``DV = d_b J~`` and the Schur-complement ``D^2 V`` against re-solved differences."""
    d = _require_selector_regular(chart)
    m = chart.b_directions.shape[0]
    dv = d["b"]
    if chart.xi_directions.shape[0]:
        d2v = d["bb"] - d["xib"].T @ np.linalg.solve(d["xixi"], d["xib"])
    else:
        d2v = d["bb"]
    v0 = value_function(chart, chart.b0)
    dv_fd = np.zeros(m)
    d2v_fd = np.zeros((m, m))
    E = np.eye(m) * delta
    for i in range(m):
        vp, vm = value_function(chart, chart.b0 + E[i]), value_function(chart, chart.b0 - E[i])
        dv_fd[i] = (vp - vm) / (2 * delta)
        d2v_fd[i, i] = (vp - 2 * v0 + vm) / delta ** 2
        for j in range(i + 1, m):
            vpp = value_function(chart, chart.b0 + E[i] + E[j])
            vpm = value_function(chart, chart.b0 + E[i] - E[j])
            vmp = value_function(chart, chart.b0 - E[i] + E[j])
            vmm = value_function(chart, chart.b0 - E[i] - E[j])
            d2v_fd[i, j] = d2v_fd[j, i] = (vpp - vpm - vmp + vmm) / (4 * delta ** 2)
    return EnvelopeReport(dv, dv_fd, d2v, d2v_fd,
                          float(np.max(np.abs(dv - dv_fd))) if m else 0.0,
                          float(np.max(np.abs(d2v - d2v_fd))) if m else 0.0)


@dataclass(frozen=True)
class GapExpansionReport:
    K: np.ndarray
    deltas: np.ndarray
    directions: np.ndarray
    gaps: np.ndarray                 # (n_directions, n_deltas)
    ratios: np.ndarray               # gap / (0.5 delta^2 v^T K v)


def gap_quadratic_expansion_check(chart: LocalChart, deltas: Sequence[float],
                                  directions: Optional[np.ndarray] = None) -> GapExpansionReport:
    """Compare the gap ``J~(b0, s(b0)) - J~(b0, xi0 + delta v)`` with its quadratic model."""
    d = chart.derivatives()
    K = -d["xixi"]
    k = K.shape[0]
    if k == 0 or np.linalg.eigvalsh((K + K.T) / 2).min() <= 0:
        raise NotDifferentiableError("K(b0) is not positive definite")
    if directions is None:
        directions = np.eye(k)
    directions = np.atleast_2d(np.asarray(directions, float))
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    deltas = np.asarray(deltas, float)
    top = chart.value(chart.b0, chart.xi0)
    gaps = np.zeros((len(directions), len(deltas)))
    ratios = np.zeros_like(gaps)
    for i, v in enumerate(directions):
        quad = 0.5 * float(v @ K @ v)
        for j, delta in enumerate(deltas):
            gaps[i, j] = top - chart.value(chart.b0, chart.xi0 + delta * v)
            ratios[i, j] = gaps[i, j] / (quad * delta ** 2) if delta != 0 else 1.0
    return GapExpansionReport(K, deltas, directions, gaps, ratios)
