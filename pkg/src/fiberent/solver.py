"""Entropy-rate maximization over a feasible class, with KKT certificates.

The maximizer runs ascent in orthonormal tangent coordinates of the active
face: the search direction is either the projected gradient or the
(regularized) Newton direction of the restricted Hessian, followed by an
Armijo backtracking line search that keeps every active coordinate above
``barrier_floor``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .constraints import (
    ConstraintSystem,
    FeatureSet,
    find_feasible_point,
    tangent_space_basis,
)
from .core import Alphabet, BlockLaw, ConditionalKernel, SupportFace, shift_successor
from .entropy import entropy_rate_value, hessian_matrix, xlogx


class OracleScopeError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    grad_tol: float = 1e-10
    step_rule: str = "backtracking"          # "fixed" | "backtracking"
    direction: str = "newton"                # "newton" | "gradient"
    fixed_step: float = 0.1
    barrier_floor: float = 1e-14
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.barrier_floor <= 0 or self.fixed_step <= 0:
            raise ValueError("tolerances and step sizes must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")
        if self.direction not in ("newton", "gradient"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class KKTCertificate:
    lambda_: np.ndarray
    gamma: float
    psi: np.ndarray
    stationarity_residual: float
    active: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_.tolist(),
            "gamma": self.gamma,
            "psi": self.psi.tolist(),
            "residual": self.stationarity_residual,
        }


@dataclass(frozen=True)
class SolveResult:
    u_star: Optional[BlockLaw]
    value: float
    iterations: int
    status: str                              # "converged" | "max_iters" | "infeasible"
    certificate: Optional[KKTCertificate]
    grad_norm: float = float("nan")
    annotations: tuple = ()
    history: tuple = field(default=(), repr=False)
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "u_star": None if self.u_star is None else self.u_star.to_dict(),
            "value_nats": self.value,
            "status": self.status,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "annotations": list(self.annotations),
        }


def _objective(x: np.ndarray, active: np.ndarray, n_coords: int, n_symbols: int) -> float:
    full = np.zeros(n_coords)
    full[active] = x
    return entropy_rate_value(full, n_symbols)


def _max_step(x, dx, floor, fraction=0.99) -> float:
    neg = dx < 0
    if not neg.any():
        return np.inf
    return fraction * float(np.min((x[neg] - floor) / -dx[neg]))


def _ball_step(x, dx, center, radius) -> float:
    """Largest t with ``|x + t dx - center| <= radius``."""
    w = x - center
    a, b, c = dx @ dx, 2 * w @ dx, w @ w - radius ** 2
    if a == 0:
        return np.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return 0.0
    return max(0.0, (-b + np.sqrt(disc)) / (2 * a))


def maximize(system: ConstraintSystem, config: Optional[SolverConfig] = None,
             start: Optional[BlockLaw] = None, ball=None) -> SolveResult:
    """Maximize the entropy rate over ``system``.

    ``start`` must be feasible; by default the analytic center is used.
    ``ball = (center, radius)`` confines iterates to a closed Euclidean ball
    around a block-law array ``center``.
    """
    config = config or SolverConfig()
    if start is None:
        fp = find_feasible_point(system)
        if not fp.feasible:
            return SolveResult(None, float("nan"), 0, "infeasible", None, residual=fp.residual)
        start, active = fp.law, fp.active
    else:
        active = (start.probs > 0) & system.face.mask
    n_coords, n_sym = system.n_coords, system.n_symbols
    local = system.with_face(SupportFace(active))
    B = tangent_space_basis(local).vectors[:, active]          # (k, n_active)
    x = start.probs[active].copy()
    value = _objective(x, active, n_coords, n_sym)
    history = [value]
    annotations = []
    iterations = 0
    grad_norm = 0.0
    center = None if ball is None else np.asarray(ball[0], float)[active]
    status = "converged"

    if B.shape[0] > 0:
        status = "max_iters"
        floor = config.barrier_floor
        for _ in range(config.max_iters):
            full = np.zeros(n_coords)
            full[active] = x
            eta = full.reshape(-1, n_sym).sum(axis=1)[np.flatnonzero(active) // n_sym]
            g = np.log(eta) - np.log(x)
            pg = B @ g
            grad_norm = float(np.linalg.norm(pg))
            if grad_norm <= config.grad_tol:
                status = "converged"
                break
            H = B @ hessian_matrix(full, n_sym, np.flatnonzero(active)) @ B.T
            negH = -(H + H.T) / 2
            if config.direction == "newton":
                tau = 1e-12 * max(1.0, float(np.trace(negH)))
                d = np.linalg.solve(negH + tau * np.eye(len(pg)), pg)
            else:
                # steepest ascent scaled to the Cauchy step of the quadratic model
                curv = float(pg @ negH @ pg)
                d = pg * (float(pg @ pg) / curv if curv > 0 else 1.0)
            dx = B.T @ d
            slope = float(pg @ d)
            t_cap = _max_step(x, dx, floor)
            if center is not None:
                t_cap = min(t_cap, _ball_step(x, dx, center, ball[1]))
            if config.step_rule == "fixed":
                t = min(config.fixed_step if config.direction == "gradient" else 1.0, t_cap)
                x_new = x + t * dx
                v_new = _objective(x_new, active, n_coords, n_sym)
            else:
                t = min(1.0, t_cap)
                slack = 1e-13 * max(1.0, abs(value))
                while True:
                    x_new = x + t * dx
                    v_new = _objective(x_new, active, n_coords, n_sym)
                    if v_new >= value + 1e-4 * t * slope - slack:
                        break
                    t *= 0.5
                    if t < 1e-20:
                        break
                if t < 1e-20:
                    annotations.append("line_search_stalled")
                    status = "converged" if grad_norm <= 1e3 * config.grad_tol else "max_iters"
                    break
            if t <= 0:
                annotations.append("neighborhood_active")
                status = "converged"
                break
            x = x_new
            value = v_new
            history.append(value)
            iterations += 1
        if np.any(x <= 10 * floor):
            annotations.append("face_shrink")
        if center is not None and np.linalg.norm(x - center) >= ball[1] * (1 - 1e-9):
            annotations.append("neighborhood_active")
    probs = np.zeros(n_coords)
    probs[active] = np.clip(x, 0.0, None)
    u_star = BlockLaw(Alphabet(n_sym), system.r, probs)
    cert = kkt_multipliers(u_star, system)
    resid = float(np.max(np.abs(system.residuals(u_star))))
    return SolveResult(u_star, entropy_rate_value(probs, n_sym), iterations, status, cert,
                       grad_norm, tuple(dict.fromkeys(annotations)), tuple(history), resid)


def kkt_multipliers(u_star: BlockLaw, system: ConstraintSystem) -> KKTCertificate:
    """Least-squares fit of ``(gamma, lambda, psi)`` to the log-linear identity.

    On each active coordinate,
    ``log(u/eta) = -gamma - sum_j lambda_j G_j - psi(c) + psi(sigma(c, a))``;
    the gauge is ``psi(context 0) = 0``.
    """
    n, r = system.n_symbols, system.r
    n_ctx = n ** r
    m = system.features.m
    probs = u_star.probs
    active = (probs > 0) & system.face.mask
    idx = np.flatnonzero(active)
    eta = probs.reshape(n_ctx, n).sum(axis=1)
    ctx = idx // n
    succ = shift_successor(n, r)[idx]
    lhs = np.log(probs[idx]) - np.log(eta[ctx])
    D = np.zeros((idx.size, 1 + m + n_ctx))
    D[:, 0] = -1.0
    D[:, 1:1 + m] = -system.features.tables[:, idx].T
    rows = np.arange(idx.size)
    D[rows, 1 + m + ctx] -= 1.0
    D[rows, 1 + m + succ] += 1.0
    D = np.delete(D, 1 + m, axis=1)                      # gauge psi(0) = 0
    sol, *_ = np.linalg.lstsq(D, lhs, rcond=None)
    resid = float(np.max(np.abs(D @ sol - lhs))) if idx.size else 0.0
    psi = np.concatenate([[0.0], sol[1 + m:]])
    return KKTCertificate(sol[1:1 + m].copy(), float(sol[0]), psi, resid, active)


@dataclass(frozen=True)
class KernelRepresentation:
    kernel: ConditionalKernel
    simplified: np.ndarray          # per context: psi(sigma(c, .)) constant in a


def kernel_representation(cert: KKTCertificate, features: FeatureSet,
                          tol: float = 1e-10) -> KernelRepresentation:
    """Rowwise softmax of ``-sum_j lambda_j G_j(c, a) + psi(sigma(c, a))``.

    Coordinates inactive in the certificate get zero mass; contexts with no
    active coordinate are marked inactive.
    """
    n, r = features.n_symbols, features.r
    n_ctx = n ** r
    succ_psi = cert.psi[shift_successor(n, r)].reshape(n_ctx, n)
    simplified = np.ptp(succ_psi, axis=1) <= tol
    moment = -(cert.lambda_ @ features.tables).reshape(n_ctx, n) if features.m else np.zeros((n_ctx, n))
    logits = np.where(simplified[:, None], moment, moment + succ_psi)
    mask = cert.active.reshape(n_ctx, n)
    rows = []
    for c in range(n_ctx):
        if not mask[c].any():
            rows.append(None)
            continue
        z = np.where(mask[c], logits[c], -np.inf)
        w = np.exp(z - z[mask[c]].max())
        rows.append(w / w.sum())
    return KernelRepresentation(ConditionalKernel(Alphabet(n), r, tuple(rows)), simplified)


def rowwise_proportional(u: np.ndarray, v: np.ndarray, n_symbols: int, tol: float = 1e-10) -> bool:
    """``eta_v(c) u(c, a) == eta_u(c) v(c, a)`` for every block."""
    tu = np.asarray(u, float).reshape(-1, n_symbols)
    tv = np.asarray(v, float).reshape(-1, n_symbols)
    gap = tv.sum(axis=1)[:, None] * tu - tu.sum(axis=1)[:, None] * tv
    return float(np.max(np.abs(gap))) <= tol


@dataclass(frozen=True)
class UniquenessReport:
    verdict: str                     # "singleton" | "strictly concave on sampled hull" | "flat direction"
    tangent_dimension: int
    samples: int
    witness: Optional[tuple] = None  # (u, v) rowwise proportional pair
    null_dimension: int = 0

    @property
    def unique(self) -> bool:
        return self.verdict != "flat direction"


def uniqueness_diagnostic(system: ConstraintSystem, samples: int = 1000, seed: int = 0,
                          tol: float = 1e-10) -> UniquenessReport:
    """Search for distinct feasible pairs that are rowwise proportional in every context."""
    from .geometry import null_directions

    fp = find_feasible_point(system)
    if not fp.feasible:
        raise ValueError("system is infeasible")
    local = system.with_face(SupportFace(fp.active))
    basis = tangent_space_basis(local)
    if basis.dimension == 0:
        return UniquenessReport("singleton", 0, 0)
    rng = np.random.default_rng(seed)
    x0 = fp.law.probs
    n = system.n_symbols

    def draw():
        d = basis.embed(rng.standard_normal(basis.dimension))
        d /= np.linalg.norm(d)
        t_max = _max_step(x0[fp.active], d[fp.active], 0.0, fraction=0.95)
        t_min = -_max_step(x0[fp.active], -d[fp.active], 0.0, fraction=0.95)
        return x0 + rng.uniform(t_min, t_max) * d

    for _ in range(samples):
        u, v = draw(), draw()
        if np.linalg.norm(u - v) > 1e-8 and rowwise_proportional(u, v, n, tol):
            return UniquenessReport("flat direction", basis.dimension, samples, (u, v))
    nulls = null_directions(fp.law, basis)
    if nulls.dimension > 0:
        h = nulls.vectors[0]
        step = 0.5 * _max_step(x0[fp.active], h[fp.active], 0.0, fraction=1.0)
        step = min(step, 0.5 * _max_step(x0[fp.active], -h[fp.active], 0.0, fraction=1.0))
        return UniquenessReport("flat direction", basis.dimension, samples,
                                (x0 - step * h, x0 + step * h), nulls.dimension)
    return UniquenessReport("strictly concave on sampled hull", basis.dimension, samples)


def _feasible_box(x0: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Bounding box of ``{t : x0 + B^T t >= 0}`` in tangent coordinates."""
    k = B.shape[0]
    bounds = np.zeros((k, 2))
    for i in range(k):
        for j, sign in enumerate((1.0, -1.0)):
            c = np.zeros(k)
            c[i] = sign
            res = linprog(c, A_ub=-B.T, b_ub=x0, bounds=[(None, None)] * k, method="highs")
            if res.status != 0:
                raise RuntimeError(f"bounding-box LP failed: {res.message}")
            bounds[i, j] = res.x[i]
    return bounds


def _grid_best(x0, B, axes, n_symbols, chunk=200_000):
    best_val, best_t = -np.inf, None
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    for start in range(0, pts.shape[0], chunk):
        T = pts[start:start + chunk]
        U = x0[None, :] + T @ B
        ok = np.all(U >= -1e-15, axis=1)
        if not ok.any():
            continue
        U = np.clip(U[ok], 0.0, None)
        rows = U.reshape(U.shape[0], -1, n_symbols)
        vals = -xlogx(U).sum(axis=1) + xlogx(rows.sum(axis=2)).sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_t = float(vals[i]), T[ok][i]
    return best_val, best_t


def brute_force_maximizer(system: ConstraintSystem, resolution: float = 1e-3,
                          max_points: int = 2_000_000) -> BlockLaw:
    """Grid search over tangent coordinates, then local refinement passes.

    The coarse grid uses step ``resolution`` (widened only if the grid would
    exceed ``max_points``); refinement zooms around the best point with 21
    points per axis until the step is below ``resolution / 10``. Ties go to
    the lexicographically lowest tangent coordinate.
    """
    if system.n_coords > 16:
        raise OracleScopeError("oracle scope exceeded: more than 16 block coordinates")
    fp = find_feasible_point(system)
    if not fp.feasible:
        raise ValueError("system is infeasible")
    local = system.with_face(SupportFace(fp.active))
    B = tangent_space_basis(local).vectors
    k = B.shape[0]
    if k > 3:
        raise OracleScopeError(f"oracle scope exceeded: tangent dimension {k} > 3")
    x0 = fp.law.probs
    if k == 0:
        return fp.law
    box = _feasible_box(x0, B)
    lo, hi = box[:, 0], box[:, 1]
    extent = float(np.max(hi - lo))
    step = max(resolution, extent / max_points ** (1.0 / k))
    axes = [np.arange(lo[i], hi[i] + step / 2, step) for i in range(k)]
    axes = [np.clip(a, lo[i], hi[i]) for i, a in enumerate(axes)]
    _, t = _grid_best(x0, B, axes, system.n_symbols)
    while True:
        fine = step / 10
        axes = [np.clip(t[i] + np.arange(-10, 11) * fine, lo[i], hi[i]) for i in range(k)]
        _, t = _grid_best(x0, B, [np.unique(a) for a in axes], system.n_symbols)
        step = fine
        if step <= resolution / 10:
            break
    probs = np.clip(x0 + t @ B, 0.0, None)
    return BlockLaw(Alphabet(system.n_symbols), system.r, probs)
