"""Empirical block laws, empirical targets and local empirical maximizers."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import (
    FeatureSet,
    LeftFaceError,
    NoRightInverseError,
    build_constraint_system,
    find_feasible_point,
    local_feasible_continuation,
)
from .core import Alphabet, BlockLaw, ConditionalKernel, ContextMarginal, SupportFace, block_law_of
from .realization import SamplePath, build_random_mapping, simulate
from .solver import SolveResult, SolverConfig, maximize


@dataclass(frozen=True)
class EmpiricalEstimate:
    """``u_hat[c, a] = counts[c, a] / windows``; not projected to stationarity."""

    n_symbols: int
    r: int
    counts: np.ndarray
    n: int
    b_hat: Optional[np.ndarray] = None

    @property
    def windows(self) -> int:
        return self.n - self.r

    @property
    def u_hat(self) -> np.ndarray:
        return self.counts / self.windows

    def stationarity_residual(self) -> float:
        t = self.u_hat.reshape(self.n_symbols, -1).sum(axis=0)
        s = self.u_hat.reshape(-1, self.n_symbols).sum(axis=1)
        return float(np.max(np.abs(t - s)))


def window_indices(symbols: np.ndarray, n_symbols: int, r: int) -> np.ndarray:
    """Lexicographic index of every overlapping window ``Y_{t-r}^{t}``, ``t = r..n-1``."""
    symbols = np.asarray(symbols, dtype=np.int64)
    L = symbols.size
    idx = np.zeros(L - r, dtype=np.int64)
    for k in range(r + 1):
        idx = idx * n_symbols + symbols[k:L - r + k]
    return idx


def empirical_block_law(path: SamplePath, r: Optional[int] = None) -> EmpiricalEstimate:
    r = path.r if r is None else int(r)
    if len(path) < r + 1:
        raise ValueError(f"path too short: need at least r+1 = {r + 1} symbols, got {len(path)}")
    idx = window_indices(path.symbols, path.n_symbols, r)
    counts = np.bincount(idx, minlength=path.n_symbols ** (r + 1))
    return EmpiricalEstimate(path.n_symbols, r, counts, len(path))


def empirical_targets(est: EmpiricalEstimate, features: FeatureSet) -> np.ndarray:
    if features.n_symbols != est.n_symbols or features.r != est.r:
        raise ValueError("feature tables do not match the estimate's alphabet and r")
    return features.tables @ est.u_hat


def stationary_projection(u_hat: np.ndarray, n_symbols: int, r: int) -> np.ndarray:
    """Nearest stationary-consistent law (diagnostics only)."""
    from .constraints import empty_features

    system = build_constraint_system(empty_features(n_symbols, r))
    A, b = system.matrix, system.rhs
    x = np.asarray(u_hat, float).copy()
    for _ in range(50):
        x = x - np.linalg.lstsq(A, A @ x - b, rcond=None)[0]
        if x.min() >= 0:
            break
        x = np.clip(x, 0.0, None)
    return np.clip(x, 0.0, None)


def empirical_maximizer(path: SamplePath, features: FeatureSet, reference: BlockLaw,
                        face: Optional[SupportFace] = None, radius: float = 0.2,
                        config: Optional[SolverConfig] = None) -> SolveResult:
    """Maximize J over ``U(b_hat)`` intersected with the closed ball of ``radius``
    (Euclidean, in block coordinates of the face) around ``reference``."""
    est = empirical_block_law(path, features.r)
    b_hat = empirical_targets(est, features)
    system = build_constraint_system(features.with_targets(b_hat), face)
    try:
        start = local_feasible_continuation(reference, system, b_hat)
    except (LeftFaceError, NoRightInverseError):
        fp = find_feasible_point(system)
        if not fp.feasible:
            return SolveResult(None, float("nan"), 0, "infeasible", None, residual=fp.residual)
        start = fp.law
    if np.linalg.norm(start.probs - reference.probs) > radius:
        return SolveResult(None, float("nan"), 0, "infeasible", None,
                           annotations=("empty local feasible class",))
    return maximize(system, config, start=start, ball=(reference.probs, radius))


def _cell(args):
    F, eta, features, u_star, n, seed, face, radius = args
    path = simulate(F, eta, n, seed)
    res = empirical_maximizer(path, features, u_star, face, radius)
    if res.u_star is None:
        return n, seed, float("nan"), float("nan"), res.status
    return n, seed, float(np.max(np.abs(res.u_star.probs - u_star.probs))), res.value, res.status


@dataclass
class ExperimentReport:
    u_star: BlockLaw
    rows: list = field(default_factory=list)          # (n, seed, error, value, status)

    def medians(self) -> dict:
        out = {}
        for n in sorted({row[0] for row in self.rows}):
            errs = [row[2] for row in self.rows if row[0] == n and np.isfinite(row[2])]
            out[n] = float(np.median(errs)) if errs else float("nan")
        return out

    def slope(self) -> float:
        """Least-squares slope of log(median error) against log(n)."""
        med = self.medians()
        ns = np.array(list(med), float)
        ms = np.array(list(med.values()))
        ok = np.isfinite(ms) & (ms > 0)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(ns[ok]), np.log(ms[ok]), 1)[0])

    def to_csv(self) -> str:
        lines = ["n,seed,error,value,status"]
        lines += [f"{n},{s},{e!r},{v!r},{st}" for n, s, e, v, st in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        med = self.medians()
        return {
            "medians": {str(k): v for k, v in med.items()},
            "slope": self.slope(),
            "non_increasing": bool(all(a >= b for a, b in zip(list(med.values()), list(med.values())[1:]))),
            "u_star": self.u_star.to_dict(),
            "cells": len(self.rows),
        }


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FIBERENT_THREADS", "1")))
    except ValueError:
        return 1


def consistency_experiment(true_kernel: ConditionalKernel, eta: ContextMarginal, features: FeatureSet,
                           n_grid: Sequence[int], seeds: Sequence[int], face: Optional[SupportFace] = None,
                           radius: float = 0.2, workers: Optional[int] = None) -> ExperimentReport:
    """Simulate, estimate and locally re-maximize for every ``(n, seed)`` cell.

    The population targets come from the true block law; the error of a cell
    is the sup-norm distance between the empirical selector and the
    population selector.
    """
    u0 = block_law_of(eta, true_kernel)
    b0 = features.tables @ u0.probs
    population = maximize(build_constraint_system(features.with_targets(b0), face))
    if population.status != "converged":
        raise RuntimeError(f"population problem did not converge: {population.status}")
    u_star = population.u_star
    F = build_random_mapping(true_kernel)
    cells = [(F, eta, features, u_star, int(n), int(s), face, radius) for n in n_grid for s in seeds]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    return ExperimentReport(u_star, rows)


def binary_chain(a: float, b: float) -> tuple[ConditionalKernel, ContextMarginal]:
    """Binary first-order chain with ``P(0->1) = a``, ``P(1->0) = b`` and its stationary law."""
    alphabet = Alphabet(2)
    m = a / (a + b)
    kernel = ConditionalKernel(alphabet, 1, ([1 - a, a], [b, 1 - b]))
    return kernel, ContextMarginal(alphabet, 1, [1 - m, m])
