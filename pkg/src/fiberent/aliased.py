"""Binary visible chains realized by four aliased hidden states.

Hidden states are indexed ``(a0, a1, b0, b1) = (0, 1, 2, 3)``; the observation
map sends the ``a`` states to 0 and the ``b`` states to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .core import Alphabet, BlockLaw
from .entropy import binary_entropy, shannon_entropy

PHI = np.array([0, 0, 1, 1])
TOL = 1e-12


class LumpabilityError(ValueError):
    pass


def _open(name, x):
    if not 0.0 < x < 1.0:
        raise ValueError(f"open-interval parameters required: {name}={x!r} not in (0, 1)")


@dataclass(frozen=True)
class AliasedSpec:
    """Visible transition parameters ``a = P(0->1)``, ``b = P(1->0)`` and hidden splits.

    ``m`` defaults to the stationary mean ``a / (a + b)``; when given it must
    satisfy the balance ``(1 - m) a = m b``.
    """

    a: float
    b: float
    lambda_: float = 0.5
    mu_param: float = 0.5
    m: Optional[float] = None

    def __post_init__(self):
        for name in ("a", "b", "lambda_", "mu_param"):
            _open(name, getattr(self, name))
        mean = self.a / (self.a + self.b)
        if self.m is None:
            object.__setattr__(self, "m", mean)
        elif abs((1 - self.m) * self.a - self.m * self.b) > TOL:
            raise ValueError(f"balance (1-m)a = m b violated for m={self.m!r}")

    @classmethod
    def from_mean(cls, m: float, q: float, lambda_: float = 0.5, mu_param: float = 0.5) -> "AliasedSpec":
        a, b = fixed_mean_family(m, q)
        return cls(a, b, lambda_, mu_param, m)


def build_hidden_kernel(spec: AliasedSpec) -> np.ndarray:
    a, b, lam, mu = spec.a, spec.b, spec.lambda_, spec.mu_param
    row_a = [(1 - a) * lam, (1 - a) * (1 - lam), a * mu, a * (1 - mu)]
    row_b = [b * lam, b * (1 - lam), (1 - b) * mu, (1 - b) * (1 - mu)]
    return np.array([row_a, row_a, row_b, row_b])


def hidden_stationary(m: float, lambda_: float, mu_param: float) -> np.ndarray:
    for name, x in (("m", m), ("lambda", lambda_), ("mu", mu_param)):
        _open(name, x)
    return np.array([(1 - m) * lambda_, (1 - m) * (1 - lambda_), m * mu_param, m * (1 - mu_param)])


def stationarity_residual(pi: np.ndarray, K: np.ndarray) -> float:
    return float(np.max(np.abs(pi @ K - pi)))


def visible_kernel_of_hidden(K: np.ndarray, phi: np.ndarray = PHI, tol: float = TOL):
    """Lumped visible kernel and the max within-fiber discrepancy.

    Raises :class:`LumpabilityError` if the probability of moving into a
    visible symbol differs between hidden states of one fiber.
    """
    K = np.asarray(K, float)
    phi = np.asarray(phi)
    k = int(phi.max()) + 1
    to_fiber = np.stack([K[:, phi == y].sum(axis=1) for y in range(k)], axis=1)   # (hidden, visible)
    P = np.empty((k, k))
    disc = 0.0
    for y in range(k):
        rows = to_fiber[phi == y]
        disc = max(disc, float(np.max(rows.max(axis=0) - rows.min(axis=0))))
        P[y] = rows[0]
    if disc > tol:
        raise LumpabilityError(f"kernel is not lumpable: max fiber discrepancy {disc:.3g}")
    return P, disc


def fixed_mean_family(m: float, q: float) -> tuple[float, float]:
    """``(a, b) = (q / (1 - m), q / m)``; ``q`` is the stationary mass of ``01``."""
    _open("m", m)
    if not 0.0 < q < min(m, 1 - m):
        raise ValueError(f"q={q!r} outside the open interval (0, {min(m, 1 - m)!r})")
    return q / (1 - m), q / m


def q_chart_law(m: float, q: float) -> BlockLaw:
    """Two-block law ``(1 - m - q, q, q, m - q)`` of the family member."""
    return BlockLaw(Alphabet(2), 1, [1 - m - q, q, q, m - q])


def visible_entropy_h(m: float, q: float) -> float:
    a, b = fixed_mean_family(m, q)
    return float((1 - m) * binary_entropy(a) + m * binary_entropy(b))


def visible_entropy_derivative(m: float, q: float) -> float:
    return float(np.log((1 - m - q) * (m - q) / q ** 2))


def canonical_q_star(m: float, check: bool = True) -> float:
    _open("m", m)
    q = m * (1 - m)
    if check:
        hi = min(m, 1 - m)
        if not 0.0 < q < hi:
            raise ArithmeticError("q* outside the admissible interval")
        eps = 1e-15
        root = brentq(lambda x: visible_entropy_derivative(m, x), eps * hi, hi * (1 - eps), xtol=1e-15)
        if abs(root - q) > 1e-8:
            raise ArithmeticError(f"numeric maximizer {root!r} disagrees with q* = {q!r}")
    return q


def numeric_q_star(m: float) -> float:
    """Bounded scalar maximization of ``h`` (cross-check only)."""
    hi = min(m, 1 - m)
    res = minimize_scalar(lambda x: -visible_entropy_h(m, x), bounds=(1e-12, hi - 1e-12),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def hidden_entropy(m: float, lambda_: float, mu_param: float) -> float:
    """Hidden entropy rate at the selected visible point ``a = m``, ``b = 1 - m``."""
    for name, x in (("m", m), ("lambda", lambda_), ("mu", mu_param)):
        _open(name, x)
    return float(binary_entropy(m) + (1 - m) * binary_entropy(lambda_) + m * binary_entropy(mu_param))


def hidden_entropy_direct(m: float, lambda_: float, mu_param: float) -> float:
    """Shannon entropy of the common row of ``K`` at the selected point."""
    K = build_hidden_kernel(AliasedSpec(m, 1 - m, lambda_, mu_param))
    if np.max(np.abs(K - K[0])) > TOL:
        raise ArithmeticError("rows of K differ; the hidden chain is not i.i.d.")
    return float(shannon_entropy(K[0]))


def hidden_entropy_rate_numeric(K: np.ndarray) -> float:
    """Diagnostic: entropy rate ``sum_x pi(x) H(K[x])`` of a general hidden chain."""
    K = np.asarray(K, float)
    w, v = np.linalg.eig(K.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi = pi / pi.sum()
    return float(sum(p * shannon_entropy(row) for p, row in zip(pi, K)))


@dataclass(frozen=True)
class FiberReport:
    m: float
    entropy_half: float
    entropy_quarter: float
    difference: float
    kernels_identical: bool
    kernel_discrepancy: float
    visible_kernel: np.ndarray

    def to_dict(self) -> dict:
        return {"m": self.m, "hidden_entropy_half": self.entropy_half,
                "hidden_entropy_quarter": self.entropy_quarter, "difference": self.difference,
                "kernels_identical": self.kernels_identical,
                "kernel_discrepancy": self.kernel_discrepancy,
                "visible_kernel": self.visible_kernel.tolist()}


def fiber_nonconstancy_demo(m: float, pair_a=(0.5, 0.5), pair_b=(0.25, 0.25)) -> FiberReport:
    """Two hidden splittings of the same selected visible kernel with different hidden entropy."""
    P1, _ = visible_kernel_of_hidden(build_hidden_kernel(AliasedSpec(m, 1 - m, *pair_a)))
    P2, _ = visible_kernel_of_hidden(build_hidden_kernel(AliasedSpec(m, 1 - m, *pair_b)))
    h1, h2 = hidden_entropy(m, *pair_a), hidden_entropy(m, *pair_b)
    disc = float(np.max(np.abs(P1 - P2)))
    return FiberReport(m, h1, h2, h1 - h2, disc <= TOL, disc, P1)


def rho_parametrization(m: float, rho: float) -> tuple[float, float]:
    """Persistence coordinate: ``a = m (1 - rho)``, ``b = (1 - m)(1 - rho)``."""
    a, b = m * (1 - rho), (1 - m) * (1 - rho)
    if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
        raise ValueError(f"rho={rho!r} gives transition parameters outside [0, 1]")
    return a, b


def demo_report(m: float) -> dict:
    """The chain of claims of the example, in order, for one mean."""
    q_star = canonical_q_star(m)
    a_star, b_star = fixed_mean_family(m, q_star)
    spec = AliasedSpec(a_star, b_star, 0.5, 0.5, m)
    K = build_hidden_kernel(spec)
    P, disc = visible_kernel_of_hidden(K)
    pi = hidden_stationary(m, 0.5, 0.5)
    grid = np.linspace(0, min(m, 1 - m), 9)[1:-1]
    return {
        "m": m,
        "hidden_kernel": K.tolist(),
        "hidden_stationary": pi.tolist(),
        "hidden_stationarity_residual": stationarity_residual(pi, K),
        "visible_kernel": P.tolist(),
        "lumpability_discrepancy": disc,
        "family": [{"q": float(q), "a": fixed_mean_family(m, q)[0], "b": fixed_mean_family(m, q)[1],
                    "h": visible_entropy_h(m, q)} for q in grid],
        "q_star": q_star,
        "a_star": a_star,
        "b_star": b_star,
        "h_star": visible_entropy_h(m, q_star),
        "fiber": fiber_nonconstancy_demo(m).to_dict(),
    }
