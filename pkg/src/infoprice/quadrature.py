"""Gauss-Hermite kernels for the Gaussian expectations used by every solver.

All integrals in the model are expectations of smooth functions under a
normal law: the jump-utility moment g(q), the posterior utility moment
phi2(q; m', v'), and the bivariate payoff integral for streams keyed to the
first jump and its signal. A fixed-order Gauss-Hermite rule (physicists'
convention, weight exp(-x^2)) is accurate far beyond the tolerances needed
here because the integrands are analytic with Gaussian decay.

For X ~ N(mean, var) and nodes/weights (x_i, w_i):

    E[f(X)] ~= sum_i w_i f(mean + sqrt(2 var) x_i) / sqrt(pi)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelParams

__all__ = [
    "QuadratureRule",
    "gauss_hermite",
    "DEFAULT_ORDER",
    "default_rule",
    "expect_gaussian",
    "g_of_q",
    "g_of_q_many",
    "phi2",
    "phi2_many",
    "psi_double_integral",
]

DEFAULT_ORDER = 64

_SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a Gauss-Hermite rule for weight exp(-x^2)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))


def gauss_hermite(order: int) -> QuadratureRule:
    """Return the `order`-point Gauss-Hermite rule, 1 <= order <= 200."""
    if not isinstance(order, (int, np.integer)) or isinstance(order, bool):
        raise ValueError(f"order must be an integer, got {order!r}")
    if not 1 <= order <= 200:
        raise ValueError(f"order must be in [1, 200], got {order}")
    nodes, weights = np.polynomial.hermite.hermgauss(int(order))
    return QuadratureRule(nodes=nodes, weights=weights, order=int(order))


def default_rule() -> QuadratureRule:
    return gauss_hermite(DEFAULT_ORDER)


def expect_gaussian(f: Callable, mean: float, var: float, rule: QuadratureRule) -> float:
    """Gauss-Hermite approximation of E[f(Z)] with Z ~ N(mean, var)."""
    if not var > 0.0:
        raise ValueError(f"variance must be > 0, got {var}")
    points = mean + math.sqrt(2.0 * var) * rule.nodes
    values = np.asarray(f(points), dtype=float)
    if values.shape != points.shape:
        # f was not vectorized; fall back to a scalar loop
        values = np.array([float(f(x)) for x in points])
    if not np.all(np.isfinite(values)):
        raise ValueError("integrand is non-finite at a quadrature node")
    return float(rule.weights @ values) / _SQRT_PI


def _check_q(q: float) -> float:
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"exposure q must be in [0, 1], got {q}")
    return q


def g_of_q(q: float, p: ModelParams, rule: QuadratureRule) -> float:
    """Jump-utility moment g(q) = E[(1 + q (e^X - 1))^(1-R)], X ~ N(m, v).

    The restriction q in [0, 1] keeps 1 + q(e^x - 1) > 0 for every x.
    """
    q = _check_q(q)
    jump_rel = np.expm1(p.m + math.sqrt(2.0 * p.v) * rule.nodes)
    values = (1.0 + q * jump_rel) ** (1.0 - p.R)
    return float(rule.weights @ values) / _SQRT_PI


def g_of_q_many(q: np.ndarray, p: ModelParams, rule: QuadratureRule) -> np.ndarray:
    """Vectorized g over an array of exposures (all in [0, 1])."""
    q = np.asarray(q, dtype=float)
    if q.size and (q.min() < 0.0 or q.max() > 1.0):
        raise ValueError("exposures must lie in [0, 1]")
    jump_rel = np.expm1(p.m + math.sqrt(2.0 * p.v) * rule.nodes)
    values = (1.0 + q[..., None] * jump_rel) ** (1.0 - p.R)
    return (values @ rule.weights) / _SQRT_PI


def phi2(q: float, m_prime: float, v_prime: float, p: ModelParams,
         rule: QuadratureRule) -> float:
    """Posterior utility moment E[U(1 + q (e^X - 1))], X ~ N(m', v').

    Equals g(q)/(1 - R) when (m', v') are the unconditional jump parameters.
    """
    q = _check_q(q)
    if not v_prime > 0.0:
        raise ValueError(f"v_prime must be > 0, got {v_prime}")
    jump_rel = np.expm1(m_prime + math.sqrt(2.0 * v_prime) * rule.nodes)
    values = (1.0 + q * jump_rel) ** (1.0 - p.R)
    return float(rule.weights @ values) / _SQRT_PI / (1.0 - p.R)


def phi2_many(q: np.ndarray, m_prime: float, v_prime: float, p: ModelParams,
              rule: QuadratureRule) -> np.ndarray:
    """Vectorized phi2 over an array of exposures."""
    q = np.asarray(q, dtype=float)
    jump_rel = np.expm1(m_prime + math.sqrt(2.0 * v_prime) * rule.nodes)
    values = (1.0 + q[..., None] * jump_rel) ** (1.0 - p.R)
    return (values @ rule.weights) / _SQRT_PI / (1.0 - p.R)


def psi_double_integral(psi: Callable, a_coef: float, p: ModelParams,
                        rule: QuadratureRule) -> float:
    """E[psi(X1 + X2) (1 + a (e^X1 - 1))^(-R)], X1 ~ N(m, v), X2 ~ N(0, v_eps).

    Nested Gauss-Hermite: outer over the jump size X1, inner over the signal
    noise X2. Degenerate noise (v_eps = 0) is refused; the caller must use the
    one-dimensional reduction in that case.
    """
    a_coef = float(a_coef)
    if not 0.0 <= a_coef <= 1.0:
        raise ValueError(f"a_coef must be in [0, 1], got {a_coef}")
    if not p.v_eps > 0.0:
        raise ValueError("v_eps must be > 0; with a noiseless signal use the 1-D reduction")
    x1 = p.m + math.sqrt(2.0 * p.v) * rule.nodes            # jump sizes
    x2 = math.sqrt(2.0 * p.v_eps) * rule.nodes              # noise
    psi_grid = np.asarray(psi(x1[:, None] + x2[None, :]), dtype=float)
    if psi_grid.shape != (rule.order, rule.order):
        psi_grid = np.array([[float(psi(a + b)) for b in x2] for a in x1])
    if not np.all(np.isfinite(psi_grid)):
        raise ValueError("psi is non-finite at a quadrature node")
    inner = psi_grid @ rule.weights / _SQRT_PI               # E over X2, per x1
    outer = (1.0 + a_coef * np.expm1(x1)) ** (-p.R) * inner
    return float(rule.weights @ outer) / _SQRT_PI
