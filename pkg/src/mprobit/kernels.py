"""Probit link kernels, Gauss-Hermite quadrature, and the log-scale variance transform.

These are the shared numeric primitives used by every other module. All
functions accept scalars or numpy arrays and broadcast elementwise; scalar
input yields a Python float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import special

__all__ = [
    "QuadratureRule",
    "gauss_hermite",
    "probit_cdf",
    "probit_pdf",
    "probit_inverse",
    "delta_method_sd",
]

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Clamp bound for probabilities entering logs and ratio terms.
PROB_FLOOR = 1e-12


def _as_finite_or_inf(x, name: str):
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError(f"{name}: NaN input")
    return arr


def _scalar_out(arr, scalar_in: bool):
    return float(arr) if scalar_in else arr


def probit_cdf(x):
    """Standard normal CDF used as the inverse link throughout the model."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    arr = _as_finite_or_inf(x, "probit_cdf")
    return _scalar_out(special.ndtr(arr), scalar)


def probit_pdf(x):
    """Standard normal density exp(-x^2/2)/sqrt(2*pi)."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    arr = _as_finite_or_inf(x, "probit_pdf")
    return _scalar_out(_INV_SQRT_2PI * np.exp(-0.5 * arr * arr), scalar)


def probit_inverse(p):
    """Quantile of the standard normal; defined on the open interval (0, 1)."""
    scalar = np.isscalar(p) or np.ndim(p) == 0
    arr = _as_finite_or_inf(p, "probit_inverse")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("probit_inverse: p must lie strictly inside (0, 1)")
    return _scalar_out(special.ndtri(arr), scalar)


def clamp_probability(p):
    """Keep probabilities inside [PROB_FLOOR, 1 - PROB_FLOOR] for safe logs/ratios."""
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and weights for integrals against exp(-x^2).

    ``nodes`` are symmetric about zero and ``weights`` sum to sqrt(pi).
    Standard-normal expectations use the change of variables
    E[f(Z)] = (1/sqrt(pi)) * sum_q w_q f(sqrt(2) z_q).
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def scaled_nodes(self) -> np.ndarray:
        """sqrt(2) * z_q, the standard-normal abscissae."""
        return SQRT_2 * self.nodes

    @property
    def normalized_weights(self) -> np.ndarray:
        """w_q / sqrt(pi); these sum to 1."""
        return self.weights / SQRT_PI

    def normal_expectation(self, values) -> np.ndarray:
        """Average ``values`` (last axis indexed by q) against the normal weights."""
        return np.asarray(values) @ self.normalized_weights


def gauss_hermite(order: int) -> QuadratureRule:
    """Construct the Gauss-Hermite rule of the given order (1..100).

    Nodes and weights come from the Golub-Welsch eigenvalue construction with
    Newton polish (numpy's hermgauss); they are symmetrized exactly so that
    node symmetry holds to the last bit.
    """
    if not isinstance(order, (int, np.integer)):
        raise TypeError("gauss_hermite: order must be an integer")
    if order < 1 or order > 100:
        raise ValueError(f"gauss_hermite: order {order} outside [1, 100]")
    nodes, weights = hermgauss(int(order))
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(order=int(order), nodes=nodes, weights=weights)


def delta_method_sd(c_hat: float, se_c: float) -> tuple[float, float]:
    """Map (log-scale estimate, its SE) to (sigma = exp(c), SE of sigma).

    First-order variance transform: se(sigma) = exp(c) * se(c).
    """
    if se_c < 0:
        raise ValueError("delta_method_sd: se_c must be nonnegative")
    sigma = math.exp(c_hat)
    return sigma, sigma * se_c
