"""Scaled Hermite polynomial algebra.

Probabilists' Hermite polynomials generalized to a Gaussian measure of
variance r, written He_k^[r], with

    E[He_k^[r](z) He_m^[r](z)] = delta_km * k! * r^k  for z ~ N(0, r).

The module provides evaluation by the three-term recurrence, coefficient
extraction by Gauss-Hermite quadrature, closed forms for pure Hermite
activations, conversion to the unit-variance basis, and the product
expansion needed for squared labels.

Conventions
-----------
A unit-variance coefficient vector c represents

    f(z) = sum_k c_k He_k(z) / k!

so c_k = E[f(z) He_k(z)], z ~ N(0,1).  Scaled coefficients are

    sigma_k[r]    = E[f(z) He_k^[r](z)],           z ~ N(0, r)
    sigmabar_k[r] = r^{(k+1)/2} E[x He_k(x) f'(sqrt(r) x)],  x ~ N(0,1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from numpy.polynomial.hermite import hermgauss


class ConfigurationError(ValueError):
    """A numerical setting cannot support the requested computation."""


class DegenerateFunctionError(ValueError):
    """All Hermite coefficients of degree >= 1 vanish below tolerance."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Hermite rule for E[f(x)] with x ~ N(0,1).

    Parameters
    ----------
    nodes : ndarray
        Quadrature abscissas on the standard-normal scale.
    weights : ndarray
        Positive weights summing to 1 (probabilists' normalization).
    order : int
        Number of nodes; exact for polynomials of degree <= 2*order - 1.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if self.order < 1 or len(self.nodes) != self.order or len(self.weights) != self.order:
            raise ValueError("inconsistent quadrature arrays")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")


@lru_cache(maxsize=64)
def gauss_hermite_rule(order: int) -> QuadratureRule:
    """Build (and cache) the order-point rule for the standard normal."""
    if order < 1:
        raise ValueError("order must be >= 1")
    x, w = hermgauss(order)
    # physicists' weights integrate against exp(-x^2); rescale to N(0,1)
    return QuadratureRule(nodes=x * np.sqrt(2.0), weights=w / np.sqrt(np.pi), order=order)


def eval_scaled_hermite(k: int, r: float, z):
    """Evaluate He_k^[r](z) by the three-term recurrence.

    He_{k+1}^[r](z) = z He_k^[r](z) - k r He_{k-1}^[r](z), He_0 = 1, He_1 = z.

    Parameters
    ----------
    k : int
        Degree, >= 0.
    r : float
        Variance of the Gaussian measure, > 0.
    z : float or ndarray

    Returns
    -------
    float or ndarray
    """
    if k < 0:
        raise ValueError("degree must be nonnegative")
    if r <= 0:
        raise ValueError("variance must be positive")
    z = np.asarray(z, dtype=float)
    prev = np.zeros_like(z)
    cur = np.ones_like(z)
    for j in range(k):
        prev, cur = cur, z * cur - j * r * prev
    return cur if cur.ndim else float(cur)


def scaled_hermite_table(k_max: int, r: float, z: np.ndarray) -> np.ndarray:
    """Rows 0..k_max of He_k^[r] evaluated at z, shape (k_max+1, len(z))."""
    z = np.asarray(z, dtype=float)
    out = np.empty((k_max + 1,) + z.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = z
    for j in range(1, k_max):
        out[j + 1] = z * out[j] - j * r * out[j - 1]
    return out


@dataclass(frozen=True)
class ScaledHermiteBasis:
    """The family He_k^[r], k = 0..max_degree, under N(0, variance)."""

    variance: float
    max_degree: int

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if self.max_degree < 0:
            raise ValueError("max_degree must be >= 0")

    def evaluate(self, k: int, z):
        if k > self.max_degree:
            raise ValueError("degree exceeds max_degree")
        return eval_scaled_hermite(k, self.variance, z)

    def table(self, z) -> np.ndarray:
        return scaled_hermite_table(self.max_degree, self.variance, np.asarray(z, float))


@dataclass(frozen=True, eq=False)
class HermiteCoefficients:
    """Truncated coefficient vectors of one activation under N(0, variance)."""

    variance: float
    sigma_k: np.ndarray
    sigma_bar_k: np.ndarray

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if len(self.sigma_k) != len(self.sigma_bar_k):
            raise ValueError("sigma_k and sigma_bar_k must have identical length")

    @property
    def k_max(self) -> int:
        return len(self.sigma_k) - 1


@lru_cache(maxsize=64)
def _projection_matrices(order: int, k_max: int):
    # row k of M:  weights * He_k(nodes)      -> sigma integrands
    # row k of Mb: weights * nodes * He_k(nodes) -> sigmabar integrands
    rule = gauss_hermite_rule(order)
    table = scaled_hermite_table(k_max, 1.0, rule.nodes)
    M = table * rule.weights
    Mb = M * rule.nodes
    return rule, M, Mb


# margin of quadrature nodes beyond K_max below which projection is refused
_QUAD_MARGIN = 5


def project_activation(f, r: float, k_max: int, quad: QuadratureRule | None = None) -> HermiteCoefficients:
    """Project an activation onto He_0^[r] .. He_{k_max}^[r].

    Uses the standardized variable x = z / sqrt(r) and the scaling relation
    He_k^[r](sqrt(r) x) = r^{k/2} He_k(x), so only unit-variance polynomials
    are evaluated:

        sigma_k[r]    = r^{k/2}    E[He_k(x) f(sqrt(r) x)]
        sigmabar_k[r] = r^{(k+1)/2} E[x He_k(x) f'(sqrt(r) x)]

    Parameters
    ----------
    f : ActivationSpec
        Needs callable ``evaluate``; ``derivative`` is used when callable,
        otherwise a central difference with h = 1e-6.
    r : float
        Variance, > 0.
    k_max : int
        Highest retained degree.
    quad : QuadratureRule, optional
        Defaults to the cached rule of order 2*k_max + 10.

    Returns
    -------
    HermiteCoefficients
    """
    if r <= 0:
        raise ConfigurationError("variance must be positive")
    if k_max < 0:
        raise ConfigurationError("k_max must be >= 0")
    if quad is None:
        quad = gauss_hermite_rule(2 * k_max + 10)
    if quad.order < k_max + _QUAD_MARGIN:
        raise ConfigurationError(
            f"quadrature order {quad.order} too low for K_max={k_max}; "
            f"need at least {k_max + _QUAD_MARGIN}"
        )
    _, M, Mb = _projection_matrices(quad.order, k_max)
    sr = np.sqrt(r)
    z = sr * quad.nodes
    fv = np.asarray(f.evaluate(z), dtype=float)
    deriv = getattr(f, "derivative", None)
    if callable(deriv):
        fpv = np.asarray(deriv(z), dtype=float)
    else:
        h = 1e-6
        fpv = (np.asarray(f.evaluate(z + h), float) - np.asarray(f.evaluate(z - h), float)) / (2 * h)
    ks = np.arange(k_max + 1)
    sigma = (M @ fv) * sr**ks
    sigma_bar = (Mb @ fpv) * sr ** (ks + 1)
    return HermiteCoefficients(variance=r, sigma_k=sigma, sigma_bar_k=sigma_bar)


def pure_hermite_coefficients(k_star: int, r: float, k: int) -> tuple[float, float]:
    """Closed-form (sigma_k[r], sigmabar_k[r]) for the activation He_{k_star}.

    For k of the same parity as k_star and 0 <= k <= k_star,

        sigma_k[r] = k_star! r^k ((r-1)/2)^{(k_star-k)/2} / ((k_star-k)/2)!

    and sigmabar follows the matching piecewise form, with the top entry
    sigmabar_{k_star}[r] = k_star * sigma_{k_star}[r].  Opposite-parity
    entries vanish identically.
    """
    if r <= 0:
        raise ValueError("variance must be positive")
    if k < 0 or k > k_star:
        raise ValueError("need 0 <= k <= k_star")
    if (k_star - k) % 2 != 0:
        return 0.0, 0.0
    j = (k_star - k) // 2
    sigma = factorial(k_star) * r**k * ((r - 1) / 2) ** j / factorial(j)
    if k == k_star:
        return sigma, k_star * sigma
    # remaining same-parity degrees satisfy k <= k_star - 2
    jb = (k_star - 2 - k) // 2
    sigma_bar = (
        factorial(k_star)
        * r**k
        * ((r - 1) / 2) ** jb
        / factorial(jb)
        * (k_star * r - k)
        / (k_star - k)
    )
    return sigma, sigma_bar


def to_standard_basis(coeffs: HermiteCoefficients) -> np.ndarray:
    """Re-express a scaled expansion in the unit-variance basis.

    Each He_k^[r] is itself a combination of unit-variance polynomials,

        He_k^[r] = sum_j (-1)^j (r-1)^j k! / ((k-2j)! j! 2^j) He_{k-2j},

    which collapses the scaled expansion to the c-vector convention
    f = sum_n c_n He_n / n!.  Degrees above the input truncation are lost.
    """
    r = coeffs.variance
    sig = np.asarray(coeffs.sigma_k, dtype=float)
    kmax = len(sig) - 1
    c = np.zeros(kmax + 1)
    for n in range(kmax + 1):
        s = 0.0
        j = 0
        while n + 2 * j <= kmax:
            s += sig[n + 2 * j] * (-1) ** j * (r - 1) ** j / (r ** (n + 2 * j) * factorial(j) * 2**j)
            j += 1
        c[n] = s
    return c


def square_expansion(c: np.ndarray) -> np.ndarray:
    """Unit-variance coefficients of f(z)^2 from those of f(z).

    Products of Hermite polynomials linearize as

        He_k He_k' = sum_j j! C(k,j) C(k',j) He_{k+k'-2j},

    so an input truncated at degree K yields an exact output truncated at 2K.
    """
    c = np.asarray(c, dtype=float)
    K = len(c) - 1
    b = np.array([c[k] / factorial(k) for k in range(K + 1)])
    bsq = np.zeros(2 * K + 1)
    for k in range(K + 1):
        if b[k] == 0.0:
            continue
        for kp in range(k, K + 1):
            if b[kp] == 0.0:
                continue
            mult = 1.0 if kp == k else 2.0
            for j in range(0, k + 1):
                bsq[k + kp - 2 * j] += mult * b[k] * b[kp] * factorial(j) * comb(k, j) * comb(kp, j)
    return np.array([bsq[n] * factorial(n) for n in range(2 * K + 1)])


def information_exponent(c: np.ndarray, tol: float = 1e-10) -> int:
    """Smallest degree k >= 1 with |c_k| > tol.

    Raises
    ------
    DegenerateFunctionError
        If every coefficient of degree >= 1 is below tolerance.
    """
    c = np.asarray(c, dtype=float)
    for k in range(1, len(c)):
        if abs(c[k]) > tol:
            return k
    raise DegenerateFunctionError("no Hermite coefficient of degree >= 1 above tolerance")
