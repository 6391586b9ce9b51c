"""Reduced-order theory: population loss, gradients, linearization, tau(mu).

Everything here lives on the two order parameters

    u    : the trainable low-rank magnitude
    m    : overlap of the trainable direction with the target direction

with derived quantities m_eff = mu + u*m (effective alignment) and
r = mu^2 + u^2 + 2*mu*u*m (pre-activation variance).  The student's scaled
Hermite coefficients are re-evaluated at the instantaneous r; the teacher's
live at variance 1.

Numerical note: series are computed with coefficients rescaled by r^{-k}
(sigma_k / r^k stays O(1) as r -> 0) so that small-mu linearizations do not
underflow.  Pure Hermite students take a closed-form path that never touches
quadrature.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import factorial, inf, isfinite

import numpy as np

from .activations import ActivationSpec
from .hermite import project_activation

# minimum admissible pre-activation variance before the state is declared
# collapsed (the expansion measure degenerates)
R_FLOOR = 1e-12

# |A| below this is treated as exactly singular: tau reported as +infinity
A_SINGULAR_TOL = 1e-10

# series tail rule: last three retained terms must all be below this fraction
# of the partial sum for the expansion to count as converged
TAIL_RTOL = 1e-10

# looser rule for the loss value itself: smooth non-polynomial pairs carry a
# genuine ~1e-7-relative truncation tail at the default k_max, which is far
# below every tolerance the loss feeds into; only warn when it gets material
LOSS_TAIL_RTOL = 1e-6


class DegenerateStateError(RuntimeError):
    """The pre-activation variance collapsed below the admissible floor."""


class SeriesConvergenceWarning(UserWarning):
    """Truncated Hermite series did not meet the tail tolerance."""


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """One (teacher, student, mu) setting of the reduced model.

    delta is the time rescaling of the flow; when None it defaults to
    1/(k*! * k*) for a pure Hermite student of degree k*, else 1.
    """

    teacher: ActivationSpec
    student: ActivationSpec
    mu: float
    k_max: int = 25
    delta: float | None = None

    def __post_init__(self):
        if not (0.0 < self.mu < 1.0):
            raise ValueError("mu must lie strictly inside (0, 1)")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        for spec in (self.teacher, self.student):
            kp = spec.pure_hermite_degree
            if kp is not None and kp > self.k_max:
                raise ValueError("k_max must cover the pure Hermite degree")
        if self.delta is None:
            object.__setattr__(self, "delta", default_delta(self.student))
        elif self.delta <= 0:
            raise ValueError("delta must be positive")


def default_delta(student: ActivationSpec) -> float:
    """1/(k*! * k*) for a pure Hermite student of degree k*, else 1."""
    kp = student.pure_hermite_degree
    if kp is not None and kp >= 1:
        return 1.0 / (factorial(kp) * kp)
    return 1.0


@dataclass(frozen=True)
class OrderParameterState:
    """The reduced state (u, m)."""

    u: float
    m: float

    def __post_init__(self):
        if abs(self.m) > 1.0 + 1e-12:
            raise ValueError("|m| must not exceed 1")

    def r(self, mu: float) -> float:
        return mu * mu + self.u * self.u + 2.0 * mu * self.u * self.m

    def m_eff(self, mu: float) -> float:
        return mu + self.u * self.m


@dataclass(frozen=True)
class SearchPhaseLinearization:
    """Drift coefficients (A, B) of the linearized search phase.

    The linearized system is du/dt = B u + A m, dm/dt = A u, with
    lambda_pm = (B +- sqrt(B^2 + 4A^2))/2 and tau = 1/lambda_plus
    (reported +infinity when |A| is below the singular tolerance).
    """

    A: float
    B: float
    lambda_plus: float
    lambda_minus: float
    tau: float
    converged: bool = True


@lru_cache(maxsize=64)
def _series_workspace(k_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached (k, 1/k!) arrays for degrees 0..k_max (read-only)."""
    ks = np.arange(k_max + 1, dtype=float)
    inv_fact = np.ones(k_max + 1)
    for k in range(1, k_max + 1):
        inv_fact[k] = inv_fact[k - 1] / k
    ks.setflags(write=False)
    inv_fact.setflags(write=False)
    return ks, inv_fact


def _tail_ok(terms: np.ndarray, rtol: float = TAIL_RTOL) -> bool:
    # a finite expansion (trailing exact zeros) always passes
    terms = np.asarray(terms, dtype=float)
    if len(terms) < 4:
        return True
    scale = max(abs(float(np.sum(terms))), float(np.max(np.abs(terms))), 1e-300)
    return bool(np.all(np.abs(terms[-3:]) <= rtol * scale + 1e-300))


@lru_cache(maxsize=512)
def _teacher_coefficients_cached(cfg: "ModelConfig") -> np.ndarray:
    kp = cfg.teacher.pure_hermite_degree
    if kp is not None:
        phi = np.zeros(cfg.k_max + 1)
        phi[kp] = float(factorial(kp))
    else:
        phi = np.array(project_activation(cfg.teacher, 1.0, cfg.k_max).sigma_k)
    phi.setflags(write=False)
    return phi


def teacher_coefficients(cfg: ModelConfig) -> np.ndarray:
    """Unit-variance coefficient vector phi_k of the (transformed) teacher.

    Cached per config object; the returned array is read-only.
    """
    return _teacher_coefficients_cached(cfg)


def _student_rescaled(cfg: ModelConfig, r: float) -> tuple[np.ndarray, np.ndarray]:
    """(sigma_k / r^k, sigmabar_k / r^k) for the student at variance r.

    The rescaled coefficients stay O(1) for r -> 0, which keeps every series
    below representable range even at mu ~ 1e-4.
    """
    kmax = cfg.k_max
    kp = cfg.student.pure_hermite_degree
    sh = np.zeros(kmax + 1)
    sbh = np.zeros(kmax + 1)
    if kp is not None:
        _, inv_fact = _series_workspace(kmax)
        fk = 1.0 / inv_fact[kp]
        half = (r - 1.0) / 2.0
        ks_sel = np.arange(kp % 2, kp + 1, 2)
        js = (kp - ks_sel) // 2
        sh[ks_sel] = fk * half**js * inv_fact[js]
        sbh[kp] = kp * sh[kp]
        low = ks_sel[ks_sel < kp]
        jb = (kp - 2 - low) // 2
        sbh[low] = fk * half**jb * inv_fact[jb] * (kp * r - low) / (kp - low)
        return sh, sbh
    co = project_activation(cfg.student, r, kmax)
    ks, _ = _series_workspace(kmax)
    powers = r**ks
    return co.sigma_k / powers, co.sigma_bar_k / powers


def _state_geometry(cfg: ModelConfig, s: OrderParameterState) -> tuple[float, float]:
    r = s.r(cfg.mu)
    if r < R_FLOOR:
        raise DegenerateStateError(f"pre-activation variance collapsed: r={r:.3e}")
    return r, s.m_eff(cfg.mu)


def population_loss(cfg: ModelConfig, s: OrderParameterState) -> float:
    """Series value of the (1/2)-convention population loss L(u, m).

    L = sum_k (1/k!) [ phi_k^2/2 + sigma_k^2/(2 r^k) - sigma_k phi_k m_eff^k / r^k ].

    Emits SeriesConvergenceWarning when the truncation tail is not negligible.
    """
    r, me = _state_geometry(cfg, s)
    phi = teacher_coefficients(cfg)
    sh, _ = _student_rescaled(cfg, r)
    ks, inv_fact = _series_workspace(cfg.k_max)
    # sigma_k^2/r^k = sh^2 * r^k ; sigma_k/r^k = sh
    terms = inv_fact * (0.5 * phi**2 + 0.5 * sh * sh * r**ks - sh * phi * me**ks)
    if not _tail_ok(terms, LOSS_TAIL_RTOL):
        warnings.warn("population loss series tail above tolerance", SeriesConvergenceWarning)
    return float(np.sum(terms))


def _gradient_sums(
    phi: np.ndarray, sh: np.ndarray, sbh: np.ndarray, r: float, me: float, k_max: int
) -> tuple[float, float, float, float]:
    ks, inv_fact = _series_workspace(k_max)
    me_pow = me**ks
    # C1 = sum sigma_k sigmabar_k / (k! r^{k+1}) = sum sh*sbh*r^{k-1}/k!
    c1 = float(np.sum(inv_fact * sh * sbh * r ** (ks - 1.0)))
    # Sa = sum_{k>=1} phi_k m_eff^{k-1} sigma_k / ((k-1)! r^k)
    sa = float(np.sum((inv_fact * ks)[1:] * phi[1:] * me_pow[:-1] * sh[1:]))
    # Sb = sum_{k>=1} phi_k m_eff^k sigma_k / ((k-1)! r^{k+1})
    sb = float(np.sum((inv_fact * ks)[1:] * phi[1:] * me_pow[1:] * sh[1:] / r))
    # Sc = sum_{k>=0} phi_k m_eff^k sigmabar_k / (k! r^{k+1})
    sc = float(np.sum(inv_fact * phi * me_pow * sbh / r))
    return c1, sa, sb, sc


def loss_gradients(cfg: ModelConfig, s: OrderParameterState) -> tuple[float, float]:
    """(dL/du, dL/dm) of the population loss, by the exact coefficient series."""
    r, me = _state_geometry(cfg, s)
    phi = teacher_coefficients(cfg)
    sh, sbh = _student_rescaled(cfg, r)
    c1, sa, sb, sc = _gradient_sums(phi, sh, sbh, r, me, cfg.k_max)
    g = c1 + sb - sc
    drive = s.u + cfg.mu * s.m
    dldu = drive * g - s.m * sa
    dldm = s.u * cfg.mu * g - s.u * sa
    return dldu, dldm


def correlation_loss(cfg: ModelConfig, s: OrderParameterState) -> float:
    """Correlation objective 1 - E[y yhat] in series form."""
    r, me = _state_geometry(cfg, s)
    phi = teacher_coefficients(cfg)
    sh, _ = _student_rescaled(cfg, r)
    ks, inv_fact = _series_workspace(cfg.k_max)
    return 1.0 - float(np.sum(inv_fact * phi * sh * me**ks))


def correlation_gradients(cfg: ModelConfig, s: OrderParameterState) -> tuple[float, float]:
    """(d/du, d/dm) of the correlation objective.

    For linear matching activations this is exactly (-m, -u), independent
    of mu.
    """
    r, me = _state_geometry(cfg, s)
    phi = teacher_coefficients(cfg)
    sh, sbh = _student_rescaled(cfg, r)
    _, sa, sb, sc = _gradient_sums(phi, sh, sbh, r, me, cfg.k_max)
    drive = s.u + cfg.mu * s.m
    dldu = -(drive * (sc - sb) + s.m * sa)
    dldm = -(s.u * cfg.mu * (sc - sb) + s.u * sa)
    return dldu, dldm


def linearize_search_phase(cfg: ModelConfig) -> SearchPhaseLinearization:
    """Drift coefficients (A, B) at the search-phase base point r = mu^2.

    A = -sum_k sigmabar_k/(k! mu^{k+1}) (-phi_k + sigma_k/mu^k)
    B = -[ sum_k sigmabar_k sigma_k/(k! mu^{2k+2})
           + sum_{k>=1} phi_k/((k-1)! mu^{k+2}) (sigma_k - sigmabar_k/k) ]

    both evaluated at r = mu^2 and scaled by cfg.delta.
    """
    mu = cfg.mu
    r = mu * mu
    phi = teacher_coefficients(cfg)
    sh, sbh = _student_rescaled(cfg, r)
    ks, inv_fact = _series_workspace(cfg.k_max)
    mu_pow = mu**ks
    # sigmabar_k/mu^{k+1} = sbh mu^{k-1};  sigma_k/mu^k = sh mu^k
    a_terms = -inv_fact * (sbh * mu_pow / mu) * (-phi + sh * mu_pow)
    # sigmabar_k sigma_k/mu^{2k+2} = sbh sh mu^{2k-2}
    b1_terms = inv_fact * sbh * sh * mu_pow * mu_pow / (mu * mu)
    # phi_k (sigma_k - sigmabar_k/k)/((k-1)! mu^{k+2}) with sigma/mu^{2k} rescaling
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = sh - np.where(ks > 0, sbh / np.where(ks > 0, ks, 1.0), 0.0)
    b2_terms = np.zeros_like(b1_terms)
    b2_terms[1:] = (inv_fact * ks)[1:] * phi[1:] * diff[1:] * mu_pow[1:] / (mu * mu)
    b_terms = -(b1_terms + b2_terms)
    A = cfg.delta * float(np.sum(a_terms))
    B = cfg.delta * float(np.sum(b_terms))
    converged = _tail_ok(a_terms) and _tail_ok(b_terms)
    lam_plus, lam_minus = drift_eigenvalues(A, B)
    tau = inf if abs(A) < A_SINGULAR_TOL else 1.0 / lam_plus
    return SearchPhaseLinearization(
        A=A, B=B, lambda_plus=lam_plus, lambda_minus=lam_minus, tau=tau, converged=converged
    )


def drift_eigenvalues(A: float, B: float) -> tuple[float, float]:
    """(lambda_plus, lambda_minus) = (B +- sqrt(B^2 + 4A^2))/2, cancellation-safe.

    The root that would cancel against B is computed through the conjugate
    form 2A^2/(disc -+ B), so tiny |A| never collapses to an exact zero by
    rounding.
    """
    disc = float(np.hypot(B, 2.0 * A))
    if disc == 0.0:
        return 0.0, 0.0
    if B <= 0.0:
        lam_plus = 2.0 * A * A / (disc - B) if disc - B > 0.0 else 0.0
        lam_minus = (B - disc) / 2.0
    else:
        lam_plus = (B + disc) / 2.0
        lam_minus = -2.0 * A * A / (disc + B)
    return lam_plus, lam_minus


def _grid_array(mu_grid) -> np.ndarray:
    grid = np.asarray(mu_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("mu grid must be a nonempty 1-D array")
    if np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise ValueError("mu grid must lie strictly inside (0, 1)")
    return grid


@dataclass(frozen=True, eq=False)
class TauCurve:
    """Per-mu linearization table over a grid."""

    mu: np.ndarray
    A: np.ndarray
    B: np.ndarray
    lambda_plus: np.ndarray
    tau: np.ndarray
    converged: np.ndarray


def tau_curve(
    teacher: ActivationSpec,
    student: ActivationSpec,
    mu_grid,
    k_max: int = 25,
    delta: float | None = None,
) -> TauCurve:
    """linearize_search_phase evaluated along a mu grid."""
    grid = _grid_array(mu_grid)
    rows = [
        linearize_search_phase(
            ModelConfig(teacher=teacher, student=student, mu=float(mu), k_max=k_max, delta=delta)
        )
        for mu in grid
    ]
    return TauCurve(
        mu=grid,
        A=np.array([x.A for x in rows]),
        B=np.array([x.B for x in rows]),
        lambda_plus=np.array([x.lambda_plus for x in rows]),
        tau=np.array([x.tau for x in rows]),
        converged=np.array([x.converged for x in rows], dtype=bool),
    )


def find_singularities(
    teacher: ActivationSpec,
    student: ActivationSpec,
    mu_grid=None,
    k_max: int = 25,
    delta: float | None = None,
) -> list[float]:
    """Roots of A(mu) on (0,1): bracket sign changes, refine by bisection.

    The grid must resolve the curve at 1e-3 or finer.  Returns sorted roots
    with |A(root)| < 1e-10; empty list when A never changes sign.
    """
    if mu_grid is None:
        mu_grid = np.arange(1e-3, 0.9995, 1e-3)
    grid = _grid_array(mu_grid)
    if len(grid) > 1 and float(np.max(np.diff(grid))) > 1e-3 + 1e-12:
        raise ValueError("mu grid resolution must be <= 1e-3")

    def a_of(mu: float) -> float:
        return linearize_search_phase(
            ModelConfig(teacher=teacher, student=student, mu=mu, k_max=k_max, delta=delta)
        ).A

    vals = np.array([a_of(float(mu)) for mu in grid])
    roots: list[float] = []
    for i, v in enumerate(vals):
        if abs(v) < A_SINGULAR_TOL:
            roots.append(float(grid[i]))
    for i in range(len(grid) - 1):
        lo, hi = float(grid[i]), float(grid[i + 1])
        flo, fhi = float(vals[i]), float(vals[i + 1])
        if abs(flo) < A_SINGULAR_TOL or abs(fhi) < A_SINGULAR_TOL:
            continue
        if flo * fhi > 0.0:
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = a_of(mid)
            if abs(fm) < A_SINGULAR_TOL or hi - lo < 1e-15:
                break
            if fm * flo > 0.0:
                lo, flo = mid, fm
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    return sorted(roots)


def asymptotic_tau(k_star: int, mu: float, regime: str) -> float:
    """Limiting tau(mu) laws for matching pure Hermite models.

    near_one:  4 / ((2k-1)^2 (mu^2-1)^2)
    near_zero: even k = 2p   -> 1/B_0
               odd  k = 2p+1 -> -B_0/(c_p mu^2), c_p = (2p-1)!/(p!(p-1)! 2^{2p-1})
    with B_0 taken as the numerical limit B(mu=1e-4).
    """
    if regime == "near_one":
        if k_star < 1:
            raise ValueError("k_star must be >= 1")
        return 4.0 / ((2 * k_star - 1) ** 2 * (mu * mu - 1.0) ** 2)
    if regime != "near_zero":
        raise ValueError("regime must be 'near_one' or 'near_zero'")
    if k_star < 3:
        raise ValueError("near_zero branches need k_star >= 3")
    from .activations import builtin

    act = builtin(f"hermite({k_star})")
    b0 = linearize_search_phase(
        ModelConfig(teacher=act, student=act, mu=1e-4, k_max=k_star + 2)
    ).B
    if k_star % 2 == 0:
        return 1.0 / b0
    p = (k_star - 1) // 2
    c_p = factorial(2 * p - 1) / (factorial(p) * factorial(p - 1) * 2 ** (2 * p - 1))
    return -b0 / (c_p * mu * mu)


def even_hermite_mean(k_star: int, r: float) -> float:
    """Mean sigma_0[r] = k*! (r-1)^{k*/2} / (2^{k*/2} (k*/2)!) of an even pure Hermite."""
    if k_star % 2 != 0 or k_star < 2:
        raise ValueError("k_star must be even and >= 2")
    if r <= 0:
        raise ValueError("variance must be positive")
    p = k_star // 2
    return factorial(k_star) * (r - 1.0) ** p / (2**p * factorial(p))


def effective_potential(lin: SearchPhaseLinearization, g):
    """Potential V(g) = -A^2 log cosh g and force -dV/dg = A^2 tanh g."""
    if not isfinite(lin.A):
        raise ValueError("A must be finite")
    g = np.asarray(g, dtype=float)
    # log cosh computed overflow-free: |g| + log1p(e^{-2|g|}) - log 2
    logcosh = np.abs(g) + np.log1p(np.exp(-2.0 * np.abs(g))) - np.log(2.0)
    V = -lin.A**2 * logcosh
    force = lin.A**2 * np.tanh(g)
    if V.ndim == 0:
        return float(V), float(force)
    return V, force
