"""Deterministic reduced-order flows for the two order parameters.

The full flow integrates

    du/dt = -delta * dL/du
    dm/dt = -delta * (1 - m^2) * dL/dm

with L the population loss of a ModelConfig (the (1 - m^2) factor is the
spherical constraint on the trainable direction, delta the config's time
rescaling).  The linearized flow du/dt = B u + A m, dm/dt = A u is solved in
closed form from a SearchPhaseLinearization.  A scalar damped-oscillator
change of variables m = tanh(g) is provided for the late phase.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .theory import (
    ModelConfig,
    OrderParameterState,
    SearchPhaseLinearization,
    effective_potential,
    loss_gradients,
    population_loss,
)

# state magnitudes beyond this abort the integration as a blow-up
BLOWUP_LIMIT = 1e6


class NumericalBlowupError(RuntimeError):
    """The flow left the representable region (bad step size or bad state)."""


@dataclass(frozen=True)
class FlowSettings:
    """Integration controls for integrate_flow.

    exit_fraction sets the escape threshold: the first time
    max(|u|, |m|) >= exit_fraction * mu is reported as t_exit.
    stop_at_exit ends the run there instead of continuing to t_max.
    """

    dt: float = 0.01
    t_max: float = 1e3
    exit_fraction: float = 1.0
    method: str = "rk4"
    record_every: int = 1
    stop_at_exit: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError("dt and t_max must be positive")
        if self.exit_fraction <= 0:
            raise ValueError("exit_fraction must be positive")
        if self.method not in ("rk4", "euler"):
            raise ValueError("method must be 'rk4' or 'euler'")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Sampled flow trajectory with derived observables.

    t_exit is the (linearly interpolated) first crossing of the escape
    threshold, or None if the trajectory never crossed it.
    """

    t: np.ndarray
    u: np.ndarray
    m: np.ndarray
    m_eff: np.ndarray
    r: np.ndarray
    loss: np.ndarray
    t_exit: float | None
    exited: bool


def _flow_rhs(cfg: ModelConfig, u: float, m: float) -> tuple[float, float]:
    du, dm = loss_gradients(cfg, OrderParameterState(u, m))
    return -cfg.delta * du, -cfg.delta * (1.0 - m * m) * dm


def integrate_flow(
    cfg: ModelConfig,
    state0: OrderParameterState,
    settings: FlowSettings = FlowSettings(),
) -> TrajectoryRecord:
    """Integrate the full gradient flow from state0.

    Fixed-step RK4 (or explicit Euler).  m is clipped to [-1, 1] after each
    step: the (1 - m^2) factor makes the band invariant exactly, clipping
    only removes rounding excursions.  Raises NumericalBlowupError when the
    state leaves the representable region.
    """
    dt = settings.dt
    n_steps = int(round(settings.t_max / dt))
    n_rec = n_steps // settings.record_every + 1
    out = {name: np.empty(n_rec) for name in ("t", "u", "m", "m_eff", "r", "loss")}

    mu = cfg.mu
    threshold = settings.exit_fraction * mu
    u, m = state0.u, state0.m
    t_exit: float | None = None
    prev_gap = max(abs(u), abs(m)) - threshold
    if prev_gap >= 0.0:
        t_exit = 0.0

    def record(idx: int, t: float, u: float, m: float) -> None:
        s = OrderParameterState(u, m)
        out["t"][idx] = t
        out["u"][idx] = u
        out["m"][idx] = m
        out["m_eff"][idx] = s.m_eff(mu)
        out["r"][idx] = s.r(mu)
        out["loss"][idx] = population_loss(cfg, s)

    record(0, 0.0, u, m)
    n_recorded = 1
    for step in range(1, n_steps + 1):
        if settings.method == "euler":
            du, dm = _flow_rhs(cfg, u, m)
            u_new = u + dt * du
            m_new = m + dt * dm
        else:
            k1u, k1m = _flow_rhs(cfg, u, m)
            k2u, k2m = _flow_rhs(cfg, u + 0.5 * dt * k1u, m + 0.5 * dt * k1m)
            k3u, k3m = _flow_rhs(cfg, u + 0.5 * dt * k2u, m + 0.5 * dt * k2m)
            k4u, k4m = _flow_rhs(cfg, u + dt * k3u, m + dt * k3m)
            u_new = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            m_new = m + dt / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        if not (np.isfinite(u_new) and np.isfinite(m_new)) or abs(u_new) > BLOWUP_LIMIT:
            raise NumericalBlowupError(f"flow diverged at t={step * dt:.6g}")
        m_new = min(1.0, max(-1.0, m_new))
        t = step * dt
        gap = max(abs(u_new), abs(m_new)) - threshold
        if t_exit is None and gap >= 0.0:
            # linear interpolation of the crossing inside the step
            frac = prev_gap / (prev_gap - gap) if gap != prev_gap else 1.0
            frac = min(1.0, max(0.0, frac))
            t_exit = t - dt + frac * dt
        prev_gap = gap
        u, m = u_new, m_new
        if step % settings.record_every == 0:
            record(n_recorded, t, u, m)
            n_recorded += 1
        if settings.stop_at_exit and t_exit is not None:
            break
    return TrajectoryRecord(
        t=out["t"][:n_recorded],
        u=out["u"][:n_recorded],
        m=out["m"][:n_recorded],
        m_eff=out["m_eff"][:n_recorded],
        r=out["r"][:n_recorded],
        loss=out["loss"][:n_recorded],
        t_exit=t_exit,
        exited=t_exit is not None,
    )


@dataclass(frozen=True, eq=False)
class LinearizedTrajectory:
    """Closed-form solution of the linearized search-phase flow."""

    t: np.ndarray
    u: np.ndarray
    m: np.ndarray
    loss: np.ndarray
    t_exit: float | None


def integrate_linearized(
    lin: SearchPhaseLinearization,
    u0: float,
    m0: float,
    t_grid,
    mu: float | None = None,
    exit_fraction: float = 1.0,
) -> LinearizedTrajectory:
    """Exact solution of du/dt = B u + A m, dm/dt = A u on a time grid.

    The quadratic form -(B u^2/2 + A u m) is reported in the loss channel;
    it is a local Lyapunov function of the linearized flow (zero at the
    origin).  When mu is given, t_exit is the interpolated first time
    max(|u|, |m|) >= exit_fraction * mu.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t_grid must be a nonempty 1-D array")
    A, B = lin.A, lin.B
    if A == 0.0:
        u = u0 * np.exp(B * t)
        m = np.full_like(t, m0)
    else:
        lam_p, lam_m = lin.lambda_plus, lin.lambda_minus
        # state = a (lam_p, A) e^{lam_p t} + b (lam_m, A) e^{lam_m t}
        det = A * (lam_p - lam_m)
        a = (A * u0 - lam_m * m0) / det
        b = (lam_p * m0 - A * u0) / det
        ep = np.exp(lam_p * t)
        em = np.exp(lam_m * t)
        u = a * lam_p * ep + b * lam_m * em
        m = a * A * ep + b * A * em
    loss = -(0.5 * B * u * u + A * u * m)
    t_exit = None
    if mu is not None:
        gap = np.maximum(np.abs(u), np.abs(m)) - exit_fraction * mu
        above = np.nonzero(gap >= 0.0)[0]
        if len(above) > 0:
            i = int(above[0])
            if i == 0:
                t_exit = float(t[0])
            else:
                g0, g1 = gap[i - 1], gap[i]
                frac = g0 / (g0 - g1) if g1 != g0 else 1.0
                t_exit = float(t[i - 1] + frac * (t[i] - t[i - 1]))
    return LinearizedTrajectory(t=t, u=u, m=m, loss=loss, t_exit=t_exit)


@dataclass(frozen=True)
class DescentReport:
    """Late-phase convergence diagnostics from verify_descent."""

    rate: float
    r_squared: float
    sign_constant: bool
    loss_monotone: bool
    terminal_m_eff_gap: float
    n_fit_points: int


def verify_descent(
    record: TrajectoryRecord,
    fit_threshold: float = 0.9,
    loss_slack: float = 1e-10,
    saturation_floor: float = 1e-11,
) -> DescentReport:
    """Fit log(1 - |m|) ~ -rate * t past the alignment threshold.

    Uses the samples with |m| > fit_threshold and 1 - |m| > saturation_floor;
    below that floor 1 - |m| is dominated by double-precision rounding of m
    near 1, so those samples measure the float format rather than the decay.
    Reports the least-squares rate, its R^2, whether sign(m) stays constant
    after the threshold, whether the loss is nonincreasing along the whole
    record (within loss_slack per step, relative to 1 + |loss|), and
    |1 - |m_eff|| at the final sample.
    """
    absm = np.abs(record.m)
    mask = (absm > fit_threshold) & (1.0 - absm > saturation_floor)
    n_fit = int(np.sum(mask))
    if n_fit >= 3:
        tt = record.t[mask]
        yy = np.log(1.0 - absm[mask])
        slope, intercept = np.polyfit(tt, yy, 1)
        resid = yy - (slope * tt + intercept)
        ss_tot = float(np.sum((yy - yy.mean()) ** 2))
        r_squared = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        rate = -float(slope)
    else:
        rate, r_squared = float("nan"), float("nan")
    post = record.m[absm > fit_threshold]
    sign_constant = bool(len(post) == 0 or np.all(post > 0) or np.all(post < 0))
    dl = np.diff(record.loss)
    slack = loss_slack * (1.0 + np.abs(record.loss[:-1]))
    loss_monotone = bool(np.all(dl <= slack))
    terminal_gap = abs(1.0 - abs(float(record.m_eff[-1])))
    return DescentReport(
        rate=rate,
        r_squared=r_squared,
        sign_constant=sign_constant,
        loss_monotone=loss_monotone,
        terminal_m_eff_gap=terminal_gap,
        n_fit_points=n_fit,
    )


@dataclass(frozen=True, eq=False)
class OscillatorRecord:
    """Trajectory of the damped-oscillator form of the alignment variable."""

    t: np.ndarray
    g: np.ndarray
    velocity: np.ndarray
    m: np.ndarray
    energy: np.ndarray


def oscillator_trajectory(
    lin: SearchPhaseLinearization,
    g0: float,
    v0: float = 0.0,
    dt: float = 0.01,
    t_max: float = 100.0,
) -> OscillatorRecord:
    """Integrate g'' - B g' - A^2 tanh(g) = 0 by RK4 on (g, g').

    m = tanh(g); the reported energy is g'^2/2 + V(g) with
    V(g) = -A^2 log cosh g, so dE/dt = B g'^2 (nonincreasing for B < 0,
    checkable against the recorded velocities).
    """
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    A, B = lin.A, lin.B

    def rhs(g: float, v: float) -> tuple[float, float]:
        return v, B * v + A * A * np.tanh(g)

    n_steps = int(round(t_max / dt))
    t = dt * np.arange(n_steps + 1)
    g_arr = np.empty(n_steps + 1)
    v_arr = np.empty(n_steps + 1)
    g, v = float(g0), float(v0)
    g_arr[0], v_arr[0] = g, v
    for i in range(1, n_steps + 1):
        k1g, k1v = rhs(g, v)
        k2g, k2v = rhs(g + 0.5 * dt * k1g, v + 0.5 * dt * k1v)
        k3g, k3v = rhs(g + 0.5 * dt * k2g, v + 0.5 * dt * k2v)
        k4g, k4v = rhs(g + dt * k3g, v + dt * k3v)
        g += dt / 6.0 * (k1g + 2 * k2g + 2 * k3g + k4g)
        v += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.isfinite(g) and np.isfinite(v)) or abs(g) > BLOWUP_LIMIT:
            raise NumericalBlowupError(f"oscillator diverged at t={i * dt:.6g}")
        g_arr[i], v_arr[i] = g, v
    V, _ = effective_potential(lin, g_arr)
    energy = 0.5 * v_arr**2 + V
    return OscillatorRecord(t=t, g=g_arr, velocity=v_arr, m=np.tanh(g_arr), energy=energy)
