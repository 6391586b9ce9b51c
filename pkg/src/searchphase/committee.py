"""Rank-R adaptation of a K-direction linear committee.

The target is y = (1/sqrt K) sum_k (w_k* . x) over orthonormal directions
w_k*; the model is yhat = (1/sqrt K) sum_k (mu_k w_k* + sum_r u_{k,r} a_r) . x
with shared unit adapter directions a_1..a_R and per-pair magnitudes
u_{k,r}.  Directions with mu_k = 1 are frozen: their magnitudes stay 0 and
receive no updates.  Order parameters are m_{k,r} = w_k* . a_r and
q_{rs} = a_r . a_s.

The reduced description treats each (k, r) pair as its own two-dimensional
search problem coupled only through q and through C = U^T U:

    du_{k,r}/dt = (1/K) [ D_k m_{k,r} - sum_s q_{rs} u_{k,s} ]
    dm_{k,r}/dt = (1/K) [ D_k u_{k,r} (1 - m_{k,r}^2)
                          - sum_{s != r} C_{rs} (m_{k,s} - m_{k,r} q_{rs}) ]

with D_k = 1 - mu_k.  Its per-direction escape rate is
lambda_k = (-1 + sqrt(1 + 4 D_k^2)) / (2K), independent of the rank R.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import inf, sqrt

import numpy as np

from .sgd import step_rng

_INIT_STREAM = 0
_TRAIN_STREAM = 1


@dataclass(frozen=True)
class CommitteeConfig:
    """Configuration of a committee run (activation fixed to linear)."""

    mu: tuple
    rank: int
    d: int = 1000
    batch_size: int = 500
    learning_rate: float = 0.1
    n_steps: int = 1000
    seed: int = 0
    record_every: int = 1
    onset_threshold: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        if len(self.mu) < 1:
            raise ValueError("need at least one direction")
        if any(not (0.0 < v <= 1.0) for v in self.mu):
            raise ValueError("each mu_k must lie in (0, 1]")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.d < len(self.mu) + self.rank + 1:
            raise ValueError("d too small for the requested directions")
        if self.batch_size < 1 or self.n_steps < 1:
            raise ValueError("batch_size and n_steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.onset_threshold < 1.0):
            raise ValueError("onset_threshold must lie in (0, 1)")

    @property
    def n_directions(self) -> int:
        return len(self.mu)

    @property
    def adapted(self) -> tuple:
        return tuple(k for k, v in enumerate(self.mu) if v < 1.0)


@dataclass(frozen=True, eq=False)
class CommitteeState:
    """Reduced committee state: magnitudes, overlaps, adapter Gram matrix."""

    u: np.ndarray  # (K, R)
    m: np.ndarray  # (K, R)
    q: np.ndarray  # (R, R)

    def __post_init__(self):
        if self.u.shape != self.m.shape or self.q.shape != (self.u.shape[1],) * 2:
            raise ValueError("inconsistent state shapes")


def committee_reduced_init(cfg: CommitteeConfig) -> CommitteeState:
    """Deterministic reduced init matching the simulator's pinned geometry:
    m_{k,r} = u_{k,r} = 1/sqrt(d) on adapted directions, 0 on frozen ones,
    q = I."""
    K, R = cfg.n_directions, cfg.rank
    u = np.zeros((K, R))
    m = np.zeros((K, R))
    val = 1.0 / sqrt(cfg.d)
    for k in cfg.adapted:
        u[k, :] = val
        m[k, :] = val
    return CommitteeState(u=u, m=m, q=np.eye(R))


def _committee_rhs(
    cfg: CommitteeConfig, u: np.ndarray, m: np.ndarray, q: np.ndarray, include_coupling: bool
) -> tuple[np.ndarray, np.ndarray]:
    K = cfg.n_directions
    delta = 1.0 - np.asarray(cfg.mu)  # D_k
    du = (delta[:, None] * m - u @ q) / K
    dm = delta[:, None] * u * (1.0 - m * m) / K
    if include_coupling:
        c = u.T @ u
        cross = m @ (c - np.diag(np.diag(c))) - m * (np.sum(c * q, axis=0) - np.diag(c) * np.diag(q))
        dm = dm - cross / K
    frozen = delta == 0.0
    du[frozen] = 0.0
    return du, dm


def committee_ode_step(
    cfg: CommitteeConfig, state: CommitteeState, dt: float, include_coupling: bool = True
) -> CommitteeState:
    """One RK4 step of the reduced committee flow (q held fixed).

    include_coupling=False drops the C = U^T U cross-direction term, which
    decouples the system into K*R independent rank-one problems when q = I.
    """
    u, m, q = state.u, state.m, state.q

    def f(uu, mm):
        return _committee_rhs(cfg, uu, mm, q, include_coupling)

    k1u, k1m = f(u, m)
    k2u, k2m = f(u + 0.5 * dt * k1u, m + 0.5 * dt * k1m)
    k3u, k3m = f(u + 0.5 * dt * k2u, m + 0.5 * dt * k2m)
    k4u, k4m = f(u + dt * k3u, m + dt * k3m)
    u_new = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    m_new = np.clip(m + dt / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m), -1.0, 1.0)
    return replace(state, u=u_new, m=m_new)


def committee_loss(cfg: CommitteeConfig, state: CommitteeState) -> float:
    """Population error of the reduced state:

    (1/2K) sum_k [ D_k^2 - 2 D_k sum_r u_{k,r} m_{k,r}
                   + sum_{r,s} u_{k,r} u_{k,s} q_{rs} ].
    """
    delta = 1.0 - np.asarray(cfg.mu)
    per_k = (
        delta**2
        - 2.0 * delta * np.sum(state.u * state.m, axis=1)
        + np.einsum("kr,ks,rs->k", state.u, state.u, state.q)
    )
    return float(np.sum(per_k)) / (2.0 * cfg.n_directions)


@dataclass(frozen=True, eq=False)
class CommitteeRates:
    """Per-direction linear escape rates (rank-independent)."""

    lambda_plus: np.ndarray
    tau: np.ndarray


def committee_linear_rates(cfg: CommitteeConfig) -> CommitteeRates:
    """lambda_k = (-1 + sqrt(1 + 4 D_k^2)) / (2K) and tau_k = 1/lambda_k.

    Frozen directions (D_k = 0) report lambda 0 and tau +infinity.  The
    rank enters the linearized per-pair problem only through q = I, so the
    rates do not depend on cfg.rank.
    """
    delta = 1.0 - np.asarray(cfg.mu)
    disc = np.sqrt(1.0 + 4.0 * delta * delta)
    lam = (disc - 1.0) / (2.0 * cfg.n_directions)
    tau = np.where(delta == 0.0, inf, np.divide(1.0, np.where(lam > 0, lam, 1.0)))
    return CommitteeRates(lambda_plus=lam, tau=tau)


@dataclass(frozen=True, eq=False)
class CommitteeTrajectory:
    """Recorded reduced flow: times plus stacked (u, m) histories."""

    t: np.ndarray
    u: np.ndarray  # (n_rec, K, R)
    m: np.ndarray
    loss: np.ndarray


def integrate_committee(
    cfg: CommitteeConfig,
    state0: CommitteeState,
    dt: float,
    t_max: float,
    include_coupling: bool = True,
    record_every: int = 1,
) -> CommitteeTrajectory:
    """Fixed-step RK4 integration of the reduced committee flow."""
    if dt <= 0 or t_max <= 0 or record_every < 1:
        raise ValueError("dt, t_max and record_every must be positive")
    n_steps = int(round(t_max / dt))
    state = state0
    ts, us, ms, losses = [0.0], [state.u.copy()], [state.m.copy()], [committee_loss(cfg, state)]
    for i in range(1, n_steps + 1):
        state = committee_ode_step(cfg, state, dt, include_coupling)
        if i % record_every == 0:
            ts.append(i * dt)
            us.append(state.u.copy())
            ms.append(state.m.copy())
            losses.append(committee_loss(cfg, state))
    return CommitteeTrajectory(
        t=np.array(ts), u=np.array(us), m=np.array(ms), loss=np.array(losses)
    )


def aggregate_overlap(cfg: CommitteeConfig, m: np.ndarray) -> np.ndarray:
    """Overlap of each adapter with the aggregate residual direction.

    With equal frozen weights the learnable signal is the single direction
    sum_{k adapted} w_k* (the residual is rank one), so per-pair overlaps
    saturate at 1/sqrt(K) and cannot index escape.  The escape-bearing
    statistic is rho_r = sum_{k adapted} m_{k,r} / sqrt(n_adapted), the
    adapter's overlap with that aggregate direction, which saturates at 1.
    """
    adapted = np.array(cfg.adapted, dtype=int)
    if len(adapted) == 0:
        return np.zeros(m.shape[-1])
    return np.sum(m[..., adapted, :], axis=-2) / sqrt(len(adapted))


@dataclass(frozen=True, eq=False)
class CommitteeRunResult:
    """High-dimensional committee SGD record.

    m_eff has one column per direction: mu_k + sum_r u_{k,r} m_{k,r}.
    rho holds the aggregate-direction overlaps (one column per adapter);
    onset_step is the first step at which max_r |rho_r| reaches the onset
    threshold (None if never).
    """

    t_epoch: np.ndarray
    u: np.ndarray  # (n_rec, K, R)
    m: np.ndarray
    m_eff: np.ndarray  # (n_rec, K)
    rho: np.ndarray  # (n_rec, R)
    test_mse: np.ndarray
    onset_step: int | None
    final_q: np.ndarray
    init_m: np.ndarray


def _exact_test_mse(cfg: CommitteeConfig, u: np.ndarray, m: np.ndarray, q: np.ndarray) -> float:
    # (1/K) || sum_k D_k w_k* - sum_r U_r a_r ||^2 with U_r = sum_k u_{k,r}
    delta = 1.0 - np.asarray(cfg.mu)
    U = np.sum(u, axis=0)
    return (
        float(np.sum(delta**2))
        + float(U @ q @ U)
        - 2.0 * float(delta @ m @ U)
    ) / cfg.n_directions


def committee_sgd(cfg: CommitteeConfig) -> CommitteeRunResult:
    """One-pass SGD on the full d-dimensional committee.

    Teachers are drawn orthonormal; each adapter starts as
    sum_{k adapted} w_k*/sqrt(d) plus an orthonormal remainder, giving every
    adapted pair the pinned initial overlap 1/sqrt(d); adapted magnitudes
    start at 1/sqrt(d).  Updates are batch means of per-sample gradients of
    (y - yhat)^2; adapters are renormalized to unit length each step.  The
    batch is sampled through its exact frame law (coordinates along
    teachers and adapters, plus one residual direction), so the cost per
    step is O(batch + d).
    """
    K, R, d = cfg.n_directions, cfg.rank, cfg.d
    rng = step_rng(cfg.seed, _INIT_STREAM, 0)
    teachers = np.linalg.qr(rng.standard_normal((d, K)))[0].T  # (K, d) orthonormal
    adapted = np.array(cfg.adapted, dtype=int)
    n_a = len(adapted)
    adapters = np.empty((R, d))
    core = np.sum(teachers[adapted], axis=0) / sqrt(d) if n_a else np.zeros(d)
    residuals: list[np.ndarray] = []
    for r in range(R):
        g = rng.standard_normal(d)
        g -= teachers.T @ (teachers @ g)
        for prev in residuals:
            g -= (g @ prev) * prev
        g /= np.linalg.norm(g)
        residuals.append(g)
        adapters[r] = core + sqrt(max(1.0 - n_a / d, 0.0)) * g
        adapters[r] /= np.linalg.norm(adapters[r])

    u = np.zeros((K, R))
    u[adapted] = 1.0 / sqrt(d)
    mu_vec = np.asarray(cfg.mu)
    sqK = sqrt(K)

    n_rec_max = cfg.n_steps // cfg.record_every + 2
    rec_t = np.empty(n_rec_max)
    rec_u = np.empty((n_rec_max, K, R))
    rec_m = np.empty((n_rec_max, K, R))
    rec_meff = np.empty((n_rec_max, K))
    rec_rho = np.empty((n_rec_max, R))
    rec_mse = np.empty(n_rec_max)
    n_rec = 0
    onset_step = None

    def overlaps() -> tuple[np.ndarray, np.ndarray]:
        return teachers @ adapters.T, adapters @ adapters.T  # m (K,R), q (R,R)

    def record(step: int, m: np.ndarray, q: np.ndarray) -> None:
        nonlocal n_rec
        rec_t[n_rec] = step
        rec_u[n_rec] = u
        rec_m[n_rec] = m
        rec_meff[n_rec] = mu_vec + np.sum(u * m, axis=1)
        rec_rho[n_rec] = aggregate_overlap(cfg, m)
        rec_mse[n_rec] = _exact_test_mse(cfg, u, m, q)
        n_rec += 1

    m, q = overlaps()
    init_m = m.copy()
    record(0, m, q)

    for step in range(1, cfg.n_steps + 1):
        srng = step_rng(cfg.seed, _TRAIN_STREAM, step - 1)
        # frame: K teacher rows (already orthonormal) + adapter residuals
        basis = [teachers[k] for k in range(K)]
        for r in range(R):
            v = adapters[r].copy()
            for b in basis:
                v -= (v @ b) * b
            nrm = np.linalg.norm(v)
            if nrm > 1e-10:
                basis.append(v / nrm)
        F = np.array(basis)
        coords = srng.standard_normal((cfg.batch_size, F.shape[0]))
        g_res = srng.standard_normal(d)

        lam_star = coords[:, :K]  # teacher pre-activations
        adapter_coords = F @ adapters.T  # (f, R)
        lam_a = coords @ adapter_coords  # (B, R)
        U_col = np.sum(u, axis=0)  # U_r
        y = np.sum(lam_star, axis=1) / sqK
        yhat = (lam_star @ mu_vec + lam_a @ U_col) / sqK
        eps = y - yhat

        du_row = cfg.learning_rate * 2.0 / sqK * (eps @ lam_a) / cfg.batch_size  # (R,)
        # shared mean-gradient direction: w = mean(eps_i x_i)
        in_frame = (eps @ coords) / cfg.batch_size
        res = g_res - F.T @ (F @ g_res)
        w = F.T @ in_frame + (float(np.linalg.norm(eps)) / cfg.batch_size) * res
        u[adapted] += du_row[None, :]
        adapters += (cfg.learning_rate * 2.0 / sqK) * np.outer(U_col, w)
        adapters /= np.linalg.norm(adapters, axis=1, keepdims=True)

        m, q = overlaps()
        if onset_step is None and n_a and np.max(np.abs(aggregate_overlap(cfg, m))) >= cfg.onset_threshold:
            onset_step = step
        if step % cfg.record_every == 0 or step == cfg.n_steps:
            record(step, m, q)

    return CommitteeRunResult(
        t_epoch=rec_t[:n_rec],
        u=rec_u[:n_rec],
        m=rec_m[:n_rec],
        m_eff=rec_meff[:n_rec],
        rho=rec_rho[:n_rec],
        test_mse=rec_mse[:n_rec],
        onset_step=onset_step,
        final_q=q,
        init_m=init_m,
    )
