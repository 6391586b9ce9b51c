"""One-pass SGD on the high-dimensional single-index model.

A teacher label y = phi(w_star . x) is fit by a student
yhat = sigma((w_frozen + u * w) . x) with trainable magnitude u and trainable
unit direction w, from fresh standard Gaussian batches (each sample is used
exactly once).  The frozen part is either aligned (mu * w_star) or mixed
(mu * w_star + (1 - mu) * xi with xi a fixed unit vector orthogonal to
w_star).

Updates use the batch mean of per-sample gradients of (y - yhat)^2 (or of
the correlation objective 1 - y*yhat), after which w is renormalized to the
unit sphere.  One SGD step at learning rate gamma corresponds to a flow-time
increment 2*gamma/delta of the reduced description.

Randomness is counter-based: step t of a run draws from
Philox(key=(seed, stream), counter=(0,0,0,t)), so trajectories are
reproducible per (seed, stream, step) and independent of execution order.

Two samplers produce identical process laws:

* "literal"   materializes the full (batch, d) Gaussian matrix;
* "subspace"  draws only the coordinates along the active frame
  (w_star, [xi,] w) plus a single d-vector for the orthogonal remainder of
  the batch-mean gradient, which has the exact conditional law
  N(0, |c|^2 (I - F F^T)) given the frame coordinates.

The subspace sampler is the default; it makes the cost per step
O(batch + d) instead of O(batch * d).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .activations import ActivationSpec, LabelTransform, transform_teacher
from .theory import ModelConfig, OrderParameterState, default_delta, population_loss

_INIT_STREAM = 0
_TRAIN_STREAM = 1
_MEASURE_STREAM = 2


class SamplerMismatchError(RuntimeError):
    """Internal consistency failure between sampling routes."""


@dataclass(frozen=True)
class Curriculum:
    """Two-stage label schedule: train on transformed labels, then raw ones.

    Stage 1 presents transform(label_kind) of the teacher output and ends at
    the first step with m >= switch_threshold; stage 2 resumes with the raw
    teacher.  Test error is always measured against the raw teacher.
    """

    label_kind: str = "square"
    switch_threshold: float = 0.5

    def __post_init__(self):
        LabelTransform(kind=self.label_kind)  # validates the kind
        if not (0.0 < self.switch_threshold < 1.0):
            raise ValueError("switch_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one SGD run."""

    teacher: ActivationSpec
    student: ActivationSpec
    mu: float
    d: int
    batch_size: int
    learning_rate: float
    n_steps: int
    seed: int = 0
    frozen_mode: str = "aligned"
    objective: str = "mse"
    sampler: str = "subspace"
    exit_fraction: float = 1.0
    align_threshold: float = 0.98
    record_every: int = 1
    init_magnitude: float | None = None
    init_overlap: float | None = None
    curriculum: Curriculum | None = None
    stop_when_aligned: bool = False
    k_max: int = 25

    def __post_init__(self):
        if not (0.0 < self.mu < 1.0):
            raise ValueError("mu must lie strictly inside (0, 1)")
        if self.d < 4:
            raise ValueError("d must be at least 4")
        if self.batch_size < 1 or self.n_steps < 1:
            raise ValueError("batch_size and n_steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.frozen_mode not in ("aligned", "mixed"):
            raise ValueError("frozen_mode must be 'aligned' or 'mixed'")
        if self.objective not in ("mse", "correlation"):
            raise ValueError("objective must be 'mse' or 'correlation'")
        if self.sampler not in ("subspace", "literal"):
            raise ValueError("sampler must be 'subspace' or 'literal'")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not (0.0 < self.align_threshold <= 1.0):
            raise ValueError("align_threshold must lie in (0, 1]")


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    """Counter-based generator for one step of one stream of one run."""
    return np.random.Generator(
        np.random.Philox(key=[seed, stream], counter=[0, 0, 0, step])
    )


def epoch_time_scale(cfg: SimConfig) -> float:
    """Flow-time increment of one SGD step: 2 * learning_rate / delta."""
    return 2.0 * cfg.learning_rate / default_delta(cfg.student)


def scaled_learning_rate(base_rate: float, student: ActivationSpec) -> float:
    """base_rate * delta for the student (delta = 1/(k! k) when pure Hermite)."""
    return base_rate * default_delta(student)


@dataclass(frozen=True, eq=False)
class SimState:
    """Instantaneous simulator state (all direction vectors unit norm)."""

    u: float
    omega: np.ndarray
    omega_star: np.ndarray
    omega_tilde: np.ndarray
    xi: np.ndarray | None
    step: int

    @property
    def m(self) -> float:
        return float(self.omega @ self.omega_star)


def init_state(cfg: SimConfig) -> SimState:
    """Draw the initial geometry.

    w_star is a random unit vector; w starts with overlap exactly
    init_overlap (default +1/sqrt(d)) against w_star, the rest of it random
    in the orthogonal complement; u starts at init_magnitude (default
    1/sqrt(d)).  In mixed mode xi is a random unit vector orthogonal to
    w_star and the frozen part is mu*w_star + (1-mu)*xi.
    """
    rng = step_rng(cfg.seed, _INIT_STREAM, 0)
    d = cfg.d
    w_star = rng.standard_normal(d)
    w_star /= np.linalg.norm(w_star)
    overlap = cfg.init_overlap if cfg.init_overlap is not None else 1.0 / np.sqrt(d)
    if not (-1.0 < overlap < 1.0):
        raise ValueError("init_overlap must lie strictly inside (-1, 1)")
    xi = None
    if cfg.frozen_mode == "mixed":
        xi = rng.standard_normal(d)
        xi -= (xi @ w_star) * w_star
        xi /= np.linalg.norm(xi)
        omega_tilde = cfg.mu * w_star + (1.0 - cfg.mu) * xi
    else:
        omega_tilde = cfg.mu * w_star
    g = rng.standard_normal(d)
    g -= (g @ w_star) * w_star
    if xi is not None:
        g -= (g @ xi) * xi
    g /= np.linalg.norm(g)
    omega = overlap * w_star + np.sqrt(1.0 - overlap * overlap) * g
    omega /= np.linalg.norm(omega)
    u0 = cfg.init_magnitude if cfg.init_magnitude is not None else 1.0 / np.sqrt(d)
    return SimState(
        u=float(u0), omega=omega, omega_star=w_star, omega_tilde=omega_tilde, xi=xi, step=0
    )


def _teacher_for_stage(cfg: SimConfig, stage: int) -> ActivationSpec:
    if cfg.curriculum is not None and stage == 1:
        return transform_teacher(cfg.teacher, LabelTransform(kind=cfg.curriculum.label_kind))
    return cfg.teacher


def _per_sample_scale(objective: str, eps: np.ndarray, y: np.ndarray, dpre: np.ndarray):
    # coefficient c_i with  -grad_w(sample i) = c_i * x_i  and
    # -grad_u(sample i) = c_i * (w . x_i) / u  (split below to avoid u=0 issues)
    if objective == "mse":
        return 2.0 * eps * dpre
    return y * dpre


def sgd_step(cfg: SimConfig, state: SimState, teacher: ActivationSpec | None = None) -> SimState:
    """One literal SGD step: materializes the (batch, d) Gaussian batch.

    This is the reference implementation of the update contract; the
    subspace sampler reproduces its law at O(batch + d) cost.
    """
    teacher = teacher or cfg.teacher
    rng = step_rng(cfg.seed, _TRAIN_STREAM, state.step)
    x = rng.standard_normal((cfg.batch_size, cfg.d))
    a_star = x @ state.omega_star
    a_w = x @ state.omega
    y = teacher.evaluate(a_star)
    pre = x @ state.omega_tilde + state.u * a_w
    yhat = cfg.student.evaluate(pre)
    dpre = _student_derivative(cfg.student, pre)
    eps = y - yhat
    c = _per_sample_scale(cfg.objective, eps, y, dpre)
    grad_u = float(np.mean(c * a_w))
    grad_w_vec = (c @ x) / cfg.batch_size
    u_new = state.u + cfg.learning_rate * grad_u
    w_new = state.omega + cfg.learning_rate * state.u * grad_w_vec
    w_new /= np.linalg.norm(w_new)
    return replace(state, u=u_new, omega=w_new, step=state.step + 1)


def _student_derivative(student: ActivationSpec, pre: np.ndarray) -> np.ndarray:
    if student.derivative is not None:
        return student.derivative(pre)
    h = 1e-6
    return (student.evaluate(pre + h) - student.evaluate(pre - h)) / (2.0 * h)


def _frame(state: SimState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal frame spanning (w_star, [xi,] w) by Gram-Schmidt.

    Returns (F, w_coords, tilde_coords): F is (f, d) with rows orthonormal,
    w_coords are the frame coordinates of w (w itself may leave the frame
    only by rounding), tilde_coords those of the frozen part.
    """
    rows = [state.omega_star]
    if state.xi is not None:
        rows.append(state.xi)
    basis = list(rows)
    w_res = state.omega.copy()
    for b in basis:
        w_res -= (w_res @ b) * b
    nrm = np.linalg.norm(w_res)
    if nrm > 1e-10:
        basis.append(w_res / nrm)
    F = np.array(basis)
    w_coords = F @ state.omega
    tilde_coords = F @ state.omega_tilde
    return F, w_coords, tilde_coords


def _sgd_step_subspace(
    cfg: SimConfig, state: SimState, teacher: ActivationSpec | None = None
) -> SimState:
    """Law-exact fast step: frame coordinates + one residual direction."""
    teacher = teacher or cfg.teacher
    rng = step_rng(cfg.seed, _TRAIN_STREAM, state.step)
    F, w_coords, tilde_coords = _frame(state)
    f = F.shape[0]
    coords = rng.standard_normal((cfg.batch_size, f))
    g_res = rng.standard_normal(cfg.d)
    a_star = coords[:, 0]
    a_w = coords @ w_coords
    y = teacher.evaluate(a_star)
    pre = coords @ tilde_coords + state.u * a_w
    yhat = cfg.student.evaluate(pre)
    dpre = _student_derivative(cfg.student, pre)
    eps = y - yhat
    c = _per_sample_scale(cfg.objective, eps, y, dpre)
    grad_u = float(np.mean(c * a_w))
    # batch-mean gradient vector: frame part exactly, orthogonal remainder in
    # law (its conditional distribution given the coordinates is
    # N(0, |c|^2/B^2 * (I - F^T F)))
    in_frame = (c @ coords) / cfg.batch_size
    res = g_res - F.T @ (F @ g_res)
    grad_w_vec = F.T @ in_frame + (float(np.linalg.norm(c)) / cfg.batch_size) * res
    u_new = state.u + cfg.learning_rate * grad_u
    w_new = state.omega + cfg.learning_rate * state.u * grad_w_vec
    w_new /= np.linalg.norm(w_new)
    return replace(state, u=u_new, omega=w_new, step=state.step + 1)


_TEST_SAMPLES_PER_RECORD = 10_000


def _subspace_test_mse(cfg: SimConfig, state: SimState, block: int) -> float:
    """Held-out test error from fresh samples drawn in the reduced frame.

    The statistic depends on the inputs only through their projections onto
    (w_star, [xi,] w), so sampling frame coordinates is distribution-exact
    for both frozen modes.  Labels always come from the task teacher,
    independent of any curriculum stage.
    """
    rng = step_rng(cfg.seed, _MEASURE_STREAM, block)
    F, w_coords, tilde_coords = _frame(state)
    coords = rng.standard_normal((_TEST_SAMPLES_PER_RECORD, F.shape[0]))
    y = cfg.teacher.evaluate(coords[:, 0])
    yhat = cfg.student.evaluate(coords @ tilde_coords + state.u * (coords @ w_coords))
    return float(np.mean((y - yhat) ** 2))


class TestMseEstimate(NamedTuple):
    """Monte Carlo test error with its reduced-theory counterpart."""

    mc: float
    series: float
    stderr: float


def _theory_config(cfg: SimConfig) -> ModelConfig:
    return ModelConfig(teacher=cfg.teacher, student=cfg.student, mu=cfg.mu, k_max=cfg.k_max)


def reduced_state(cfg: SimConfig, state: SimState) -> OrderParameterState:
    """Project the simulator state onto the reduced coordinates (u, m)."""
    return OrderParameterState(state.u, max(-1.0, min(1.0, state.m)))


def measure_test_mse(
    cfg: SimConfig, state: SimState, n_samples: int = 100_000, block: int = 0
) -> TestMseEstimate:
    """Fresh-sample MC estimate of E[(y - yhat)^2] next to the series value.

    The series value is twice the reduced population loss at the measured
    (u, m); in mixed mode it is the aligned-theory prediction, so the gap
    between the two columns is itself the concentration statement.
    """
    rng = step_rng(cfg.seed, _MEASURE_STREAM, block)
    total = 0.0
    total_sq = 0.0
    left = int(n_samples)
    chunk = 65536
    while left > 0:
        n = min(chunk, left)
        x = rng.standard_normal((n, cfg.d))
        y = cfg.teacher.evaluate(x @ state.omega_star)
        yhat = cfg.student.evaluate(x @ state.omega_tilde + state.u * (x @ state.omega))
        sq = (y - yhat) ** 2
        total += float(np.sum(sq))
        total_sq += float(np.sum(sq * sq))
        left -= n
    n = int(n_samples)
    mc = total / n
    var = max(total_sq / n - mc * mc, 0.0)
    stderr = float(np.sqrt(var / n))
    series = 2.0 * population_loss(_theory_config(cfg), reduced_state(cfg, state))
    return TestMseEstimate(mc=mc, series=series, stderr=stderr)


@dataclass(frozen=True, eq=False)
class RunResult:
    """Recorded trajectory and exit statistics of one SGD run.

    exit_step is the first step index with max(|u|, |m|) >= exit_fraction*mu
    (the reduced-theory escape convention); aligned_step the first with
    m >= align_threshold (the empirical convention); switch_step the
    curriculum stage boundary.  Any of them is None when never reached.
    t_epoch counts SGD steps; multiply by epoch_time_scale(cfg) for flow
    time.
    """

    t_epoch: np.ndarray
    u: np.ndarray
    m: np.ndarray
    m_eff: np.ndarray
    r: np.ndarray
    train_mse: np.ndarray
    test_mse: np.ndarray
    exit_step: int | None
    aligned_step: int | None
    switch_step: int | None
    init_u: float
    init_m: float
    final_state: SimState


def run_simulation(cfg: SimConfig) -> RunResult:
    """Run one-pass SGD for cfg.n_steps steps (or until aligned, if asked).

    Records every record_every-th step: the order parameters (geometry read
    off the actual vectors, so the mixed frozen mode reports its true
    preactivation variance), the batch training error of the step just
    taken, and a fresh held-out Monte Carlo test error.
    """
    state = init_state(cfg)
    stepper = sgd_step if cfg.sampler == "literal" else _sgd_step_subspace
    mu = cfg.mu
    exit_level = cfg.exit_fraction * mu

    n_rec_max = cfg.n_steps // cfg.record_every + 2
    rec = {k: np.empty(n_rec_max) for k in ("t_epoch", "u", "m", "m_eff", "r", "train_mse", "test_mse")}
    n_rec = 0

    def record(step: int, s: SimState, train_mse: float) -> None:
        nonlocal n_rec
        combined = s.omega_tilde + s.u * s.omega
        rec["t_epoch"][n_rec] = step
        rec["u"][n_rec] = s.u
        rec["m"][n_rec] = s.m
        rec["m_eff"][n_rec] = float(combined @ s.omega_star)
        rec["r"][n_rec] = float(combined @ combined)
        rec["train_mse"][n_rec] = train_mse
        rec["test_mse"][n_rec] = _subspace_test_mse(cfg, s, step)
        n_rec += 1

    stage = 1 if cfg.curriculum is not None else 2
    exit_step = aligned_step = switch_step = None
    init_u, init_m = state.u, state.m
    record(0, state, _batch_mse(cfg, state, _teacher_for_stage(cfg, stage)))

    for step in range(1, cfg.n_steps + 1):
        teacher = _teacher_for_stage(cfg, stage)
        prev = state
        state = stepper(cfg, state, teacher)
        m = state.m
        if step % cfg.record_every == 0 or step == cfg.n_steps:
            # training error of the batch this step consumed (reproduced
            # from its counter), paired with the post-update state
            tr = _batch_mse(cfg, prev, teacher)
            record(step, state, tr)
        if exit_step is None and max(abs(state.u), abs(m)) >= exit_level:
            exit_step = step
        if stage == 1 and m >= cfg.curriculum.switch_threshold:
            stage = 2
            switch_step = step
        if aligned_step is None and m >= cfg.align_threshold:
            aligned_step = step
            if cfg.stop_when_aligned:
                break

    return RunResult(
        t_epoch=rec["t_epoch"][:n_rec],
        u=rec["u"][:n_rec],
        m=rec["m"][:n_rec],
        m_eff=rec["m_eff"][:n_rec],
        r=rec["r"][:n_rec],
        train_mse=rec["train_mse"][:n_rec],
        test_mse=rec["test_mse"][:n_rec],
        exit_step=exit_step,
        aligned_step=aligned_step,
        switch_step=switch_step,
        init_u=init_u,
        init_m=init_m,
        final_state=state,
    )


class DriftEstimate(NamedTuple):
    """Mean one-step increments of (u, m) with their standard errors."""

    du: float
    dm: float
    du_stderr: float
    dm_stderr: float
    n_batches: int


def measure_drift(cfg: SimConfig, state: SimState, n_batches: int) -> DriftEstimate:
    """Average the one-step updates over n_batches fresh batches from state.

    Each batch uses its own counter (one-pass discipline preserved); the
    state itself is never advanced.
    """
    if n_batches < 2:
        raise ValueError("n_batches must be >= 2")
    stepper = sgd_step if cfg.sampler == "literal" else _sgd_step_subspace
    du = np.empty(n_batches)
    dm = np.empty(n_batches)
    m0 = state.m
    for j in range(n_batches):
        nxt = stepper(cfg, replace(state, step=j), None)
        du[j] = nxt.u - state.u
        dm[j] = nxt.m - m0
    return DriftEstimate(
        du=float(np.mean(du)),
        dm=float(np.mean(dm)),
        du_stderr=float(np.std(du, ddof=1) / np.sqrt(n_batches)),
        dm_stderr=float(np.std(dm, ddof=1) / np.sqrt(n_batches)),
        n_batches=n_batches,
    )


def _batch_mse(cfg: SimConfig, state: SimState, teacher: ActivationSpec) -> float:
    """Training error of the batch consumed at state.step (recomputed)."""
    rng = step_rng(cfg.seed, _TRAIN_STREAM, state.step)
    if cfg.sampler == "literal":
        x = rng.standard_normal((cfg.batch_size, cfg.d))
        a_star = x @ state.omega_star
        pre = x @ state.omega_tilde + state.u * (x @ state.omega)
    else:
        F, w_coords, tilde_coords = _frame(state)
        coords = rng.standard_normal((cfg.batch_size, F.shape[0]))
        a_star = coords[:, 0]
        pre = coords @ tilde_coords + state.u * (coords @ w_coords)
    y = teacher.evaluate(a_star)
    yhat = cfg.student.evaluate(pre)
    return float(np.mean((y - yhat) ** 2))
