"""Experiment runner: sweeps, CSV/SVG artifacts, and comparison reports.

Each subcommand builds an :class:`ExperimentPlan`, expands it into
independent sweep cells, executes the cells on a bounded worker pool, and
writes one CSV artifact per cell plus a ``manifest.json`` index.  SVG line
plots are optional companions generated purely from the CSV text, so
regenerating a plot from its CSV reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .activations import ActivationSpec, builtin
from .committee import CommitteeConfig, committee_linear_rates, committee_sgd
from .ode import FlowSettings, NumericalBlowupError, integrate_flow
from .sgd import Curriculum, SimConfig, run_simulation, scaled_learning_rate
from .theory import ModelConfig, OrderParameterState, find_singularities, tau_curve

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_BLOWUP = 3

PLAN_KINDS = (
    "tau_curve",
    "singularity_scan",
    "ode_run",
    "sgd_run",
    "committee_run",
    "curriculum_run",
    "compare",
)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ValidationError(Exception):
    """Invalid plan or configuration; carries (field, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = ["invalid configuration:"]
        lines += [f"  {name}: {message}" for name, message in self.problems]
        super().__init__("\n".join(lines))


class AlignmentError(Exception):
    """Theory and experiment artifacts do not share a mu grid."""


# ---------------------------------------------------------------------------
# Plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    """One experiment: a kind, scalar settings, sweep axes, and output spec."""

    kind: str
    settings: dict
    sweep: dict
    output_dir: str
    emit: str = "csv"
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Cell:
    name: str
    params: dict = field(default_factory=dict)


def plan_hash(plan: ExperimentPlan) -> str:
    """Stable hash of the plan content (not of the output location)."""
    payload = {
        "kind": plan.kind,
        "settings": plan.settings,
        "sweep": plan.sweep,
        "emit": plan.emit,
        "seed": plan.seed,
    }
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _resolvable(name: str) -> ActivationSpec | None:
    try:
        return builtin(name)
    except (KeyError, ValueError):
        return None


def validate_plan(plan: ExperimentPlan) -> list[tuple[str, str]]:
    """Collect structured problems; empty list means the plan is runnable."""
    problems: list[tuple[str, str]] = []
    if plan.kind not in PLAN_KINDS:
        problems.append(("kind", f"unknown kind {plan.kind!r}"))
        return problems
    if plan.emit not in ("csv", "svg", "both"):
        problems.append(("format", f"must be csv, svg, or both, got {plan.emit!r}"))
    if not plan.output_dir:
        problems.append(("out", "output directory must be nonempty"))

    sweep, cfg = plan.sweep, plan.settings

    def need_axis(name, lo=None, hi=None, lo_open=False, hi_open=False):
        values = sweep.get(name)
        if not values:
            problems.append((name, "sweep axis is empty"))
            return
        for v in values:
            if lo is not None and (v <= lo if lo_open else v < lo):
                problems.append((name, f"value {v} out of range"))
            elif hi is not None and (v >= hi if hi_open else v > hi):
                problems.append((name, f"value {v} out of range"))

    def need_positive(name, integer=False):
        v = cfg.get(name)
        if v is None or v <= 0 or (integer and int(v) != v):
            problems.append((name, f"must be a positive {'integer' if integer else 'number'}, got {v!r}"))

    if plan.kind in ("tau_curve", "singularity_scan"):
        names = sweep.get("activations") or []
        if not names:
            problems.append(("activations", "sweep axis is empty"))
        for name in names:
            if _resolvable(name) is None:
                problems.append(("activations", f"unknown activation {name!r}"))
        if plan.kind == "tau_curve":
            need_axis("mu", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        need_positive("k_max", integer=True)
    elif plan.kind in ("ode_run", "sgd_run", "curriculum_run"):
        if _resolvable(cfg.get("activation", "")) is None:
            problems.append(("activation", f"unknown activation {cfg.get('activation')!r}"))
        need_axis("mu", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        if plan.kind == "ode_run":
            need_positive("dt")
            need_positive("t_max")
        else:
            if not sweep.get("seeds"):
                problems.append(("seeds", "sweep axis is empty"))
            need_positive("d", integer=True)
            need_positive("batch_size", integer=True)
            need_positive("n_steps", integer=True)
            lr = cfg.get("learning_rate")
            if lr is not None:
                need_positive("learning_rate")
        if plan.kind == "curriculum_run":
            thr = cfg.get("switch_threshold", 0.5)
            if not 0.0 < thr < 1.0:
                problems.append(("switch_threshold", f"must be in (0, 1), got {thr!r}"))
    elif plan.kind == "committee_run":
        need_axis("mu", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        ranks = sweep.get("ranks") or []
        if not ranks:
            problems.append(("ranks", "sweep axis is empty"))
        for r in ranks:
            if r < 1:
                problems.append(("ranks", f"rank {r} must be >= 1"))
        need_positive("n_directions", integer=True)
        need_positive("d", integer=True)
        need_positive("batch_size", integer=True)
        need_positive("learning_rate")
        need_positive("n_steps", integer=True)
    elif plan.kind == "compare":
        for key in ("theory_csv", "experiment_csv"):
            path = cfg.get(key)
            if not path or not os.path.isfile(path):
                problems.append((key, f"file not found: {path!r}"))
    return problems


# ---------------------------------------------------------------------------
# CSV / SVG
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    """One CSV field: 12 significant digits for floats, plain for the rest."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return "nan"
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def write_csv(path: str, metadata: dict, columns, rows) -> None:
    """Write a `#`-headed, LF-terminated CSV with deterministic formatting."""
    lines = []
    for key in sorted(metadata):
        value = metadata[key]
        text = value if isinstance(value, str) else _fmt(value)
        lines.append(f"# {key} = {text}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_csv_text(text: str):
    """Inverse of write_csv: (metadata, columns, columns-as-float-arrays)."""
    metadata: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[float]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                metadata[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if not columns:
            columns = [c.strip() for c in cells]
            continue
        rows.append([float(c) for c in cells])
    data = {
        name: np.array([row[i] for row in rows], dtype=float)
        for i, name in enumerate(columns)
    }
    return metadata, columns, data


def _plot_spec(kind: str, columns):
    if kind == "tau_curve":
        return "mu", ["tau"], True
    if kind == "singularity_scan":
        return "degree", ["root_mu"], False
    if kind == "committee_run":
        ys = [c for c in columns if c.startswith("rho_")]
        return "t_epoch", ys or columns[1:2], False
    if kind in ("sgd_summary", "compare"):
        ys = [c for c in columns if c.endswith("epoch")]
        return "mu", ys or columns[1:2], True
    x = "t" if "t" in columns else "t_epoch"
    ys = [c for c in ("u", "m", "m_eff") if c in columns]
    return x, ys or columns[1:2], False


def render_svg(csv_text: str) -> str:
    """Render a line plot of a CSV artifact.  Pure function of the text."""
    metadata, columns, data = parse_csv_text(csv_text)
    kind = metadata.get("kind", "")
    x_col, y_cols, log_y = _plot_spec(kind, columns)
    width, height = 720, 460
    left, right, top, bottom = 70, 24, 42, 52

    series = []
    for name in y_cols:
        x = data.get(x_col, np.array([]))
        y = data.get(name, np.array([]))
        mask = np.isfinite(x) & np.isfinite(y)
        if log_y:
            mask &= y > 0
        if mask.any():
            yy = np.log10(y[mask]) if log_y else y[mask]
            series.append((name, x[mask], yy))

    title = metadata.get("title", kind or "data")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    if not series:
        out.append(
            f'<text x="{width / 2:.2f}" y="{height / 2:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">no finite data</text></svg>'
        )
        return "\n".join(out) + "\n"

    x_lo = min(float(s[1].min()) for s in series)
    x_hi = max(float(s[1].max()) for s in series)
    y_lo = min(float(s[2].min()) for s in series)
    y_hi = max(float(s[2].max()) for s in series)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(v):
        return height - bottom - (v - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    out.append(
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>'
    )
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        out.append(
            f'<text x="{sx(xv):.2f}" y="{height - bottom + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{xv:.4g}</text>'
        )
        label = 10.0**yv if log_y else yv
        out.append(
            f'<text x="{left - 6}" y="{sy(yv) + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{label:.4g}</text>'
        )
    out.append(
        f'<text x="{(left + width - right) / 2:.2f}" y="{height - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_col}</text>'
    )
    for i, (name, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{sx(xv):.2f},{sy(yv):.2f}" for xv, yv in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        out.append(
            f'<text x="{width - right - 6}" y="{top + 16 + 15 * i}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12" fill="{color}">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_from_csv(csv_path: str, svg_path: str) -> None:
    with open(csv_path, newline="") as fh:
        text = fh.read()
    with open(svg_path, "w", newline="") as fh:
        fh.write(render_svg(text))


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------


def _mu_tag(mu: float) -> str:
    return f"mu{mu:.4g}"


def build_cells(plan: ExperimentPlan) -> list[Cell]:
    cfg, sweep = plan.settings, plan.sweep
    cells: list[Cell] = []
    if plan.kind == "tau_curve":
        for name in sweep["activations"]:
            cells.append(Cell(name=f"tau_{name}", params={"activation": name}))
    elif plan.kind == "singularity_scan":
        for name in sweep["activations"]:
            cells.append(Cell(name=f"sing_{name}", params={"activation": name}))
    elif plan.kind == "ode_run":
        for mu in sweep["mu"]:
            cells.append(
                Cell(name=f"ode_{cfg['activation']}_{_mu_tag(mu)}", params={"mu": mu})
            )
    elif plan.kind in ("sgd_run", "curriculum_run"):
        stem = "sgd" if plan.kind == "sgd_run" else "curriculum"
        for mu in sweep["mu"]:
            for seed in sweep["seeds"]:
                cells.append(
                    Cell(
                        name=f"{stem}_{cfg['activation']}_{_mu_tag(mu)}_s{seed}",
                        params={"mu": mu, "seed": seed},
                    )
                )
    elif plan.kind == "committee_run":
        for mu in sweep["mu"]:
            for rank in sweep["ranks"]:
                cells.append(
                    Cell(name=f"committee_{_mu_tag(mu)}_r{rank}", params={"mu": mu, "rank": rank})
                )
    elif plan.kind == "compare":
        cells.append(Cell(name="compare_report"))
    return cells


def _run_tau_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    act = builtin(cell.params["activation"])
    curve = tau_curve(act, act, np.asarray(plan.sweep["mu"]), k_max=cfg["k_max"])
    metadata = {
        "kind": "tau_curve",
        "activation": cell.params["activation"],
        "k_max": cfg["k_max"],
        "title": f"escape time, {cell.params['activation']}",
    }
    rows = zip(curve.mu, curve.A, curve.B, curve.lambda_plus, curve.tau, curve.converged)
    write_csv(csv_path, metadata, ["mu", "A", "B", "lambda_plus", "tau", "converged"], rows)
    return {}


def _run_singularity_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    name = cell.params["activation"]
    act = builtin(name)
    roots = find_singularities(act, act, k_max=cfg["k_max"])
    degree = act.pure_hermite_degree if act.pure_hermite_degree is not None else -1
    metadata = {
        "kind": "singularity_scan",
        "activation": name,
        "k_max": cfg["k_max"],
        "n_roots": len(roots),
        "title": f"drift-coefficient roots, {name}",
    }
    write_csv(csv_path, metadata, ["degree", "root_mu"], [(degree, r) for r in roots])
    return {"roots": [float(r) for r in roots]}


def _run_ode_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    act = builtin(cfg["activation"])
    model = ModelConfig(teacher=act, student=act, mu=cell.params["mu"], k_max=cfg["k_max"])
    state0 = OrderParameterState(u=cfg["u0"], m=cfg["m0"])
    settings = FlowSettings(
        dt=cfg["dt"],
        t_max=cfg["t_max"],
        exit_fraction=cfg["exit_fraction"],
        method=cfg["method"],
        record_every=cfg["record_every"],
    )
    rec = integrate_flow(model, state0, settings)
    metadata = {
        "kind": "ode_run",
        "activation": cfg["activation"],
        "mu": cell.params["mu"],
        "dt": cfg["dt"],
        "method": cfg["method"],
        "u0": cfg["u0"],
        "m0": cfg["m0"],
        "t_exit": rec.t_exit,
        "exited": rec.exited,
        "title": f"flow, {cfg['activation']}, {_mu_tag(cell.params['mu'])}",
    }
    rows = zip(rec.t, rec.u, rec.m, rec.m_eff, rec.r, rec.loss)
    write_csv(csv_path, metadata, ["t", "u", "m", "m_eff", "r", "loss"], rows)
    return {"t_exit": rec.t_exit, "exited": rec.exited}


def _sim_config(plan: ExperimentPlan, cell: Cell, curriculum: Curriculum | None) -> SimConfig:
    cfg = plan.settings
    act = builtin(cfg["activation"])
    lr = cfg.get("learning_rate")
    if lr is None:
        lr = scaled_learning_rate(0.01, act)
    return SimConfig(
        teacher=act,
        student=act,
        mu=cell.params["mu"],
        d=cfg["d"],
        batch_size=cfg["batch_size"],
        learning_rate=lr,
        n_steps=cfg["n_steps"],
        seed=cell.params["seed"],
        frozen_mode=cfg["frozen_mode"],
        objective=cfg["objective"],
        sampler=cfg["sampler"],
        align_threshold=cfg["align_threshold"],
        record_every=cfg["record_every"],
        curriculum=curriculum,
        k_max=cfg["k_max"],
    )


def _run_sgd_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    curriculum = None
    if plan.kind == "curriculum_run":
        curriculum = Curriculum(switch_threshold=cfg["switch_threshold"])
    sim = _sim_config(plan, cell, curriculum)
    result = run_simulation(sim)
    metadata = {
        "kind": plan.kind,
        "activation": cfg["activation"],
        "mu": cell.params["mu"],
        "seed": cell.params["seed"],
        "d": sim.d,
        "batch_size": sim.batch_size,
        "learning_rate": sim.learning_rate,
        "n_steps": sim.n_steps,
        "frozen_mode": sim.frozen_mode,
        "objective": sim.objective,
        "exit_step": result.exit_step,
        "aligned_step": result.aligned_step,
        "title": (
            f"{'curriculum' if plan.kind == 'curriculum_run' else 'sgd'}, "
            f"{cfg['activation']}, {_mu_tag(cell.params['mu'])}, seed {cell.params['seed']}"
        ),
    }
    columns = ["t_epoch", "u", "m", "m_eff", "r", "train_mse", "test_mse"]
    rows = [
        list(tup)
        for tup in zip(
            result.t_epoch, result.u, result.m, result.m_eff, result.r,
            result.train_mse, result.test_mse,
        )
    ]
    if plan.kind == "curriculum_run":
        metadata["switch_step"] = result.switch_step
        columns.append("stage")
        for row in rows:
            stage = 1 if result.switch_step is not None and row[0] >= result.switch_step else 0
            row.append(stage)
    write_csv(csv_path, metadata, columns, rows)
    return {
        "exit_epoch": None if result.exit_step is None else float(result.exit_step),
        "aligned_epoch": None if result.aligned_step is None else float(result.aligned_step),
        "mu": cell.params["mu"],
        "seed": cell.params["seed"],
    }


def _run_committee_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    n_dir = cfg["n_directions"]
    mu_vec = (cell.params["mu"],) + (1.0,) * (n_dir - 1)
    committee = CommitteeConfig(
        mu=mu_vec,
        rank=cell.params["rank"],
        d=cfg["d"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        n_steps=cfg["n_steps"],
        seed=plan.seed,
        record_every=cfg["record_every"],
        onset_threshold=cfg["onset_threshold"],
    )
    rates = committee_linear_rates(committee)
    result = committee_sgd(committee)
    rank = cell.params["rank"]
    metadata = {
        "kind": "committee_run",
        "mu": cell.params["mu"],
        "rank": rank,
        "n_directions": n_dir,
        "d": cfg["d"],
        "batch_size": cfg["batch_size"],
        "learning_rate": cfg["learning_rate"],
        "onset_threshold": cfg["onset_threshold"],
        "onset_step": result.onset_step,
        "tau_theory": rates.tau[0],
        "title": f"committee, {_mu_tag(cell.params['mu'])}, rank {rank}",
    }
    columns = (
        ["t_epoch"]
        + [f"rho_{r + 1}" for r in range(rank)]
        + [f"m_eff_{k + 1}" for k in range(n_dir)]
        + ["test_mse"]
    )
    rows = [
        [result.t_epoch[i]]
        + [result.rho[i, r] for r in range(rank)]
        + [result.m_eff[i, k] for k in range(n_dir)]
        + [result.test_mse[i]]
        for i in range(len(result.t_epoch))
    ]
    write_csv(csv_path, metadata, columns, rows)
    return {
        "onset_epoch": None if result.onset_step is None else float(result.onset_step),
        "mu": cell.params["mu"],
        "rank": rank,
    }


def compare_theory_experiment(theory_csv: str, experiment_csv: str) -> dict:
    """Align empirical exit epochs with predicted escape times.

    The theory artifact supplies tau(mu); the experiment artifact supplies
    exit epochs (averaged over seeds when repeated).  Exit epochs are fit
    against tau(mu) * log(d) / 2 with one global scale and offset, and the
    report carries the rank correlation and pointwise relative residuals.
    """
    with open(theory_csv, newline="") as fh:
        _, t_cols, t_data = parse_csv_text(fh.read())
    with open(experiment_csv, newline="") as fh:
        e_meta, e_cols, e_data = parse_csv_text(fh.read())
    problems = []
    for col in ("mu", "tau"):
        if col not in t_cols:
            problems.append(("theory_csv", f"missing column {col!r}"))
    for col in ("mu", "exit_epoch"):
        if col not in e_cols:
            problems.append(("experiment_csv", f"missing column {col!r}"))
    if "d" not in e_meta:
        problems.append(("experiment_csv", "missing metadata key 'd'"))
    if problems:
        raise ValidationError(problems)

    t_mu = np.unique(t_data["mu"])
    e_mu = np.unique(e_data["mu"])
    if len(t_mu) != len(e_mu) or not np.allclose(t_mu, e_mu, atol=1e-9, rtol=0.0):
        raise AlignmentError(
            f"mu grids differ: theory has {len(t_mu)} points, experiment {len(e_mu)}"
        )

    tau = np.array(
        [t_data["tau"][np.isclose(t_data["mu"], mu, atol=1e-9)].mean() for mu in t_mu]
    )

    def mean_exit(mu: float) -> float:
        values = e_data["exit_epoch"][np.isclose(e_data["mu"], mu, atol=1e-9)]
        values = values[np.isfinite(values)]
        return float(values.mean()) if len(values) else float("nan")

    exit_epoch = np.array([mean_exit(float(mu)) for mu in e_mu])
    d = float(e_meta["d"])
    predicted = tau * math.log(d) / 2.0
    mask = np.isfinite(predicted) & np.isfinite(exit_epoch)
    if int(mask.sum()) < 2:
        raise ValidationError([("compare", "fewer than two finite points to align")])

    scale, offset = np.polyfit(predicted[mask], exit_epoch[mask], 1)
    fitted = scale * predicted + offset
    denom = np.where(np.abs(exit_epoch) > 0, np.abs(exit_epoch), 1.0)
    residual = np.where(mask, (exit_epoch - fitted) / denom, np.nan)
    spearman = stats.spearmanr(predicted[mask], exit_epoch[mask])
    rho = float(getattr(spearman, "statistic", getattr(spearman, "correlation", np.nan)))
    return {
        "n_points": int(mask.sum()),
        "spearman": rho,
        "scale": float(scale),
        "offset": float(offset),
        "max_abs_relative_residual": float(np.nanmax(np.abs(residual))),
        "mu": [float(v) for v in t_mu],
        "tau": [float(v) for v in tau],
        "predicted_epoch": [float(v) for v in predicted],
        "exit_epoch": [float(v) for v in exit_epoch],
        "fitted_epoch": [float(v) for v in fitted],
        "relative_residual": [float(v) for v in residual],
    }


def _run_compare_cell(plan: ExperimentPlan, cell: Cell, csv_path: str) -> dict:
    cfg = plan.settings
    report = compare_theory_experiment(cfg["theory_csv"], cfg["experiment_csv"])
    metadata = {
        "kind": "compare",
        "spearman": report["spearman"],
        "scale": report["scale"],
        "offset": report["offset"],
        "n_points": report["n_points"],
        "max_abs_relative_residual": report["max_abs_relative_residual"],
        "title": "exit epochs vs predicted escape times",
    }
    columns = ["mu", "tau", "predicted_epoch", "exit_epoch", "fitted_epoch", "relative_residual"]
    rows = zip(*(report[c] for c in columns))
    write_csv(csv_path, metadata, columns, rows)
    return {
        "spearman": report["spearman"],
        "max_abs_relative_residual": report["max_abs_relative_residual"],
    }


_CELL_RUNNERS = {
    "tau_curve": _run_tau_cell,
    "singularity_scan": _run_singularity_cell,
    "ode_run": _run_ode_cell,
    "sgd_run": _run_sgd_cell,
    "curriculum_run": _run_sgd_cell,
    "committee_run": _run_committee_cell,
    "compare": _run_compare_cell,
}


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _execute_cell(plan: ExperimentPlan, cell: Cell) -> dict:
    csv_path = os.path.join(plan.output_dir, cell.name + ".csv")
    entry = {"name": cell.name, "status": "ok", "files": [], "wall_time": 0.0, "error": None}
    start = time.perf_counter()
    try:
        extra = _CELL_RUNNERS[plan.kind](plan, cell, csv_path)
        entry["files"].append(cell.name + ".csv")
        if plan.emit in ("svg", "both"):
            svg_path = os.path.join(plan.output_dir, cell.name + ".svg")
            svg_from_csv(csv_path, svg_path)
            entry["files"].append(cell.name + ".svg")
        entry["summary"] = extra
    except NumericalBlowupError as exc:
        entry["status"] = "blowup"
        entry["error"] = str(exc)
    except (AlignmentError, ValidationError) as exc:
        entry["status"] = "failed"
        entry["error"] = str(exc)
    except Exception as exc:  # pragma: no cover - defensive
        entry["status"] = "failed"
        entry["error"] = f"{type(exc).__name__}: {exc}"
    entry["wall_time"] = time.perf_counter() - start
    return entry


def _write_sgd_summary(plan: ExperimentPlan, entries: list[dict]) -> dict | None:
    points = [e["summary"] for e in entries if e["status"] == "ok" and e.get("summary")]
    if not points:
        return None
    start = time.perf_counter()
    name = "sgd_summary"
    csv_path = os.path.join(plan.output_dir, name + ".csv")
    cfg = plan.settings
    metadata = {
        "kind": "sgd_summary",
        "activation": cfg["activation"],
        "d": cfg["d"],
        "batch_size": cfg["batch_size"],
        "title": f"exit epochs, {cfg['activation']}",
    }
    rows = [
        (p["mu"], p["seed"], p["exit_epoch"], p["aligned_epoch"])
        for p in sorted(points, key=lambda p: (p["mu"], p["seed"]))
    ]
    write_csv(csv_path, metadata, ["mu", "seed", "exit_epoch", "aligned_epoch"], rows)
    entry = {
        "name": name,
        "status": "ok",
        "files": [name + ".csv"],
        "wall_time": 0.0,
        "error": None,
    }
    if plan.emit in ("svg", "both"):
        svg_from_csv(csv_path, os.path.join(plan.output_dir, name + ".svg"))
        entry["files"].append(name + ".svg")
    entry["wall_time"] = time.perf_counter() - start
    return entry


def run_plan(plan: ExperimentPlan) -> tuple[dict, int]:
    """Validate, execute all cells, write artifacts plus manifest.json.

    Returns (manifest, exit_code) with exit codes 0 = success,
    2 = partial failure, 3 = numerical blowup; raises ValidationError
    (exit code 1) before touching any cell when the plan is invalid.
    """
    problems = validate_plan(plan)
    if problems:
        raise ValidationError(problems)
    os.makedirs(plan.output_dir, exist_ok=True)
    cells = build_cells(plan)
    workers = int(os.environ.get("SEARCHPHASE_THREADS", "4") or "4")
    workers = max(1, min(workers, len(cells)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_execute_cell, plan, cell) for cell in cells]
        entries = [f.result() for f in futures]
    if plan.kind in ("sgd_run", "curriculum_run"):
        summary_entry = _write_sgd_summary(plan, entries)
        if summary_entry is not None:
            entries.append(summary_entry)
    manifest = {
        "plan_hash": plan_hash(plan),
        "kind": plan.kind,
        "seed": plan.seed,
        "emit": plan.emit,
        "cells": entries,
    }
    with open(os.path.join(plan.output_dir, "manifest.json"), "w", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    statuses = {e["status"] for e in entries}
    if "blowup" in statuses:
        code = EXIT_BLOWUP
    elif "failed" in statuses:
        code = EXIT_PARTIAL
    else:
        code = EXIT_OK
    return manifest, code


# ---------------------------------------------------------------------------
# Argument and config handling
# ---------------------------------------------------------------------------


def _parse_floats(text: str) -> list[float]:
    text = text.strip()
    if text.count(":") == 2:
        lo, hi, num = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(num))]
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


_DEFAULTS: dict[str, dict] = {
    "tau_curve": {"k_max": 25},
    "singularity_scan": {"k_max": 25},
    "ode_run": {
        "activation": "linear",
        "u0": 1e-3,
        "m0": 1e-3,
        "dt": 0.01,
        "t_max": 1000.0,
        "exit_fraction": 1.0,
        "method": "rk4",
        "record_every": 10,
        "k_max": 25,
    },
    "sgd_run": {
        "activation": "linear",
        "d": 1000,
        "batch_size": 500,
        "learning_rate": 0.2,
        "n_steps": 2000,
        "frozen_mode": "aligned",
        "objective": "mse",
        "sampler": "subspace",
        "align_threshold": 0.98,
        "record_every": 1,
        "k_max": 25,
    },
    "curriculum_run": {
        "activation": "hermite3",
        "d": 1000,
        "batch_size": 500,
        "learning_rate": None,
        "n_steps": 60000,
        "frozen_mode": "aligned",
        "objective": "mse",
        "sampler": "subspace",
        "align_threshold": 0.98,
        "record_every": 50,
        "switch_threshold": 0.5,
        "k_max": 25,
    },
    "committee_run": {
        "n_directions": 4,
        "d": 1000,
        "batch_size": 500,
        "learning_rate": 0.1,
        "n_steps": 8000,
        "onset_threshold": 0.3,
        "record_every": 10,
    },
    "compare": {"theory_csv": None, "experiment_csv": None},
}

_DEFAULT_SWEEPS: dict[str, dict] = {
    "tau_curve": {"activations": ["linear", "erf", "sigmoid", "relu"], "mu": _parse_floats("0.02:0.98:49")},
    "singularity_scan": {"activations": ["hermite3", "hermite5", "hermite7", "hermite9"]},
    "ode_run": {"mu": [0.3]},
    "sgd_run": {"mu": [0.5], "seeds": [0]},
    "curriculum_run": {"mu": [0.325], "seeds": [0]},
    "committee_run": {"mu": [0.5], "ranks": [1, 2, 3]},
    "compare": {},
}

_SETTING_PARSERS = {
    "activation": str,
    "method": str,
    "frozen_mode": str,
    "objective": str,
    "sampler": str,
    "theory_csv": str,
    "experiment_csv": str,
    "k_max": int,
    "d": int,
    "batch_size": int,
    "n_steps": int,
    "record_every": int,
    "n_directions": int,
    "u0": float,
    "m0": float,
    "dt": float,
    "t_max": float,
    "exit_fraction": float,
    "learning_rate": float,
    "align_threshold": float,
    "switch_threshold": float,
    "onset_threshold": float,
}

_SWEEP_PARSERS = {
    "activations": _parse_names,
    "mu": _parse_floats,
    "seeds": _parse_ints,
    "ranks": _parse_ints,
}


def load_config(path: str) -> dict[str, dict[str, str]]:
    """Read an INI config: [run] scalars, [sweep] axes, [output] out/format/seed."""
    if not os.path.isfile(path):
        raise ValidationError([("config", f"file not found: {path!r}")])
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ValidationError([("config", str(exc))]) from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def plan_from_args(kind: str, args: argparse.Namespace) -> ExperimentPlan:
    """Merge defaults, config file, and command-line overrides into a plan."""
    settings = dict(_DEFAULTS[kind])
    sweep = {k: list(v) for k, v in _DEFAULT_SWEEPS[kind].items()}
    out = None
    emit = None
    seed = None

    if getattr(args, "config", None):
        sections = load_config(args.config)
        problems = []
        for key, raw in sections.get("run", {}).items():
            if key not in settings:
                problems.append(("run." + key, f"unknown setting for {kind}"))
                continue
            try:
                settings[key] = _SETTING_PARSERS[key](raw)
            except ValueError:
                problems.append(("run." + key, f"cannot parse {raw!r}"))
        for key, raw in sections.get("sweep", {}).items():
            if key not in sweep:
                problems.append(("sweep." + key, f"unknown sweep axis for {kind}"))
                continue
            try:
                sweep[key] = _SWEEP_PARSERS[key](raw)
            except ValueError:
                problems.append(("sweep." + key, f"cannot parse {raw!r}"))
        output = sections.get("output", {})
        out = output.get("out", out)
        emit = output.get("format", emit)
        if "seed" in output:
            try:
                seed = int(output["seed"])
            except ValueError:
                problems.append(("output.seed", f"cannot parse {output['seed']!r}"))
        if problems:
            raise ValidationError(problems)

    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in sweep:
        value = getattr(args, key, None)
        if value is not None:
            sweep[key] = value
    if getattr(args, "out", None) is not None:
        out = args.out
    if getattr(args, "format", None) is not None:
        emit = args.format
    if getattr(args, "seed", None) is not None:
        seed = args.seed

    return ExperimentPlan(
        kind=kind,
        settings=settings,
        sweep=sweep,
        output_dir=out or os.path.join("searchphase-out", kind),
        emit=emit or "csv",
        seed=seed if seed is not None else 0,
    )


_SUBCOMMANDS = {
    "tau": "tau_curve",
    "singularity": "singularity_scan",
    "ode": "ode_run",
    "sgd": "sgd_run",
    "committee": "committee_run",
    "curriculum": "curriculum_run",
    "compare": "compare",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="searchphase",
        description="Escape-time theory and one-pass SGD experiments for low-rank adapters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file ([run]/[sweep]/[output] sections)")
        p.add_argument("--seed", type=int, help="base seed recorded in the manifest")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=["csv", "svg", "both"], help="artifact format")

    p = sub.add_parser("tau", help="escape-time curves over a mu grid")
    common(p)
    p.add_argument("--activations", type=_parse_names, help="comma list, e.g. linear,erf")
    p.add_argument("--mu", type=_parse_floats, help="comma list or lo:hi:n grid")
    p.add_argument("--k-max", dest="k_max", type=int)

    p = sub.add_parser("singularity", help="roots of the drift coefficient on (0,1)")
    common(p)
    p.add_argument("--activations", type=_parse_names, help="comma list, e.g. hermite3,hermite5")
    p.add_argument("--k-max", dest="k_max", type=int)

    p = sub.add_parser("ode", help="reduced two-variable flow")
    common(p)
    p.add_argument("--activation")
    p.add_argument("--mu", type=_parse_floats)
    p.add_argument("--u0", type=float)
    p.add_argument("--m0", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--exit-fraction", dest="exit_fraction", type=float)
    p.add_argument("--method", choices=["rk4", "euler"])
    p.add_argument("--record-every", dest="record_every", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)

    def sgd_like(p):
        common(p)
        p.add_argument("--activation")
        p.add_argument("--mu", type=_parse_floats)
        p.add_argument("--seeds", type=_parse_ints, help="comma list of run seeds")
        p.add_argument("--d", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--n-steps", dest="n_steps", type=int)
        p.add_argument("--frozen-mode", dest="frozen_mode", choices=["aligned", "mixed"])
        p.add_argument("--objective", choices=["mse", "correlation"])
        p.add_argument("--sampler", choices=["subspace", "literal"])
        p.add_argument("--record-every", dest="record_every", type=int)
        p.add_argument("--k-max", dest="k_max", type=int)

    p = sub.add_parser("sgd", help="one-pass spherical SGD in dimension d")
    sgd_like(p)

    p = sub.add_parser("curriculum", help="two-stage run: squared labels, then plain labels")
    sgd_like(p)
    p.add_argument("--switch-threshold", dest="switch_threshold", type=float)

    p = sub.add_parser("committee", help="multi-direction teacher with rank-R adapters")
    common(p)
    p.add_argument("--mu", type=_parse_floats, help="adapted-direction alignment values")
    p.add_argument("--ranks", type=_parse_ints)
    p.add_argument("--n-directions", dest="n_directions", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--onset-threshold", dest="onset_threshold", type=float)
    p.add_argument("--record-every", dest="record_every", type=int)

    p = sub.add_parser("compare", help="align exit epochs with predicted escape times")
    common(p)
    p.add_argument("--theory", dest="theory_csv", help="tau_curve CSV artifact")
    p.add_argument("--experiment", dest="experiment_csv", help="sgd_summary CSV artifact")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    kind = _SUBCOMMANDS[args.command]
    try:
        plan = plan_from_args(kind, args)
        manifest, code = run_plan(plan)
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except AlignmentError as exc:
        print(f"alignment error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for entry in manifest["cells"]:
        files = ", ".join(entry["files"]) if entry["files"] else "-"
        line = f"[{entry['status']}] {entry['name']} ({entry['wall_time']:.2f}s) {files}"
        if entry["error"]:
            line += f"  {entry['error']}"
        print(line)
    print(f"manifest: {os.path.join(plan.output_dir, 'manifest.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
