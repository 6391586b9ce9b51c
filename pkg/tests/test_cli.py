"""Command-line driver: plans, artifacts, determinism, exit codes."""

import json
import math
import os

import numpy as np
import pytest

from searchphase.cli import (
    EXIT_BLOWUP,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_VALIDATION,
    AlignmentError,
    ExperimentPlan,
    ValidationError,
    compare_theory_experiment,
    main,
    parse_csv_text,
    plan_hash,
    render_svg,
    validate_plan,
    write_csv,
    _fmt,
)


def read(path):
    with open(path) as fh:
        return fh.read()


def tau_plan(out, mu=(0.2, 0.5, 0.8), activations=("linear",), emit="csv"):
    return ExperimentPlan(
        kind="tau_curve",
        settings={"k_max": 25},
        sweep={"activations": list(activations), "mu": list(mu)},
        output_dir=str(out),
        emit=emit,
    )


def test_field_formatting():
    assert _fmt(True) == "1"
    assert _fmt(False) == "0"
    assert _fmt(7) == "7"
    assert _fmt(None) == "nan"
    assert _fmt(float("nan")) == "nan"
    assert _fmt(float("inf")) == "inf"
    assert _fmt(float("-inf")) == "-inf"
    assert _fmt(0.1) == "0.1"
    assert _fmt(1.0 / 3.0) == "0.333333333333"
    assert _fmt(1e-300) == "1e-300"


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    meta = {"d": 1000, "note": "plain text", "gamma": 0.25}
    cols = ["a", "b"]
    rows = [(1.0, 2.5), (float("inf"), float("nan")), (3, -4)]
    write_csv(str(path), meta, cols, rows)
    text = read(path)
    assert text.endswith("\n") and "\r" not in text
    metadata, columns, data = parse_csv_text(text)
    assert metadata["d"] == "1000"
    assert metadata["note"] == "plain text"
    assert columns == cols
    np.testing.assert_array_equal(data["a"], [1.0, np.inf, 3.0])
    assert math.isnan(data["b"][1])
    assert data["b"][2] == -4.0


def test_plan_hash_tracks_content():
    a = tau_plan("x")
    b = tau_plan("elsewhere")  # output location is not part of the identity
    c = tau_plan("x", mu=(0.2, 0.5))
    assert plan_hash(a) == plan_hash(b)
    assert plan_hash(a) != plan_hash(c)


def test_validation_catches_bad_plans(tmp_path):
    bad_act = tau_plan(tmp_path, activations=("gelu",))
    problems = validate_plan(bad_act)
    assert any(field == "activations" and "gelu" in msg for field, msg in problems)

    empty_grid = tau_plan(tmp_path, mu=())
    problems = validate_plan(empty_grid)
    assert any(field == "mu" and "empty" in msg for field, msg in problems)

    out_of_range = tau_plan(tmp_path, mu=(0.0, 0.5))
    assert any(field == "mu" for field, msg in validate_plan(out_of_range))

    err = ValidationError([("mu", "sweep axis is empty")])
    assert "invalid configuration" in str(err)
    assert "mu: sweep axis is empty" in str(err)


def test_cli_exit_code_on_validation_failure(tmp_path, capsys):
    code = main(["tau", "--activations", "gelu", "--mu", "0.5",
                 "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "invalid configuration" in err
    assert "gelu" in err
    assert not os.path.exists(tmp_path / "manifest.json")


def test_tau_run_is_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    code_a = main(["tau", "--activations", "linear,erf", "--mu", "0.2,0.5,0.8",
                   "--out", str(out_a)])
    code_b = main(["tau", "--activations", "linear,erf", "--mu", "0.2,0.5,0.8",
                   "--out", str(out_b)])
    assert code_a == code_b == EXIT_OK
    csvs = sorted(p.name for p in out_a.glob("*.csv"))
    assert csvs == sorted(p.name for p in out_b.glob("*.csv"))
    assert len(csvs) == 2
    for name in csvs:
        assert read(out_a / name) == read(out_b / name)
    # linear cell carries the closed-form escape time
    meta, cols, data = parse_csv_text(read(out_a / "tau_linear.csv"))
    assert cols == ["mu", "A", "B", "lambda_plus", "tau", "converged"]
    a = 1.0 - data["mu"]
    want = (1.0 + np.sqrt(1.0 + 4.0 * a * a)) / (2.0 * a * a)
    np.testing.assert_allclose(data["tau"], want, rtol=1e-10)


def test_manifest_lists_exactly_the_artifacts(tmp_path):
    code = main(["tau", "--activations", "linear", "--mu", "0.3,0.6",
                 "--format", "both", "--out", str(tmp_path)])
    assert code == EXIT_OK
    manifest = json.loads(read(tmp_path / "manifest.json"))
    listed = {f for entry in manifest["cells"] for f in entry["files"]}
    present = {p.name for p in tmp_path.iterdir() if p.name != "manifest.json"}
    assert listed == present
    assert manifest["kind"] == "tau_curve"
    assert all(entry["status"] == "ok" for entry in manifest["cells"])


def test_svg_is_a_pure_function_of_the_csv(tmp_path):
    code = main(["tau", "--activations", "linear", "--mu", "0.2,0.4,0.6",
                 "--format", "both", "--out", str(tmp_path)])
    assert code == EXIT_OK
    csv_text = read(tmp_path / "tau_linear.csv")
    svg_disk = read(tmp_path / "tau_linear.svg")
    assert render_svg(csv_text) == svg_disk
    assert render_svg(csv_text) == render_svg(csv_text)
    assert svg_disk.lstrip().startswith("<svg")


def test_singularity_scan_finds_cubic_root(tmp_path):
    code = main(["singularity", "--activations", "hermite3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    meta, cols, data = parse_csv_text(read(tmp_path / "sing_hermite3.csv"))
    assert cols == ["degree", "root_mu"]
    assert meta["n_roots"] == "1"
    assert data["root_mu"][0] == pytest.approx(0.320724, abs=1e-4)


def test_sgd_run_writes_summary(tmp_path):
    code = main(["sgd", "--mu", "0.3,0.6", "--seeds", "0,1", "--d", "400",
                 "--batch-size", "100", "--n-steps", "300", "--k-max", "2",
                 "--record-every", "10", "--out", str(tmp_path)])
    assert code == EXIT_OK
    meta, cols, data = parse_csv_text(read(tmp_path / "sgd_summary.csv"))
    assert cols == ["mu", "seed", "exit_epoch", "aligned_epoch"]
    assert len(data["mu"]) == 4
    assert list(data["mu"]) == sorted(data["mu"])
    # per-mu blocks are sorted by seed
    assert list(data["seed"][:2]) == [0.0, 1.0]


def test_ode_blowup_maps_to_exit_code(tmp_path):
    code = main(["ode", "--activation", "hermite4", "--mu", "0.1",
                 "--u0", "0.5", "--m0", "0.5", "--method", "euler",
                 "--dt", "50", "--t-max", "5000", "--out", str(tmp_path)])
    assert code == EXIT_BLOWUP
    manifest = json.loads(read(tmp_path / "manifest.json"))
    assert any(entry["status"] == "blowup" for entry in manifest["cells"])


def synthetic_compare_inputs(tmp_path, mu_values, d=1000, exact=True):
    a = 1.0 - np.asarray(mu_values)
    tau = (1.0 + np.sqrt(1.0 + 4.0 * a * a)) / (2.0 * a * a)
    theory = tmp_path / "theory.csv"
    write_csv(str(theory), {"activation": "linear"}, ["mu", "tau"],
              list(zip(mu_values, tau)))
    exper = tmp_path / "exper.csv"
    factor = 1.0 if exact else 1.07
    rows = [(mu, 0, factor * t * math.log(d) / 2.0, float("nan"))
            for mu, t in zip(mu_values, tau)]
    write_csv(str(exper), {"d": d}, ["mu", "seed", "exit_epoch", "aligned_epoch"], rows)
    return str(theory), str(exper)


def test_compare_recovers_exact_scaling(tmp_path):
    theory, exper = synthetic_compare_inputs(tmp_path, [0.1, 0.3, 0.5, 0.7, 0.9])
    report = compare_theory_experiment(theory, exper)
    assert report["n_points"] == 5
    assert report["spearman"] == pytest.approx(1.0)
    assert report["scale"] == pytest.approx(1.0, rel=1e-9)
    assert report["offset"] == pytest.approx(0.0, abs=1e-9)
    assert report["max_abs_relative_residual"] < 1e-9


def test_compare_rejects_mismatched_grids(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    theory, _ = synthetic_compare_inputs(a, [0.1, 0.3, 0.5])
    _, exper = synthetic_compare_inputs(b, [0.2, 0.4, 0.6])
    with pytest.raises(AlignmentError):
        compare_theory_experiment(theory, exper)


def test_compare_rejects_missing_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    write_csv(str(bad), {}, ["mu", "lambda"], [(0.5, 1.0)])
    _, exper = synthetic_compare_inputs(tmp_path, [0.5])
    with pytest.raises(ValidationError):
        compare_theory_experiment(str(bad), exper)


def test_compare_cell_failure_sets_partial_exit(tmp_path):
    theory, _ = synthetic_compare_inputs(tmp_path, [0.1, 0.3])
    other = tmp_path / "other"
    other.mkdir()
    _, exper = synthetic_compare_inputs(other, [0.2, 0.4])
    out = tmp_path / "cmp"
    code = main(["compare", "--theory", theory, "--experiment", exper,
                 "--out", str(out)])
    assert code == EXIT_PARTIAL
    manifest = json.loads(read(out / "manifest.json"))
    assert manifest["cells"][0]["status"] == "failed"
    assert "mu grids differ" in manifest["cells"][0]["error"]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[run]\nd = 400\nbatch_size = 100\nn_steps = 200\nk_max = 2\n"
        "record_every = 20\n"
        "[sweep]\nmu = 0.4\nseeds = 0\n"
        "[output]\nout = {}\n".format(tmp_path / "from_ini")
    )
    code = main(["sgd", "--config", str(cfg), "--n-steps", "150"])
    assert code == EXIT_OK
    manifest = json.loads(read(tmp_path / "from_ini" / "manifest.json"))
    cell = manifest["cells"][0]
    meta, _, _ = parse_csv_text(read(tmp_path / "from_ini" / cell["files"][0]))
    assert meta["d"] == "400"           # from the config file
    assert meta["n_steps"] == "150"     # command line wins


def test_unknown_config_key_is_a_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nwarp_speed = 9\n")
    code = main(["sgd", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == EXIT_VALIDATION
    assert "warp_speed" in capsys.readouterr().err
