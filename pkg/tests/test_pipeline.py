import logging

import numpy as np
import pytest

import cli
from agents.optimization_agent import savings
from agents.report_agent import render
from core.blended import evaluate_many, load_model
from core.errors import CacheIntegrityError, ConfigError
from core.models import load_config, parse_config
from core.router import RunOptions, dispatch
from memory.sample_cache import SampleCache

SEVEN_SHIFTS = [
    [0.0, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1], [0.0, 0.1, 0.1],
    [0.0, 0.05, 0.05], [0.0, 0.0, 0.05], [0.0, 0.05, 0.0],
]


def run(cfg, command, **kw):
    return dispatch(command, cfg, RunOptions(**kw))["result"]


@pytest.fixture
def synthetic(synthetic_blob, tmp_path):
    return parse_config(synthetic_blob, tmp_path)


def test_sample_then_resample_uses_the_cache(synthetic):
    first = run(synthetic, "sample")
    assert first["counts"] == [40] * 5
    assert first["simulated"] == 200
    assert first["rows"] == 200
    assert len(SampleCache.load(synthetic.path("cache"))) == 200

    again = run(synthetic, "sample")
    assert again["simulated"] == 0
    assert again["counts"] == first["counts"]


def test_full_synthetic_pipeline(synthetic):
    run(synthetic, "sample")
    fitted = run(synthetic, "fit")
    assert fitted["terms_per_line"] == [3] * 5
    assert fitted["n_terms"] == 15

    model = load_model(synthetic.path("model"))
    objective = synthetic.build_objective()
    pts = np.array([model.plan.sample_point(i, k) for i in range(5) for k in (0, 17, 39)])
    np.testing.assert_allclose(evaluate_many(model, pts), objective.values(pts), rtol=1e-9)

    validated = run(synthetic, "validate")
    assert validated["n_points"] > 0
    assert validated["rmse"] <= 1e-5
    assert synthetic.path("residuals").read_text().startswith("line,point,oa,ab,bc,simulated,model,residual")

    optimized = run(synthetic, "optimize")
    rows = optimized["rows"]
    assert rows["global"]["design"] == pytest.approx([20.0, 1.0, 1.0])
    assert rows["global"]["t_rms"] == pytest.approx(2.0 + np.exp(0.008), rel=1e-12)
    assert rows["global"]["t_rms"] <= rows["local"]["t_rms"] <= rows["original"]["t_rms"]
    assert optimized["discrepancy_flag"] is False
    assert rows["global"]["savings_t_rms_pct"] > 0

    report = run(synthetic, "report")
    text = synthetic.path("report_text").read_text()
    assert text == report["text"]
    for name in ("original", "local", "global"):
        assert name in text


def test_outputs_are_reproducible(synthetic):
    run(synthetic, "sample")
    run(synthetic, "fit")
    model_bytes = synthetic.path("model").read_bytes()
    cache_bytes = synthetic.path("cache").read_bytes()
    run(synthetic, "validate")
    run(synthetic, "optimize")
    report_bytes = synthetic.path("report").read_bytes()

    run(synthetic, "sample")
    run(synthetic, "fit")
    run(synthetic, "validate")
    run(synthetic, "optimize")
    assert synthetic.path("cache").read_bytes() == cache_bytes
    assert synthetic.path("model").read_bytes() == model_bytes
    assert synthetic.path("report").read_bytes() == report_bytes


def test_seven_lines_forced_order_logs_term_count(synthetic_blob, tmp_path, caplog):
    blob = dict(synthetic_blob)
    blob["objective"] = {"kind": "synthetic", "terms": [
        {"coef": 1.0, "phi": [rate, 0.0, 0.0]} for rate in (-0.1, -0.05, 0.0, 0.05, 0.1)
    ] + [{"coef": 1.0, "phi": [0.0, 0.005, 0.003]}]}
    blob["sampling"] = {**blob["sampling"], "lines": 7, "shifts": SEVEN_SHIFTS}
    blob["fitting"] = {"order": 5}
    cfg = parse_config(blob, tmp_path)
    run(cfg, "sample")
    with caplog.at_level(logging.INFO):
        fitted = run(cfg, "fit")
    assert fitted["n_terms"] == 35
    assert "model holds 35 terms" in caplog.text


def test_cache_and_model_overrides(synthetic, tmp_path):
    cache, model = tmp_path / "elsewhere" / "c.csv", tmp_path / "elsewhere" / "m.json"
    run(synthetic, "sample", cache=cache)
    run(synthetic, "fit", cache=cache, model=model)
    assert cache.exists() and model.exists()
    assert not synthetic.path("cache").exists()


def test_fit_without_samples_is_a_cache_error(synthetic):
    with pytest.raises(CacheIntegrityError):
        run(synthetic, "fit")


def test_report_needs_an_optimization(synthetic):
    with pytest.raises(ConfigError):
        run(synthetic, "report")


def test_unknown_command(synthetic):
    with pytest.raises(ValueError):
        dispatch("launch", synthetic)


# -----------------------------
# Config errors
# -----------------------------
@pytest.mark.parametrize("edit, message", [
    (lambda b: b["design_box"].update(oa=[41.0, 1.0]), "design_box.oa: min must be < max"),
    (lambda b: b["sampling"].update(lines=4), "sampling.shifts: 5 shifts given for 4 lines"),
    (lambda b: b["sampling"].update(origin_shift=[0.0, 1.0, 1.0]), "sampling.origin_shift: must lie inside"),
    (lambda b: b.update(unexpected=1), "unexpected"),
    (lambda b: b["objective"].update(terms=[]), "objective.terms"),
    (lambda b: b.update(fitting={"order": 7}), "sampling.min_run: must be >= 2 x fitting.order"),
])
def test_config_errors_name_the_field(synthetic_blob, tmp_path, edit, message):
    edit(synthetic_blob)
    with pytest.raises(ConfigError, match=message.replace(".", r"\.")):
        parse_config(synthetic_blob, tmp_path)


def test_simulator_config_needs_geometry(ventilator_blob, tmp_path):
    del ventilator_blob["geometry"]
    with pytest.raises(ConfigError, match="geometry"):
        parse_config(ventilator_blob, tmp_path)


def test_task_by_end_effector_angles(ventilator_blob, tmp_path):
    ventilator_blob["task"] = {"delta_i": 1.40, "delta_e": 1.72}
    cfg = parse_config(ventilator_blob, tmp_path)
    # k = 0: the end-effector beam is the output link
    assert cfg.ptp_task().psi_i == pytest.approx(np.arcsin(np.sin(1.40)))


def test_config_paths_resolve_next_to_the_file(synthetic_blob, write_config, tmp_path):
    cfg = load_config(write_config(synthetic_blob))
    assert cfg.path("cache") == tmp_path.resolve() / "out" / "samples.csv"
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")


# -----------------------------
# Command line
# -----------------------------
def test_cli_runs_the_pipeline(synthetic_blob, write_config, capsys):
    path = str(write_config(synthetic_blob))
    for command in ("sample", "fit", "validate", "optimize", "report"):
        assert cli.main([command, "--config", path, "--log-level", "WARNING"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "line 0: N=40" in out
    assert "global" in out


def test_cli_exit_codes(synthetic_blob, write_config):
    bad = dict(synthetic_blob, design_box={"oa": [5.0, 1.0], "ab": [1.0, 2.0], "bc": [1.0, 2.0]})
    assert cli.main(["sample", "--config", str(write_config(bad, "bad.json"))]) == cli.EXIT_CONFIG

    forced = dict(synthetic_blob, fitting={"order": 5})
    path = str(write_config(forced, "forced.json"))
    assert cli.main(["sample", "--config", path]) == cli.EXIT_OK
    # three exponentials per line cannot carry five terms
    assert cli.main(["fit", "--config", path]) == cli.EXIT_NUMERIC


def test_savings_and_rendering():
    assert savings(10.0, 7.5) == pytest.approx(25.0)
    assert savings(None, 1.0) is None
    assert savings(0.0, 1.0) is None
    report = {
        "name": "demo",
        "rows": {
            "original": {"design": [53, 65, 282], "t_rms": 4.0, "t_max": 8.0},
            "local": None,
            "global": {"design": [33.2, 79.4, 266.1], "t_rms": 3.0, "t_max": 6.0,
                       "savings_t_rms_pct": 25.0, "savings_t_max_pct": 25.0},
        },
        "grid": {"grid_resolution": [5, 5, 5], "feasible_evaluated": 40, "evaluated": 125, "value": 2.9},
    }
    text = render(report)
    assert "local" not in text
    assert "25%" in text
    assert "grid 5x5x5: 40 of 125 nodes admitted" in text


@pytest.mark.slow
def test_ventilator_pipeline_orders_the_designs(ventilator_blob, tmp_path):
    ventilator_blob["optimization"]["resolution"] = [36, 46, 51]
    ventilator_blob["validation"]["lines"] = 3
    ventilator_blob["validation"]["points_per_line"] = 20
    cfg = parse_config(ventilator_blob, tmp_path)
    sampled = run(cfg, "sample", workers=4)
    assert 100 <= sum(sampled["counts"]) <= 6000
    run(cfg, "fit")
    run(cfg, "validate")
    rows = run(cfg, "optimize", workers=4)["rows"]
    assert rows["original"]["t_rms"] is not None
    assert rows["global"]["t_rms"] <= rows["local"]["t_rms"] <= rows["original"]["t_rms"]
    assert (tmp_path / "out" / "traces" / "global.csv").exists()
