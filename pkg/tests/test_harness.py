import numpy as np
import pytest

from rvf.harness import (AGGREGATE_COLUMNS, RAW_COLUMNS, AggregateResult, ConfigError, ExperimentSpec, MethodAggregate,
                         MethodSpec, SchemaError, aggregate_csv, emit_plot, load_spec, policy_eval_spec, raw_csv,
                         read_raw_csv, run_experiment, summarize, ychain_spec, z_value)

SPEC_TEXT = """
schema = 1
experiment = "ychain"
n_seeds = 3
budget = 60
checkpoint_every = 20

[env]
gamma = 0.9

[[methods]]
id = "TD(0)"
kind = "td0"
lr = 0.5

[[methods]]
id = "RTD(0)"
kind = "rtd"
lr_theta = 0.5
lr_omega = 1.0
"""


def write(tmp_path, text, name="spec.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_spec(tmp_path):
    spec = load_spec(write(tmp_path, SPEC_TEXT))
    assert spec.experiment == "ychain" and spec.n_seeds == 3 and spec.budget == 60
    assert [m.id for m in spec.methods] == ["TD(0)", "RTD(0)"]
    assert spec.methods[1].params == {"lr_theta": 0.5, "lr_omega": 1.0}
    assert spec.confidence == 0.68


@pytest.mark.parametrize("edit, message", [
    (lambda s: s.replace("n_seeds = 3", "n_seed = 3"), "unknown top-level"),
    (lambda s: s.replace("lr = 0.5", "lrr = 0.5"), "unknown keys"),
    (lambda s: s.replace("gamma = 0.9", "gama = 0.9"), "unknown env"),
    (lambda s: s.replace("schema = 1", "schema = 2"), "schema"),
    (lambda s: s.replace('kind = "td0"', 'kind = "sarsa"'), "unknown kind"),
    (lambda s: s.replace("n_seeds = 3", "n_seeds = 0"), "n_seeds"),
    (lambda s: s.replace("budget = 60", "budget = -1"), "budget"),
    (lambda s: s.replace('id = "RTD(0)"', 'id = "TD(0)"'), "duplicate"),
    (lambda s: s + "\n[[", "spec.toml"),
])
def test_bad_specs(tmp_path, edit, message):
    with pytest.raises(ConfigError, match=message.replace("(", r"\(")):
        load_spec(write(tmp_path, edit(SPEC_TEXT)))


def test_missing_spec_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_spec(tmp_path / "missing.toml")


def test_run_is_reproducible_byte_for_byte(tmp_path):
    spec = load_spec(write(tmp_path, SPEC_TEXT))
    a = run_experiment(spec, tmp_path / "a")
    b = run_experiment(spec, tmp_path / "b")
    assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()
    assert a.exit_code == 0 and not a.partial
    np.testing.assert_array_equal(a.checkpoints, [20, 40, 60])


def test_parallel_workers_match_serial(tmp_path):
    spec = load_spec(write(tmp_path, SPEC_TEXT))
    serial = raw_csv(run_experiment(spec))
    spec.workers = 2
    assert raw_csv(run_experiment(spec)) == serial


def test_aggregate_recomputed_from_raw(tmp_path):
    spec = load_spec(write(tmp_path, SPEC_TEXT))
    res = run_experiment(spec, tmp_path)
    raw = read_raw_csv(tmp_path / "raw.csv")
    lines = (tmp_path / "aggregate.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == AGGREGATE_COLUMNS
    rows = [dict(zip(AGGREGATE_COLUMNS, ln.split(","))) for ln in lines[1:]]
    for name, (marks, table) in raw.items():
        mine = [r for r in rows if r["method"] == name]
        for j, r in enumerate(mine):
            col = table[:, j]
            assert int(r["checkpoint"]) == marks[j]
            assert abs(float(r["mean"]) - col.mean()) <= 1e-12
            assert abs(float(r["se"]) - col.std(ddof=1) / np.sqrt(len(col))) <= 1e-12
            half = float(r["upper"]) - float(r["mean"])
            assert half == pytest.approx(z_value(0.68) * float(r["se"]), abs=1e-12)
    assert res.methods["TD(0)"].n_seeds == 3


def test_raw_csv_schema(tmp_path):
    spec = load_spec(write(tmp_path, SPEC_TEXT))
    text = raw_csv(run_experiment(spec))
    lines = text.splitlines()
    assert tuple(lines[0].split(",")) == RAW_COLUMNS
    assert len(lines) == 1 + 2 * 3 * 3


def test_single_seed_has_zero_se():
    spec = ychain_spec(1, 40, checkpoint_every=20)
    res = run_experiment(spec)
    for name, agg in res.methods.items():
        np.testing.assert_array_equal(agg.se, 0.0)
        np.testing.assert_array_equal(agg.mean, res.raw[name][0])


def test_summarize_and_z():
    assert z_value(0.68) == pytest.approx(0.994457883, abs=1e-8)
    assert z_value(0.95) == pytest.approx(1.959963985, abs=1e-8)
    mean, se, lo, hi, n = summarize(np.array([[1.0, np.nan], [3.0, 2.0]]), 0.95)
    assert mean.tolist() == [2.0, 2.0] and n.tolist() == [2, 1]
    assert se[0] == pytest.approx(1.0) and se[1] == 0.0


def test_divergence_marks_partial(tmp_path):
    text = SPEC_TEXT.replace("lr = 0.5", "lr = 1e6")
    res = run_experiment(load_spec(write(tmp_path, text)), tmp_path / "out")
    assert res.partial and res.exit_code == 3
    assert res.methods["TD(0)"].diverged_seeds == [0, 1, 2]
    assert not res.methods["RTD(0)"].partial
    raw = (tmp_path / "out" / "raw.csv").read_text()
    assert ",diverged" in raw
    agg = (tmp_path / "out" / "aggregate.csv").read_text().splitlines()
    assert agg[1].endswith(",1")


def test_policy_eval_spec_runs():
    spec = policy_eval_spec(2, 500, checkpoint_every=250)
    res = run_experiment(spec)
    assert set(res.methods) == {"TD(0)", "TD(0.9)", "RVF"}
    assert res.y_label == "RMSVE"
    np.testing.assert_array_equal(res.checkpoints, [250, 500])


def _agg(n_methods=2, length=3):
    methods = {}
    for k in range(n_methods):
        m = np.linspace(1.0, 0.1 * (k + 1), length)
        methods[f"m{k}"] = MethodAggregate(m, np.full(length, 0.05), m - 0.05, m + 0.05, np.full(length, 4), 4)
    return AggregateResult("ychain", np.arange(1, length + 1) * 10, methods, 0.68, "episodes", "error", "demo")


def test_plot_has_one_group_per_method():
    svg = emit_plot(_agg(2))
    assert svg.count('<g class="method"') == 2
    assert svg.count("<polyline") == 2 and svg.count("<polygon") == 2
    assert ">episodes<" in svg and ">error<" in svg
    assert emit_plot(_agg(2)) == svg


def test_plot_schema_errors():
    with pytest.raises(SchemaError):
        emit_plot(AggregateResult("ychain", np.array([]), {}))
    bad = _agg(1)
    bad.methods["m0"].mean = bad.methods["m0"].mean[:2]
    with pytest.raises(SchemaError):
        emit_plot(bad)


def test_experiment_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec("ychain", []).validate()
    with pytest.raises(ConfigError):
        ExperimentSpec("maze", [MethodSpec("a", "td0")]).validate()
    with pytest.raises(ConfigError):
        ExperimentSpec("ychain", [MethodSpec("a", "td0")], budget=5, checkpoint_every=10).validate()
