import json

import pytest

from perpgrad.cli import main
from perpgrad.errors import ConfigurationError, SchemaError
from perpgrad.experiment import (
    ExperimentConfig,
    RunRecord,
    apply_override,
    dump_config,
    load_config,
    load_records,
    run_experiment,
    validate_record,
)
from perpgrad.report import compare_runs, emit_plotdata, read_curve_csv, write_comparison


def tiny(**kw) -> ExperimentConfig:
    d = dict(
        name="tiny",
        dataset=dict(kind="two_moons", n_samples=120, noise=0.2),
        network=dict(hidden=[8]),
        optim=dict(eta=0.05, momentum=0.9, weight_decay=5e-4, variant="perp_renorm"),
        epochs=2,
        batch_size=16,
        seeds=[0, 1],
        label_fraction=0.5,
    )
    d.update(kw)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = tiny()
    a = run_experiment(cfg.with_variant("sgd"), out)
    b = run_experiment(cfg, out)
    return out, a, b


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"epochz": 3})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"optim": {"lr": 0.1}})


def test_integer_seeds_expand():
    assert ExperimentConfig.from_dict({"seeds": 3}).seeds == [0, 1, 2]


def test_config_hash_ignores_seeds_and_tracks_variant():
    cfg = tiny()
    assert cfg.config_hash() == tiny(seeds=[5, 6, 7]).config_hash()
    other = cfg.with_variant("sgd")
    assert other.config_hash() != cfg.config_hash()
    assert other.config_hash(False) == cfg.config_hash(False)


def test_yaml_roundtrip_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(tiny()))
    cfg = load_config(p, ["optim.eta=0.2", "network.hidden=[4, 4]"])
    assert cfg.optim.eta == 0.2 and cfg.network.hidden == [4, 4]
    with pytest.raises(ConfigurationError):
        apply_override({}, "no-equals-sign")


def test_epoch_zero_keeps_initial_norm():
    (rec,) = run_experiment(tiny(epochs=0, seeds=[3]))
    assert rec.ok and rec.train_loss == [] and rec.theta_norms == [rec.final_theta_norm]


def test_variants_share_initialization():
    a = run_experiment(tiny(epochs=0, seeds=[4]).with_variant("sgd"))[0]
    b = run_experiment(tiny(epochs=0, seeds=[4]))[0]
    assert a.clean == b.clean and a.base_hash == b.base_hash


def test_records_validate_and_roundtrip(pair):
    out, a, b = pair
    for rec in a + b:
        d = json.loads(rec.to_json())
        validate_record(d)
        assert RunRecord.from_dict(d).to_json() == rec.to_json()
    loaded = load_records(out / "perp_renorm")
    assert [r.seed for r in loaded] == [0, 1]


def test_schema_violation_rejected(pair):
    d = json.loads(pair[1][0].to_json())
    d["status"] = "maybe"
    with pytest.raises(SchemaError):
        validate_record(d)


def test_compare_against_itself(pair):
    _, _, b = pair
    rep = compare_runs(b, b)
    for row in rep.rows:
        assert row.effect_size == 0.0 and row.p_value == 1.0


def test_compare_rows_cover_table(pair, tmp_path):
    _, a, b = pair
    rep = compare_runs(a, b)
    names = [r.metric for r in rep.rows]
    for m in ("top1_acc", "top5_acc", "nll", "ece", "brier", "mean_entropy", "mean_max_softmax", "mean_max_logit",
              "mean_logit_variance"):
        assert m in names
    files = write_comparison(rep, tmp_path)
    assert (tmp_path / "comparison.md").exists() and len(files) >= 3


def test_compare_rejects_mismatched_seeds(pair):
    _, a, b = pair
    with pytest.raises(ValueError):
        compare_runs(a, b[:1])


def test_compare_rejects_missing_metric(pair):
    _, a, b = pair
    broken = RunRecord.from_dict(json.loads(b[0].to_json()))
    del broken.clean["ece"]
    with pytest.raises(SchemaError):
        compare_runs(a, [broken, b[1]])


def test_plotdata_rows(pair, tmp_path):
    _, a, b = pair
    emit_plotdata(a + b, "corruption", tmp_path)
    rows = read_curve_csv(tmp_path / "curve_gaussian_noise_top1_acc.csv")
    assert len(rows) == 10
    assert {r["variant"] for r in rows} == {"sgd", "perp_renorm"}
    assert [int(r["severity"]) for r in rows[:5]] == [1, 2, 3, 4, 5]
    emit_plotdata(b, "reliability", tmp_path)
    assert (tmp_path / "reliability_perp_renorm_clean.csv").exists()


def test_parallel_equals_serial(tmp_path):
    serial = run_experiment(tiny(seeds=[0, 1, 2]), tmp_path / "s")
    parallel = run_experiment(tiny(seeds=[0, 1, 2], workers=2), tmp_path / "p")
    assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]


def test_rerun_is_byte_identical(tmp_path):
    cfg = tiny(seeds=[0])
    run_experiment(cfg, tmp_path / "x")
    run_experiment(cfg, tmp_path / "y")
    a = (tmp_path / "x" / "perp_renorm" / "seed_0.json").read_bytes()
    b = (tmp_path / "y" / "perp_renorm" / "seed_0.json").read_bytes()
    assert a == b


def test_cli_train_compare_and_errors(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(tiny()))
    out = tmp_path / "cli"
    assert main(["compare", "-c", str(p), "--out", str(out), "--epochs", "1"]) == 0
    assert (out / "comparison" / "comparison.csv").exists()
    assert (out / "comparison" / "plots" / "curve_gaussian_noise_ece.csv").exists()
    assert main(["train", "-c", str(p), "--set", "optim.eta=-1"]) == 2
    assert main(["train", "-c", str(tmp_path / "missing.yaml")]) == 2
    assert main(["corrupt-eval", "--run-dir", str(out / "sgd"), "--out", str(tmp_path / "ce")]) == 0
    res = json.loads((tmp_path / "ce" / "corrupt_eval.json").read_text())
    assert res["0"]["gaussian_noise"]["perturbation_monotone"] is True
    assert main(["calibrate", "--val", str(out / "sgd" / "seed_0.val_logits.csv"),
                 "--test", str(out / "sgd" / "seed_0.test_logits.csv"), "--out", str(tmp_path / "cal")]) == 0
    assert (tmp_path / "cal" / "reliability_after.csv").exists()
    assert main(["report", "--runs", str(out / "sgd"), str(out / "perp_renorm"), "--out", str(tmp_path / "rep")]) == 0
    assert main(["converge-check", "--instances", "2", "--dim", "5"]) == 0
