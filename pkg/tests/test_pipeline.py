import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from latent.config import ConfigError, format_config, load_config, parse_config
from latent.dense import load_checkpoint, predict
from latent.encoding import NormStats
from latent.features import mnist_config, toy_config
from latent.encoding import EncodingSpec
from latent.ldp import ProtocolKind
from latent.pipeline import PipelineError, audit_report, bench, run_pipeline, sweep_alpha, sweep_epsilon
from conftest import CONFIGS, DATA


@pytest.fixture(scope="module")
def cfg():
    return replace(load_config(CONFIGS / "toy.ini"), dense=replace(load_config(CONFIGS / "toy.ini").dense, epochs=4))


def test_config_loads_with_relative_paths():
    c = load_config(CONFIGS / "toy.ini")
    assert c.data.train == (CONFIGS / "../data/bars_train.csv")
    assert c.encoding == EncodingSpec(4, 5)
    assert (c.epsilon, c.alpha, c.protocol) == (0.5, 7.0, ProtocolKind.UER)
    assert c.conv.output_length == 72
    assert c.dense.hidden == (64,) and c.dense.epochs == 30


def test_config_round_trip():
    c = load_config(CONFIGS / "toy.ini")
    again = parse_config(format_config(c))
    assert again == c


@pytest.mark.parametrize("text, pattern", [
    ("[data]\ntrain=a\ntest=b\nimage_shape=8,8\nbogus=1\n", "unknown key"),
    ("[nope]\nx=1\n", "unknown section"),
    ("[privacy]\nepsilon=1\n", "missing \\[data\\]"),
    ("[data]\ntrain=a\ntest=b\n", "image_shape"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text, check_files=False)


def test_config_checks_files_and_domains(tmp_path):
    base = f"[data]\ntrain={DATA}/bars_train.csv\ntest={DATA}/bars_test.csv\nimage_shape=8,8\n"
    parse_config(base)
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(base.replace("bars_test", "missing"))
    for extra in ("[privacy]\nepsilon=-1\n", "[privacy]\nalpha=0.5\n", "[encoding]\nwhole_bits=-1\n",
                  "[conv]\nlayers=conv:4:3\n", "[dense]\nhidden=4,4\nactivations=relu\n", "[augment]\nrotation=90\n",
                  "[privacy]\nprotocol=xyz\n"):
        with pytest.raises(ConfigError):
            parse_config(base + extra)


def test_pipeline_metrics_and_artifacts(cfg, tmp_path):
    result = run_pipeline(cfg, tmp_path)
    m = result.metrics
    assert (m["r"], m["l"], m["sensitivity"]) == (72, 10, 720)
    assert m["probabilities"]["keep_one_even"] == pytest.approx(0.875)
    assert m["n_train"] == 2000 and m["n_test"] == 500
    for name in ("norm_stats.json", "randomized_train.npz", "randomized_test.npz", "model.ltfc", "trace.csv",
                 "metrics.json", "config.ini"):
        assert (tmp_path / name).exists()
    assert json.loads((tmp_path / "metrics.json").read_text()) == m
    assert NormStats.load(tmp_path / "norm_stats.json").n_features == 72
    with np.load(tmp_path / "randomized_test.npz") as data:
        bits = np.unpackbits(data["bits"], axis=1, count=int(data["bit_count"]))
        acc = np.mean(predict(load_checkpoint(tmp_path / "model.ltfc"), bits) == data["labels"])
    assert acc == pytest.approx(m["test_accuracy"])
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    assert len(rows) == 4


def test_pipeline_is_deterministic(cfg):
    assert run_pipeline(cfg, write=False).metrics == run_pipeline(cfg, write=False).metrics


def test_unrandomized_run(cfg):
    m = run_pipeline(replace(cfg, randomize=False), write=False).metrics
    assert m["randomized"] is False
    assert m["probabilities"]["keep_zero"] == 1.0


def test_stage_tagged_errors(cfg, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,p0\n0,1\n")
    with pytest.raises(PipelineError, match=r"^\[data\]"):
        run_pipeline(replace(cfg, data=replace(cfg.data, train=bad)), write=False)
    # 63 features x 9 bits is an odd sensitivity, which UER refuses
    odd = replace(cfg, conv=toy_config(0, filters=7), encoding=EncodingSpec(4, 4))
    with pytest.raises(PipelineError, match=r"^\[probabilities\]"):
        run_pipeline(odd, write=False)


def test_sweep_epsilon_report(cfg, tmp_path):
    report = sweep_epsilon(replace(cfg, dense=replace(cfg.dense, epochs=2)), [0.5, 8.0], [0, 1], tmp_path)
    assert len(report["rows"]) == 4
    assert set(report["spread_per_seed"]) == {0, 1}
    rows = list(csv.DictReader(open(tmp_path / "sweep_epsilon.csv")))
    assert rows[0].keys() == {"epsilon", "alpha", "seed", "test_accuracy", "train_accuracy"}
    summary = json.loads((tmp_path / "sweep_epsilon_summary.json").read_text())
    assert summary["max_spread"] == report["max_spread"]
    with pytest.raises(ValueError):
        sweep_epsilon(cfg, [0.5])


def test_sweep_alpha_traces(cfg, tmp_path):
    report = sweep_alpha(replace(cfg, dense=replace(cfg.dense, epochs=2)), [5, 6, 7, 8], tmp_path)
    assert [r["alpha"] for r in report["rows"]] == [5, 6, 7, 8]
    for a in (5, 6, 7, 8):
        assert len((tmp_path / f"trace_alpha_{a}.csv").read_text().splitlines()) == 3


def test_augmented_pipeline(cfg):
    aug = replace(cfg, augment_copies=1, augment=replace(cfg.augment, shift_x=0.125, shift_y=0.125))
    assert run_pipeline(aug, write=False).metrics["n_train"] == 4000


def test_bench_report():
    report = bench(toy_config(), EncodingSpec(4, 5), n_records=10, scaling_r=[1000, 2000])
    assert report["records"] == 10 and report["r"] == 72
    assert report["mean_s"] > 0 and report["median_s"] <= report["p95_s"]
    assert [row["r"] for row in report["scaling"]] == [1000, 2000]
    assert "encode_ratio" in report["scaling"][1]
    assert bench(mnist_config(), EncodingSpec(4, 5), n_records=0) == {
        "records": 0, "mean_s": None, "median_s": None, "p95_s": None, "scaling": []}


def test_audit_report_examples():
    ue = audit_report("ue", 1.0, 1.0, 2)
    assert ue["brute_force_ratio"] == pytest.approx(math.e, rel=1e-12) and ue["pass"]
    moue = audit_report("moue", 0.5, 7, 4)
    assert moue["brute_force_ratio"] <= math.exp(0.5) and moue["pass"]
    uer = audit_report("uer", 0.5, 7, 4)
    checks = {c["variant"]: c for c in uer["checks"]}
    assert not checks["unconstrained"]["pass"] and not checks["unconstrained"]["enforced"]
    assert checks["paired_even_odd"]["pass"] and uer["pass"]
    assert uer["identities"]["pair_product"] == pytest.approx(math.exp(0.25))
    with pytest.raises(ValueError, match="1..12"):
        audit_report("ue", 1.0, 1.0, 13)


def test_pipeline_strings_match_owner_device(cfg, tmp_path):
    from latent.datasets import read_image_csv
    from latent.ldp import RngStream
    from latent.owner import OwnerDevice

    result = run_pipeline(cfg, tmp_path)
    images, _ = read_image_csv(cfg.data.train, (8, 8, 1))
    device = OwnerDevice(result.module, result.stats, cfg.encoding, result.probs, RngStream(cfg.seed, 0))
    with np.load(tmp_path / "randomized_train.npz") as data:
        stored = np.unpackbits(data["bits"], axis=1, count=720)
    assert np.array_equal(device.perturb_batch(images[:100]), stored[:100])
