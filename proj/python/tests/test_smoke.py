import configparser
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

import s2ig

s2ig.set_quiet(True)
s2ig.set_num_threads(1)

SCHEMA_DIR = Path(os.environ.get("S2IG_SCHEMA_DIR", Path(__file__).resolve().parents[2] / "schemas"))


def fid_reference(a, b):
    mu = a.mean(0) - b.mean(0)
    sa = np.cov(a, rowvar=False)
    sb = np.cov(b, rowvar=False)
    root = scipy.linalg.sqrtm(sa @ sb).real
    return float(mu @ mu + np.trace(sa + sb - 2 * root))


def test_inception_score_oracles():
    same = np.full((40, 4), 0.25)
    assert s2ig.inception_score(same, 10)[0] == pytest.approx(1.0, abs=1e-6)
    onehot = np.eye(5)[np.arange(50) % 5]
    assert s2ig.inception_score(onehot, 10)[0] == pytest.approx(5.0, abs=1e-6)


def test_fid_matches_scipy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(400, 6))
    b = rng.normal(size=(400, 6)) @ rng.normal(size=(6, 6)) * 0.5 + 0.3
    assert s2ig.frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)
    assert s2ig.frechet_distance(a, b) == pytest.approx(fid_reference(a, b), rel=1e-6)


def test_average_precision_and_retrieval():
    assert s2ig.average_precision([True, False, True, False]) == pytest.approx(5 / 6)
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [1.0, 0.2], [1.0, 0.5], [1.0, 1.0]])
    assert s2ig.retrieval_map(q, [0], g, [0, 1, 0, 1]) == pytest.approx(5 / 6)
    with pytest.raises(s2ig.ProtocolError):
        s2ig.retrieval_map(q, [2], g, [0, 1, 0, 1])


def test_loss_oracles():
    eye = np.eye(2)
    s2i, i2s = s2ig.matching_loss(eye, eye, np.array([0, 1]), 2, 10.0)
    assert s2i == pytest.approx(2 * math.log1p(math.exp(-10)), abs=1e-9)
    assert i2s == pytest.approx(s2i, abs=1e-12)
    zeros = np.zeros((4, 7))
    assert s2ig.distinctive_loss(zeros, zeros, np.array([0, 1, 2, 3])) == pytest.approx(8 * math.log(7), abs=1e-9)
    u = np.zeros((3, 3))
    assert s2ig.relation_loss(u, u, u, u) == pytest.approx(4 * math.log(3), abs=1e-6)
    half = np.full(5, 0.5)
    assert s2ig.discriminator_loss(half, half, half, half) == pytest.approx(4 * math.log(2), abs=1e-6)
    assert s2ig.kl_divergence(np.ones((1, 1)), np.zeros((1, 1))) == pytest.approx(0.5)


def test_log_mel_frames():
    wave = (0.1 * np.sin(np.arange(16000) * 0.2)).astype(np.float32)
    spec = s2ig.log_mel(wave, 16000)
    assert spec.shape == (98, 40)
    with pytest.raises(s2ig.ValidationError):
        s2ig.log_mel(np.zeros(100, dtype=np.float32), 16000)


def test_default_config_is_plain_ini():
    parser = configparser.ConfigParser()
    parser.read_string(s2ig.default_config("full"))
    assert parser["rdg"]["scales"].strip('"') == "64 128 256"
    keys = {k for k, *_ in s2ig.config_keys()}
    assert "sen.beta" in keys and "rdg.dense_stacking" in keys


def test_pipeline_report_matches_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    manifest, digest = s2ig.make_dataset(tmp_path / "corpus", classes=3, per_class=5)
    assert len(digest) == 64
    _, again = s2ig.make_dataset(tmp_path / "corpus2", classes=3, per_class=5)
    assert again == digest

    sen = s2ig.train_sen(manifest, tmp_path / "sen", ["sen.epochs=1", "sen.embed_dim=16"])
    assert sen["finished"]
    tiny = ["rdg.epochs=1", "rdg.scales=16 32", "rdg.gf_dim=8", "rdg.df_dim=8", "rdg.rs_channels=4"]
    rdg = s2ig.train_rdg(manifest, sen["run_dir"], tmp_path / "rdg", tiny)
    with pytest.raises(s2ig.CompatibilityError):
        s2ig.train_rdg(manifest, sen["run_dir"], tmp_path / "bad", tiny + ["rdg.condition_dim=3"])

    backbone = s2ig.train_backbone(manifest, tmp_path / "backbone.pt", ["eval.backbone_epochs=1"])
    gen = s2ig.generate(rdg["run_dir"], tmp_path / "gen", manifest=manifest)
    assert len(gen["images"]) == 3
    result = s2ig.evaluate(manifest, gen["out_dir"], tmp_path / "report.json", backbone=backbone,
                           overrides=["eval.is_splits=1", "eval.queries_per_class=1"])
    report = json.loads(Path(result["report"]).read_text())
    schema = json.loads((SCHEMA_DIR / "metric_report.schema.json").read_text())
    jsonschema.validate(report, schema)
    assert report["fid"] == pytest.approx(result["fid"])
    assert 0.0 <= result["map"] <= 1.0
