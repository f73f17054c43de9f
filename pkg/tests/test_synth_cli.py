import json

import numpy as np
import pytest

from coughtriage import cli, pipeline
from coughtriage.audio_io import load_manifest
from coughtriage.config import ConfigError, PipelineConfig, load_config
from coughtriage.synth import SyntheticSpec, synth_generate

DESK_CONFIG = """
seed = 7
et_trees = 30
et_min_leaf = 1
hgb_iters = 30
cnn_channels = 4,8,8,8,8,8
cnn_epochs = 2
cnn_lr = 0.003
k = 3
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    spec = SyntheticSpec(n_participants=10, clips_per_participant=3, seed=3)
    manifest = synth_generate(spec, root / "data")
    cfg_path = root / "cfg.txt"
    cfg_path.write_text(DESK_CONFIG)
    return root, manifest, cfg_path


def test_synth_layout_and_labels(corpus):
    root, manifest, _ = corpus
    assert (root / "data" / "manifest.csv").exists()
    assert (root / "data" / "tabular.csv").exists()
    labels = {r.label for r in manifest.records}
    assert labels == {0, 1}
    # all generated clips survive the default gate
    reloaded = load_manifest(root / "data" / "manifest.csv", 0.85,
                             root / "data" / "tabular.csv")
    assert len(reloaded.records) == len(manifest.records)
    assert all(r.cough_probability > 0.85 for r in reloaded.records)


def test_synth_label_is_constant_per_participant(corpus):
    _, manifest, _ = corpus
    by_pid = {}
    for r in manifest.records:
        assert by_pid.setdefault(r.participant_id, r.label) == r.label


def test_synth_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(n_participants=3, clips_per_participant=2, seed=5)
    synth_generate(spec, tmp_path / "a")
    synth_generate(spec, tmp_path / "b")
    for name in ("manifest.csv", "tabular.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()
    wavs = sorted(p.name for p in (tmp_path / "a" / "audio").iterdir())
    for name in wavs:
        assert (tmp_path / "a" / "audio" / name).read_bytes() == \
               (tmp_path / "b" / "audio" / name).read_bytes()


def test_config_file_types_and_unknown_keys(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("seed = 4\ngate = 0.9\naugment = false\n# comment\n")
    cfg = load_config(path)
    assert cfg.seed == 4 and cfg.gate == 0.9 and cfg.augment is False
    path.write_text("no_such_key = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_overrides_win(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("seed = 4\n")
    assert load_config(path, {"seed": 9}).seed == 9


def test_config_seed_is_mandatory():
    with pytest.raises(ConfigError):
        PipelineConfig().require_seed()
    assert PipelineConfig(seed=0).require_seed() == 0


def test_bundle_save_load_preserves_predictions(corpus, tmp_path):
    root, manifest, cfg_path = corpus
    cfg = load_config(cfg_path)
    cfg.cache_dir = str(root / "cache")
    cache = pipeline.FeatureCache(cfg)
    cache.ensure(manifest, root / "data", jobs=2)
    ids = [r.clip_id for r in manifest.records]
    training = pipeline.assemble_training_set(ids, manifest, cache, cfg,
                                              root / "data", seed=7)
    for kind in pipeline.MODEL_KINDS:
        bundle = pipeline.train_bundle(kind, training, manifest, cfg, seed=7)
        path = tmp_path / f"{kind}.json"
        pipeline.save_bundle(path, bundle, cfg, seed=7)
        back = pipeline.load_bundle(path, cfg)
        p1 = pipeline.predict_ids(bundle, ids, manifest, cache)
        p2 = pipeline.predict_ids(back, ids, manifest, cache)
        np.testing.assert_array_equal(p1, p2)


def test_cli_unknown_verb_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["definitely-not-a-verb"])
    assert exc.value.code == 2


def test_cli_missing_seed_exits_1(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path / "x")]) == 1
    assert "seed" in capsys.readouterr().err


def test_cli_missing_manifest_exits_1(tmp_path, capsys):
    code = cli.main(["extract", "--seed", "1",
                     "--manifest", str(tmp_path / "absent.csv")])
    assert code == 1


def test_cli_train_and_infer_round_trip(corpus, tmp_path, capsys, monkeypatch):
    root, manifest, cfg_path = corpus
    monkeypatch.chdir(tmp_path)
    model_path = tmp_path / "model.json"
    code = cli.main(["train", "--config", str(cfg_path),
                     "--manifest", str(root / "data" / "manifest.csv"),
                     "--out", str(model_path)])
    assert code == 0
    assert model_path.exists()
    payload = json.loads(model_path.read_text())
    assert payload["format_version"] == 1

    wav = root / "data" / manifest.records[0].file_path
    capsys.readouterr()
    code = cli.main(["infer", "--config", str(cfg_path), str(model_path),
                     str(wav), "--tabular-row",
                     ",".join(f"{k}={v}" for k, v in
                              manifest.tabular[manifest.records[0].participant_id].items()
                              if k != "participant_id")])
    out = capsys.readouterr().out
    assert code == 0
    assert "tb_positive_probability=" in out and "latency_ms=" in out
    prob = float(out.split("tb_positive_probability=")[1].split()[0])
    assert 0.0 <= prob <= 1.0


def test_cli_cv_writes_reports_and_figures(corpus, tmp_path, monkeypatch):
    root, _, cfg_path = corpus
    monkeypatch.chdir(tmp_path)
    out_dir = tmp_path / "reports"
    code = cli.main(["cv", "--config", str(cfg_path),
                     "--manifest", str(root / "data" / "manifest.csv"),
                     "--out", str(out_dir)])
    assert code == 0
    payload = json.loads((out_dir / "cv_extratrees.json").read_text())
    assert len(payload["folds"]) >= 2
    assert (out_dir / "cv_extratrees.csv").exists()
    assert (out_dir / "cv_extratrees_roc.png").read_bytes()[:8] == \
        b"\x89PNG\r\n\x1a\n"
