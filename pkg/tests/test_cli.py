"""CLI surface: subcommand wiring, exit codes, run manifests, atomic outputs."""
import json
from pathlib import Path

import numpy as np
import pytest

from ppboost.cli import main
from ppboost.types import GridShape


TINY_SYNTH = {
    "n_samples": 16,
    "grid": {"rows": 8, "cols": 8, "channels": 1},
    "image_h": 64,
    "image_w": 64,
    "size_range": [0.25, 0.45],
    "noise_sigma_range": [0.0, 0.5],
    "distractor_prob": 0.0,
    "infer_fraction": 0.25,
}


def _tiny_config(tmp_path, **overrides):
    cfg = {
        "seed": 1,
        "confmap": {"tau_low": 0.3, "tau_high": 3.0},
        "filter": {"keep_fraction": 0.5, "binarize_threshold": 0.6},
        "detector": {"k": 5, "iters": 40, "lr": 0.01},
        "semisup": {
            "burn_in_iters": 20,
            "labeled_fraction": 0.5,
            "batch_labeled": 4,
            "batch_unlabeled": 4,
            "ema_decay": 0.9,
            "seed": 1,
        },
        "expand": {"ratio": 0.3, "phi_mode": "median"},
        "segment": {"backend": "mock"},
        "synth": dict(TINY_SYNTH),
    }
    cfg.update(overrides)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


def _gen(tmp_path, cfg_path):
    out = tmp_path / "data"
    assert main(["gen-synthetic", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out / "manifest.json"


def test_gen_and_stagewise_commands(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    assert manifest.exists()
    assert (tmp_path / "data" / "run_manifest.json").exists()

    scores = tmp_path / "scores.jsonl"
    rc = main(["filter", "--config", str(cfg), "--manifest", str(manifest), "--out", str(scores)])
    assert rc == 0 and scores.exists()

    boxes = tmp_path / "boxes.jsonl"
    rc = main(
        ["extract-bbox", "--config", str(cfg), "--manifest", str(manifest),
         "--scores", str(scores), "--out", str(boxes)]
    )
    assert rc == 0 and boxes.exists()

    ckpt_dir = tmp_path / "train"
    rc = main(
        ["train-detector", "--config", str(cfg), "--manifest", str(manifest),
         "--scores", str(scores), "--boxes", str(boxes), "--out", str(ckpt_dir)]
    )
    assert rc == 0
    assert (ckpt_dir / "teacher.json").exists()
    assert (ckpt_dir / "train_log.jsonl").exists()

    dets = tmp_path / "dets.jsonl"
    rc = main(
        ["detect", "--config", str(cfg), "--manifest", str(manifest),
         "--checkpoint", str(ckpt_dir / "teacher.json"), "--out", str(dets)]
    )
    assert rc == 0 and dets.exists()

    expanded = tmp_path / "expanded.jsonl"
    rc = main(
        ["expand", "--config", str(cfg), "--manifest", str(manifest),
         "--dets", str(dets), "--out", str(expanded)]
    )
    assert rc == 0 and expanded.exists()

    masks = tmp_path / "masks"
    rc = main(
        ["segment", "--config", str(cfg), "--manifest", str(manifest),
         "--boxes", str(expanded), "--out", str(masks)]
    )
    assert rc == 0 and list(masks.glob("*_mask.npy"))

    report = tmp_path / "report.json"
    rc = main(
        ["eval", "--config", str(cfg), "--manifest", str(manifest),
         "--pred-masks", str(masks), "--dets", str(dets), "--out", str(report),
         "--csv", str(tmp_path / "rows.csv"), "--svg", str(tmp_path / "chart.svg")]
    )
    assert rc == 0
    payload = json.loads(report.read_text())
    assert 0.0 <= payload["aggregates"]["mDSC"] <= 1.0
    assert payload["detection"] is not None
    assert (tmp_path / "rows.csv").exists()
    assert (tmp_path / "chart.svg").read_text().startswith("<svg")


def test_confmap_dump(tmp_path):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    out = tmp_path / "maps"
    rc = main(["confmap", "--config", str(cfg), "--manifest", str(manifest), "--out", str(out)])
    assert rc == 0
    assert len(list(out.glob("*_low.npy"))) == 16
    assert len(list(out.glob("*_softmax.npy"))) == 16


def test_pipeline_end_to_end_and_determinism(tmp_path):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    r1 = tmp_path / "run1"
    r2 = tmp_path / "run2"
    for out in (r1, r2):
        rc = main(["pipeline", "--config", str(cfg), "--manifest", str(manifest), "--out", str(out)])
        assert rc == 0
    assert (r1 / "eval_report.json").read_bytes() == (r2 / "eval_report.json").read_bytes()
    # no stray tmp files from atomic writes
    assert not list(r1.rglob("*.tmp"))
    payload = json.loads((r1 / "run_manifest.json").read_text())
    assert payload["config_hash"] == json.loads((r2 / "run_manifest.json").read_text())["config_hash"]


def test_pipeline_ablation_flags_recorded(tmp_path):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    out = tmp_path / "direct"
    rc = main(
        ["pipeline", "--config", str(cfg), "--manifest", str(manifest),
         "--no-detector", "--out", str(out)]
    )
    assert rc == 0
    report = json.loads((out / "eval_report.json").read_text())
    assert report["config"]["ablation"]["no_detector"] is True
    assert report["detection"] is None


def test_perturb_study_runs(tmp_path):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    out = tmp_path / "study.json"
    rc = main(
        ["perturb-study", "--config", str(cfg), "--manifest", str(manifest),
         "--ratios=-0.2,-0.1,0,0.1", "--out", str(out)]
    )
    assert rc == 0
    table = json.loads(out.read_text())["mdsc_by_ratio"]
    assert set(table) == {"-0.20", "-0.10", "+0.00", "+0.10"}
    assert table["+0.00"] == pytest.approx(1.0)
    assert table["-0.20"] <= table["-0.10"] < table["+0.00"]


def test_eval_missing_masks_exits_1(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg)
    empty = tmp_path / "no_masks"
    empty.mkdir()
    rc = main(
        ["eval", "--config", str(cfg), "--manifest", str(manifest),
         "--pred-masks", str(empty), "--out", str(tmp_path / "r.json")]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "missing predicted masks" in err and "synth_" in err


def test_bad_config_exits_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"filter": {"keep_fraction": 0.0}}))
    rc = main(["filter", "--config", str(p), "--manifest", "x.json", "--out", str(tmp_path / "s")])
    assert rc == 1
    p.write_text(json.dumps({"unknown_section": {}}))
    rc = main(["pipeline", "--config", str(p), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_confidence_feature_mode(tmp_path):
    import numpy as np

    from ppboost.config import load_config
    from ppboost.manifest import read_manifest, resolve_root
    from ppboost.pipeline import load_features
    from ppboost.types import ConfigError

    cfg_path = _tiny_config(tmp_path)
    manifest = _gen(tmp_path, cfg_path)
    cfg = load_config(cfg_path, {"data": {"manifest": str(manifest)},
                                 "detector": {"features": "confidence"}})
    rec = read_manifest(manifest, resolve_root(manifest, None))[0]
    root = resolve_root(manifest, None)
    conf = load_features(rec, root, cfg)
    raw = load_features(rec, root)
    assert conf.shape == raw.shape
    assert conf.min() > 0.0 and conf.max() < 1.0
    # sigmoid of logits over tau_high, elementwise
    tau = cfg.confmap.tau_high
    assert np.allclose(conf[:, :, 0], 1.0 / (1.0 + np.exp(-raw[:, :, 0] / tau)), atol=1e-12)
    with pytest.raises(ConfigError):
        load_config(cfg_path, {"detector": {"features": "bogus"}})


def test_seed_flag_propagates(tmp_path):
    cfg = _tiny_config(tmp_path)
    outs = []
    for seed in (11, 11, 12):
        out = tmp_path / f"d{seed}_{len(outs)}"
        rc = main(["gen-synthetic", "--config", str(cfg), "--seed", str(seed), "--out", str(out)])
        assert rc == 0
        outs.append((out / "manifest.json").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]
