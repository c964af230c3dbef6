"""Adapter conformance: exports must pass the primary toolkit's readers, and
the runner must satisfy the exchange protocol end to end."""
import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from ppboost_adapters.export import export_confidence_inputs
from ppboost_adapters.formats import read_npy, write_npy_f32
from ppboost_adapters.runner import run_external_segmenter
from ppboost_adapters.slicer import slice_volume
from ppboost_adapters.stub_models import IdentitySegmenter, StubEncoder, load_segmenter


def _write_images(path: Path, n=6, h=40, w=48):
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(5)
    from PIL import Image

    for i in range(n):
        img = (rng.random((h, w)) * 80).astype(np.uint8)
        r0, c0 = int(rng.integers(5, h - 15)), int(rng.integers(5, w - 15))
        img[r0 : r0 + 10, c0 : c0 + 10] = 230
        if i % 2 == 0:
            Image.fromarray(img, mode="L").save(path / f"img_{i:03d}.png")
        else:
            write_npy_f32(path / f"img_{i:03d}.npy", img / 255.0)


def test_export_manifest_passes_primary_reader(tmp_path):
    _write_images(tmp_path / "images")
    manifest = export_confidence_inputs(
        "stub-v1", tmp_path / "images", ["bright square", "lesion"], tmp_path / "out", seed=3
    )

    from ppboost.manifest import read_manifest

    records = read_manifest(manifest, root=tmp_path / "out")
    assert len(records) == 6
    assert {r.split for r in records} == {"train", "infer"}

    from ppboost import npyio
    from ppboost.confmap import cosine_logits

    for rec in records:
        grid = npyio.read_grid(tmp_path / "out" / rec.logits_path)
        assert grid.shape.channels == 8
        emb = npyio.read_embedding(
            tmp_path / "out" / "prompts" / f"{rec.prompt_id}.npy", rec.prompt_id
        )
        logits = cosine_logits(grid, emb)
        assert np.all(np.isfinite(logits.values))


def test_export_is_deterministic(tmp_path):
    _write_images(tmp_path / "images")
    m1 = export_confidence_inputs("stub-v1", tmp_path / "images", ["a"], tmp_path / "o1", seed=3)
    m2 = export_confidence_inputs("stub-v1", tmp_path / "images", ["a"], tmp_path / "o2", seed=3)
    assert m1.read_bytes() == m2.read_bytes()
    f1 = sorted((tmp_path / "o1" / "features").iterdir())
    f2 = sorted((tmp_path / "o2" / "features").iterdir())
    for a, b in zip(f1, f2):
        assert a.read_bytes() == b.read_bytes()


def test_stub_encoder_bright_region_scores_high(tmp_path):
    enc = StubEncoder("stub-v1", rows=8, cols=8, dim=8)
    img = np.zeros((64, 64))
    img[8:24, 8:24] = 1.0
    feats = enc.encode_image(img)
    emb = enc.encode_text("target")
    from ppboost.confmap import cosine_logits
    from ppboost.types import GridMap, PromptEmbedding

    sims = cosine_logits(GridMap(feats.astype(np.float64)), PromptEmbedding("p", emb)).plane()
    bright = sims[1:3, 1:3].mean()
    dark = sims[5:, 5:].mean()
    assert bright > dark


def test_runner_round_trip_with_primary_external_segment(tmp_path):
    """Identity runner answers the primary toolkit's own exchange client."""
    from ppboost.segmenter import SegmenterConfig, external_segment
    from ppboost.types import BBox, GridShape, SampleRecord

    recs = [
        SampleRecord(
            sample_id=f"s{i}",
            image_h=24,
            image_w=20,
            grid=GridShape(4, 4, 1),
            logits_path=f"s{i}.npy",
            prompt_id="prompt_00",
            split="infer",
        )
        for i in range(3)
    ]
    batch = [(rec, BBox(2.0 + i, 3.0, 6.0, 5.0)) for i, rec in enumerate(recs)]
    cfg = SegmenterConfig(backend="external", timeout_s=10.0, poll_interval_s=0.01)

    def serve():
        for _ in range(200):
            if (tmp_path / "requests.jsonl").exists():
                run_external_segmenter(tmp_path, "identity")
                return
            time.sleep(0.01)

    t = threading.Thread(target=serve)
    t.start()
    masks, errors = external_segment(batch, tmp_path, cfg)
    t.join()
    assert errors == []
    for i, rec in enumerate(recs):
        assert masks[rec.sample_id].foreground_count == 6 * 5
    # probabilities written by the runner round-trip bit-exactly
    from ppboost import npyio

    prob = npyio.read_grid(tmp_path / "s0_prob.npy")
    assert prob.values.dtype == np.float32
    assert set(np.unique(prob.values)) == {0.0, 1.0}


def test_runner_malformed_line_logged_and_skipped(tmp_path):
    (tmp_path / "requests.jsonl").write_text(
        'not json\n{"sample_id": "ok", "x": 1, "y": 1, "w": 2, "h": 2, "image_h": 8, "image_w": 8}\n'
    )
    stats = run_external_segmenter(tmp_path, "identity")
    assert stats == {"served": 1, "skipped": 0, "failed": 1}
    errors = [json.loads(l) for l in (tmp_path / "errors.jsonl").read_text().splitlines()]
    assert errors[0]["line"] == 1
    assert (tmp_path / "ok.done").exists()
    assert (tmp_path / "done.marker").exists()


def test_runner_restart_resumes_unprocessed(tmp_path):
    rows = [
        {"sample_id": f"r{i}", "x": 0, "y": 0, "w": 4, "h": 4, "image_h": 8, "image_w": 8}
        for i in range(3)
    ]
    (tmp_path / "requests.jsonl").write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    # simulate a previous partial run
    write_npy_f32(tmp_path / "r0_prob.npy", np.zeros((8, 8), dtype=np.float32))
    (tmp_path / "r0.done").touch()
    stats = run_external_segmenter(tmp_path, "identity")
    assert stats == {"served": 2, "skipped": 1, "failed": 0}
    # the pre-existing output was not overwritten
    assert np.array_equal(read_npy(tmp_path / "r0_prob.npy"), np.zeros((8, 8)))


def test_blob_segmenter_applies_sigmoid(tmp_path):
    model = load_segmenter("blob")
    prob = model.predict_probability("", {"x": 4.0, "y": 4.0, "w": 8.0, "h": 8.0}, 16, 16)
    assert prob.min() >= 0.0 and prob.max() <= 1.0
    assert prob[8, 8] > 0.9  # box center
    assert prob[0, 0] < 0.1


def test_slicer_npy_volume(tmp_path):
    rng = np.random.default_rng(7)
    vol = rng.random((5, 10, 12)).astype(np.float32)
    mask = (rng.random((5, 10, 12)) < 0.3).astype(np.uint8)
    write_npy_f32(tmp_path / "vol.npy", vol)
    write_npy_f32(tmp_path / "mask.npy", mask)
    index = slice_volume(tmp_path / "vol.npy", tmp_path / "slices", mask_path=tmp_path / "mask.npy")
    payload = json.loads(index.read_text())
    assert len(payload["slices"]) == 5
    from ppboost import npyio

    first = payload["slices"][0]
    grid = npyio.read_grid(tmp_path / "slices" / first["image"])
    assert grid.values.shape == (10, 12)
    assert (tmp_path / "slices" / first["mask"]).exists()


def test_slicer_h5_volume_and_axis(tmp_path):
    import h5py

    vol = np.arange(3 * 4 * 5, dtype=np.float32).reshape(3, 4, 5)
    with h5py.File(tmp_path / "vol.h5", "w") as f:
        f.create_dataset("image", data=vol)
    index = slice_volume(tmp_path / "vol.h5", tmp_path / "sl", axis=1, dataset="image")
    payload = json.loads(index.read_text())
    assert len(payload["slices"]) == 4
    arr = read_npy(tmp_path / "sl" / payload["slices"][0]["image"])
    assert arr.shape == (3, 5)


def test_cli_export_and_serve(tmp_path, capsys):
    from ppboost_adapters.cli import main

    _write_images(tmp_path / "images", n=4)
    (tmp_path / "prompts.txt").write_text("bright square\nlesion core\n")
    rc = main(
        [
            "export",
            "--images",
            str(tmp_path / "images"),
            "--prompts",
            str(tmp_path / "prompts.txt"),
            "--out",
            str(tmp_path / "ds"),
        ]
    )
    assert rc == 0
    assert (tmp_path / "ds" / "manifest.json").exists()

    (tmp_path / "ex").mkdir()
    (tmp_path / "ex" / "requests.jsonl").write_text(
        '{"sample_id": "q", "x": 0, "y": 0, "w": 2, "h": 2, "image_h": 4, "image_w": 4}\n'
    )
    rc = main(["serve-segmenter", "--exchange-dir", str(tmp_path / "ex")])
    assert rc == 0
    assert (tmp_path / "ex" / "done.marker").exists()
