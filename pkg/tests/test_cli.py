"""CLI tests: exit codes plus the end-to-end pipeline smoke."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from slideqa.cli import cli_dispatch

from corpus import SLIDE_COLORS, make_slide


def test_unknown_subcommand_exits_1(capsys):
    assert cli_dispatch(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_no_subcommand_exits_1(capsys):
    assert cli_dispatch([]) == 1


def test_missing_required_flag_exits_1(capsys):
    assert cli_dispatch(["ask", "--question", "What?"]) == 1


def test_help_exits_0(capsys):
    assert cli_dispatch(["--help"]) == 0
    assert cli_dispatch(["tile", "--help"]) == 0


def test_runtime_error_exits_2(tmp_path, capsys):
    out = str(tmp_path / "ts.json")
    assert cli_dispatch(["tile", "--input", str(tmp_path / "missing.png"),
                         "--out", out]) == 2
    assert "error" in capsys.readouterr().err.lower()


def test_tile_all_white_is_runtime_error(tmp_path):
    path = tmp_path / "white.png"
    Image.fromarray(np.full((64, 64, 3), 255, dtype=np.uint8)).save(path)
    assert cli_dispatch(["tile", "--input", str(path), "--patch-size", "16",
                         "--out", str(tmp_path / "ts.json")]) == 2


def test_end_to_end_pipeline_smoke(tmp_path):
    """tile -> extract -> build-dataset -> vocab -> train -> eval -> ask."""
    slides_dir = tmp_path / "slides"
    tiles_dir = tmp_path / "tiles"
    bags_dir = tmp_path / "bags"
    captions_dir = tmp_path / "captions"
    fixtures_dir = tmp_path / "llm"
    data_dir = tmp_path / "data"
    ckpt_dir = tmp_path / "ckpt"
    for d in (slides_dir, tiles_dir, bags_dir, captions_dir, fixtures_dir):
        d.mkdir()

    # six synthetic slides; seed-7 hash buckets put s0 in test, s1..s5 in train
    sids = [f"s{i}" for i in range(6)]
    for i, sid in enumerate(sids):
        img = make_slide(sid, i)
        Image.fromarray(img.pixels).save(slides_dir / f"{sid}.png")

    for sid in sids:
        assert cli_dispatch([
            "tile", "--input", str(slides_dir / f"{sid}.png"),
            "--patch-size", "16", "--sat-threshold", "0.05",
            "--keep-threshold", "0.3", "--out", str(tiles_dir / f"{sid}.json")]) == 0
        assert cli_dispatch([
            "extract", "--tileset", str(tiles_dir / f"{sid}.json"),
            "--image", str(slides_dir / f"{sid}.png"),
            "--dim", "32", "--seed", "17",
            "--out", str(bags_dir / f"{sid}.w2tb")]) == 0

    clinical = tmp_path / "clinical.tsv"
    rows = ["slide_id\ther2\tpr\tsurvival_months"]
    for i, sid in enumerate(sids):
        rows.append(f"{sid}\t{'positive' if i % 2 else 'negative'}\t"
                    f"{'negative' if i % 2 else 'positive'}\t{12 + 7 * i}")
    clinical.write_text("\n".join(rows) + "\n")

    (captions_dir / "s1.txt").write_text("The slide shows a breast carcinoma specimen.")
    (fixtures_dir / "s1.txt").write_text(
        "i:'1' question:'What lesion is shown?' choice: "
        "'A: carcinoma B: adenoma C: cyst D: normal tissue' answer: A\n")

    assert cli_dispatch([
        "build-dataset", "--clinical", str(clinical),
        "--captions", str(captions_dir), "--llm", "offline",
        "--fixtures", str(fixtures_dir), "--seed", "7",
        "--out", str(data_dir)]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json",
                 "stats.json", "rejected.jsonl"):
        assert (data_dir / name).exists()
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["pair_counts"]["train"] > 0
    assert manifest["pair_counts"]["test"] > 0

    vocab_path = tmp_path / "vocab.json"
    assert cli_dispatch(["vocab", "--corpus", str(data_dir / "train.jsonl"),
                         "--min-count", "1", "--out", str(vocab_path)]) == 0

    config_path = tmp_path / "train.json"
    config_path.write_text(json.dumps({
        "train": {"lr": 1e-3, "max_steps": 50, "seed": 0, "eval_every": 25,
                  "resample_templates": False},
        "model": {"enc_layers": 1, "dec_layers": 1, "hidden": 16, "heads": 2,
                  "word_dim": 16, "max_text": 32, "max_bag": 32},
    }))
    assert cli_dispatch([
        "train", "--data", str(data_dir / "train.jsonl"),
        "--bags", str(bags_dir), "--vocab", str(vocab_path),
        "--config", str(config_path), "--out", str(ckpt_dir)]) == 0
    assert (ckpt_dir / "model.w2tc").exists()
    assert (ckpt_dir / "vocab.json").exists()
    curve = (ckpt_dir / "curve.csv").read_text().strip().splitlines()
    assert curve[0] == "step,train_loss,val_loss"
    assert len(curve) == 51

    report_path = tmp_path / "report.json"
    assert cli_dispatch([
        "eval", "--ckpt", str(ckpt_dir), "--data", str(data_dir / "test.jsonl"),
        "--bags", str(bags_dir), "--clinical", str(clinical),
        "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert set(report) == {"notes", "nlg", "fcc", "tasks", "c_index", "counts"}
    assert report["counts"]["evaluated"] > 0

    answer_path = tmp_path / "answer.json"
    overlay_path = tmp_path / "overlay.png"
    assert cli_dispatch([
        "ask", "--ckpt", str(ckpt_dir), "--bag", str(bags_dir / "s1.w2tb"),
        "--question", "What is the result of her2?", "--beam", "3",
        "--heatmap-keyword", "her2",
        "--image", str(slides_dir / "s1.png"), "--tileset", str(tiles_dir / "s1.json"),
        "--overlay-out", str(overlay_path),
        "--out", str(answer_path)]) == 0
    answer = json.loads(answer_path.read_text())
    assert set(answer) == {"answer", "log_prob", "truncated", "heatmap"}
    hm = answer["heatmap"]
    assert abs(sum(hm["weights"]) - 1.0) <= 1e-5
    assert len(hm["weights"]) == len(hm["coords"])
    assert overlay_path.exists()
    with Image.open(overlay_path) as im:
        assert im.size == (64, 64)
