"""Synthetic desk-scale corpus: 8 slides, 20 open QA pairs.

Slides are 64x64 RGB images with per-slide color signatures and a white
border band, tiled at patch 16, embedded at width 64 so the desk model
needs no input projection. The QA pairs are rendered from the base
template over a small clinical table; the whole vocabulary stays under 64
ids.
"""

import numpy as np

from slideqa.dataset import ClinicalRecord, render_open_pairs
from slideqa.features import extract_builtin
from slideqa.text import build_vocab
from slideqa.tiling import SlideImage, tile

BASE_TEMPLATE = "Q: What is the result of [KEY]? A: [VALUE]"

# 4 slides with 3 keys + 4 slides with 2 keys = 20 pairs
CLINICAL = [
    ("slide_00", {"her2": "positive", "pr": "negative", "subtype": "invasive ductal carcinoma"}),
    ("slide_01", {"her2": "negative", "pr": "positive", "subtype": "invasive lobular carcinoma"}),
    ("slide_02", {"her2": "positive", "pr": "positive", "grade": "2"}),
    ("slide_03", {"her2": "negative", "pr": "negative", "grade": "3"}),
    ("slide_04", {"margins": "clear", "survival_months": "34"}),
    ("slide_05", {"margins": "involved", "survival_months": "12"}),
    ("slide_06", {"subtype": "invasive ductal carcinoma", "survival_months": "48"}),
    ("slide_07", {"subtype": "invasive lobular carcinoma", "grade": "1"}),
]


# Strongly separated color signatures so the frozen descriptor keeps the
# eight bags far apart; adjacent clinical values must not share a look.
SLIDE_COLORS = [
    (200, 30, 40), (40, 180, 60), (50, 70, 210), (210, 190, 40),
    (180, 40, 190), (40, 190, 200), (120, 70, 20), (90, 110, 120),
]


def make_slide(slide_id: str, index: int) -> SlideImage:
    rng = np.random.default_rng(1000 + index)
    px = np.full((64, 64, 3), 255, dtype=np.uint8)
    base = np.array(SLIDE_COLORS[index])
    tissue = rng.integers(-25, 25, size=(48, 48, 3)) + base
    if index % 2:  # alternate texture: horizontal banding
        tissue[::4] = np.clip(base * 0.55, 0, 255)
    px[8:56, 8:56] = np.clip(tissue, 0, 255).astype(np.uint8)
    return SlideImage(slide_id, px)


def build_corpus(dim: int = 64, seed: int = 17):
    slides, tilesets, bags, records = {}, {}, {}, []
    for i, (sid, values) in enumerate(CLINICAL):
        img = make_slide(sid, i)
        ts = tile(img, patch_size_px=16, sat_threshold=0.05, keep_threshold=0.3)
        slides[sid] = img
        tilesets[sid] = ts
        bags[sid] = extract_builtin(img, ts, dim=dim, seed=seed)
        records.append(ClinicalRecord(sid, dict(values)))

    samples = []
    for rec in records:
        samples.extend(render_open_pairs(rec, [BASE_TEMPLATE], rng_seed=0))
    assert len(samples) == 20

    corpus_text = [s.question for s in samples] + [s.answer for s in samples]
    vocab = build_vocab(corpus_text, min_count=1)
    assert vocab.size <= 64
    return {
        "slides": slides,
        "tilesets": tilesets,
        "bags": bags,
        "records": records,
        "samples": samples,
        "vocab": vocab,
    }
