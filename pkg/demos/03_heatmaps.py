"""Walkthrough: keyword co-attention heatmaps.

Trains briefly on two visually distinct slides, asks about a marker, pulls
the co-attention row of the keyword token, and writes the blue-to-red
overlay next to the raw weight table.

Run:  python3 demos/03_heatmaps.py
Outputs land in demos/out/.
"""

import json
import os

import numpy as np
from PIL import Image

from slideqa.dataset import ClinicalRecord, render_open_pairs
from slideqa.features import extract_builtin
from slideqa.generation import answer_question, keyword_attention, render_heatmap
from slideqa.model import ModelConfig
from slideqa.text import build_vocab
from slideqa.tiling import SlideImage, tile
from slideqa.training import TrainConfig, train

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

TEMPLATE = "Q: What is the result of [KEY]? A: [VALUE]"


def make_slide(sid, seed, color):
    rng = np.random.default_rng(seed)
    px = np.full((96, 96, 3), 255, dtype=np.uint8)
    # tissue occupies only the lower-right region; the rest stays background
    px[32:88, 24:88] = np.clip(
        rng.integers(-25, 25, size=(56, 64, 3)) + np.array(color), 0, 255)
    return SlideImage(sid, px)


slides = {"demo_x": make_slide("demo_x", 1, (200, 40, 60)),
          "demo_y": make_slide("demo_y", 2, (40, 90, 200))}
table = {"demo_x": {"her2": "positive"}, "demo_y": {"her2": "negative"}}

tilesets, bags, samples = {}, {}, []
for sid, img in slides.items():
    tilesets[sid] = tile(img, patch_size_px=16, keep_threshold=0.3)
    bags[sid] = extract_builtin(img, tilesets[sid], dim=64, seed=17)
    samples.extend(render_open_pairs(ClinicalRecord(sid, table[sid]), [TEMPLATE], 0))

vocab = build_vocab([s.question for s in samples] + [s.answer for s in samples])
cfg = ModelConfig(vocab_size=vocab.size, enc_layers=2, dec_layers=2, hidden=64,
                  heads=4, word_dim=64, max_text=32, max_bag=64)
result = train(samples, bags, vocab,
               TrainConfig(lr=3e-4, max_steps=800, seed=0,
                           resample_templates=False, eval_every=10**9), cfg)

for sid in slides:
    question = "What is the result of her2?"
    answer, out = answer_question(bags[sid], question, vocab, result.params, cfg)
    hm = keyword_attention(out.records, None, question, "her2", bags[sid], vocab)
    print(f"{sid}: answer {answer!r}; keyword row {hm.source['row']} "
          f"(layer {hm.source['layer']}, head {hm.source['head']})")
    print(f"  weight mass {hm.weights.sum():.6f} over {len(hm.weights)} patches, "
          f"peak {hm.weights.max():.3f}")

    overlay = render_heatmap(hm, tilesets[sid], slides[sid], alpha=0.4)
    Image.fromarray(overlay).save(f"{OUT}/{sid}_heatmap.png")
    with open(f"{OUT}/{sid}_weights.json", "w") as f:
        json.dump(hm.to_json_dict(), f, indent=2)

print(f"\nwrote *_heatmap.png and *_weights.json to {OUT}/")
