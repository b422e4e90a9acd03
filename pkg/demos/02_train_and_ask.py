"""Walkthrough: train a small model and query it.

Four synthetic slides with distinct color signatures, a handful of
template-rendered QA pairs, a short Adam run, then greedy and beam
answers side by side.

Run:  python3 demos/02_train_and_ask.py   (about 15 s on one core)
"""

import numpy as np

from slideqa.dataset import ClinicalRecord, render_open_pairs
from slideqa.features import extract_builtin
from slideqa.generation import answer_question
from slideqa.model import ModelConfig
from slideqa.text import build_vocab
from slideqa.tiling import SlideImage, tile
from slideqa.training import TrainConfig, train

TEMPLATE = "Q: What is the result of [KEY]? A: [VALUE]"
TABLE = [
    ("slide_a", {"her2": "positive", "pr": "negative"}),
    ("slide_b", {"her2": "negative", "pr": "positive"}),
    ("slide_c", {"her2": "positive", "pr": "positive"}),
    ("slide_d", {"her2": "negative", "pr": "negative"}),
]
COLORS = [(200, 30, 40), (40, 180, 60), (50, 70, 210), (210, 190, 40)]


def make_slide(sid, idx):
    rng = np.random.default_rng(1000 + idx)
    px = np.full((64, 64, 3), 255, dtype=np.uint8)
    tissue = rng.integers(-25, 25, size=(48, 48, 3)) + np.array(COLORS[idx])
    if idx % 2:  # alternate texture keeps neighboring bags well apart
        tissue[::4] = np.clip(np.array(COLORS[idx]) * 0.55, 0, 255)
    px[8:56, 8:56] = np.clip(tissue, 0, 255).astype(np.uint8)
    return SlideImage(sid, px)


bags, samples = {}, []
for i, (sid, values) in enumerate(TABLE):
    img = make_slide(sid, i)
    ts = tile(img, patch_size_px=16, keep_threshold=0.3)
    bags[sid] = extract_builtin(img, ts, dim=64, seed=17)
    samples.extend(render_open_pairs(ClinicalRecord(sid, values), [TEMPLATE], rng_seed=0))

vocab = build_vocab([s.question for s in samples] + [s.answer for s in samples])
print(f"{len(samples)} QA pairs over {len(bags)} slides, vocabulary of {vocab.size} ids")

cfg = ModelConfig(vocab_size=vocab.size, enc_layers=2, dec_layers=2, hidden=64,
                  heads=4, word_dim=64, max_text=32, max_bag=32)
result = train(samples, bags, vocab,
               TrainConfig(lr=3e-4, max_steps=3500, seed=0,
                           resample_templates=False, eval_every=10**9), cfg)
losses = [l for _, l, _ in result.curve]
print(f"loss: start {np.mean(losses[:25]):.3f} -> end {np.mean(losses[-25:]):.3f}\n")

for sid, _ in TABLE:
    for key in ("her2", "pr"):
        q = f"What is the result of {key}?"
        greedy_ans, g = answer_question(bags[sid], q, vocab, result.params, cfg, beam_width=1)
        beam_ans, b = answer_question(bags[sid], q, vocab, result.params, cfg, beam_width=3)
        marker = "" if greedy_ans == beam_ans else "   (beam differs!)"
        print(f"{sid} {key:>4}: greedy={greedy_ans!r} (logp {g.log_prob:.2f})  "
              f"beam3={beam_ans!r} (logp {b.log_prob:.2f}){marker}")
