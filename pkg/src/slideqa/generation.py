"""Answer generation (greedy + beam), keyword attention, heatmap rendering.

Both decoders walk the same per-step scorer: the decoder is re-run over the
full prefix each step (no KV cache at desk scale) and the last-position
log-softmax is the token distribution. PAD and BOS are never candidates;
their log-probabilities are left intact so scores stay comparable across
decoders.

Beam search uses length-unnormalized cumulative log-probabilities. Finished
hypotheses retire into a pool; expansion stops once the best live
hypothesis can no longer beat the worst retired one. Hypotheses still live
at ``max_len`` retire as truncated, which makes beam width 1 reproduce
greedy decoding token for token.

The keyword heatmap is one row of the decoder co-attention: the row of the
keyword token inside the question, averaged over the heads of a chosen
decoder layer (last layer by default) and renormalized to sum 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .features import EmbeddingBag
from .model import AttentionRecord, ModelConfig, ModelParams, decode_logits, encode_bag
from .text import BOS_ID, EOS_ID, PAD_ID, TokenSeq, Vocab, encode, tokenize

BLUE = np.array([0, 0, 255], dtype=np.float64)
RED = np.array([255, 0, 0], dtype=np.float64)


class KeywordNotFound(Exception):
    pass


class KeywordMultiToken(Exception):
    pass


class AlignmentMismatch(Exception):
    pass


@dataclass
class BeamHypothesis:
    ids: list[int]
    log_prob: float
    finished: bool  # last token is EOS (False for max_len truncation)


@dataclass
class GenerationOutput:
    answer: TokenSeq
    log_prob: float
    truncated: bool
    records: list[AttentionRecord] = field(default_factory=list)


@dataclass
class Heatmap:
    slide_id: str
    weights: np.ndarray  # one non-negative weight per bag patch, sum 1
    coords: list[tuple[int, int]]
    grid_rows: int
    grid_cols: int
    source: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "weights": [float(w) for w in self.weights],
            "coords": [[int(r), int(c)] for r, c in self.coords],
            "grid": {"rows": self.grid_rows, "cols": self.grid_cols},
            "source": dict(self.source),
        }


def _model_stepper(bag, question_ids, params: ModelParams, cfg: ModelConfig):
    """Returns (step_fn, finalize_fn) closing over the encoded memory."""
    with ad.no_grad():
        memory = encode_bag(bag, params, cfg)

    def step(answer_prefix: list[int]) -> np.ndarray:
        ids = list(question_ids) + [BOS_ID] + list(answer_prefix)
        with ad.no_grad():
            logits = decode_logits(memory, ids, params, cfg)
        return ad.log_softmax_last_row(logits.data[-1])

    def finalize(answer_ids: list[int]) -> list[AttentionRecord]:
        # one full pass over the complete sequence to capture attention
        ids = list(question_ids) + [BOS_ID] + [t for t in answer_ids if t != EOS_ID]
        records: list[AttentionRecord] = []
        with ad.no_grad():
            decode_logits(memory, ids, params, cfg, records=records)
        return records

    return step, finalize


def _max_answer_len(question_ids, cfg: ModelConfig, max_len: int) -> int:
    # prefix budget: question + BOS + answer must fit in max_text
    room = cfg.max_text - len(question_ids) - 1
    return max(0, min(max_len, room))


def generate_greedy(bag, question_ids, params: ModelParams, cfg: ModelConfig,
                    max_len: int = 16, capture_attention: bool = True) -> GenerationOutput:
    """Argmax decoding; ties go to the smallest token id."""
    question_ids = list(getattr(question_ids, "ids", question_ids))
    step, finalize = _model_stepper(bag, question_ids, params, cfg)
    budget = _max_answer_len(question_ids, cfg, max_len)

    ids: list[int] = []
    log_prob = 0.0
    truncated = True
    for _ in range(budget):
        lp = step(ids)
        choice = _best_allowed(lp)
        log_prob += float(lp[choice])
        if choice == EOS_ID:
            truncated = False
            break
        ids.append(choice)
    records = finalize(ids) if capture_attention else []
    return GenerationOutput(
        answer=TokenSeq(ids + ([] if truncated else [EOS_ID]), role="answer"),
        log_prob=log_prob, truncated=truncated, records=records)


def _best_allowed(lp: np.ndarray) -> int:
    masked = lp.copy()
    masked[PAD_ID] = -np.inf
    masked[BOS_ID] = -np.inf
    return int(np.argmax(masked))  # argmax takes the smallest index on ties


def generate_beam(bag, question_ids, params: ModelParams, cfg: ModelConfig,
                  beam_width: int = 3, max_len: int = 16,
                  step_fn=None, trace=None) -> list[BeamHypothesis]:
    """Ranked hypotheses by cumulative log-probability (no length norm).

    ``step_fn`` swaps the model scorer for a toy table in tests; ``trace``
    collects the live hypothesis set per step for the enumeration oracle.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    question_ids = list(getattr(question_ids, "ids", question_ids))
    if step_fn is None:
        step_fn, _ = _model_stepper(bag, question_ids, params, cfg)
        budget = _max_answer_len(question_ids, cfg, max_len)
    else:
        budget = max_len

    live: list[BeamHypothesis] = [BeamHypothesis([], 0.0, False)]
    pool: list[BeamHypothesis] = []
    for _ in range(budget):
        if not live:
            break
        if pool and max(h.log_prob for h in live) <= min(p.log_prob for p in pool):
            break  # nothing live can still beat the worst retired hypothesis
        candidates: list[BeamHypothesis] = []
        for hyp in live:
            lp = step_fn(hyp.ids)
            for tok in range(len(lp)):
                if tok in (PAD_ID, BOS_ID):
                    continue
                candidates.append(BeamHypothesis(
                    hyp.ids + [tok], hyp.log_prob + float(lp[tok]), tok == EOS_ID))
        candidates.sort(key=lambda h: (-h.log_prob, h.ids))
        top = candidates[:beam_width]
        live = [h for h in top if not h.finished]
        pool.extend(h for h in top if h.finished)
        if trace is not None:
            trace.append([BeamHypothesis(list(h.ids), h.log_prob, h.finished) for h in top])
    pool.extend(live)  # max_len truncation retires the rest unfinished
    pool.sort(key=lambda h: (-h.log_prob, h.ids))
    return pool[:beam_width]


def hypothesis_text(hyp: BeamHypothesis, vocab: Vocab) -> str:
    from .text import decode

    return decode(TokenSeq(hyp.ids, role="answer"), vocab)


# ---------------------------------------------------------------------------
# keyword attention + heatmaps
# ---------------------------------------------------------------------------


def keyword_attention(records: list[AttentionRecord], question_ids, question_text: str,
                      keyword: str, bag: EmbeddingBag, vocab: Vocab,
                      layer: int | None = None, head: int | None = None) -> Heatmap:
    """Heatmap from the co-attention row of the keyword token.

    The keyword must tokenize to exactly one token that occurs in the
    question. Default policy: mean over heads of the last decoder layer;
    pass ``layer``/``head`` to pin a specific matrix.
    """
    pieces = tokenize(keyword)
    if len(pieces) != 1:
        raise KeywordMultiToken(f"keyword {keyword!r} tokenizes to {len(pieces)} tokens")
    q_tokens = tokenize(question_text)
    if pieces[0] not in q_tokens:
        raise KeywordNotFound(f"keyword {keyword!r} does not occur in the question")
    row = q_tokens.index(pieces[0])  # question prefix starts the decoder stream

    co = [r for r in records if r.kind == "co"]
    if not co:
        raise AlignmentMismatch("no co-attention records captured")
    target_layer = max(r.layer for r in co) if layer is None else layer
    chosen = [r for r in co if r.layer == target_layer and (head is None or r.head == head)]
    if not chosen:
        raise AlignmentMismatch(f"no co-attention record for layer {target_layer}, head {head}")
    stack = np.stack([r.matrix[row] for r in chosen])
    weights = stack.mean(axis=0)
    if weights.shape[0] != bag.size:
        raise AlignmentMismatch(
            f"attention width {weights.shape[0]} != bag size {bag.size}")
    weights = np.maximum(weights, 0.0)
    weights = weights / weights.sum()

    rows = max(r for r, _ in bag.coords) + 1
    cols = max(c for _, c in bag.coords) + 1
    return Heatmap(
        slide_id=bag.slide_id, weights=weights, coords=list(bag.coords),
        grid_rows=rows, grid_cols=cols,
        source={"keyword": pieces[0], "row": int(row),
                "layer": int(target_layer), "head": "mean" if head is None else int(head)})


def color_ramp(t: np.ndarray) -> np.ndarray:
    """Linear blue -> red ramp over t in [0, 1]; returns float RGB."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return BLUE[None, :] * (1.0 - t[:, None]) + RED[None, :] * t[:, None]


def render_heatmap(hm: Heatmap, tiles, img, alpha: float = 0.4) -> np.ndarray:
    """Alpha-blend the patch weights over the image at patch granularity.

    Weights are min-max normalized for display; an all-equal heatmap maps
    to the mid-ramp color. Returns an (H, W, 3) uint8 overlay.
    """
    if hm.slide_id != tiles.slide_id or len(hm.weights) != len(tiles.patches):
        raise AlignmentMismatch("heatmap does not align with the tile set")
    w = np.asarray(hm.weights, dtype=np.float64)
    span = w.max() - w.min()
    norm = np.full_like(w, 0.5) if span == 0 else (w - w.min()) / span
    colors = color_ramp(norm)

    out = np.asarray(img.pixels, dtype=np.float64).copy()
    ps = tiles.patch_size_px
    for color, patch in zip(colors, tiles.patches):
        y, x = patch.y0_px, patch.x0_px
        out[y:y + ps, x:x + ps] = (1.0 - alpha) * out[y:y + ps, x:x + ps] + alpha * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# high-level ask
# ---------------------------------------------------------------------------


def answer_question(bag, question_text: str, vocab: Vocab, params: ModelParams,
                    cfg: ModelConfig, beam_width: int = 3, max_len: int = 16):
    """Encode, generate (beam or greedy), and decode back to text.

    Returns (answer_text, GenerationOutput).
    """
    from .text import decode

    q = encode(question_text, vocab, role="question")
    if beam_width <= 1:
        out = generate_greedy(bag, q, params, cfg, max_len=max_len)
    else:
        hyps = generate_beam(bag, q, params, cfg, beam_width=beam_width, max_len=max_len)
        best = hyps[0]
        _, finalize = _model_stepper(bag, q.ids, params, cfg)
        out = GenerationOutput(
            answer=TokenSeq(best.ids, role="answer"),
            log_prob=best.log_prob, truncated=not best.finished,
            records=finalize(best.ids))
    return decode(out.answer, vocab), out
