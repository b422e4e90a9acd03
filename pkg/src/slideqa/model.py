"""Bag encoder and co-attention text decoder.

The encoder runs multi-head self-attention blocks over the patch-embedding
bag with no positional encoding, so it is permutation-equivariant: the bag
is a set. The decoder consumes the token stream ``question ++ BOS ++
answer`` (question positions are context only and masked out of the loss),
applying causal self-attention over text and cross-attention with text as
queries and the encoded bag as keys/values. Attention scores are scaled by
1/sqrt(d) with d the per-head width.

Word embeddings live in a trainable table of width ``word_dim`` and are
mapped into the hidden size by a learned linear alignment before entering
the decoder; text positions use a learned embedding table, patches use none.

Checkpoints are a single file: magic 'W2TC' | u32 header length | UTF-8
JSON header (config, vocab hash, step, tensor manifest) | float32
little-endian blob of all parameters in manifest order.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import EmbeddingBag
from .text import BOS_ID, EOS_ID, PAD_ID

CKPT_MAGIC = b"W2TC"
CKPT_VERSION = 1

INIT_STD = 0.02
NEG_INF = -1e9  # additive mask value; keeps softmax finite


class PrefixTooLong(Exception):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    enc_layers: int = 2
    dec_layers: int = 2
    hidden: int = 64
    heads: int = 4
    word_dim: int = 64
    bag_dim: int | None = None  # input projection added when != hidden
    max_bag: int = 4096
    max_text: int = 64
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("vocab_size", "enc_layers", "dec_layers", "hidden", "heads",
                     "word_dim", "max_bag", "max_text"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden size must be divisible by the head count")
        if self.bag_dim is None:
            self.bag_dim = self.hidden

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def desk_config(vocab_size: int, **overrides) -> ModelConfig:
    """Small configuration for CPU-scale experiments and CI."""
    return ModelConfig(vocab_size=vocab_size, **overrides)


def full_config(vocab_size: int, **overrides) -> ModelConfig:
    """Full-scale configuration: 3 layers, hidden 512, 4 heads."""
    base = dict(enc_layers=3, dec_layers=3, hidden=512, heads=4, word_dim=512,
                max_bag=16384, max_text=64)
    base.update(overrides)
    return ModelConfig(vocab_size=vocab_size, **base)


@dataclass
class AttentionRecord:
    """One attention probability matrix captured during a forward pass."""

    kind: str  # "enc_self" | "dec_self" | "co"
    layer: int
    head: int
    matrix: np.ndarray  # rows are queries; each row sums to 1


def canonical_param_order(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared name/shape manifest; serialization follows this order."""
    l, k, v = cfg.hidden, cfg.word_dim, cfg.vocab_size
    order: list[tuple[str, tuple[int, ...]]] = [
        ("word_emb", (v, k)),
        ("align_w", (k, l)),
        ("align_b", (l,)),
        ("pos_emb", (cfg.max_text, l)),
    ]
    if cfg.bag_dim != l:
        order += [("input_proj_w", (cfg.bag_dim, l)), ("input_proj_b", (l,))]
    for i in range(cfg.enc_layers):
        p = f"enc{i}"
        order += [(f"{p}.attn.{w}", (l, l)) for w in ("wq", "wk", "wv", "wo")]
        order += [(f"{p}.ln1.g", (l,)), (f"{p}.ln1.b", (l,)),
                  (f"{p}.ff.w1", (l, 4 * l)), (f"{p}.ff.b1", (4 * l,)),
                  (f"{p}.ff.w2", (4 * l, l)), (f"{p}.ff.b2", (l,)),
                  (f"{p}.ln2.g", (l,)), (f"{p}.ln2.b", (l,))]
    for i in range(cfg.dec_layers):
        p = f"dec{i}"
        order += [(f"{p}.self.{w}", (l, l)) for w in ("wq", "wk", "wv", "wo")]
        order += [(f"{p}.ln1.g", (l,)), (f"{p}.ln1.b", (l,))]
        order += [(f"{p}.co.{w}", (l, l)) for w in ("wq", "wk", "wv", "wo")]
        order += [(f"{p}.ln2.g", (l,)), (f"{p}.ln2.b", (l,)),
                  (f"{p}.ff.w1", (l, 4 * l)), (f"{p}.ff.b1", (4 * l,)),
                  (f"{p}.ff.w2", (4 * l, l)), (f"{p}.ff.b2", (l,)),
                  (f"{p}.ln3.g", (l,)), (f"{p}.ln3.b", (l,))]
    order += [("out_w", (l, v)), ("out_b", (v,))]
    return order


class ModelParams:
    """All trainable tensors, keyed by name, in canonical order."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Tensor]):
        self.config = cfg
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def blob(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(t.data, dtype="<f4").tobytes()
            for t in self.tensors.values())

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.blob()).hexdigest()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {
            n: Tensor(t.data.astype(dtype), requires_grad=True)
            for n, t in self.tensors.items()})


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in canonical_param_order(cfg):
        if name.endswith((".b", ".b1", ".b2")) or name in ("align_b", "input_proj_b", "out_b"):
            data = np.zeros(shape)
        elif name.endswith(".g"):
            data = np.ones(shape)
        else:
            data = rng.normal(0.0, INIT_STD, size=shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    return ModelParams(cfg, tensors)


def _attention(x_q, x_kv, p, prefix, cfg, mask=None, records=None, kind="", layer=0):
    """Multi-head scaled dot-product attention with output projection."""
    q_all = ad.matmul(x_q, p[f"{prefix}.wq"])
    k_all = ad.matmul(x_kv, p[f"{prefix}.wk"])
    v_all = ad.matmul(x_kv, p[f"{prefix}.wv"])
    dh = cfg.head_dim
    inv_sqrt_d = 1.0 / math.sqrt(dh)
    head_outs = []
    for h in range(cfg.heads):
        q = ad.slice_cols(q_all, h * dh, (h + 1) * dh)
        k = ad.slice_cols(k_all, h * dh, (h + 1) * dh)
        v = ad.slice_cols(v_all, h * dh, (h + 1) * dh)
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_d)
        if mask is not None:
            scores = ad.add_constant(scores, mask)
        probs = ad.softmax_rows(scores)
        if records is not None:
            records.append(AttentionRecord(kind, layer, h, probs.data.copy()))
        head_outs.append(ad.matmul(probs, v))
    merged = ad.concat_cols(head_outs) if cfg.heads > 1 else head_outs[0]
    return ad.matmul(merged, p[f"{prefix}.wo"])


def _feed_forward(x, p, prefix):
    h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _residual_norm(x, delta, p, prefix, eps):
    return ad.layer_norm(ad.add(x, delta), p[f"{prefix}.g"], p[f"{prefix}.b"], eps)


def encode_bag(bag, params: ModelParams, cfg: ModelConfig, records=None) -> Tensor:
    """Encode the patch bag into an (M, hidden) memory."""
    emb = bag.embeddings if isinstance(bag, EmbeddingBag) else np.asarray(bag)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ad.ShapeMismatch(f"bag must be a non-empty matrix, got {emb.shape}")
    if emb.shape[0] > cfg.max_bag:
        raise ad.ShapeMismatch(f"bag of {emb.shape[0]} patches exceeds max_bag={cfg.max_bag}")
    if emb.shape[1] != cfg.bag_dim:
        raise ad.ShapeMismatch(
            f"bag width {emb.shape[1]} does not match configured bag_dim {cfg.bag_dim}")

    dtype = params["out_w"].dtype
    x = Tensor(emb.astype(dtype))
    if cfg.bag_dim != cfg.hidden:
        x = ad.add(ad.matmul(x, params["input_proj_w"]), params["input_proj_b"])
    for i in range(cfg.enc_layers):
        p = f"enc{i}"
        attn = _attention(x, x, params, f"{p}.attn", cfg,
                          records=records, kind="enc_self", layer=i)
        x = _residual_norm(x, attn, params, f"{p}.ln1", cfg.ln_eps)
        x = _residual_norm(x, _feed_forward(x, params, f"{p}.ff"), params, f"{p}.ln2", cfg.ln_eps)
    return x


def _causal_mask(n: int, dtype) -> np.ndarray:
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def decode_logits(memory: Tensor, ids: list[int], params: ModelParams,
                  cfg: ModelConfig, records=None) -> Tensor:
    """Run the decoder over the whole token stream; returns (T, V) logits."""
    if len(ids) == 0:
        raise PrefixTooLong("decoder input must be non-empty")
    if len(ids) > cfg.max_text:
        raise PrefixTooLong(f"{len(ids)} tokens exceed max_text={cfg.max_text}")
    t = len(ids)
    dtype = params["out_w"].dtype

    emb = ad.embedding_lookup(params["word_emb"], ids)
    x = ad.add(ad.matmul(emb, params["align_w"]), params["align_b"])
    x = ad.add(x, ad.slice_rows(params["pos_emb"], 0, t))

    mask = _causal_mask(t, dtype)
    for i in range(cfg.dec_layers):
        p = f"dec{i}"
        self_attn = _attention(x, x, params, f"{p}.self", cfg, mask=mask,
                               records=records, kind="dec_self", layer=i)
        x = _residual_norm(x, self_attn, params, f"{p}.ln1", cfg.ln_eps)
        co = _attention(x, memory, params, f"{p}.co", cfg,
                        records=records, kind="co", layer=i)
        x = _residual_norm(x, co, params, f"{p}.ln2", cfg.ln_eps)
        x = _residual_norm(x, _feed_forward(x, params, f"{p}.ff"), params, f"{p}.ln3", cfg.ln_eps)
    return ad.add(ad.matmul(x, params["out_w"]), params["out_b"])


def decode_step(memory: Tensor, prefix_ids: list[int], params: ModelParams,
                cfg: ModelConfig, capture_attention: bool = False):
    """Next-token logits for the last position of ``prefix_ids``.

    Returns ``(logits_1d, records)``; ``records`` holds every attention
    matrix of the pass when ``capture_attention`` is set, else it is empty.
    """
    records: list[AttentionRecord] = [] if capture_attention else None
    logits = decode_logits(memory, prefix_ids, params, cfg, records=records)
    last = ad.slice_rows(logits, len(prefix_ids) - 1, len(prefix_ids))
    return last, (records or [])


def forward_nll(bag, question_ids, answer_ids, params: ModelParams,
                cfg: ModelConfig, records=None) -> Tensor:
    """Teacher-forced loss over ``question ++ BOS ++ answer``.

    ``answer_ids`` must end with EOS. Only positions predicting answer
    tokens (and the terminal EOS) contribute; question positions are
    conditioning context with PAD targets.
    """
    question_ids = list(getattr(question_ids, "ids", question_ids))
    answer_ids = list(getattr(answer_ids, "ids", answer_ids))
    if not answer_ids or answer_ids[-1] != EOS_ID:
        raise ValueError("answer id sequence must end with EOS")
    dec_input = question_ids + [BOS_ID] + answer_ids[:-1]
    targets = [PAD_ID] * len(question_ids) + answer_ids
    memory = encode_bag(bag, params, cfg, records=records)
    logits = decode_logits(memory, dec_input, params, cfg, records=records)
    return ad.nll_loss(logits, targets, ignore_id=PAD_ID)


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, params: ModelParams, vocab_hash: str, step: int) -> None:
    manifest = [[name, list(t.shape)] for name, t in params.named()]
    header = json.dumps({
        "version": CKPT_VERSION,
        "config": asdict(params.config),
        "vocab_hash": vocab_hash,
        "step": step,
        "tensors": manifest,
    }).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CKPT_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(params.blob())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint_dir(directory: str, params: ModelParams, vocab, step: int) -> None:
    """Write model.w2tc plus the vocabulary the checkpoint was trained with."""
    os.makedirs(directory, exist_ok=True)
    vocab.save(os.path.join(directory, "vocab.json"))
    save_checkpoint(os.path.join(directory, "model.w2tc"), params,
                    vocab_hash=vocab.content_hash(), step=step)


def load_checkpoint_dir(directory: str):
    """Load (params, vocab, header); validates the vocab hash and size."""
    from .text import Vocab

    vocab = Vocab.load(os.path.join(directory, "vocab.json"))
    params, header = load_checkpoint(os.path.join(directory, "model.w2tc"))
    if header["vocab_hash"] != vocab.content_hash():
        raise ValueError("checkpoint was trained with a different vocabulary")
    if params.config.vocab_size != vocab.size:
        raise ValueError("vocabulary size does not match the checkpoint config")
    return params, vocab, header


def load_checkpoint(path: str) -> tuple[ModelParams, dict]:
    """Load and shape-validate a checkpoint; returns (params, header)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path!r} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    cfg = ModelConfig(**header["config"])

    expected = canonical_param_order(cfg)
    declared = [(name, tuple(shape)) for name, shape in header["tensors"]]
    if declared != expected:
        raise ValueError("checkpoint tensor manifest does not match its config")

    at = 8 + hlen
    tensors: dict[str, Tensor] = {}
    for name, shape in expected:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=at).reshape(shape)
        tensors[name] = Tensor(arr.copy(), requires_grad=True)
        at += n * 4
    if at != len(blob):
        raise ValueError("checkpoint payload size does not match its manifest")
    return ModelParams(cfg, tensors), header
