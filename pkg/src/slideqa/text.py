"""Word-level tokenization, vocabulary, and id sequences.

Word-level (not subword) on purpose: the keyword-attention path indexes
whole entity tokens like "her2", which subword units would split. Reserved
ids PAD=0, BOS=1, EOS=2, UNK=3 are fixed and never remapped.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]

_SPLIT_PUNCT = set(".,;:?!()")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split ``.,;:?!()`` into own tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        current = ""
        for ch in chunk:
            if ch in _SPLIT_PUNCT:
                if current:
                    out.append(current)
                    current = ""
                out.append(ch)
            else:
                current += ch
        if current:
            out.append(current)
    return out


@dataclass
class TokenSeq:
    """Ids plus the role they were encoded for (question/answer/decoder-input)."""

    ids: list[int]
    role: str = "question"

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocab:
    """Token/id bijection over the non-reserved tokens."""

    tokens: list[str] = field(default_factory=list)  # ids 4.. in order
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {t: i + len(RESERVED) for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(RESERVED) + len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if 0 <= idx < len(RESERVED):
            return RESERVED[idx]
        j = idx - len(RESERVED)
        if 0 <= j < len(self.tokens):
            return self.tokens[j]
        raise KeyError(f"id {idx} outside vocabulary of size {self.size}")

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def to_json_dict(self) -> dict:
        return {"reserved": list(RESERVED), "tokens": list(self.tokens)}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Vocab":
        if d.get("reserved") != RESERVED:
            raise ValueError("vocabulary file has an incompatible reserved-token header")
        return cls(tokens=list(d["tokens"]))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, ensure_ascii=False, indent=0)

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_vocab(corpus: list[str], min_count: int = 1) -> Vocab:
    """Frequency-ordered vocabulary; ties broken lexicographically.

    Tokens below ``min_count`` stay unmapped and encode as UNK.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(tokenize(line))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(tokens=kept)


def encode(text: str, vocab: Vocab, role: str = "question") -> TokenSeq:
    """Tokenize and map to ids; answers get a trailing EOS."""
    ids = [vocab.id_of(t) for t in tokenize(text)]
    if role == "answer":
        ids.append(EOS_ID)
    return TokenSeq(ids=ids, role=role)


def decode(seq: TokenSeq, vocab: Vocab) -> str:
    """Inverse of ``encode`` up to case folding; EOS/PAD/BOS are stripped."""
    words = []
    for i in seq.ids:
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        words.append(vocab.token_of(i))
    return " ".join(words)
