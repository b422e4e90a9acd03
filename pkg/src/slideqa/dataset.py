"""QA corpus construction: templates over clinical tables, LLM-generated
multiple-choice pairs, filtering, slide-level splits, and statistics.

Open-ended pairs come from a key/value clinical table rendered through
question templates; close-ended pairs are parsed from an LLM response
(offline fixture files in CI, an HTTP client otherwise). Filtering drops
defective pairs with a per-rule reason. Splits are assigned per slide by
seeded hashing, so growing the corpus never moves an existing slide to a
different split.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .text import tokenize

# Clinical indexes a reader could plausibly infer from the slide itself;
# everything else is dropped by the banned-key filter.
INFERABLE_KEYS = (
    "subtype", "her2", "pr", "er", "grade", "margins", "stage", "survival_months",
)
BANNED_KEYS = frozenset({
    "age", "gender", "race", "ethnicity", "days_to_birth", "patient_id", "event",
})

YES_NO_STARTERS = frozenset({
    "is", "are", "was", "were", "does", "do", "did", "has", "have", "can",
})

ANSWER_LETTERS = ("A", "B", "C", "D")

# Proportions of the reference 977-slide cohort (804/87/86).
DEFAULT_SPLIT_RATIOS = (804 / 977, 87 / 977, 86 / 977)

QA_PROMPT = (
    "Ask 6 questions about the content and generate four options for each "
    "question. The output should use the following template: i:\u2018the "
    "question index\u2019 question:\u2018the generate question\u2019 choice: "
    "\u2018A: option content B: option content C: option content D: option "
    "content\u2019 answer: The correct option."
)


class NoTemplates(Exception):
    pass


class PromptError(Exception):
    pass


class NoValidBlocks(Exception):
    pass


@dataclass
class ClinicalRecord:
    slide_id: str
    values: dict[str, str] = field(default_factory=dict)


@dataclass
class QASample:
    slide_id: str
    question: str
    answer: str
    subset: str  # "open" | "closed"
    choices: list[str] | None = None
    gold_choice: str | None = None
    entity_key: str | None = None
    template_id: int | None = None

    def to_json_dict(self) -> dict:
        d = {"slide_id": self.slide_id, "question": self.question,
             "answer": self.answer, "subset": self.subset}
        for k in ("choices", "gold_choice", "entity_key", "template_id"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "QASample":
        return cls(
            slide_id=d["slide_id"], question=d["question"], answer=d["answer"],
            subset=d["subset"], choices=d.get("choices"),
            gold_choice=d.get("gold_choice"), entity_key=d.get("entity_key"),
            template_id=d.get("template_id"))


def save_jsonl(samples, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_json_dict(), ensure_ascii=False) + "\n")


def load_jsonl(path: str) -> list[QASample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(QASample.from_json_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# open-ended pairs from clinical tables
# ---------------------------------------------------------------------------


def read_clinical_tsv(path: str) -> list[ClinicalRecord]:
    """TSV with a header row: slide_id plus clinical keys; empty cells skipped."""
    records = []
    with open(path, encoding="utf-8") as f:
        reader = csv.DictReader(f, delimiter="\t")
        if not reader.fieldnames or "slide_id" not in reader.fieldnames:
            raise ValueError("clinical TSV needs a header row with a slide_id column")
        for row in reader:
            values = {k: v.strip() for k, v in row.items()
                      if k != "slide_id" and v is not None and v.strip() != ""}
            records.append(ClinicalRecord(slide_id=row["slide_id"], values=values))
    return records


def load_templates(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        templates = json.load(f)
    validate_templates(templates)
    return templates


def validate_templates(templates) -> None:
    if not isinstance(templates, list) or not templates:
        raise NoTemplates("template file must hold a non-empty JSON list")
    for t in templates:
        if "[KEY]" not in t or "[VALUE]" not in t or " A: " not in t:
            raise NoTemplates(f"template {t!r} must contain [KEY], [VALUE] and an ' A: ' divider")


def _split_template(template: str) -> tuple[str, str]:
    q_part, _, a_part = template.partition(" A: ")
    q_part = q_part.strip()
    if q_part.startswith("Q:"):
        q_part = q_part[2:].strip()
    return q_part, a_part.strip()


def render_question(template: str, key: str) -> str:
    return _split_template(template)[0].replace("[KEY]", key)


def render_answer(template: str, value: str) -> str:
    return _split_template(template)[1].replace("[VALUE]", value)


def render_open_pairs(record: ClinicalRecord, templates: list[str], rng_seed: int) -> list[QASample]:
    """One pair per inferable key present in the record; template drawn per pair."""
    validate_templates(templates)
    rng = np.random.default_rng(rng_seed)
    out = []
    for key in INFERABLE_KEYS:
        if key not in record.values:
            continue
        idx = int(rng.integers(0, len(templates)))
        t = templates[idx]
        out.append(QASample(
            slide_id=record.slide_id,
            question=render_question(t, key),
            answer=render_answer(t, record.values[key]),
            subset="open",
            entity_key=key,
            template_id=idx,
        ))
    return out


# ---------------------------------------------------------------------------
# close-ended pairs via an LLM (offline fixtures in CI)
# ---------------------------------------------------------------------------


def build_llm_prompt(caption: str) -> str:
    """The fixed QA-generation instruction followed by the caption."""
    if not caption or not caption.strip():
        raise PromptError("cannot build a prompt from an empty caption")
    return QA_PROMPT + "\n\n" + caption.strip()


class OfflineFixtureLLM:
    """Reads pre-generated responses from ``<dir>/<slide_id>.txt``."""

    def __init__(self, fixtures_dir: str):
        self.fixtures_dir = fixtures_dir

    def generate_qa_text(self, slide_id: str, caption: str) -> str | None:
        build_llm_prompt(caption)  # same validation as the live path
        path = f"{self.fixtures_dir}/{slide_id}.txt"
        try:
            with open(path, encoding="utf-8") as f:
                return f.read()
        except FileNotFoundError:
            return None


class HttpLLM:
    """POSTs {"prompt": ...} as JSON and expects {"text": ...} back.

    The API key is read from the environment, never from config files.
    """

    def __init__(self, endpoint: str, api_key_env: str = "SLIDEQA_LLM_KEY", timeout: float = 60.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate_qa_text(self, slide_id: str, caption: str) -> str | None:
        import os

        body = json.dumps({"prompt": build_llm_prompt(caption)}).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body,
                                     headers={"Content-Type": "application/json"})
        key = os.environ.get(self.api_key_env)
        if key:
            req.add_header("Authorization", f"Bearer {key}")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))["text"]


_BLOCK_RE = re.compile(r"(?:^|\n)\s*i\s*:", re.IGNORECASE)
_QUOTES = "\u2018\u2019'\""


def _field_after(block: str, name: str, stop_names: list[str]) -> str | None:
    m = re.search(rf"{name}\s*:", block, re.IGNORECASE)
    if not m:
        return None
    rest = block[m.end():]
    stop = len(rest)
    for s in stop_names:
        sm = re.search(rf"{s}\s*:", rest, re.IGNORECASE)
        if sm:
            stop = min(stop, sm.start())
    return rest[:stop].strip().strip(_QUOTES).strip()


def _parse_choices(raw: str) -> list[str] | None:
    # 'A: ... B: ... C: ... D: ...' -> four non-empty option texts
    marks = [(m.group(1), m.start(), m.end())
             for m in re.finditer(r"\b([A-D])\s*[:.]", raw)]
    if [m[0] for m in marks] != list(ANSWER_LETTERS):
        return None
    opts = []
    for i, (_, _, end) in enumerate(marks):
        stop = marks[i + 1][1] if i + 1 < len(marks) else len(raw)
        text = raw[end:stop].strip().strip(_QUOTES).strip()
        if not text:
            return None
        opts.append(text)
    return opts


def parse_llm_response(text: str, slide_id: str = "") -> tuple[list[QASample], list[str]]:
    """Extract up to 6 close-ended pairs; malformed blocks are skipped.

    Returns (samples, per-block diagnostics). Raises NoValidBlocks when
    nothing parses.
    """
    pieces = _BLOCK_RE.split(text)
    samples: list[QASample] = []
    diagnostics: list[str] = []
    for n, block in enumerate(pieces[1:], start=1):
        if len(samples) >= 6:
            diagnostics.append(f"block {n}: ignored, already have 6 pairs")
            continue
        question = _field_after(block, "question", ["choice", "answer"])
        raw_choices = _field_after(block, "choice", ["answer"])
        raw_answer = _field_after(block, "answer", [])
        if not question:
            diagnostics.append(f"block {n}: missing question")
            continue
        if not raw_choices:
            diagnostics.append(f"block {n}: missing choices")
            continue
        choices = _parse_choices(raw_choices)
        if choices is None:
            diagnostics.append(f"block {n}: could not parse exactly 4 options A-D")
            continue
        letter = None
        if raw_answer:
            m = re.search(r"\b([A-Z])\b", raw_answer)
            letter = m.group(1) if m else None
        if letter not in ANSWER_LETTERS:
            diagnostics.append(f"block {n}: answer letter {letter!r} not in A-D")
            continue
        samples.append(QASample(
            slide_id=slide_id,
            question=question,
            answer=choices[ANSWER_LETTERS.index(letter)],
            subset="closed",
            choices=choices,
            gold_choice=letter,
        ))
    if not samples:
        raise NoValidBlocks("no block of the response parsed into a valid pair")
    return samples, diagnostics


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


@dataclass
class FilterRules:
    max_question_tokens: int = 32
    banned_keys: frozenset = BANNED_KEYS


def filter_pairs(samples, rules: FilterRules | None = None):
    """Apply the defect rules; returns (kept, [(sample, rule_id), ...])."""
    rules = rules or FilterRules()
    kept: list[QASample] = []
    rejected: list[tuple[QASample, str]] = []
    seen: set[tuple[str, tuple]] = set()

    for s in samples:
        rule = None
        q_tokens = tokenize(s.question)
        if not s.question.strip() or not q_tokens:
            rule = "empty_question"
        elif not s.answer or not s.answer.strip():
            rule = "empty_answer"
        elif len(q_tokens) > rules.max_question_tokens:
            rule = "question_too_long"
        elif s.subset == "open" and s.entity_key in rules.banned_keys:
            rule = "banned_key"
        elif s.subset == "closed":
            if (not s.choices or len(s.choices) != 4 or s.gold_choice not in ANSWER_LETTERS):
                rule = "choice_structure"
            elif not s.choices[ANSWER_LETTERS.index(s.gold_choice)].strip():
                rule = "gold_choice_empty"
        if rule is None:
            key = (s.slide_id, tuple(q_tokens))
            if key in seen:
                rule = "duplicate_question"
            else:
                seen.add(key)
        if rule is None:
            kept.append(s)
        else:
            rejected.append((s, rule))
    return kept, rejected


# ---------------------------------------------------------------------------
# slide-level splitting
# ---------------------------------------------------------------------------


@dataclass
class SplitManifest:
    train_slides: list[str]
    val_slides: list[str]
    test_slides: list[str]
    pair_counts: dict = field(default_factory=dict)

    def split_of(self, slide_id: str) -> str:
        if slide_id in self._sets()[0]:
            return "train"
        if slide_id in self._sets()[1]:
            return "val"
        if slide_id in self._sets()[2]:
            return "test"
        raise KeyError(slide_id)

    def _sets(self):
        return set(self.train_slides), set(self.val_slides), set(self.test_slides)

    def to_json_dict(self) -> dict:
        return {"train_slides": self.train_slides, "val_slides": self.val_slides,
                "test_slides": self.test_slides, "pair_counts": self.pair_counts}


def _hash_fraction(seed: int, slide_id: str) -> float:
    digest = hashlib.sha256(f"{seed}:{slide_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def split(samples, ratios=DEFAULT_SPLIT_RATIOS, seed: int = 7) -> SplitManifest:
    """Assign whole slides to train/val/test by seeded hash buckets.

    Bucket membership depends only on (seed, slide_id), so adding slides to
    the corpus never moves existing slides between splits.
    """
    total = sum(ratios)
    c1 = ratios[0] / total
    c2 = (ratios[0] + ratios[1]) / total
    slides = sorted({s.slide_id for s in samples})
    buckets: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for sid in slides:
        u = _hash_fraction(seed, sid)
        buckets["train" if u < c1 else "val" if u < c2 else "test"].append(sid)
    counts = {name: 0 for name in buckets}
    member = {sid: name for name, ids in buckets.items() for sid in ids}
    for s in samples:
        counts[member[s.slide_id]] += 1
    return SplitManifest(
        train_slides=buckets["train"], val_slides=buckets["val"],
        test_slides=buckets["test"], pair_counts=counts)


def split_subset(samples, manifest: SplitManifest, name: str) -> list[QASample]:
    wanted = set(getattr(manifest, f"{name}_slides"))
    return [s for s in samples if s.slide_id in wanted]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def question_category(question: str) -> str:
    tokens = tokenize(question)
    if not tokens:
        return "other"
    first = tokens[0]
    if first == "what":
        return "what"
    if first == "where":
        return "where"
    if first == "which":
        return "which"
    if first in YES_NO_STARTERS:
        return "yes_no"
    return "other"


def stats_report(samples) -> dict:
    """Question-type frequencies, subset counts, entity coverage, letter counts."""
    samples = list(samples)
    n = len(samples)
    cat_counts = {c: 0 for c in ("what", "yes_no", "where", "which", "other")}
    subset_counts = {"open": 0, "closed": 0}
    letter_counts = {letter: 0 for letter in ANSWER_LETTERS}
    slides = sorted({s.slide_id for s in samples})
    open_slides: set[str] = set()
    entity_slides: dict[str, set[str]] = {k: set() for k in INFERABLE_KEYS}

    for s in samples:
        cat_counts[question_category(s.question)] += 1
        subset_counts[s.subset] = subset_counts.get(s.subset, 0) + 1
        if s.subset == "closed" and s.gold_choice in letter_counts:
            letter_counts[s.gold_choice] += 1
        if s.subset == "open":
            open_slides.add(s.slide_id)
            if s.entity_key in entity_slides:
                entity_slides[s.entity_key].add(s.slide_id)

    def freqs(counts: dict) -> dict:
        total = sum(counts.values())
        return {k: (v / total if total else 0.0) for k, v in counts.items()}

    return {
        "n_pairs": n,
        "n_slides": len(slides),
        "question_type_counts": cat_counts,
        "question_type_freq": freqs(cat_counts),
        "subset_counts": subset_counts,
        "subset_freq": freqs(subset_counts),
        "entity_coverage": {
            k: (len(v) / len(open_slides) if open_slides else 0.0)
            for k, v in entity_slides.items()},
        "closed_answer_letter_counts": letter_counts,
        "closed_answer_letter_freq": freqs(letter_counts),
    }
