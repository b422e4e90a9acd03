"""Walkthrough: the evaluation metric suite on hand-sized examples.

Shows what each score rewards and punishes: n-gram clipping and brevity in
BLEU, subsequence overlap in ROUGE-L, fragmentation in METEOR, entity
agreement, choice matching, and survival concordance.

Run:  python3 demos/04_metrics.py
"""

import os

from slideqa.metrics import (
    EntityLexicon,
    bleu,
    c_index,
    closed_acc,
    fact_ent,
    meteor_lite,
    rouge_l,
)
from slideqa.text import tokenize

LEX = EntityLexicon.load(os.path.join(os.path.dirname(__file__), "..", "src",
                                      "slideqa", "data", "entities.json"))


def show(label, value):
    print(f"  {label:<58} {value:.4f}" if isinstance(value, float) else
          f"  {label:<58} {value}")


print("BLEU (clipped n-gram precision, brevity penalty):")
ref = tokenize("the tumor margin is clear")
show("identical candidate, BLEU-4", bleu(ref, ref, 4))
show("'the the the the' vs ref, BLEU-1 (clipping)", bleu(tokenize("the the the the"), ref, 1))
show("'margin clear' vs ref, BLEU-1 (brevity penalty)", bleu(tokenize("margin clear"), ref, 1))

print("\nROUGE-L (longest common subsequence F, beta=1.2):")
show("'the margin is clear' vs ref", rouge_l(tokenize("the margin is clear"), ref))
show("reordered tokens", rouge_l(tokenize("clear is the margin"), ref))

print("\nMETEOR-lite (exact matches, fragmentation penalty):")
show("identical (penalty only 0.5/m^3)", meteor_lite(ref, ref))
show("same words, scrambled order (more chunks)",
     meteor_lite(tokenize("clear is margin the tumor"), ref))

print("\nEntity consistency (lexicon set F1):")
show("'her2 positive' vs 'her2 and pr positive'",
     fact_ent("her2 positive", "her2 and pr positive", LEX))
show("'idc' vs 'invasive ductal carcinoma' (alias match)",
     fact_ent("consistent with idc", "invasive ductal carcinoma", LEX))

print("\nClosed-choice accuracy (token-F1 argmax):")
choices = ["invasive ductal carcinoma", "invasive lobular carcinoma",
           "mucinous carcinoma", "medullary carcinoma"]
show("generated 'ductal carcinoma , invasive' vs gold A",
     str(closed_acc("ductal carcinoma , invasive", choices, "A")))
show("same text vs gold B", str(closed_acc("ductal carcinoma , invasive", choices, "B")))

print("\nHarrell c-index (risk vs survival ordering):")
show("perfectly anti-ordered risks", c_index([3, 2, 1], [10, 20, 30], [True] * 3))
show("all-equal risks", c_index([1, 1, 1], [10, 20, 30], [True] * 3))
show("one censored subject drops its pairs",
     c_index([3, 1, 2], [2, 5, 9], [True, False, True]))
