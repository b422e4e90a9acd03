"""Walkthrough: building a QA corpus from clinical rows and LLM fixtures.

Renders open-ended pairs from a key/value table, parses a canned
multiple-choice response, runs the defect filter, splits by slide hash,
and prints the statistics block.

Run:  python3 demos/05_dataset_builder.py
"""

import json

from slideqa.dataset import (
    ClinicalRecord,
    QASample,
    build_llm_prompt,
    filter_pairs,
    parse_llm_response,
    render_open_pairs,
    split,
    stats_report,
)

TEMPLATES = [
    "Q: What is the result of [KEY]? A: [VALUE]",
    "Q: What is the [KEY] status of this slide? A: [VALUE]",
]

records = [
    ClinicalRecord("case_01", {"her2": "positive", "pr": "negative",
                               "subtype": "invasive ductal carcinoma"}),
    ClinicalRecord("case_02", {"her2": "negative", "grade": "2",
                               "survival_months": "41"}),
    ClinicalRecord("case_03", {"pr": "positive", "margins": "clear",
                               "age": "61"}),  # age is not inferable -> filtered
]

samples = []
for i, rec in enumerate(records):
    pairs = render_open_pairs(rec, TEMPLATES, rng_seed=i)
    samples.extend(pairs)
print(f"rendered {len(samples)} open pairs, e.g.:")
for s in samples[:3]:
    print(f"  [{s.slide_id}] {s.question!r} -> {s.answer!r} (template {s.template_id})")

caption = "Sections show an invasive carcinoma with clear margins."
print(f"\nLLM prompt starts: {build_llm_prompt(caption)[:72]}...")
response = (
    "i:'1' question:'What is the margin status?' choice: "
    "'A: involved B: close C: clear D: not assessed' answer: C\n"
    "i:'2' question:'Broken block' choice: 'A: x B: y' answer: A\n"
)
closed, diagnostics = parse_llm_response(response, "case_01")
print(f"parsed {len(closed)} closed pair(s); diagnostics: {diagnostics}")
samples.extend(closed)

# plant one more defect: a duplicate question on case_01
samples.append(QASample("case_01", samples[0].question, samples[0].answer,
                        "open", entity_key=samples[0].entity_key, template_id=0))

kept, rejected = filter_pairs(samples)
print(f"\nfilter kept {len(kept)}, rejected {len(rejected)}:")
for s, rule in rejected:
    print(f"  {rule:<20} {s.slide_id}: {s.question!r}")

manifest = split(kept, seed=7)
print(f"\nslide split: train={manifest.train_slides} val={manifest.val_slides} "
      f"test={manifest.test_slides}")
print(f"pair counts: {manifest.pair_counts}")

print("\nstatistics:")
print(json.dumps(stats_report(kept), indent=2))
