"""Command-line front end.

Subcommands: tile, extract, vocab, build-dataset, train, eval, ask, serve.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import metrics as mx
from .features import export_bag, extract_builtin, import_bag, load_bag_dir
from .generation import answer_question, keyword_attention, render_heatmap
from .model import ModelConfig, load_checkpoint_dir, save_checkpoint_dir
from .text import Vocab, build_vocab
from .tiling import SlideImage, TileSet, tile
from .training import TrainConfig, train

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_image(path: str, slide_id: str | None = None) -> SlideImage:
    from PIL import Image

    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if slide_id is None:
        slide_id = os.path.splitext(os.path.basename(path))[0]
    return SlideImage(slide_id, pixels)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def cmd_tile(args) -> int:
    img = load_image(args.input, args.slide_id)
    ts = tile(img, patch_size_px=args.patch_size, sat_threshold=args.sat_threshold,
              keep_threshold=args.keep_threshold)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(ts.to_json_dict(), f, indent=2)
    print(f"kept {len(ts)} patches of {img.slide_id} -> {args.out}")
    return 0


def cmd_extract(args) -> int:
    with open(args.tileset, encoding="utf-8") as f:
        ts = TileSet.from_json_dict(json.load(f))
    img = load_image(args.image, ts.slide_id)
    bag = extract_builtin(img, ts, dim=args.dim, seed=args.seed)
    export_bag(bag, args.out)
    print(f"embedded {bag.size} patches at width {bag.dim} -> {args.out}")
    return 0


def cmd_vocab(args) -> int:
    samples = ds.load_jsonl(args.corpus)
    corpus = [s.question for s in samples] + [s.answer for s in samples]
    vocab = build_vocab(corpus, min_count=args.min_count)
    vocab.save(args.out)
    print(f"vocabulary of {vocab.size} ids -> {args.out}")
    return 0


def cmd_build_dataset(args) -> int:
    templates = ds.load_templates(args.templates) if args.templates else \
        ds.load_templates(os.path.join(DATA_DIR, "templates.json"))
    records = ds.read_clinical_tsv(args.clinical)

    samples: list[ds.QASample] = []
    rng = np.random.default_rng(args.seed)
    for rec in records:
        samples.extend(ds.render_open_pairs(rec, templates, int(rng.integers(0, 2**31))))

    if args.captions:
        if args.llm == "offline":
            if not args.fixtures:
                raise UsageError("--llm offline requires --fixtures")
            llm = ds.OfflineFixtureLLM(args.fixtures)
        else:
            if not args.endpoint:
                raise UsageError("--llm http requires --endpoint")
            llm = ds.HttpLLM(args.endpoint)
        for name in sorted(os.listdir(args.captions)):
            if not name.endswith(".txt"):
                continue
            slide_id = name[:-4]
            with open(os.path.join(args.captions, name), encoding="utf-8") as f:
                caption = f.read()
            text = llm.generate_qa_text(slide_id, caption)
            if text is None:
                print(f"note: no fixture for {slide_id}, skipped", file=sys.stderr)
                continue
            try:
                closed, diagnostics = ds.parse_llm_response(text, slide_id)
            except ds.NoValidBlocks as err:
                print(f"note: {slide_id}: {err}", file=sys.stderr)
                continue
            for d in diagnostics:
                print(f"note: {slide_id}: {d}", file=sys.stderr)
            samples.extend(closed)

    kept, rejected = ds.filter_pairs(samples)
    manifest = ds.split(kept, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    for name in ("train", "val", "test"):
        ds.save_jsonl(ds.split_subset(kept, manifest, name),
                      os.path.join(args.out, f"{name}.jsonl"))
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest.to_json_dict(), f, indent=2)
    with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as f:
        json.dump(ds.stats_report(kept), f, indent=2)
    with open(os.path.join(args.out, "rejected.jsonl"), "w", encoding="utf-8") as f:
        for s, rule in rejected:
            f.write(json.dumps({"rule": rule, **s.to_json_dict()}, ensure_ascii=False) + "\n")
    print(f"kept {len(kept)} pairs ({len(rejected)} rejected) over "
          f"{manifest.pair_counts} -> {args.out}")
    return 0


def _train_configs(args, vocab, bags):
    train_kwargs, model_kwargs = {}, {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            raw = json.load(f)
        train_kwargs = raw.get("train", {})
        model_kwargs = raw.get("model", {})
    bag_dim = next(iter(bags.values())).dim
    model_kwargs.setdefault("bag_dim", bag_dim)
    model_cfg = ModelConfig(vocab_size=vocab.size, **model_kwargs)
    return TrainConfig(**train_kwargs), model_cfg


def cmd_train(args) -> int:
    samples = ds.load_jsonl(args.data)
    val_samples = ds.load_jsonl(args.val_data) if args.val_data else None
    bags = load_bag_dir(args.bags)
    vocab = Vocab.load(args.vocab)
    train_cfg, model_cfg = _train_configs(args, vocab, bags)
    templates = ds.load_templates(args.templates) if args.templates else None

    result = train(samples, bags, vocab, train_cfg, model_cfg,
                   val_samples=val_samples, templates=templates)
    save_checkpoint_dir(args.out, result.best_params, vocab, result.best_step)
    with open(os.path.join(args.out, "curve.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "train_loss", "val_loss"])
        for step, tr, va in result.curve:
            w.writerow([step, f"{tr:.6f}", "" if va is None else f"{va:.6f}"])
    final = result.curve[-1][1]
    print(f"trained {train_cfg.max_steps} steps (final loss {final:.4f}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, vocab, _ = load_checkpoint_dir(args.ckpt)
    samples = ds.load_jsonl(args.data)
    bags = load_bag_dir(args.bags)
    lexicon = mx.EntityLexicon.load(args.lexicon or os.path.join(DATA_DIR, "entities.json"))
    events = None
    if args.clinical:
        events = {}
        for rec in ds.read_clinical_tsv(args.clinical):
            if "event" in rec.values:
                events[rec.slide_id] = rec.values["event"].lower() in ("1", "true", "yes")
    report = mx.evaluate_model(samples, bags, vocab, params, params.config,
                               lexicon, beam_width=args.beam, events=events)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(), f, indent=2)
    print(f"evaluated {report.evaluated} pairs (skipped {report.skipped}); "
          f"bleu1 {report.bleu1:.3f} rouge {report.rouge_l:.3f} -> {args.out}")
    return 0


def cmd_ask(args) -> int:
    params, vocab, _ = load_checkpoint_dir(args.ckpt)
    bag = import_bag(args.bag)
    answer, out = answer_question(bag, args.question, vocab, params, params.config,
                                  beam_width=args.beam, max_len=args.max_len)
    payload = {"answer": answer, "log_prob": out.log_prob, "truncated": out.truncated}
    if args.heatmap_keyword:
        hm = keyword_attention(out.records, None, args.question, args.heatmap_keyword,
                               bag, vocab)
        d = hm.to_json_dict()
        payload["heatmap"] = {"weights": d["weights"], "grid": d["grid"],
                              "coords": d["coords"], "source": d["source"]}
        if args.overlay_out:
            if not (args.image and args.tileset):
                raise UsageError("--overlay-out needs --image and --tileset")
            from PIL import Image

            with open(args.tileset, encoding="utf-8") as f:
                ts = TileSet.from_json_dict(json.load(f))
            img = load_image(args.image, ts.slide_id)
            Image.fromarray(render_heatmap(hm, ts, img)).save(args.overlay_out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
    print(json.dumps(payload if not args.out else {"answer": answer}, ensure_ascii=False))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceContext, create_app

    params, vocab, _ = load_checkpoint_dir(args.ckpt)
    bags = load_bag_dir(args.bags)
    ctx = ServiceContext(params=params, config=params.config, vocab=vocab,
                         bags=bags, thumbnails_dir=args.thumbnails,
                         default_beam=args.beam)
    app = create_app(ctx, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="slideqa", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("tile", help="segment foreground and cut the patch grid")
    p.add_argument("--input", required=True)
    p.add_argument("--slide-id")
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--sat-threshold", type=float, default=0.05)
    p.add_argument("--keep-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("extract", help="embed kept patches into a bag file")
    p.add_argument("--tileset", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("vocab", help="build the vocabulary from a QA corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("build-dataset", help="render QA pairs, filter, and split")
    p.add_argument("--clinical", required=True)
    p.add_argument("--captions")
    p.add_argument("--templates")
    p.add_argument("--llm", choices=["offline", "http"], default="offline")
    p.add_argument("--fixtures")
    p.add_argument("--endpoint")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--bags", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config")
    p.add_argument("--templates")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a QA corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bags", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--clinical")
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ask", help="answer one question about one bag")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bag", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--heatmap-keyword")
    p.add_argument("--image")
    p.add_argument("--tileset")
    p.add_argument("--overlay-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bags", required=True)
    p.add_argument("--thumbnails")
    p.add_argument("--ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--beam", type=int, default=3)
    p.set_defaults(func=cmd_serve)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help
        return 0 if err.code in (0, None) else 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
