"""HTTP service for interactive Q&A over a trained checkpoint.

Endpoints (all JSON, UTF-8; errors are {"error": code, "detail": text}):

    GET  /slides                     -> [{slide_id, thumbnail_url, n_patches}]
    GET  /thumbnail/{slide_id}       -> image bytes
    POST /ask {slide_id, question, beam?} -> {qa_id, answer, log_prob, truncated}
    GET  /heatmap/{qa_id}?keyword=w  -> {weights, grid, coords}
    GET  /history                    -> [{qa_id, slide_id, question, answer, timestamp}]

Model parameters, bags, and the vocabulary are loaded once and shared
read-only across requests; the LRU session store is the only mutable state
and is guarded by a lock.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .features import EmbeddingBag, import_bag
from .generation import (
    KeywordMultiToken,
    KeywordNotFound,
    answer_question,
    keyword_attention,
)
from .model import ModelConfig, ModelParams
from .text import Vocab

MAX_BEAM = 8


class SessionStore:
    """Bounded LRU of answered questions; evicts the least recently used."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._entries: OrderedDict[str, dict] = OrderedDict()

    def put(self, entry: dict) -> str:
        qa_id = uuid.uuid4().hex
        with self._lock:
            self._entries[qa_id] = entry
            if len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        return qa_id

    def get(self, qa_id: str) -> dict | None:
        with self._lock:
            entry = self._entries.get(qa_id)
            if entry is not None:
                self._entries.move_to_end(qa_id)
            return entry

    def history(self) -> list[dict]:
        with self._lock:
            return [
                {"qa_id": qa_id, "slide_id": e["slide_id"], "question": e["question"],
                 "answer": e["answer"], "timestamp": e["timestamp"]}
                for qa_id, e in self._entries.items()]

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


@dataclass
class ServiceContext:
    params: ModelParams
    config: ModelConfig
    vocab: Vocab
    bags: dict[str, EmbeddingBag]
    thumbnails_dir: str | None = None
    default_beam: int = 3
    max_answer_len: int = 16
    sessions: SessionStore = field(default_factory=SessionStore)


class AskRequest(BaseModel):
    slide_id: str
    question: str
    beam: int | None = None


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "detail": detail})


def create_app(ctx: ServiceContext, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="slideqa", docs_url=None, redoc_url=None)

    @app.get("/slides")
    def slides():
        return [
            {"slide_id": sid, "thumbnail_url": f"/thumbnail/{sid}",
             "n_patches": bag.size}
            for sid, bag in sorted(ctx.bags.items())]

    @app.get("/thumbnail/{slide_id}")
    def thumbnail(slide_id: str):
        if slide_id not in ctx.bags:
            return _error(404, "unknown_slide", f"no slide {slide_id!r}")
        if ctx.thumbnails_dir:
            for ext in ("png", "jpg", "jpeg"):
                path = os.path.join(ctx.thumbnails_dir, f"{slide_id}.{ext}")
                if os.path.exists(path):
                    return FileResponse(path)
        return _error(404, "no_thumbnail", f"no thumbnail for {slide_id!r}")

    @app.post("/ask")
    def ask(req: AskRequest):
        if req.slide_id not in ctx.bags:
            return _error(404, "unknown_slide", f"no slide {req.slide_id!r}")
        if not req.question.strip():
            return _error(422, "empty_question", "question must be non-empty")
        beam = ctx.default_beam if req.beam is None else req.beam
        if not 1 <= beam <= MAX_BEAM:
            return _error(422, "bad_beam", f"beam must be in 1..{MAX_BEAM}")
        bag = ctx.bags[req.slide_id]
        answer, out = answer_question(bag, req.question, ctx.vocab, ctx.params,
                                      ctx.config, beam_width=beam,
                                      max_len=ctx.max_answer_len)
        qa_id = ctx.sessions.put({
            "slide_id": req.slide_id, "question": req.question, "answer": answer,
            "records": out.records, "timestamp": time.time()})
        return {"qa_id": qa_id, "answer": answer, "log_prob": out.log_prob,
                "truncated": out.truncated}

    @app.get("/heatmap/{qa_id}")
    def heatmap(qa_id: str, keyword: str | None = None):
        entry = ctx.sessions.get(qa_id)
        if entry is None:
            return _error(404, "unknown_qa", f"no session entry {qa_id!r}")
        if not keyword:
            return _error(422, "missing_keyword", "pass ?keyword=<token>")
        bag = ctx.bags[entry["slide_id"]]
        try:
            hm = keyword_attention(entry["records"], None, entry["question"],
                                   keyword, bag, ctx.vocab)
        except KeywordNotFound as err:
            return _error(422, "keyword_not_found", str(err))
        except KeywordMultiToken as err:
            return _error(422, "keyword_multi_token", str(err))
        d = hm.to_json_dict()
        return {"weights": d["weights"], "grid": d["grid"], "coords": d["coords"],
                "slide_id": d["slide_id"], "source": d["source"]}

    @app.get("/history")
    def history():
        return ctx.sessions.history()

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
