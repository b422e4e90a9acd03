"""Adam training loop over (bag, question, answer) triples.

One bag per step by default (bags are ragged); ``batch_size`` > 1 averages
gradients over several sampled pairs before the update. Open-ended pairs
can re-render their question surface from a randomly chosen template each
time they are visited; the stored answer and entity key never change.

Weight decay is decoupled: parameters shrink by ``lr * wd`` before the
bias-corrected Adam update is applied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams, forward_nll, init_params
from .text import Vocab, encode

log = logging.getLogger(__name__)


class NonFiniteGradient(Exception):
    pass


class MissingBag(Exception):
    pass


class EmptyDataset(Exception):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 3000
    batch_size: int = 1
    seed: int = 0
    eval_every: int = 200
    resample_templates: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.max_steps < 1 or self.batch_size < 1:
            raise ValueError("hyperparameters must be positive")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.m = {n: np.zeros_like(t.data) for n, t in params.named()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.named()}
        self.t = 0


def adam_step(params: ModelParams, state: AdamState, cfg: TrainConfig) -> None:
    """Apply one update from the gradients currently held by ``params``.

    Raises NonFiniteGradient before touching any parameter if a gradient
    contains NaN/Inf, so an aborted step leaves the model untouched.
    """
    grads = {}
    for name, t in params.named():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name!r}")
        grads[name] = g

    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, t in params.named():
        g = grads[name]
        if cfg.weight_decay:
            t.data *= 1.0 - cfg.lr * cfg.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        t.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class TrainResult:
    params: ModelParams          # parameters at the last step
    best_params: ModelParams     # lowest-validation snapshot (== params without val data)
    curve: list = field(default_factory=list)  # (step, train_loss, val_loss | None)
    best_step: int = 0
    best_val_loss: float = float("nan")


def _snapshot(params: ModelParams) -> ModelParams:
    from .autodiff import Tensor

    return ModelParams(params.config, {
        n: Tensor(t.data.copy(), requires_grad=True) for n, t in params.named()})


def _question_text(sample, templates, rng, resample: bool) -> str:
    if (resample and templates and sample.subset == "open" and sample.entity_key):
        from .dataset import render_question

        template = templates[int(rng.integers(0, len(templates)))]
        return render_question(template, sample.entity_key)
    return sample.question


def evaluate_nll(samples, bags, vocab: Vocab, params: ModelParams,
                 model_cfg: ModelConfig) -> float:
    """Mean teacher-forced loss; never mutates parameters."""
    total = 0.0
    with ad.no_grad():
        for s in samples:
            q = encode(s.question, vocab, role="question")
            a = encode(s.answer, vocab, role="answer")
            total += float(forward_nll(bags[s.slide_id], q, a, params, model_cfg).data)
    return total / len(samples)


def train(samples, bags, vocab: Vocab, train_cfg: TrainConfig,
          model_cfg: ModelConfig, val_samples=None, templates=None,
          params: ModelParams | None = None) -> TrainResult:
    """Minimize the answer NLL over the sampled training pairs.

    ``bags`` maps slide_id to EmbeddingBag. Raises MissingBag up front if
    any sample's slide has no bag, and EmptyDataset for an empty corpus.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no training pairs")
    for s in samples:
        if s.slide_id not in bags:
            raise MissingBag(f"no bag for slide {s.slide_id!r}")

    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, seed=train_cfg.seed)
    state = AdamState(params)
    result = TrainResult(params=params, best_params=params)
    best_val = float("inf")

    for step in range(1, train_cfg.max_steps + 1):
        params.zero_grad()
        batch_loss = 0.0
        for _ in range(train_cfg.batch_size):
            s = samples[int(rng.integers(0, len(samples)))]
            q_text = _question_text(s, templates, rng, train_cfg.resample_templates)
            q = encode(q_text, vocab, role="question")
            a = encode(s.answer, vocab, role="answer")
            loss = forward_nll(bags[s.slide_id], q, a, params, model_cfg)
            ad.backward(loss)
            batch_loss += float(loss.data)
        batch_loss /= train_cfg.batch_size
        if train_cfg.batch_size > 1:
            for _, t in params.named():
                if t.grad is not None:
                    t.grad /= train_cfg.batch_size

        try:
            adam_step(params, state, train_cfg)
        except NonFiniteGradient as err:
            log.warning("step %d skipped: %s", step, err)

        val_loss = None
        if val_samples and (step % train_cfg.eval_every == 0 or step == train_cfg.max_steps):
            val_loss = evaluate_nll(val_samples, bags, vocab, params, model_cfg)
            if val_loss < best_val:
                best_val = val_loss
                result.best_step = step
                result.best_val_loss = val_loss
                result.best_params = _snapshot(params)
        result.curve.append((step, batch_loss, val_loss))

    if not val_samples:
        result.best_params = params
        result.best_step = train_cfg.max_steps
    return result
