"""Greedy and beam search over documents with cross-sentence caches.

Sentences are decoded in order; after each one the source encoding and a
teacher-forced recomputation of the decoder states for the *model's own
output* are pushed into the context caches, so later sentences can attend
to (and copy from) what the model actually produced.  Caches reset at
document boundaries.  Beam search shares one cache per document: by the
time a cache entry exists its sentence is finished, so hypotheses never
see divergent context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .model.han import ContextState
from .model.model import DECODER_CTX, ENCODER_CTX, DocModel, check_variant
from .tokens import BOS_ID, EOS_ID

_LOG_FLOOR = 1e-300


@dataclass
class StepTrace:
    """Distribution snapshot for one decode step (for debug dumps)."""
    p_copy: float | None
    top_vocab: list[tuple[int, float]]
    top_alpha: list[tuple[int, float]] | None
    top_pw: list[tuple[int, float]]


@dataclass
class BeamHypothesis:
    tokens: list[int]                      # BOS-prefixed
    log_prob: float = 0.0
    traces: list[StepTrace] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return len(self.tokens) > 1 and self.tokens[-1] == EOS_ID

    def n_generated(self) -> int:
        return len(self.tokens) - 1

    def score(self, length_penalty: float) -> float:
        norm = max(1, self.n_generated()) ** length_penalty
        return self.log_prob / norm


@dataclass
class SearchConfig:
    width: int = 1
    length_penalty: float = 0.0
    expand: int | None = None          # per-hypothesis top-k; defaults to width
    max_len: int | None = None         # cap override (default 2*source+10)
    collect_traces: bool = False

    def __post_init__(self):
        if self.width < 1:
            raise ContractError(f"beam width must be >= 1, got {self.width}")
        if self.length_penalty < 0:
            raise ContractError("length penalty must be non-negative")


def _top5(vec: np.ndarray) -> list[tuple[int, float]]:
    order = np.argsort(-vec, kind="stable")[:5]
    return [(int(i), float(vec[i])) for i in order]


def _make_trace(result) -> StepTrace:
    if result.copy is not None:
        return StepTrace(p_copy=result.copy.p_copy,
                         top_vocab=_top5(result.copy.p_vocab),
                         top_alpha=_top5(result.copy.alpha_vocab),
                         top_pw=_top5(result.copy.p_w))
    return StepTrace(p_copy=None, top_vocab=_top5(result.p_w),
                     top_alpha=None, top_pw=_top5(result.p_w))


def beam_step(hypotheses: list[BeamHypothesis], step_fn, width: int,
              expand: int | None = None, length_penalty: float = 0.0,
              collect_traces: bool = False) -> list[BeamHypothesis]:
    """One expansion round: top-``expand`` continuations per live hypothesis,
    then the global top-``width`` by length-normalized score.  Finished
    hypotheses carry over unexpanded; ties break by (parent, token id), so
    the result is deterministic and width 1 reproduces greedy argmax.
    """
    if width < 1:
        raise ContractError("beam width must be >= 1")
    if all(h.finished for h in hypotheses):
        return list(hypotheses)
    expand = expand or width
    ranked: list[tuple[tuple, BeamHypothesis]] = []
    for pi, hypo in enumerate(hypotheses):
        if hypo.finished:
            ranked.append(((-hypo.score(length_penalty), pi, -1), hypo))
            continue
        result = step_fn(hypo.tokens)
        p_w = result.p_w
        logs = np.log(np.maximum(p_w, _LOG_FLOOR))
        traces = hypo.traces + [_make_trace(result)] if collect_traces \
            else hypo.traces
        for tid in np.argsort(-p_w, kind="stable")[:expand]:
            tid = int(tid)
            new = BeamHypothesis(tokens=hypo.tokens + [tid],
                                 log_prob=hypo.log_prob + float(logs[tid]),
                                 traces=traces)
            ranked.append(((-new.score(length_penalty), pi, tid), new))
    ranked.sort(key=lambda kv: kv[0])
    return [h for _, h in ranked[:width]]


def _force_finish(hypotheses: list[BeamHypothesis], step_fn,
                  collect_traces: bool) -> list[BeamHypothesis]:
    """Length cap reached: close every live hypothesis with EOS at its real
    probability, keeping the score = sum of chosen log-probs invariant."""
    out = []
    for hypo in hypotheses:
        if hypo.finished:
            out.append(hypo)
            continue
        result = step_fn(hypo.tokens)
        logs = np.log(np.maximum(result.p_w, _LOG_FLOOR))
        traces = hypo.traces + [_make_trace(result)] if collect_traces \
            else hypo.traces
        out.append(BeamHypothesis(tokens=hypo.tokens + [EOS_ID],
                                  log_prob=hypo.log_prob + float(logs[EOS_ID]),
                                  traces=traces))
    return out


def search(step_fn, max_steps: int, config: SearchConfig
           ) -> list[BeamHypothesis]:
    """Run beam search from a bare BOS prefix; returns hypotheses sorted
    best-first by length-normalized score."""
    hypos = [BeamHypothesis(tokens=[BOS_ID])]
    for _ in range(max_steps):
        if all(h.finished for h in hypos):
            break
        hypos = beam_step(hypos, step_fn, config.width, config.expand,
                          config.length_penalty, config.collect_traces)
    hypos = _force_finish(hypos, step_fn, config.collect_traces)
    order = sorted(range(len(hypos)),
                   key=lambda i: (-hypos[i].score(config.length_penalty), i))
    return [hypos[i] for i in order]


def greedy_search(step_fn, max_steps: int,
                  collect_traces: bool = False) -> BeamHypothesis:
    """Plain argmax decoding, written independently of the beam machinery
    (it doubles as the oracle for the width-1 equivalence)."""
    tokens = [BOS_ID]
    log_prob = 0.0
    traces: list[StepTrace] = []
    for _ in range(max_steps):
        result = step_fn(tokens)
        tid = int(np.argmax(result.p_w))
        log_prob += float(np.log(max(result.p_w[tid], _LOG_FLOOR)))
        if collect_traces:
            traces.append(_make_trace(result))
        tokens.append(tid)
        if tid == EOS_ID:
            return BeamHypothesis(tokens=tokens, log_prob=log_prob,
                                  traces=traces)
    result = step_fn(tokens)
    log_prob += float(np.log(max(result.p_w[EOS_ID], _LOG_FLOOR)))
    if collect_traces:
        traces.append(_make_trace(result))
    return BeamHypothesis(tokens=tokens + [EOS_ID], log_prob=log_prob,
                          traces=traces)


def _strip(hypo: BeamHypothesis) -> list[int]:
    toks = hypo.tokens[1:]
    if toks and toks[-1] == EOS_ID:
        toks = toks[:-1]
    return toks


def translate_sentence(model: DocModel, encoded, context, variant: str,
                       config: SearchConfig
                       ) -> tuple[list[int], list[StepTrace]]:
    max_steps = config.max_len or (2 * len(encoded.token_ids) + 10)

    def step_fn(prefix):
        return model.step_distribution(prefix, encoded, context, variant)

    best = search(step_fn, max_steps, config)[0]
    return _strip(best), best.traces


def update_context(model: DocModel, context: ContextState, encoded,
                   out_tokens: list[int], variant: str) -> None:
    """Push the finished sentence into the caches the variant consumes.
    Decoder states are recomputed by one teacher-forced eval pass *before*
    anything is pushed, so the recomputation sees exactly the context the
    search saw."""
    entry = None
    if variant in DECODER_CTX:
        entry = model.target_cache_entry(out_tokens, encoded, context, variant)
    if variant in ENCODER_CTX:
        context.push_source(model.source_cache_entry(encoded))
    if entry is not None:
        context.push_target(entry)


def translate_document(model: DocModel, src_sentences: list[list[int]],
                       variant: str, config: SearchConfig | None = None,
                       n_context: int | None = None,
                       context: ContextState | None = None
                       ) -> tuple[list[list[int]], list[list[StepTrace]]]:
    """Translate one document sentence-by-sentence with fresh caches."""
    check_variant(variant)
    config = config or SearchConfig()
    if context is None:
        context = ContextState(n_context or model.cfg.n_context)
    else:
        context.clear()
    outputs: list[list[int]] = []
    all_traces: list[list[StepTrace]] = []
    for src in src_sentences:
        if not src:
            raise DataError("cannot translate an empty source sentence")
        encoded, _ = model.contextual_encode(src, context, variant,
                                             train=False)
        out_tokens, traces = translate_sentence(model, encoded, context,
                                                variant, config)
        update_context(model, context, encoded, out_tokens, variant)
        outputs.append(out_tokens)
        all_traces.append(traces)
    return outputs, all_traces


def translate_corpus(model: DocModel, documents: list[list[list[int]]],
                     variant: str, config: SearchConfig | None = None,
                     n_context: int | None = None):
    """Documents are independent; caches reset at every boundary."""
    outs = []
    traces = []
    for doc in documents:
        o, t = translate_document(model, doc, variant, config, n_context)
        outs.append(o)
        traces.append(t)
    return outs, traces


def translate_document_two_to_two(model: DocModel,
                                  src_sentences: list[list[int]],
                                  sep_src_id: int, sep_tgt_id: int,
                                  config: SearchConfig | None = None
                                  ) -> tuple[list[list[int]], int]:
    """Concatenation baseline: sentence i >= 2 is translated as
    "previous <sep> current" and the output after the separator is kept.
    Returns the translations plus a count of outputs where the model failed
    to emit the separator (the full output is kept for those)."""
    config = config or SearchConfig()
    outputs: list[list[int]] = []
    missing_sep = 0
    prev: list[int] | None = None
    for src in src_sentences:
        if not src:
            raise DataError("cannot translate an empty source sentence")
        joined = src if prev is None else prev + [sep_src_id] + src
        encoded, _ = model.contextual_encode(joined, None, "sentence",
                                             train=False)
        out_tokens, _ = translate_sentence(model, encoded, None, "sentence",
                                           config)
        if prev is not None:
            if sep_tgt_id in out_tokens:
                out_tokens = out_tokens[out_tokens.index(sep_tgt_id) + 1:]
            else:
                missing_sep += 1
        outputs.append(out_tokens)
        prev = src
    return outputs, missing_sep
