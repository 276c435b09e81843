"""Hierarchical document context: word-level and sentence-level attention
over cached previous-sentence states, merged into the current hidden state
through a sigmoid gate.

Cached states are computed in eval mode and detached, so gradients reach the
context parameters only through the queries and projections of the current
sentence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError


@dataclass
class CacheEntry:
    """One previous sentence: its token ids and final-layer state rows."""
    token_ids: list[int]
    states: Tensor  # [len, d], detached

    def __post_init__(self):
        if len(self.token_ids) != self.states.data.shape[0]:
            raise ContractError(
                f"cache entry: {len(self.token_ids)} tokens vs "
                f"{self.states.data.shape[0]} state rows")


class ContextState:
    """Sliding caches of up to n previous source / target sentences.

    Entries are ordered oldest to newest; document boundaries clear both.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ContractError("context size must be >= 1")
        self.n = n
        self.source: list[CacheEntry] = []
        self.target: list[CacheEntry] = []

    def push_source(self, entry: CacheEntry) -> None:
        self.source.append(entry)
        del self.source[:-self.n]

    def push_target(self, entry: CacheEntry) -> None:
        self.target.append(entry)
        del self.target[:-self.n]

    def clear(self) -> None:
        self.source.clear()
        self.target.clear()


@dataclass
class AttentionTrace:
    """Post-softmax context attention weights for T query positions.

    sent[h] is [T, n_sents]; word[j][h] is [T, len_j]; token_ids[j] lists the
    cached token ids of sentence j.  Every weight row sums to 1.
    """
    token_ids: list[list[int]]
    sent: list[Tensor]
    word: list[list[Tensor]]

    @property
    def m(self) -> int:
        return len(self.sent)

    @property
    def n_sents(self) -> int:
        return len(self.token_ids)

    @property
    def n_positions(self) -> int:
        return self.sent[0].data.shape[0]

    def position(self, t: int) -> "AttentionTrace":
        """View of a single query position (weights stay on the graph)."""
        return AttentionTrace(
            token_ids=self.token_ids,
            sent=[ad.narrow(w, 0, t, 1) for w in self.sent],
            word=[[ad.narrow(w, 0, t, 1) for w in heads] for heads in self.word])

    def assert_normalized(self, atol: float = 1e-12) -> None:
        for w in self.sent:
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, rtol=0, atol=atol)
        for heads in self.word:
            for w in heads:
                np.testing.assert_allclose(w.data.sum(axis=1), 1.0, rtol=0, atol=atol)


def _sub(p: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    plen = len(prefix)
    return {k[plen:]: v for k, v in p.items() if k.startswith(prefix)}


def word_level_context(h: Tensor, entries: list[CacheEntry], p: dict[str, Tensor],
                       m: int) -> tuple[list[Tensor], list[list[Tensor]]]:
    """Per cached sentence j: attend the word-level query into its states.

    Returns per-sentence summaries s_j [T, d] and per-(sentence, head)
    weight matrices [T, len_j].
    """
    from .transformer import multi_head_attention

    qw = h @ p["f"]
    wp = _sub(p, "word.")
    summaries, weights = [], []
    for entry in entries:
        s_j, heads = multi_head_attention(qw, entry.states, entry.states, wp, m)
        summaries.append(s_j)
        weights.append(heads)
    return summaries, weights


def sentence_level_context(h: Tensor, summaries: list[Tensor],
                           p: dict[str, Tensor], m: int
                           ) -> tuple[Tensor, list[Tensor]]:
    """Attend the sentence-level query over per-position summaries, then FFN.

    Each query position t has its own key/value set (its summaries), so the
    per-head attention is a row-wise dot product across sentences rather than
    one big matmul.  Returns d_t rows [T, d] and per-head sentence weights
    [T, n_sents].
    """
    from .transformer import positionwise_ffn

    d = h.data.shape[1]
    dh = d // m
    n = len(summaries)
    qs = (h @ p["g"]) @ p["sent.wq"]
    ks = [s @ p["sent.wk"] for s in summaries]
    vs = [s @ p["sent.wv"] for s in summaries]
    inv = 1.0 / math.sqrt(dh)
    head_outs, sent_weights = [], []
    for head in range(m):
        q_h = ad.narrow(qs, 1, head * dh, dh)
        cols = []
        for j in range(n):
            k_h = ad.narrow(ks[j], 1, head * dh, dh)
            cols.append(ad.mul(q_h, k_h).sum(axis=1, keepdims=True) * inv)
        w = ad.softmax_lastdim(ad.concat(cols, axis=1) if n > 1 else cols[0])
        sent_weights.append(w)
        out_h = None
        for j in range(n):
            v_h = ad.narrow(vs[j], 1, head * dh, dh)
            term = ad.scale_rows(v_h, ad.narrow(w, 1, j, 1))
            out_h = term if out_h is None else ad.add(out_h, term)
        head_outs.append(out_h)
    merged = head_outs[0] if m == 1 else ad.concat(head_outs, axis=1)
    attended = merged @ p["sent.wo"]
    return positionwise_ffn(attended, _sub(p, "ffn.")), sent_weights


def gate_integrate(h: Tensor, d_rows: Tensor, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """lam = sigmoid(h Wh + d Wd); returns (lam*h + (1-lam)*d, lam)."""
    lam = ad.sigmoid(ad.add(h @ p["gate.wh"], d_rows @ p["gate.wd"]))
    mixed = ad.add(ad.mul(lam, h), ad.mul(1.0 - lam, d_rows))
    return mixed, lam


def hierarchical_context(h: Tensor, entries: list[CacheEntry],
                         p: dict[str, Tensor], m: int
                         ) -> tuple[Tensor, Tensor, AttentionTrace]:
    """Full context pass for non-empty caches.

    Returns (integrated rows h~ [T, d], context rows d_t [T, d], trace).
    Callers must take the skip path when the cache is empty.
    """
    if not entries:
        raise ContractError("hierarchical_context with empty cache")
    summaries, word_w = word_level_context(h, entries, p, m)
    d_rows, sent_w = sentence_level_context(h, summaries, p, m)
    mixed, _ = gate_integrate(h, d_rows, p)
    trace = AttentionTrace(token_ids=[list(e.token_ids) for e in entries],
                           sent=sent_w, word=word_w)
    return mixed, d_rows, trace
