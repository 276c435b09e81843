"""Copy mechanism: mix the vocabulary softmax with a distribution over words
seen in previous target sentences.

Copy weights alpha are head-averaged products of sentence-level and
word-level context attention: for token i of cached sentence j,

    alpha_{j,i} = (1/m^2) * (sum_h a_j^h) * (sum_h a_{j,i}^h)

scattered into vocabulary space by token id (duplicate ids accumulate; ids
never cached get exactly 0).  The copy gate p_copy is a sigmoid over three
scalar maps plus a bias; the final distribution is

    P_w = (1 - p_copy) * P_vocab + p_copy * alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..tokens import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .han import AttentionTrace, _sub

SPECIAL_IDS = (PAD_ID, UNK_ID, BOS_ID, EOS_ID)  # never copy targets


@dataclass
class CopyWeights:
    """Copy distribution pieces for T query positions."""
    alpha_tokens: Tensor       # [T, K] over concatenated cached tokens
    alpha_vocab: Tensor        # [T, V]; zero at ids absent from the cache
    token_ids: list[int]       # the K cached ids, cache order
    copyable: bool             # False when no cached token may be copied


@dataclass
class CopyDistribution:
    """Everything the mixture produced for one decode step."""
    p_copy: float
    p_vocab: np.ndarray
    alpha_vocab: np.ndarray
    p_w: np.ndarray


def encoder_context_attention(h_tilde: Tensor, enc_states: Tensor,
                              p: dict[str, Tensor], m: int) -> Tensor:
    """c_t: multi-head attention of the integrated state over the current
    source encoding, with the copy mechanism's own projections."""
    from .transformer import multi_head_attention

    c_rows, _ = multi_head_attention(h_tilde, enc_states, enc_states,
                                     _sub(p, "att."), m)
    return c_rows


def copy_gate(h_tilde: Tensor, c_rows: Tensor, d_rows: Tensor,
              p: dict[str, Tensor]) -> Tensor:
    """p_copy in (0, 1), shaped [T, 1]."""
    logit = ad.add(ad.add(h_tilde @ p["wh"], c_rows @ p["wc"]),
                   d_rows @ p["wdy"])
    return ad.sigmoid(ad.add(logit, p["b"]))


def copy_attention_weights(trace: AttentionTrace, vocab_size: int,
                           exclude_special: bool = True) -> CopyWeights:
    """Head-averaged copy weights from a context attention trace.

    With ``exclude_special`` the reserved ids lose their mass and the rest is
    renormalized to sum 1; switch it off to keep the raw product weights.
    """
    m = trace.m
    scale = 1.0 / (m * m)
    parts = []
    for j in range(trace.n_sents):
        sent_sum = trace.sent[0] if m == 1 else _head_sum(trace.sent)
        sent_col = ad.narrow(sent_sum, 1, j, 1)
        word_sum = trace.word[j][0] if m == 1 else _head_sum(trace.word[j])
        parts.append(ad.scale_rows(word_sum, sent_col) * scale)
    alpha_tokens = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    token_ids = [i for ids in trace.token_ids for i in ids]
    keep = np.ones(len(token_ids), dtype=bool)
    if exclude_special:
        keep = np.array([i not in SPECIAL_IDS for i in token_ids], dtype=bool)
    copyable = bool(keep.any())

    indicator = np.zeros((len(token_ids), vocab_size))
    for k, tid in enumerate(token_ids):
        if keep[k]:
            if not 0 <= tid < vocab_size:
                raise ContractError(f"cached token id {tid} outside vocab")
            indicator[k, tid] = 1.0
    alpha_vocab = alpha_tokens @ Tensor._wrap(indicator)

    if exclude_special and copyable:
        mass = alpha_vocab.sum(axis=1, keepdims=True)
        ones = Tensor._wrap(np.ones_like(mass.data))
        alpha_vocab = ad.scale_rows(alpha_vocab, ad.div(ones, mass))

    return CopyWeights(alpha_tokens=alpha_tokens, alpha_vocab=alpha_vocab,
                       token_ids=token_ids, copyable=copyable)


def _head_sum(tensors: list[Tensor]) -> Tensor:
    acc = tensors[0]
    for t in tensors[1:]:
        acc = ad.add(acc, t)
    return acc


def mix_distributions(p_vocab: Tensor, alpha_vocab: Tensor,
                      p_copy: Tensor) -> Tensor:
    """(1 - p_copy) * P_vocab + p_copy * alpha, row-wise."""
    if p_vocab.data.shape != alpha_vocab.data.shape:
        raise ContractError(
            f"mix: P_vocab {p_vocab.shape} vs alpha {alpha_vocab.shape}")
    if p_copy.data.shape != (p_vocab.data.shape[0], 1):
        raise ContractError(f"mix: p_copy shaped {p_copy.shape}")
    return ad.add(ad.scale_rows(p_vocab, 1.0 - p_copy),
                  ad.scale_rows(alpha_vocab, p_copy))
