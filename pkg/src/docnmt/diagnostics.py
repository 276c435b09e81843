"""End-to-end gradient check of one copy-model decode step.

Builds a toy copy model (all four parameter groups trainable), fills the
context caches with two sentences, then checks the autodiff gradient of a
label-smoothed step loss against central finite differences for every
trainable parameter entry.  Cache states are built once and held fixed:
they are detached constants in the forward pass, and the finite-difference
oracle must see the same constants the tape saw.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .gradcheck import GradCheckReport, grad_check
from .model import DocModel, build_params, toy_config
from .model.han import ContextState
from .model.transformer import cross_entropy
from .tokens import BOS_ID


def full_copy_gradcheck(seed: int = 0, h: float = 1e-5,
                        tol: float = 1e-4) -> GradCheckReport:
    cfg = toy_config(11, 13, d_model=8, n_layers=1, m_heads=2, d_ff=16,
                     dropout=0.0, label_smoothing=0.1, n_context=3)
    store = build_params(cfg, np.random.default_rng([seed, 0]))
    store.set_trainable({"base", "ctx_enc", "ctx_dec", "copy"})
    model = DocModel(cfg, store)

    rng = np.random.default_rng([seed, 1])
    context = ContextState(cfg.n_context)
    with ad.no_grad():
        for _ in range(2):
            src = [int(t) for t in rng.integers(4, cfg.vocab_src, size=4)]
            tgt = [int(t) for t in rng.integers(4, cfg.vocab_tgt, size=4)]
            encoded, _ = model.contextual_encode(src, context, "copy",
                                                 train=False)
            entry = model.target_cache_entry(tgt, encoded, context, "copy")
            context.push_source(model.source_cache_entry(encoded))
            context.push_target(entry)

    src = [int(t) for t in rng.integers(4, cfg.vocab_src, size=5)]
    prefix = [BOS_ID] + [int(t) for t in rng.integers(4, cfg.vocab_tgt, size=2)]
    gold = int(rng.integers(4, cfg.vocab_tgt))

    def f():
        encoded, _ = model.contextual_encode(src, context, "copy",
                                             train=False)
        out = model.contextual_decode(prefix, encoded, context, "copy",
                                      positions="last")
        p_vocab = model.output_distribution(out.h_tilde)
        p_w, _, _ = model.copy_mixture(out, encoded, p_vocab)
        return cross_entropy(p_w, [gold], cfg.label_smoothing)

    return grad_check(f, store.trainable(), h=h, tol=tol)
