"""Transformer building blocks on the autodiff core.

All activations are 2-d [positions, features] tensors; attention masks are
plain boolean numpy arrays (True = blocked).
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError, ShapeError


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(r)) v for q [a, r], k [b, r], v [b, w].

    Returns (output [a, w], weights [a, b]); each weight row sums to 1.
    A fully masked row is a caller bug and raises ContractError.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("scaled_dot_attention needs 2-d operands")
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"scaled_dot_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    r = q.data.shape[1]
    logits = (q @ k.T) * (1.0 / math.sqrt(r))
    if mask is not None:
        if mask.shape != logits.data.shape:
            raise ShapeError(f"mask {mask.shape} vs logits {logits.shape}")
        if mask.all(axis=1).any():
            raise ContractError("attention row is fully masked")
        logits = ad.masked_fill(logits, mask, -np.inf)
    weights = ad.softmax_lastdim(logits)
    return weights @ v, weights


def multi_head_attention(q_rows: Tensor, k_rows: Tensor, v_rows: Tensor,
                         p: dict[str, Tensor], m: int,
                         mask: np.ndarray | None = None
                         ) -> tuple[Tensor, list[Tensor]]:
    """m parallel projected attentions, concatenated and re-projected.

    ``p`` holds the square projections wq, wk, wv, wo.  Returns the output
    rows and the per-head post-softmax weight matrices.
    """
    d = q_rows.data.shape[1]
    if d % m != 0:
        raise ShapeError(f"d_model {d} not divisible by heads {m}")
    dh = d // m
    q = q_rows @ p["wq"]
    k = k_rows @ p["wk"]
    v = v_rows @ p["wv"]
    outs, head_weights = [], []
    for h in range(m):
        sl = slice(h * dh, (h + 1) * dh)
        out_h, w_h = scaled_dot_attention(
            ad.narrow(q, 1, h * dh, dh),
            ad.narrow(k, 1, h * dh, dh),
            ad.narrow(v, 1, h * dh, dh),
            mask)
        outs.append(out_h)
        head_weights.append(w_h)
    merged = outs[0] if m == 1 else ad.concat(outs, axis=1)
    return merged @ p["wo"], head_weights


def positionwise_ffn(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Two linear maps with a ReLU between, applied per position."""
    return ad.add_bias(ad.relu(ad.add_bias(x @ p["w1"], p["b1"])) @ p["w2"], p["b2"])


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table [n, d]."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / d)
    table = np.empty((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def causal_mask(n: int) -> np.ndarray:
    """True above the diagonal: position i may not attend to j > i."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def cross_entropy(p_rows: Tensor, gold: list[int] | np.ndarray,
                  smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross-entropy over probability rows.

    loss_t = -(1 - eps) * log p_t[gold_t] - (eps / V) * sum_v log p_t[v].
    With eps = 0 this is plain NLL.  Probabilities are clamped at 1e-12
    inside the log (clamp events are counted on the autodiff module).
    """
    gold = np.asarray(gold, dtype=np.intp)
    if p_rows.data.ndim != 2 or p_rows.data.shape[0] != gold.shape[0]:
        raise ContractError(
            f"cross_entropy: rows {p_rows.shape} vs gold {gold.shape}")
    if not 0.0 <= smoothing < 1.0:
        raise ContractError("smoothing outside [0, 1)")
    logs = ad.clamped_log(p_rows)
    nll = -ad.take_per_row(logs, gold).mean()
    if smoothing == 0.0:
        return nll
    v = p_rows.data.shape[1]
    uniform = -logs.mean()  # mean over T*V == (1/V) sum_v, averaged over rows
    return (1.0 - smoothing) * nll + smoothing * uniform
