"""Model hyperparameters and the two built-in profiles."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields

from ..errors import ContractError


@dataclass(frozen=True)
class ModelConfig:
    vocab_src: int
    vocab_tgt: int
    d_model: int = 32
    n_layers: int = 2
    m_heads: int = 2
    d_ff: int = 64
    dropout: float = 0.1
    label_smoothing: float = 0.1
    n_context: int = 1
    max_len: int = 256
    tied_embeddings: bool = False  # source/target tables are separate

    def __post_init__(self):
        if self.d_model % self.m_heads != 0:
            raise ContractError(
                f"d_model={self.d_model} not divisible by m_heads={self.m_heads}")
        for name in ("vocab_src", "vocab_tgt", "d_model", "n_layers",
                     "m_heads", "d_ff", "n_context", "max_len"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout outside [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError("label_smoothing outside [0, 1)")
        if self.tied_embeddings:
            raise ContractError("tied embeddings are not supported")

    @property
    def d_head(self) -> int:
        return self.d_model // self.m_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def toy_config(vocab_src: int, vocab_tgt: int, **over) -> ModelConfig:
    """Desk-scale profile used by tests and the synthetic experiment."""
    base = dict(d_model=32, n_layers=2, m_heads=2, d_ff=64,
                dropout=0.1, label_smoothing=0.1, n_context=1, max_len=256)
    base.update(over)
    return ModelConfig(vocab_src=vocab_src, vocab_tgt=vocab_tgt, **base)


def full_scale_config(vocab_src: int, vocab_tgt: int, **over) -> ModelConfig:
    """Full-scale profile; expressible but far beyond desk-scale runtimes."""
    base = dict(d_model=512, n_layers=6, m_heads=8, d_ff=2048,
                dropout=0.1, label_smoothing=0.1, n_context=1, max_len=1024)
    base.update(over)
    return ModelConfig(vocab_src=vocab_src, vocab_tgt=vocab_tgt, **base)
