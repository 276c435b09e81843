"""Document-level NMT toolkit: context-aware Transformer with a copy mechanism.

Everything runs on a small float64 autodiff core (`docnmt.autodiff`); models,
training stages, decoding and metrics are desk-scale and fully deterministic
given one seed.
"""

__version__ = "0.1.0"
