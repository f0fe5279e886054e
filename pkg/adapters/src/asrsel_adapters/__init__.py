"""Adapters that run (or stand in for) external pretrained models and emit
the selection kernel's wire files: sequence embeddings, baseline and
perturbed decoding hypotheses, and language-model perplexities.

The kernel never imports this package; any tool that writes valid wire
files is interchangeable with it.  Every built-in backend is
deterministic, so repeated runs produce identical bytes.
"""

__version__ = "0.1.0"
