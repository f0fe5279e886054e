"""Reference-free data selection toolkit for ASR pseudo-label adaptation.

Stages: acoustic features -> target-aware preselection -> hypothesis
scoring -> percentile selection -> evaluation.  Everything communicates
through flat files (JSONL and a small binary embedding format), so each
stage is independently auditable and reproducible.
"""

__version__ = "0.1.0"
