"""Desk-scale benchmark for multi-view echo-study video/report retrieval.

The package generates a synthetic corpus of imaging studies (several short
video clips per study, each labelled with a probe view, plus one structured
report), trains small contrastive encoders that embed clips and reports into
a shared space, and evaluates cross-modal retrieval at the study level.
Everything is seeded and deterministic so that repeated runs produce
byte-identical artifacts.
"""

__version__ = "0.1.0"
