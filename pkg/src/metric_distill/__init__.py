"""Metric-guided distillation for retrieve-then-rank pipelines.

A dual-encoder retriever and a cross-encoder ranker are trained so that
their candidate orderings agree with the orderings a text-generation
metric (BLEU, ROUGE) induces against reference sentences.
"""

__version__ = "0.1.0"
