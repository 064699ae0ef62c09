"""Budgeted RAG evidence selection via information-gain pruning.

Pipeline stages: BM25 retrieval -> generator-aligned rerank/prune -> budget
truncation -> answer generation -> quality/cost metrics.
"""

__version__ = "0.1.0"
