"""Desk-scale toolkit for small multilingual language models.

Subpackages cover the full pipeline: byte-level BPE tokenization, corpus
cleaning and sharding, instruction-dataset construction, a decoder-only
transformer with hand-written gradients, a streaming attention kernel,
training, and zero-shot evaluation.
"""

__version__ = "0.1.0"
