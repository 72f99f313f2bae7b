"""Cloze reading comprehension with supervision-guided self-attention."""

__version__ = "0.1.0"
