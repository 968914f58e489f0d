"""Sequence classification of multichannel signals through tokenized SPD matrices."""
__version__ = "0.1.0"
