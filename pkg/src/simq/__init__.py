"""Retrieval of semantically similar solved questions.

Questions are encoded into fixed-length vectors by an LSTM trained on
auto-generated labeled question pairs; an inverted index over
keyword/category/intention triples narrows millions of stored questions
to a small candidate set before vector scoring.
"""

from .errors import DataFormatError, SimqError, TrainingError

__version__ = "0.1.0"

__all__ = ["SimqError", "DataFormatError", "TrainingError", "__version__"]
