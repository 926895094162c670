"""Table image to LaTeX: structure recognition, content OCR, metrics,
corpus tooling, and a from-scratch trainable image-to-sequence model."""

from .latex import (
    TableStructure,
    TokenCategory,
    classify_token,
    detokenize,
    merge_tsr_locr,
    normalize_table_source,
    parse_structure,
    tokenize_locr,
    tokenize_tsr,
)
from .tokens import Task, Token, TokenKind, TokenSequence, Vocabulary

__all__ = [
    "Task",
    "Token",
    "TokenKind",
    "TokenSequence",
    "Vocabulary",
    "TableStructure",
    "TokenCategory",
    "classify_token",
    "detokenize",
    "merge_tsr_locr",
    "normalize_table_source",
    "parse_structure",
    "tokenize_locr",
    "tokenize_tsr",
]

__version__ = "0.1.0"
