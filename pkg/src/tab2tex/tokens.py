"""Token, token-sequence, and vocabulary types shared by both recognition tasks.

Two task tags exist: TSR (table structure recognition, a closed 26-token
vocabulary of structural LaTeX) and LOCR (character-level content recognition
with an open vocabulary). Token streams serialize as one sample per line with
space-separated token texts; the word delimiter is U+00A6 (broken bar).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

DELIMITER = "¦"  # ¦
CELL_TEXT = "CELL"
LATEX_TOKEN = "\\LATEX_TOKEN"

PAD_TEXT = "<PAD>"
START_TEXT = "<START>"
END_TEXT = "<END>"
UNK_TEXT = "<UNK>"


class Task(Enum):
    TSR = "tsr"
    LOCR = "locr"


class TokenKind(Enum):
    STRUCTURE_COMMAND = "structure"
    ALIGN_SPEC = "align"
    CELL_PLACEHOLDER = "cell"
    CHARACTER = "char"
    LATEX_COMMAND = "command"
    DELIMITER = "delimiter"
    COLUMN_SEP = "colsep"
    ROW_SEP = "rowsep"
    SPECIAL = "special"


@dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be non-empty")
        if self.kind is TokenKind.DELIMITER and self.text != DELIMITER:
            raise ValueError("delimiter token text must be the broken bar")
        if self.kind is TokenKind.CELL_PLACEHOLDER and self.text != CELL_TEXT:
            raise ValueError("cell placeholder text must be CELL")


# Structural commands of the TSR vocabulary; braces act as group markers.
TSR_STRUCTURE_TEXTS = frozenset({
    "\\hline", "\\toprule", "\\midrule", "\\bottomrule",
    "\\hspace", "\\multirow", "\\multicolumn", "\\{", "\\}",
})
TSR_ALIGN_TEXTS = frozenset({"c", "l", "r", "|"})
DIGITS = frozenset("0123456789")

SPECIAL_TEXTS = (PAD_TEXT, START_TEXT, END_TEXT, UNK_TEXT, LATEX_TOKEN)

# The closed TSR vocabulary, in its canonical order.
TSR_VOCAB_TEXTS = (
    "&", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", CELL_TEXT,
    "\\\\", "\\hline", "\\hspace", "\\multirow", "\\multicolumn",
    "\\toprule", "\\midrule", "\\bottomrule",
    "c", "l", "r", "|", "\\{", "\\}",
)


def token_from_text(text: str, task: Task) -> Token:
    """Classify a serialized token text back into a Token for the given task."""
    if text in SPECIAL_TEXTS:
        return Token(text, TokenKind.SPECIAL)
    if text == "&":
        return Token(text, TokenKind.COLUMN_SEP)
    if text == "\\\\":
        return Token(text, TokenKind.ROW_SEP)
    if task is Task.TSR:
        if text == CELL_TEXT:
            return Token(text, TokenKind.CELL_PLACEHOLDER)
        if text in TSR_STRUCTURE_TEXTS:
            return Token(text, TokenKind.STRUCTURE_COMMAND)
        if text in TSR_ALIGN_TEXTS:
            return Token(text, TokenKind.ALIGN_SPEC)
        if text in DIGITS:
            return Token(text, TokenKind.CHARACTER)
        raise ValueError(f"not a TSR vocabulary token: {text!r}")
    # LOCR
    if text == DELIMITER:
        return Token(text, TokenKind.DELIMITER)
    if text.startswith("\\"):
        return Token(text, TokenKind.LATEX_COMMAND)
    if len(text) == 1:
        return Token(text, TokenKind.CHARACTER)
    raise ValueError(f"not a LOCR token: {text!r}")


@dataclass(frozen=True)
class TokenSequence:
    task: Task
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def to_line(self) -> str:
        return " ".join(self.texts())

    @classmethod
    def from_line(cls, task: Task, line: str) -> "TokenSequence":
        toks = tuple(token_from_text(t, task) for t in line.split())
        return cls(task, toks)

    @classmethod
    def from_texts(cls, task: Task, texts: Iterable[str]) -> "TokenSequence":
        return cls(task, tuple(token_from_text(t, task) for t in texts))


class Vocabulary:
    """Dense bijective token-text <-> integer-id map with reserved special ids."""

    def __init__(self, task: Task, item_texts: Iterable[str]):
        self.task = task
        self.texts: list[str] = list(SPECIAL_TEXTS)
        seen = set(self.texts)
        for t in item_texts:
            if t not in seen:
                seen.add(t)
                self.texts.append(t)
        self.ids = {t: i for i, t in enumerate(self.texts)}
        self.pad_id = self.ids[PAD_TEXT]
        self.start_id = self.ids[START_TEXT]
        self.end_id = self.ids[END_TEXT]
        self.unk_id = self.ids[UNK_TEXT]
        self.latex_token_id = self.ids[LATEX_TOKEN]

    def __len__(self) -> int:
        return len(self.texts)

    def __contains__(self, text: str) -> bool:
        return text in self.ids

    def encode(self, seq: TokenSequence, add_markers: bool = False) -> list[int]:
        ids = [self.ids.get(t.text, self.unk_id) for t in seq.tokens]
        if add_markers:
            ids = [self.start_id] + ids + [self.end_id]
        return ids

    def decode(self, ids: Iterable[int]) -> TokenSequence:
        texts = []
        for i in ids:
            t = self.texts[i]
            if t in (PAD_TEXT, START_TEXT, END_TEXT):
                continue
            texts.append(t)
        return TokenSequence.from_texts(self.task, texts)

    @classmethod
    def tsr(cls) -> "Vocabulary":
        return cls(Task.TSR, TSR_VOCAB_TEXTS)

    @classmethod
    def for_locr(cls, sequences: Iterable[TokenSequence]) -> "Vocabulary":
        texts = sorted({t.text for seq in sequences for t in seq.tokens})
        return cls(Task.LOCR, texts)
