"""Tabular LaTeX normalization, tokenization, structure parsing, and merging.

The structure task reduces a table to its skeleton (alignment preamble, rules,
separators, spans) with one CELL placeholder per non-empty cell. The content
task emits cell text as single-character tokens, with backslash commands kept
whole and a broken-bar delimiter closing every word-like run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import (
    CellCountMismatch,
    MalformedSource,
    NoPreamble,
    UnbalancedBraces,
    UnknownStructure,
)
from .tokens import DELIMITER, Task, Token, TokenKind, TokenSequence

BEGIN_TABULAR = "\\begin{tabular}"
END_TABULAR = "\\end{tabular}"

RULE_COMMANDS = ("hline", "toprule", "midrule", "bottomrule")

_REMOVED_COMMANDS = re.compile(
    r"\\(?:cite|ref|label)\s*(?:\[[^\]]*\])?\s*\{[^{}]*\}"
)


def strip_comments(text: str) -> str:
    """Drop % to end-of-line, keeping escaped percent signs (\\%)."""
    out = []
    for line in text.split("\n"):
        i = 0
        while i < len(line):
            if line[i] == "%":
                # A % is a comment start unless escaped by an odd number of
                # preceding backslashes.
                n_bs = 0
                j = i - 1
                while j >= 0 and line[j] == "\\":
                    n_bs += 1
                    j -= 1
                if n_bs % 2 == 0:
                    line = line[:i]
                    break
            i += 1
        out.append(line)
    return "\n".join(out)


def _find_block(text: str, start: int = 0) -> tuple[int, int] | None:
    """Locate the next outermost tabular block; returns (begin, end) offsets
    spanning \\begin{tabular}...\\end{tabular} inclusive, or None."""
    b = text.find(BEGIN_TABULAR, start)
    if b < 0:
        return None
    depth = 1
    i = b + len(BEGIN_TABULAR)
    while depth > 0:
        nb = text.find(BEGIN_TABULAR, i)
        ne = text.find(END_TABULAR, i)
        if ne < 0:
            return (b, -1)  # unterminated
        if 0 <= nb < ne:
            depth += 1
            i = nb + len(BEGIN_TABULAR)
        else:
            depth -= 1
            i = ne + len(END_TABULAR)
    return (b, i)


def _braces_balanced(text: str) -> bool:
    depth = 0
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            i += 2  # escaped char, including \{ and \}
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                return False
        i += 1
    return depth == 0


def normalize_table_source(raw: str) -> str:
    """Canonicalize a tabular block: strip comments, drop \\cite/\\ref/\\label,
    collapse whitespace. Idempotent; rejects nested tabular environments."""
    text = strip_comments(raw)
    loc = _find_block(text)
    if loc is None:
        raise MalformedSource("no \\begin{tabular} block found")
    b, e = loc
    if e < 0:
        raise MalformedSource("missing \\end{tabular}")
    block = text[b:e]
    if block.count(BEGIN_TABULAR) > 1:
        raise MalformedSource("nested tabular environments are not supported")
    block = _REMOVED_COMMANDS.sub(" ", block)
    if not _braces_balanced(block):
        raise MalformedSource("unbalanced braces in tabular block")
    return re.sub(r"\s+", " ", block).strip()


def _balanced_group(text: str, i: int) -> tuple[str, int]:
    """Read a {...} group starting at text[i]; returns (content, next index)."""
    if i >= len(text) or text[i] != "{":
        raise UnbalancedBraces(f"expected '{{' at offset {i}")
    depth = 0
    j = i
    while j < len(text):
        c = text[j]
        if c == "\\" and j + 1 < len(text):
            j += 2
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return text[i + 1:j], j + 1
        j += 1
    raise UnbalancedBraces("unterminated group")


def _split_parts(normalized: str) -> tuple[str, str]:
    """Split a normalized block into (column spec, body)."""
    b = normalized.find(BEGIN_TABULAR)
    if b < 0:
        raise MalformedSource("not a tabular block")
    i = b + len(BEGIN_TABULAR)
    while i < len(normalized) and normalized[i].isspace():
        i += 1
    if i < len(normalized) and normalized[i] == "[":
        i = normalized.index("]", i) + 1
        while i < len(normalized) and normalized[i].isspace():
            i += 1
    colspec, i = _balanced_group(normalized, i)
    e = normalized.rfind(END_TABULAR)
    if e < 0:
        raise MalformedSource("missing \\end{tabular}")
    return colspec, normalized[i:e]


def _read_command_name(text: str, i: int) -> tuple[str, int]:
    """Read the alphabetic command name following a backslash at text[i]."""
    j = i + 1
    while j < len(text) and text[j].isalpha():
        j += 1
    return text[i + 1:j], j


def _t(text: str, kind: TokenKind) -> Token:
    return Token(text, kind)


def _preamble_tokens(colspec: str) -> list[Token]:
    toks = [_t("\\{", TokenKind.STRUCTURE_COMMAND)]
    for ch in colspec:
        if ch in "clr":
            toks.append(_t(ch, TokenKind.ALIGN_SPEC))
        elif ch == "|":
            toks.append(_t("|", TokenKind.ALIGN_SPEC))
        elif ch.isspace():
            continue
        else:
            raise UnknownStructure(f"unsupported column spec character {ch!r}")
    toks.append(_t("\\}", TokenKind.STRUCTURE_COMMAND))
    return toks


def _span_tokens(command: str, body: str, i: int) -> tuple[list[Token], int, bool]:
    """Tokenize \\multicolumn/\\multirow with its three argument groups.
    Returns (tokens, next index, has_content)."""
    while i < len(body) and body[i].isspace():
        i += 1
    size_arg, i = _balanced_group(body, i)
    digits = [c for c in size_arg if c.isdigit()]
    if not digits:
        raise UnknownStructure(f"non-numeric span size {size_arg!r}")
    while i < len(body) and body[i].isspace():
        i += 1
    mid_arg, i = _balanced_group(body, i)
    while i < len(body) and body[i].isspace():
        i += 1
    text_arg, i = _balanced_group(body, i)

    toks = [_t(command, TokenKind.STRUCTURE_COMMAND),
            _t("\\{", TokenKind.STRUCTURE_COMMAND)]
    toks += [_t(d, TokenKind.CHARACTER) for d in digits]
    toks.append(_t("\\}", TokenKind.STRUCTURE_COMMAND))
    toks.append(_t("\\{", TokenKind.STRUCTURE_COMMAND))
    if command == "\\multicolumn":
        for ch in mid_arg:
            if ch in "clr":
                toks.append(_t(ch, TokenKind.ALIGN_SPEC))
            elif ch == "|":
                toks.append(_t("|", TokenKind.ALIGN_SPEC))
    # multirow width argument carries no structural information; drop it
    toks.append(_t("\\}", TokenKind.STRUCTURE_COMMAND))
    toks.append(_t("\\{", TokenKind.STRUCTURE_COMMAND))
    has_content = bool(text_arg.strip())
    if has_content:
        toks.append(_t("CELL", TokenKind.CELL_PLACEHOLDER))
    toks.append(_t("\\}", TokenKind.STRUCTURE_COMMAND))
    return toks, i, has_content


def tokenize_tsr(normalized: str) -> TokenSequence:
    """Reduce a normalized tabular block to its structure token stream."""
    colspec, body = _split_parts(normalized)
    toks = _preamble_tokens(colspec)

    pending = False      # current cell region contains content
    cell_has_span = False

    def flush():
        nonlocal pending, cell_has_span
        if pending and not cell_has_span:
            toks.append(_t("CELL", TokenKind.CELL_PLACEHOLDER))
        pending = False
        cell_has_span = False

    depth = 0
    i = 0
    n = len(body)
    while i < n:
        c = body[i]
        if c == "\\" and i + 1 < n:
            nxt = body[i + 1]
            if nxt == "\\":
                if depth == 0:
                    flush()
                    toks.append(_t("\\\\", TokenKind.ROW_SEP))
                    i += 2
                    if i < n and body[i] == "[":  # optional spacing arg
                        i = body.index("]", i) + 1
                else:
                    pending = True
                    i += 2
                continue
            if not nxt.isalpha():
                pending = True  # escaped symbol is cell content
                i += 2
                continue
            name, j = _read_command_name(body, i)
            if depth == 0 and name in RULE_COMMANDS:
                toks.append(_t("\\" + name, TokenKind.STRUCTURE_COMMAND))
                i = j
                continue
            if depth == 0 and name == "hspace":
                if j < n and body[j] == "*":
                    j += 1
                while j < n and body[j].isspace():
                    j += 1
                arg, j = _balanced_group(body, j)
                toks.append(_t("\\hspace", TokenKind.STRUCTURE_COMMAND))
                toks.append(_t("\\{", TokenKind.STRUCTURE_COMMAND))
                toks += [_t(d, TokenKind.CHARACTER) for d in arg if d.isdigit()]
                toks.append(_t("\\}", TokenKind.STRUCTURE_COMMAND))
                i = j
                continue
            if depth == 0 and name in ("multicolumn", "multirow"):
                span_toks, j, _ = _span_tokens("\\" + name, body, j)
                toks += span_toks
                cell_has_span = True
                i = j
                continue
            # any other command is cell content
            pending = True
            i = j
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBraces("unexpected '}' in tabular body")
        elif depth == 0 and c == "&":
            flush()
            toks.append(_t("&", TokenKind.COLUMN_SEP))
        elif not c.isspace():
            pending = True
        i += 1
    if depth != 0:
        raise UnbalancedBraces("unbalanced braces in tabular body")
    flush()
    return TokenSequence(Task.TSR, tuple(toks))


_WORD_CHARS_EXTRA = "."  # periods join digit runs: 85.48 is one word


def _is_word_char_token(tok: Token) -> bool:
    if tok.kind is not TokenKind.CHARACTER:
        return False
    return tok.text.isalnum() or tok.text in _WORD_CHARS_EXTRA


def _insert_delimiters(raw: list[Token | None]) -> list[Token]:
    """Close each maximal run of word characters (containing at least one
    alphanumeric) with a delimiter token. None entries mark source spaces."""
    out: list[Token] = []
    run_has_alnum = False

    def close_run():
        nonlocal run_has_alnum
        if run_has_alnum:
            out.append(_t(DELIMITER, TokenKind.DELIMITER))
        run_has_alnum = False

    for tok in raw:
        if tok is None:
            close_run()
            continue
        if _is_word_char_token(tok):
            out.append(tok)
            if tok.text.isalnum():
                run_has_alnum = True
        else:
            close_run()
            out.append(tok)
    close_run()
    return out


def tokenize_locr(normalized: str) -> TokenSequence:
    """Emit a normalized tabular block's content as character-level tokens."""
    _, body = _split_parts(normalized)
    raw: list[Token | None] = []
    i = 0
    n = len(body)
    while i < n:
        c = body[i]
        if c == "\\" and i + 1 < n:
            nxt = body[i + 1]
            if nxt == "\\":
                raw.append(_t("\\\\", TokenKind.ROW_SEP))
                i += 2
                if i < n and body[i] == "[":
                    i = body.index("]", i) + 1
                continue
            if not nxt.isalpha():
                raw.append(_t(c + nxt, TokenKind.LATEX_COMMAND))
                i += 2
                continue
            name, j = _read_command_name(body, i)
            if name in RULE_COMMANDS:
                i = j
                continue
            if name == "hspace":  # structural spacing owned by the TSR stream
                if j < n and body[j] == "*":
                    j += 1
                while j < n and body[j].isspace():
                    j += 1
                _, j = _balanced_group(body, j)
                i = j
                continue
            if name == "LATEX":  # corpus mask token \LATEX_TOKEN
                if body[j:j + 6] == "_TOKEN":
                    raw.append(_t("\\LATEX_TOKEN", TokenKind.SPECIAL))
                    i = j + 6
                    continue
            raw.append(_t("\\" + name, TokenKind.LATEX_COMMAND))
            i = j
            continue
        if c == "&":
            raw.append(_t("&", TokenKind.COLUMN_SEP))
        elif c.isspace():
            raw.append(None)
        else:
            raw.append(_t(c, TokenKind.CHARACTER))
        i += 1
    toks = _insert_delimiters(raw)
    depth = 0
    for tok in toks:
        if tok.kind is TokenKind.CHARACTER and tok.text == "{":
            depth += 1
        elif tok.kind is TokenKind.CHARACTER and tok.text == "}":
            depth -= 1
    if depth != 0:
        raise UnbalancedBraces("unbalanced braces in content stream")
    return TokenSequence(Task.LOCR, tuple(toks))


def _detok_tsr(texts: list[str], cells: list[str] | None = None) -> str:
    """Render structure tokens back to LaTeX. When cells is given, CELL
    placeholders are replaced in reading order (used by the merger)."""
    parts: list[str] = []
    cell_iter = iter(cells) if cells is not None else None

    def cell_text() -> str:
        if cell_iter is None:
            return "CELL"
        return next(cell_iter)

    i = 0
    n = len(texts)

    def read_group(j: int) -> tuple[str, int]:
        if j >= n or texts[j] != "\\{":
            return "", j
        j += 1
        inner: list[str] = []
        while j < n and texts[j] != "\\}":
            inner.append(cell_text() if texts[j] == "CELL" else texts[j])
            j += 1
        return "".join(inner), j + 1

    if i < n and texts[i] == "\\{":
        spec, i = read_group(i)
        parts.append("{" + spec + "}")
    while i < n:
        t = texts[i]
        if t in ("\\multicolumn", "\\multirow"):
            i += 1
            groups = []
            for _ in range(3):
                g, i = read_group(i)
                groups.append(g)
            parts.append(t + "".join("{" + g + "}" for g in groups))
        elif t == "\\hspace":
            i += 1
            g, i = read_group(i)
            parts.append(t + "{" + g + "}")
        elif t == "CELL":
            parts.append(cell_text())
            i += 1
        else:
            parts.append(t)
            i += 1
    return re.sub(r"\s+", " ", " ".join(p for p in parts if p)).strip()


def _detok_locr(tokens: tuple[Token, ...]) -> str:
    parts: list[str] = []
    for idx, tok in enumerate(tokens):
        nxt = tokens[idx + 1] if idx + 1 < len(tokens) else None
        if tok.kind is TokenKind.DELIMITER:
            if nxt is not None and nxt.kind is TokenKind.CHARACTER and nxt.text.isalnum():
                parts.append(" ")
            continue
        if tok.kind in (TokenKind.COLUMN_SEP, TokenKind.ROW_SEP):
            parts.append(" " + tok.text + " ")
            continue
        parts.append(tok.text)
        if (tok.kind is TokenKind.LATEX_COMMAND and tok.text[1:].isalpha()
                and nxt is not None and nxt.kind is TokenKind.CHARACTER
                and nxt.text.isalpha()):
            parts.append(" ")
        if tok.kind is TokenKind.SPECIAL and nxt is not None:
            parts.append(" ")
    return re.sub(r"\s+", " ", "".join(parts)).strip()


def detokenize(seq: TokenSequence) -> str:
    """Inverse of the task tokenizer up to whitespace normalization."""
    if seq.task is Task.TSR:
        return _detok_tsr([t.text for t in seq.tokens])
    return _detok_locr(seq.tokens)


@dataclass(frozen=True)
class Span:
    kind: str          # "multicolumn" or "multirow"
    size: int
    row: int
    col: int


@dataclass(frozen=True)
class TableStructure:
    column_alignments: tuple[str, ...]
    preamble: str
    n_rows: int
    n_cols: int
    spans: tuple[Span, ...]


def parse_structure(seq: TokenSequence) -> TableStructure:
    """Read the parsed skeleton out of a structure token sequence."""
    if seq.task is not Task.TSR:
        raise ValueError("parse_structure requires a TSR sequence")
    texts = list(seq.texts())
    if not texts or texts[0] != "\\{":
        raise NoPreamble("sequence does not begin with a column spec")
    i = 1
    alignments: list[str] = []
    preamble_chars: list[str] = []
    while i < len(texts) and texts[i] != "\\}":
        t = texts[i]
        preamble_chars.append(t)
        if t in ("c", "l", "r"):
            alignments.append(t)
        i += 1
    if i == len(texts):
        raise NoPreamble("unterminated column spec")
    i += 1

    def skip_group(j: int) -> tuple[list[str], int]:
        if j >= len(texts) or texts[j] != "\\{":
            return [], j
        j += 1
        inner = []
        while j < len(texts) and texts[j] != "\\}":
            inner.append(texts[j])
            j += 1
        return inner, j + 1

    spans: list[Span] = []
    n_rowsep = 0
    trailing_content = False
    col = 0
    pending_width = 1
    while i < len(texts):
        t = texts[i]
        if t == "\\\\":
            n_rowsep += 1
            trailing_content = False
            col = 0
            pending_width = 1
            i += 1
        elif t == "&":
            col += pending_width
            pending_width = 1
            i += 1
        elif t in ("\\multicolumn", "\\multirow"):
            i += 1
            size_toks, i = skip_group(i)
            _, i = skip_group(i)
            _, i = skip_group(i)
            size = int("".join(size_toks)) if size_toks else 1
            kind = t[1:]
            spans.append(Span(kind, size, n_rowsep, col))
            if kind == "multicolumn":
                pending_width = size
            trailing_content = True
        elif t == "CELL":
            trailing_content = True
            i += 1
        elif t == "\\hspace":
            i += 1
            _, i = skip_group(i)
        else:
            i += 1
    n_rows = n_rowsep + (1 if trailing_content else 0)
    if n_rows == 0 and n_rowsep == 0 and not alignments:
        raise NoPreamble("empty structure")
    return TableStructure(
        column_alignments=tuple(alignments),
        preamble="".join(preamble_chars),
        n_rows=n_rows,
        n_cols=len(alignments),
        spans=tuple(spans),
    )


class TokenCategory(Enum):
    AN = "an"       # alphanumeric characters
    LT = "lt"       # multi-character LaTeX commands
    LS = "ls"       # backslash-escaped single symbols
    NLS = "nls"     # plain symbols
    OTHER = "other"  # delimiter / separators / specials


def classify_token(tok: Token) -> TokenCategory:
    """Assign a content token to one of the four content categories; stream
    artifacts (delimiter, separators, specials) fall into OTHER."""
    if tok.kind in (TokenKind.DELIMITER, TokenKind.COLUMN_SEP,
                    TokenKind.ROW_SEP, TokenKind.SPECIAL,
                    TokenKind.CELL_PLACEHOLDER):
        return TokenCategory.OTHER
    if tok.kind is TokenKind.LATEX_COMMAND:
        name = tok.text[1:]
        if len(name) == 1 and not name.isalpha():
            return TokenCategory.LS
        return TokenCategory.LT
    if tok.text.isalnum():
        return TokenCategory.AN
    return TokenCategory.NLS


def _content_regions(content: TokenSequence) -> list[tuple[Token, ...]]:
    regions: list[tuple[Token, ...]] = []
    current: list[Token] = []
    for tok in content.tokens:
        if tok.kind in (TokenKind.COLUMN_SEP, TokenKind.ROW_SEP):
            regions.append(tuple(current))
            current = []
        else:
            current.append(tok)
    regions.append(tuple(current))
    return regions


def merge_tsr_locr(structure: TokenSequence, content: TokenSequence) -> str:
    """Substitute decoded content cells for the CELL placeholders of a
    structure stream, in reading order."""
    if structure.task is not Task.TSR or content.task is not Task.LOCR:
        raise ValueError("merge expects a TSR structure and a LOCR content stream")
    n_cells = sum(1 for t in structure.tokens
                  if t.kind is TokenKind.CELL_PLACEHOLDER)
    cells = [_detok_locr(r) for r in _content_regions(content)]
    cells = [c for c in cells if c]
    if len(cells) != n_cells:
        raise CellCountMismatch(n_cells, len(cells))
    return _detok_tsr([t.text for t in structure.tokens], cells)
