"""Deterministic monospace rasterization of synthetic tables, plus sizing
rules for externally rendered table images.

Two aspect modes exist: ACT resizes so the larger dimension is the canvas
size, keeps the aspect ratio, and white-pads to a square; FAT stretches to
the full square canvas. Pixels are grayscale in [0, 1] with white = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DecodeError, EmptyImage, UnsupportedGlyph
from .latex import _balanced_group, _read_command_name, _split_parts, parse_structure, tokenize_tsr

CANVAS = 400

GLYPH_W, GLYPH_H = 5, 7

# 5x7 monospace bitmap font ('#' = ink).
_FONT_ROWS = {
    "A": [" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "B": ["#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "],
    "C": [" ####", "#    ", "#    ", "#    ", "#    ", "#    ", " ####"],
    "D": ["#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "],
    "E": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"],
    "F": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "],
    "G": [" ####", "#    ", "#    ", "#  ##", "#   #", "#   #", " ####"],
    "H": ["#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "I": ["#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "#####"],
    "J": ["    #", "    #", "    #", "    #", "#   #", "#   #", " ### "],
    "K": ["#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"],
    "L": ["#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"],
    "M": ["#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"],
    "N": ["#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"],
    "O": [" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "P": ["#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "],
    "Q": [" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"],
    "R": ["#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"],
    "S": [" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "],
    "T": ["#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "],
    "U": ["#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "V": ["#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "],
    "W": ["#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"],
    "X": ["#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"],
    "Y": ["#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "],
    "Z": ["#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"],
    "0": [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    "1": ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "2": [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    "3": [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    "4": ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    "5": ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    "6": [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    "7": ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    "8": [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    "9": [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
    ".": ["     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "],
    "-": ["     ", "     ", "     ", " ### ", "     ", "     ", "     "],
}

GLYPHS = {
    ch: np.array([[1.0 if c == "#" else 0.0 for c in row] for row in rows])
    for ch, rows in _FONT_ROWS.items()
}


class AspectMode(Enum):
    ACT = "act"
    FAT = "fat"


@dataclass
class TableImage:
    width: int
    height: int
    pixels: np.ndarray  # shape (height, width), float in [0, 1], white = 1
    aspect_mode: AspectMode

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, mode: AspectMode) -> "TableImage":
        h, w = pixels.shape
        return cls(width=w, height=h, pixels=pixels, aspect_mode=mode)


def resize_nearest(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic nearest-neighbor resize."""
    h, w = pixels.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return pixels[np.ix_(rows, cols)]


def apply_aspect_mode(pixels: np.ndarray, mode: AspectMode,
                      canvas: int = CANVAS) -> TableImage:
    h, w = pixels.shape
    if h == 0 or w == 0:
        raise EmptyImage("zero-sized image")
    if mode is AspectMode.FAT:
        return TableImage.from_pixels(resize_nearest(pixels, canvas, canvas), mode)
    scale = canvas / max(h, w)
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    content = resize_nearest(pixels, nh, nw)
    out = np.ones((canvas, canvas))
    out[:nh, :nw] = content
    return TableImage.from_pixels(out, mode)


def _cell_grid(normalized: str) -> list[list[tuple[str, int]]]:
    """Extract (cell text, column span) per grid position for layout.

    Handles the synthetic generator's grammar: plain cell text plus
    \\multicolumn / \\multirow commands; rules and row separators.
    """
    _, body = _split_parts(normalized)
    rows: list[list[tuple[str, int]]] = []
    cur_row: list[tuple[str, int]] = []
    text_chars: list[str] = []
    span_cols = 1
    depth = 0
    i, n = 0, len(body)

    def flush_cell():
        nonlocal text_chars, span_cols
        cur_row.append(("".join(text_chars).strip(), span_cols))
        text_chars = []
        span_cols = 1

    def flush_row():
        flush_cell()
        if any(t for t, _ in cur_row) or len(cur_row) > 1:
            rows.append(list(cur_row))
        cur_row.clear()

    while i < n:
        c = body[i]
        if c == "\\" and i + 1 < n:
            nxt = body[i + 1]
            if nxt == "\\" and depth == 0:
                flush_row()
                i += 2
                continue
            if not nxt.isalpha():
                text_chars.append(nxt)
                i += 2
                continue
            name, j = _read_command_name(body, i)
            if depth == 0 and name in ("hline", "toprule", "midrule", "bottomrule"):
                i = j
                continue
            if depth == 0 and name in ("multicolumn", "multirow"):
                while j < n and body[j].isspace():
                    j += 1
                size_arg, j = _balanced_group(body, j)
                while j < n and body[j].isspace():
                    j += 1
                _, j = _balanced_group(body, j)
                while j < n and body[j].isspace():
                    j += 1
                text_arg, j = _balanced_group(body, j)
                if name == "multicolumn":
                    span_cols = int("".join(ch for ch in size_arg if ch.isdigit()))
                text_chars.extend(text_arg)
                i = j
                continue
            i = j  # drop other commands from the visual text
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
        elif c == "&" and depth == 0:
            flush_cell()
        else:
            text_chars.append(c)
        i += 1
    flush_row()
    return rows


def _hline_boundaries(normalized: str) -> set[int]:
    """Row boundaries (0 = above first row) that carry a horizontal rule."""
    seq = tokenize_tsr(normalized)
    boundaries = set()
    n_rowsep = 0
    for tok in seq.tokens:
        if tok.text == "\\\\":
            n_rowsep += 1
        elif tok.text in ("\\hline", "\\toprule", "\\midrule", "\\bottomrule"):
            boundaries.add(n_rowsep)
    return boundaries


def _rule_counts(preamble: str, n_cols: int) -> list[int]:
    """Number of vertical rules at each of the n_cols + 1 column boundaries."""
    counts = [0] * (n_cols + 1)
    col = 0
    for ch in preamble:
        if ch == "|":
            counts[col] += 1
        elif ch in "clr":
            col += 1
    return counts


def rasterize_synthetic(source: str, mode: AspectMode,
                        canvas: int = CANVAS) -> TableImage:
    """Render a synthetic table source to a bitmap with the fixed glyph atlas."""
    structure = parse_structure(tokenize_tsr(source))
    grid = _cell_grid(source)
    n_cols = max(1, structure.n_cols)

    for row in grid:
        for text, _ in row:
            for ch in text:
                if ch != " " and ch not in GLYPHS:
                    raise UnsupportedGlyph(f"no glyph for {ch!r}")

    pad_x, pad_y = 4, 3
    # Column widths from the widest single-column cell; span cells get
    # stretched across their columns.
    widths = [1] * n_cols
    for row in grid:
        col = 0
        for text, span in row:
            if col >= n_cols:
                break
            if span == 1:
                widths[col] = max(widths[col], len(text))
            col += span
    col_px = [w * (GLYPH_W + 1) + 2 * pad_x for w in widths]
    row_px = GLYPH_H + 2 * pad_y
    margin = 4
    n_rows = max(1, len(grid))
    width = margin * 2 + sum(col_px)
    height = margin * 2 + n_rows * row_px
    img = np.ones((height, width))

    x_edges = [margin]
    for w in col_px:
        x_edges.append(x_edges[-1] + w)
    y_edges = [margin + r * row_px for r in range(n_rows + 1)]

    rules = _rule_counts(structure.preamble, n_cols)
    for b, count in enumerate(rules):
        x = x_edges[b] if b < len(x_edges) else x_edges[-1]
        for k in range(count):
            xx = min(max(x - 1 + 2 * k, 0), width - 1)
            img[y_edges[0]:y_edges[-1], xx] = 0.0

    for b in _hline_boundaries(source):
        if b <= n_rows:
            y = min(y_edges[b], height - 1)
            img[y, x_edges[0]:x_edges[-1]] = 0.0

    for r, row in enumerate(grid[:n_rows]):
        col = 0
        for text, span in row:
            if col >= n_cols:
                break
            x0 = x_edges[col] + pad_x
            y0 = y_edges[r] + pad_y
            for k, ch in enumerate(text):
                if ch == " ":
                    continue
                gx = x0 + k * (GLYPH_W + 1)
                if gx + GLYPH_W >= width:
                    break
                glyph = GLYPHS[ch]
                patch = img[y0:y0 + GLYPH_H, gx:gx + GLYPH_W]
                patch[glyph > 0.5] = 0.0
            col += span

    return apply_aspect_mode(img, mode, canvas)


def load_external_image(path: str, mode: AspectMode,
                        canvas: int = CANVAS) -> TableImage:
    """Load a PNG/JPG table image, convert to grayscale, apply mode sizing."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            gray = im.convert("L")
            pixels = np.asarray(gray, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(str(exc)) from exc
    if pixels.size == 0:
        raise EmptyImage(path)
    return apply_aspect_mode(pixels, mode, canvas)


def save_png(image: TableImage, path: str) -> None:
    from PIL import Image

    arr = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_png_pixels(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
