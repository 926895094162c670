"""Corpus construction: tabular snippet extraction, rare-command masking,
synthetic table generation, and versioned dataset builds.

A dataset variant fixes the task target and its maximum sequence length
(TSRD and LOCRD250 at 250 tokens, LOCRD500 at 500). Manifests are JSON Lines:
a header record followed by one record per sample.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import EmptyDataset, MalformedSource, Tab2TexError, UnknownStructure
from .latex import (
    BEGIN_TABULAR,
    _braces_balanced,
    _find_block,
    normalize_table_source,
    strip_comments,
    tokenize_locr,
    tokenize_tsr,
)
from .raster import CANVAS, AspectMode, rasterize_synthetic, save_png
from .tokens import LATEX_TOKEN, Task, Token, TokenKind, TokenSequence

MANIFEST_VERSION = 1
DEFAULT_MASK_THRESHOLD = 1000


def extract_tabulars(document: str, diagnostics: dict | None = None) -> list[str]:
    """All outermost balanced tabular blocks, in document order. Commented-out
    and unbalanced blocks are skipped (counted in diagnostics if given)."""
    text = strip_comments(document)
    snippets: list[str] = []
    skipped = 0
    pos = 0
    while True:
        loc = _find_block(text, pos)
        if loc is None:
            break
        b, e = loc
        if e < 0:
            skipped += 1
            pos = b + len(BEGIN_TABULAR)
            continue
        block = text[b:e]
        if _braces_balanced(block):
            snippets.append(block)
        else:
            skipped += 1
        pos = e
    if diagnostics is not None:
        diagnostics["skipped"] = diagnostics.get("skipped", 0) + skipped
    return snippets


def mask_rare_commands(corpus: list[TokenSequence],
                       threshold: int = DEFAULT_MASK_THRESHOLD) -> list[TokenSequence]:
    """Replace LaTeX command tokens rarer than threshold (corpus-wide counts,
    taken before any replacement) with the mask token."""
    freq: Counter[str] = Counter()
    for seq in corpus:
        for tok in seq.tokens:
            if tok.kind is TokenKind.LATEX_COMMAND:
                freq[tok.text] += 1
    mask = Token(LATEX_TOKEN, TokenKind.SPECIAL)
    out = []
    for seq in corpus:
        toks = tuple(
            mask if (t.kind is TokenKind.LATEX_COMMAND and freq[t.text] < threshold)
            else t
            for t in seq.tokens
        )
        out.append(TokenSequence(seq.task, toks))
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    rows: tuple[int, int] = (2, 4)
    cols: tuple[int, int] = (2, 4)
    span_probability: float = 0.0
    cell_alphabet: str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    max_word_len: int = 3
    max_words_per_cell: int = 1
    hline_probability: float = 0.6
    rule_probability: float = 0.3

    def __post_init__(self):
        if self.rows[0] > self.rows[1] or self.cols[0] > self.cols[1]:
            raise ValueError("empty row/col range")
        if not 0.0 <= self.span_probability <= 1.0:
            raise ValueError("span probability outside [0, 1]")


@dataclass(frozen=True)
class SyntheticTable:
    source: str
    n_rows: int
    n_cols: int
    multicolumn_sizes: tuple[int, ...] = ()
    multirow_sizes: tuple[int, ...] = ()

    @property
    def has_span(self) -> bool:
        return bool(self.multicolumn_sizes or self.multirow_sizes)


def _random_word(rng: random.Random, spec: SyntheticSpec) -> str:
    k = rng.randint(1, spec.max_word_len)
    return "".join(rng.choice(spec.cell_alphabet) for _ in range(k))


def _random_cell(rng: random.Random, spec: SyntheticSpec) -> str:
    n = rng.randint(1, spec.max_words_per_cell)
    return " ".join(_random_word(rng, spec) for _ in range(n))


def generate_synthetic_tables(seed: int, spec: SyntheticSpec,
                              count: int) -> list[SyntheticTable]:
    """Deterministically generate valid normalized tabular sources with known
    ground-truth structure metadata."""
    rng = random.Random(seed)
    tables = []
    for _ in range(count):
        n_rows = rng.randint(*spec.rows)
        n_cols = rng.randint(*spec.cols)

        pieces = []
        for b in range(n_cols + 1):
            if rng.random() < spec.rule_probability:
                pieces.append("||" if rng.random() < 0.15 else "|")
            if b < n_cols:
                pieces.append(rng.choice("clr"))
        colspec = "".join(pieces)

        cells = [[_random_cell(rng, spec) for _ in range(n_cols)]
                 for _ in range(n_rows)]
        mc_sizes: list[int] = []
        mr_sizes: list[int] = []
        if rng.random() < spec.span_probability and n_rows >= 2 and n_cols >= 2:
            if rng.random() < 0.5:
                r = rng.randrange(n_rows)
                c0 = rng.randrange(n_cols - 1)
                k = rng.randint(2, min(3, n_cols - c0))
                word = _random_word(rng, spec)
                align = rng.choice("clr")
                cells[r][c0] = f"\\multicolumn{{{k}}}{{{align}}}{{{word}}}"
                for c in range(c0 + 1, c0 + k):
                    cells[r][c] = None  # consumed by the span
                mc_sizes.append(k)
            else:
                c = rng.randrange(n_cols)
                r0 = rng.randrange(n_rows - 1)
                k = rng.randint(2, min(3, n_rows - r0))
                word = _random_word(rng, spec)
                cells[r0][c] = f"\\multirow{{{k}}}{{*}}{{{word}}}"
                for r in range(r0 + 1, r0 + k):
                    cells[r][c] = ""
                mr_sizes.append(k)

        hlines = [rng.random() < spec.hline_probability
                  for _ in range(n_rows + 1)]
        body_parts = []
        if hlines[0]:
            body_parts.append("\\hline")
        for r in range(n_rows):
            row = " & ".join(c for c in cells[r] if c is not None)
            body_parts.append(row)
            if r < n_rows - 1 or hlines[n_rows]:
                body_parts.append("\\\\")
            if r < n_rows - 1 and hlines[r + 1]:
                body_parts.append("\\hline")
        if hlines[n_rows]:
            body_parts.append("\\hline")
        source = f"\\begin{{tabular}}{{{colspec}}} " + " ".join(body_parts) \
                 + " \\end{tabular}"
        tables.append(SyntheticTable(
            source=source, n_rows=n_rows, n_cols=n_cols,
            multicolumn_sizes=tuple(mc_sizes), multirow_sizes=tuple(mr_sizes)))
    return tables


class DatasetVariant(Enum):
    TSRD = "tsrd"
    LOCRD250 = "locr250"
    LOCRD500 = "locr500"

    @property
    def task(self) -> Task:
        return Task.TSR if self is DatasetVariant.TSRD else Task.LOCR

    @property
    def max_len(self) -> int:
        return 500 if self is DatasetVariant.LOCRD500 else 250


@dataclass
class ManifestSample:
    id: str
    image: str
    split: str
    tsr: str
    locr: str
    source: str

    def to_record(self) -> dict:
        return {
            "record": "sample",
            "id": self.id,
            "image": self.image,
            "split": self.split,
            "tsr": self.tsr,
            "locr": self.locr,
            "tsr_len": len(self.tsr.split()),
            "locr_len": len(self.locr.split()),
            "source": self.source,
        }


@dataclass
class DatasetManifest:
    variant: DatasetVariant
    aspect_mode: AspectMode
    max_len: int
    seed: int
    mask_threshold: int
    canvas: int
    counts: dict[str, int]
    tokens_per_sample: float
    samples: list[ManifestSample]
    diagnostics: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.samples)

    def header_record(self) -> dict:
        return {
            "record": "header",
            "version": MANIFEST_VERSION,
            "variant": self.variant.value,
            "aspect": self.aspect_mode.value,
            "max_len": self.max_len,
            "seed": self.seed,
            "mask_threshold": self.mask_threshold,
            "canvas": self.canvas,
            "counts": self.counts,
            "total": self.total,
            "tokens_per_sample": self.tokens_per_sample,
            "diagnostics": self.diagnostics,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header_record(), sort_keys=True) + "\n")
            for s in self.samples:
                fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> tuple[dict, list[dict]]:
    header: dict | None = None
    samples: list[dict] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("record") == "header":
                header = rec
            else:
                samples.append(rec)
    if header is None:
        raise Tab2TexError(f"manifest {path} has no header record")
    return header, samples


def _split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    return n - n_val - n_test, n_val, n_test


def build_dataset(snippets: list[str], variant: DatasetVariant,
                  aspect_mode: AspectMode,
                  split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0, out_dir: str | Path = "dataset",
                  mask_threshold: int = 0,
                  canvas: int = CANVAS) -> DatasetManifest:
    """Normalize, tokenize, length-filter, mask, render, split, and write a
    dataset. Deterministic for fixed (inputs, seed, config)."""
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    diagnostics = {"rejected_malformed": 0, "rejected_length": 0,
                   "rejected_render": 0}
    prepared: list[tuple[str, TokenSequence, TokenSequence]] = []
    for raw in snippets:
        try:
            norm = normalize_table_source(raw)
            tsr = tokenize_tsr(norm)
            locr = tokenize_locr(norm)
        except Tab2TexError:
            diagnostics["rejected_malformed"] += 1
            continue
        target = tsr if variant.task is Task.TSR else locr
        if len(target) >= variant.max_len:
            diagnostics["rejected_length"] += 1
            continue
        prepared.append((norm, tsr, locr))

    locr_seqs = mask_rare_commands([p[2] for p in prepared], mask_threshold)
    prepared = [(norm, tsr, locr)
                for (norm, tsr, _), locr in zip(prepared, locr_seqs)]

    rng = random.Random(seed)
    order = list(range(len(prepared)))
    rng.shuffle(order)

    rendered: list[tuple[str, TokenSequence, TokenSequence, object]] = []
    for idx in order:
        norm, tsr, locr = prepared[idx]
        try:
            image = rasterize_synthetic(norm, aspect_mode, canvas)
        except (UnknownStructure, MalformedSource, Tab2TexError):
            diagnostics["rejected_render"] += 1
            continue
        rendered.append((norm, tsr, locr, image))
    if not rendered:
        raise EmptyDataset("no snippet survived filtering")

    n_train, n_val, n_test = _split_counts(len(rendered), split_fractions)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test

    samples = []
    target_tokens = 0
    for k, ((norm, tsr, locr, image), split) in enumerate(zip(rendered, splits)):
        sid = f"{variant.value}-{seed}-{k:06d}"
        rel = f"images/{sid}.png"
        save_png(image, str(out_dir / rel))
        samples.append(ManifestSample(
            id=sid, image=rel, split=split,
            tsr=tsr.to_line(), locr=locr.to_line(), source=norm))
        target = tsr if variant.task is Task.TSR else locr
        target_tokens += len(target)

    manifest = DatasetManifest(
        variant=variant, aspect_mode=aspect_mode, max_len=variant.max_len,
        seed=seed, mask_threshold=mask_threshold, canvas=canvas,
        counts={"train": n_train, "val": n_val, "test": n_test},
        tokens_per_sample=round(target_tokens / len(samples), 4),
        samples=samples, diagnostics=diagnostics)
    manifest.write(out_dir / "manifest.jsonl")
    return manifest
