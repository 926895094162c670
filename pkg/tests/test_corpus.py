"""Snippet extraction, rare-command masking, synthetic generation, and
dataset builds."""

import filecmp
import json
from pathlib import Path

import pytest

from tab2tex.corpus import (
    DatasetVariant,
    SyntheticSpec,
    _split_counts,
    build_dataset,
    extract_tabulars,
    generate_synthetic_tables,
    load_manifest,
    mask_rare_commands,
)
from tab2tex.errors import EmptyDataset
from tab2tex.raster import AspectMode
from tab2tex.tokens import LATEX_TOKEN, Task, TokenSequence


def locr(line: str) -> TokenSequence:
    return TokenSequence.from_line(Task.LOCR, line)


class TestExtract:
    def test_two_blocks_in_order(self):
        doc = ("text \\begin{tabular}{c} a \\end{tabular} middle "
               "\\begin{tabular}{l} b \\end{tabular} tail")
        out = extract_tabulars(doc)
        assert len(out) == 2
        assert "{c}" in out[0] and "{l}" in out[1]

    def test_commented_block_skipped(self):
        doc = "% \\begin{tabular}{c} a \\end{tabular}\nplain"
        assert extract_tabulars(doc) == []

    def test_unterminated_block_counted(self):
        doc = "\\begin{tabular}{c} a "
        diags = {}
        assert extract_tabulars(doc, diags) == []
        assert diags["skipped"] == 1

    def test_unbalanced_block_counted(self):
        doc = "\\begin{tabular}{c} a{ \\end{tabular}"
        diags = {}
        assert extract_tabulars(doc, diags) == []
        assert diags["skipped"] == 1

    def test_nested_block_extracted_once(self):
        doc = ("\\begin{tabular}{c} \\begin{tabular}{c} x \\end{tabular} "
               "\\end{tabular}")
        out = extract_tabulars(doc)
        assert len(out) == 1
        assert out[0].count("\\begin{tabular}") == 2


class TestMasking:
    def test_threshold_is_strict(self):
        # \a appears 999 times, \b 1000 times; threshold 1000 masks only \a
        corpus = [locr("\\a")] * 999 + [locr("\\b")] * 1000
        masked = mask_rare_commands(corpus, threshold=1000)
        assert masked[0].tokens[0].text == LATEX_TOKEN
        assert masked[-1].tokens[0].text == "\\b"

    def test_zero_threshold_is_identity(self):
        corpus = [locr("\\rare a ¦")]
        assert mask_rare_commands(corpus, threshold=0)[0].texts() == \
            corpus[0].texts()

    def test_counts_taken_before_replacement(self):
        # two commands each below threshold; both must be masked even though
        # masking the first changes nothing about the second's count
        corpus = [locr("\\x \\y")]
        masked = mask_rare_commands(corpus, threshold=2)
        assert [t.text for t in masked[0].tokens] == [LATEX_TOKEN, LATEX_TOKEN]

    def test_characters_never_masked(self):
        corpus = [locr("a ¦ & \\\\")]
        assert mask_rare_commands(corpus, threshold=10)[0].texts() == \
            corpus[0].texts()


class TestSyntheticGenerator:
    def test_deterministic(self):
        spec = SyntheticSpec(span_probability=0.4)
        a = generate_synthetic_tables(42, spec, 20)
        b = generate_synthetic_tables(42, spec, 20)
        assert [t.source for t in a] == [t.source for t in b]

    def test_seed_changes_output(self):
        spec = SyntheticSpec()
        a = generate_synthetic_tables(1, spec, 10)
        b = generate_synthetic_tables(2, spec, 10)
        assert [t.source for t in a] != [t.source for t in b]

    def test_dimensions_within_spec(self):
        spec = SyntheticSpec(rows=(2, 3), cols=(4, 5))
        for t in generate_synthetic_tables(3, spec, 25):
            assert 2 <= t.n_rows <= 3
            assert 4 <= t.n_cols <= 5

    def test_span_flag(self):
        spec = SyntheticSpec(span_probability=1.0)
        tables = generate_synthetic_tables(11, spec, 20)
        assert all(t.has_span for t in tables)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(rows=(3, 2))
        with pytest.raises(ValueError):
            SyntheticSpec(span_probability=1.5)


class TestSplits:
    def test_eight_one_one(self):
        assert _split_counts(10, (0.8, 0.1, 0.1)) == (8, 1, 1)

    def test_all_train(self):
        assert _split_counts(7, (1.0, 0.0, 0.0)) == (7, 0, 0)

    def test_counts_sum(self):
        for n in (1, 9, 100, 101):
            assert sum(_split_counts(n, (0.8, 0.1, 0.1))) == n


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestBuildDataset:
    def _snippets(self, n=12, seed=0):
        return [t.source for t in
                generate_synthetic_tables(seed, SyntheticSpec(), n)]

    def test_manifest_and_images_written(self, tmp_path):
        manifest = build_dataset(self._snippets(), DatasetVariant.TSRD,
                                 AspectMode.ACT, seed=0, out_dir=tmp_path,
                                 canvas=64)
        header, records = load_manifest(tmp_path / "manifest.jsonl")
        assert header["variant"] == "tsrd"
        assert header["total"] == len(records) == manifest.total
        for rec in records:
            assert (tmp_path / rec["image"]).exists()
            assert rec["tsr_len"] == len(rec["tsr"].split())

    def test_deterministic_build(self, tmp_path):
        for sub in ("a", "b"):
            build_dataset(self._snippets(), DatasetVariant.TSRD,
                          AspectMode.FAT, seed=5, out_dir=tmp_path / sub,
                          canvas=64)
        assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")

    def test_length_filter(self, tmp_path):
        big = generate_synthetic_tables(
            0, SyntheticSpec(rows=(20, 20), cols=(6, 6)), 1)[0].source
        small = self._snippets(3, seed=1)
        manifest = build_dataset(small + [big], DatasetVariant.TSRD,
                                 AspectMode.ACT, seed=0,
                                 out_dir=tmp_path, canvas=64)
        assert manifest.diagnostics["rejected_length"] == 1
        assert manifest.total == 3

    def test_malformed_snippet_rejected(self, tmp_path):
        manifest = build_dataset(self._snippets(3) + ["not latex"],
                                 DatasetVariant.TSRD, AspectMode.ACT,
                                 seed=0, out_dir=tmp_path, canvas=64)
        assert manifest.diagnostics["rejected_malformed"] == 1

    def test_empty_dataset_raises(self, tmp_path):
        with pytest.raises(EmptyDataset):
            build_dataset(["garbage"], DatasetVariant.TSRD, AspectMode.ACT,
                          seed=0, out_dir=tmp_path, canvas=64)

    def test_locr_variant_uses_locr_lengths(self, tmp_path):
        manifest = build_dataset(self._snippets(5, seed=3),
                                 DatasetVariant.LOCRD250, AspectMode.ACT,
                                 seed=0, out_dir=tmp_path, canvas=64)
        header, records = load_manifest(tmp_path / "manifest.jsonl")
        assert header["max_len"] == 250
        assert manifest.variant.task is Task.LOCR
        assert all(r["locr_len"] > 0 for r in records)
