"""Token serialization and vocabulary mapping."""

import pytest

from tab2tex.tokens import (
    TSR_VOCAB_TEXTS,
    Task,
    Token,
    TokenKind,
    TokenSequence,
    Vocabulary,
    token_from_text,
)


class TestTokenFromText:
    def test_tsr_round_trips_whole_vocabulary(self):
        for text in TSR_VOCAB_TEXTS:
            tok = token_from_text(text, Task.TSR)
            assert tok.text == text

    def test_tsr_rejects_content_characters(self):
        with pytest.raises(ValueError):
            token_from_text("x", Task.TSR)

    def test_locr_classifies_kinds(self):
        assert token_from_text("¦", Task.LOCR).kind is TokenKind.DELIMITER
        assert token_from_text("\\textbf", Task.LOCR).kind is \
            TokenKind.LATEX_COMMAND
        assert token_from_text("a", Task.LOCR).kind is TokenKind.CHARACTER
        assert token_from_text("&", Task.LOCR).kind is TokenKind.COLUMN_SEP

    def test_locr_rejects_multichar_plain_text(self):
        with pytest.raises(ValueError):
            token_from_text("ab", Task.LOCR)


class TestTokenInvariants:
    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            Token("", TokenKind.CHARACTER)

    def test_delimiter_text_fixed(self):
        with pytest.raises(ValueError):
            Token("|", TokenKind.DELIMITER)


class TestTokenSequence:
    def test_line_round_trip(self):
        line = "\\{ c c \\} CELL & CELL \\\\"
        seq = TokenSequence.from_line(Task.TSR, line)
        assert seq.to_line() == line
        assert len(seq) == 8


class TestVocabulary:
    def test_specials_come_first(self):
        vocab = Vocabulary.tsr()
        assert vocab.pad_id == 0
        assert vocab.start_id == 1
        assert vocab.end_id == 2
        assert vocab.unk_id == 3
        assert vocab.latex_token_id == 4

    def test_tsr_size_is_closed(self):
        # 26 task tokens plus the 5 reserved entries
        assert len(Vocabulary.tsr()) == 31

    def test_bijection(self):
        vocab = Vocabulary.tsr()
        assert len(set(vocab.texts)) == len(vocab.texts)
        for text, idx in vocab.ids.items():
            assert vocab.texts[idx] == text

    def test_encode_decode_round_trip(self):
        vocab = Vocabulary.tsr()
        seq = TokenSequence.from_line(Task.TSR, "\\{ c \\} CELL \\\\ CELL")
        ids = vocab.encode(seq, add_markers=True)
        assert ids[0] == vocab.start_id and ids[-1] == vocab.end_id
        assert vocab.decode(ids).texts() == seq.texts()

    def test_unknown_text_maps_to_unk(self):
        seqs = [TokenSequence.from_line(Task.LOCR, "a ¦")]
        vocab = Vocabulary.for_locr(seqs)
        other = TokenSequence.from_line(Task.LOCR, "z")
        assert vocab.encode(other) == [vocab.unk_id]

    def test_locr_vocab_sorted_and_deduplicated(self):
        seqs = [TokenSequence.from_line(Task.LOCR, "b ¦ a"),
                TokenSequence.from_line(Task.LOCR, "a b")]
        vocab = Vocabulary.for_locr(seqs)
        items = vocab.texts[5:]
        assert items == sorted(items)
        assert len(items) == 3
