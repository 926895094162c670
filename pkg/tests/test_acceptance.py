"""Acceptance gate: nine end-to-end checks covering gradient correctness,
memorization capacity, metric-oracle equivalence, implication laws, reference
fidelity, round-trip stability, variant containment, pipeline determinism,
and the learning-rate schedule. Each test prints one PASS/FAIL line."""

import json
import random
import time

import numpy as np
import pytest
from click.testing import CliRunner

from tab2tex.cli import main as cli_main
from tab2tex.corpus import SyntheticSpec, generate_synthetic_tables
from tab2tex.latex import (
    merge_tsr_locr,
    normalize_table_source,
    parse_structure,
    tokenize_locr,
    tokenize_tsr,
)
from tab2tex.metrics import (
    category_match,
    col_match,
    evaluate_pair,
    exact_match,
    levenshtein,
    match_at_95,
    multicolumn_match,
    multirow_match,
    row_match,
)
from tab2tex.model.network import ModelConfig, Variant, init_params, model_forward
from tab2tex.model.training import noam_lr, train_model
from tab2tex.latex import TokenCategory
from tab2tex.raster import AspectMode, rasterize_synthetic
from tab2tex.tokens import Task, TokenSequence, Vocabulary
from tab2tex.verify import (
    TINY_CONFIG,
    oracle_levenshtein,
    oracle_match_at_95,
    random_token_pair,
    suite_gradients,
    suite_roundtrip,
)


@pytest.fixture
def report(capsys):
    def _report(criterion: str, passed: bool, detail: str = ""):
        status = "PASS" if passed else "FAIL"
        with capsys.disabled():
            print(f"[{status}] {criterion}" + (f" ({detail})" if detail else ""))
        assert passed, f"{criterion}: {detail}"
    return _report


# ---------------------------------------------------------------------------
# independent reference implementations, text-level only
# ---------------------------------------------------------------------------

def ref_parse(texts):
    """(n_rows, n_cols, mc_sizes, mr_sizes) or None if unparseable."""
    if not texts or texts[0] != "\\{":
        return None
    try:
        close = texts.index("\\}")
    except ValueError:
        return None
    n_cols = sum(1 for t in texts[1:close] if t in ("c", "l", "r"))
    body = texts[close + 1:]
    rowseps = [i for i, t in enumerate(body) if t == "\\\\"]
    tail = body[rowseps[-1] + 1:] if rowseps else body
    trailing = any(t in ("CELL", "\\multicolumn", "\\multirow") for t in tail)
    n_rows = len(rowseps) + (1 if trailing else 0)
    if n_rows == 0 and n_cols == 0:
        return None  # degenerate: neither columns nor rows

    def span_sizes(command):
        sizes = []
        i = 0
        while i < len(body):
            if body[i] == command and i + 1 < len(body) and body[i + 1] == "\\{":
                j = i + 2
                digits = ""
                while j < len(body) and body[j] != "\\}":
                    digits += body[j]
                    j += 1
                sizes.append(int(digits) if digits.isdigit() else 1)
                i = j
            i += 1
        return sizes

    return (n_rows, n_cols, span_sizes("\\multicolumn"), span_sizes("\\multirow"))


def ref_category(text):
    if text in ("¦", "&", "\\\\", "\\LATEX_TOKEN", "CELL"):
        return "OTHER"
    if text.startswith("\\"):
        name = text[1:]
        return "LS" if len(name) == 1 and not name.isalpha() else "LT"
    if text.isalnum():
        return "AN"
    return "NLS"


def ref_filter(texts, category):
    return tuple(t for t in texts if ref_category(t) == category)


SPAN_BLOCKS = [
    ["\\multicolumn", "\\{", "2", "\\}", "\\{", "c", "\\}", "\\{", "CELL", "\\}"],
    ["\\multicolumn", "\\{", "3", "\\}", "\\{", "l", "\\}", "\\{", "CELL", "\\}"],
    ["\\multirow", "\\{", "2", "\\}", "\\{", "\\}", "\\{", "CELL", "\\}"],
]


def spanful_pair(rng, max_len=30):
    """TSR (pred, truth) pair whose truth may carry span commands."""
    pred, truth = random_token_pair(rng, Task.TSR, max_len=max_len - 10)
    if rng.random() < 0.5:
        block = rng.choice(SPAN_BLOCKS)
        t = list(truth.texts()) + block
        p = list(pred.texts())
        if rng.random() < 0.7:
            p += block if rng.random() < 0.8 else rng.choice(SPAN_BLOCKS)
        return (TokenSequence.from_texts(Task.TSR, p),
                TokenSequence.from_texts(Task.TSR, t))
    return pred, truth


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(report):
    start = time.time()
    suite = suite_gradients(seed=0)
    elapsed = time.time() - start
    worst = max(c["max_relative_error"] for c in suite["checks"])
    ok = suite["passed"] and elapsed < 120.0
    report("criterion-1 gradient correctness",
           ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def _overfit(task: Task, seed: int):
    spec = SyntheticSpec(rows=(2, 3), cols=(2, 3), span_probability=0.2)
    tables = generate_synthetic_tables(seed, spec, 32)
    if task is Task.TSR:
        vocab = Vocabulary.tsr()
        seqs = [tokenize_tsr(t.source) for t in tables]
    else:
        seqs = [tokenize_locr(t.source) for t in tables]
        vocab = Vocabulary.for_locr(seqs)
    samples = []
    for t, s in zip(tables, seqs):
        img = rasterize_synthetic(t.source, AspectMode.FAT,
                                  canvas=64).pixels.astype(np.float32)
        samples.append((img, vocab.encode(s)))
    max_ids = max(len(ids) for _, ids in samples)
    cfg = ModelConfig(vocab_size=len(vocab), d_model=64, n_enc_layers=2,
                      n_dec_layers=2, n_heads=4, cnn_channels=(8, 16, 32, 64),
                      image_size=64, max_decode_len=max(64, max_ids + 4),
                      dropout=0.0, variant=Variant.PGRT, warmup=300,
                      lr_scale=0.3)
    target = 1.0 if task is Task.TSR else 0.95
    return train_model(samples, cfg, vocab, steps=3000, batch_size=8,
                       seed=0, eval_every=100, target_exact_match=target)


def test_criterion_2_overfit_memorization(report):
    start = time.time()
    tsr_result = _overfit(Task.TSR, seed=11)
    locr_result = _overfit(Task.LOCR, seed=11)
    elapsed = time.time() - start
    ok = (tsr_result.exact_match == 1.0 and tsr_result.steps_run <= 3000
          and locr_result.exact_match >= 0.95
          and locr_result.steps_run <= 3000 and elapsed < 1200.0)
    report("criterion-2 overfit memorization", ok,
           f"TSR EA {tsr_result.exact_match:.2f} @ {tsr_result.steps_run} "
           f"steps, LOCR EA {locr_result.exact_match:.2f} @ "
           f"{locr_result.steps_run} steps, {elapsed:.0f}s")


def test_criterion_3_metric_oracle_equivalence(report):
    rng = random.Random(0)
    mismatches = 0
    for k in range(1000):
        if k % 2 == 0:
            pred, truth = spanful_pair(rng)
            rp, rt = ref_parse(list(pred.texts())), ref_parse(list(truth.texts()))
            both = rp is not None and rt is not None
            if row_match(pred, truth) != (both and rp[0] == rt[0]):
                mismatches += 1
            if col_match(pred, truth) != (both and rp[1] == rt[1]):
                mismatches += 1
            ref_mc = (None if rt is None or not rt[2]
                      else (rp is not None and rp[2] == rt[2]))
            ref_mr = (None if rt is None or not rt[3]
                      else (rp is not None and rp[3] == rt[3]))
            if multicolumn_match(pred, truth) != ref_mc:
                mismatches += 1
            if multirow_match(pred, truth) != ref_mr:
                mismatches += 1
        else:
            pred, truth = random_token_pair(rng, Task.LOCR)
            for enum_cat, name in ((TokenCategory.AN, "AN"),
                                   (TokenCategory.LT, "LT"),
                                   (TokenCategory.LS, "LS"),
                                   (TokenCategory.NLS, "NLS")):
                ref = ref_filter(pred.texts(), name) == \
                    ref_filter(truth.texts(), name)
                if category_match(pred, truth, enum_cat) != ref:
                    mismatches += 1
        if exact_match(pred, truth) != (pred.texts() == truth.texts()):
            mismatches += 1
        if match_at_95(pred, truth) != oracle_match_at_95(pred, truth):
            mismatches += 1
        if levenshtein(pred, truth) != oracle_levenshtein(pred, truth):
            mismatches += 1
    report("criterion-3 metric-oracle equivalence", mismatches == 0,
           f"{mismatches} mismatches over 1000 pairs")


def test_criterion_4_implication_laws(report):
    rng = random.Random(1)
    violations = 0
    for k in range(10_000):
        if k % 2 == 0:
            pred, truth = spanful_pair(rng)
            per = evaluate_pair(pred, truth)
            if per["EA"] > per["E95"]:
                violations += 1
            if per["EA"] and not (per["RA"] and per["CA"]):
                violations += 1
        else:
            pred, truth = random_token_pair(rng, Task.LOCR)
            per = evaluate_pair(pred, truth)
            if per["EA"] > per["E95"]:
                violations += 1
            if (per["EA"] == 1.0) != (per["ALD"] == 0.0):
                violations += 1
    report("criterion-4 implication laws", violations == 0,
           f"{violations} violations over 10000 pairs")


def test_criterion_5_reference_table_fidelity(report, reference_table):
    norm = normalize_table_source(reference_table)
    tsr = tokenize_tsr(norm)
    locr = tokenize_locr(norm)
    structure = parse_structure(tsr)
    merged = "\\begin{tabular}" + merge_tsr_locr(tsr, locr) + " \\end{tabular}"
    ok = (structure.n_rows == 6 and structure.n_cols == 4 and merged == norm)
    report("criterion-5 reference-table fidelity", ok,
           f"rows {structure.n_rows}, cols {structure.n_cols}, "
           f"merge exact {merged == norm}")


def test_criterion_6_roundtrip_fixed_point(report):
    suite = suite_roundtrip(n=1000, seed=0)
    fails = {c["name"]: c["failures"] for c in suite["checks"]}
    report("criterion-6 round-trip fixed point", suite["passed"],
           f"failures {fails} over 1000 tables")


def test_criterion_7_variant_containment(report):
    rng = np.random.default_rng(0)
    base_cfg = ModelConfig(variant=Variant.RT, **TINY_CONFIG)
    base_params = init_params(base_cfg)
    mismatched = 0
    for _ in range(10):
        image = rng.random((1, 32, 32))
        ids = rng.integers(1, base_cfg.vocab_size, size=(1, 6))
        expected = model_forward(image, ids, base_params, base_cfg).data
        for variant in (Variant.FGRT, Variant.PGRT):
            cfg = ModelConfig(variant=variant, **TINY_CONFIG).with_gating(False)
            out = model_forward(image, ids, init_params(cfg), cfg).data
            if not np.array_equal(out, expected):
                mismatched += 1
    report("criterion-7 variant containment", mismatched == 0,
           f"{mismatched} of 20 gated-off forwards differ from baseline")


def test_criterion_8_pipeline_determinism(report, tmp_path):
    runner = CliRunner()
    trees = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        res = runner.invoke(cli_main, ["build-data", "--synthetic", "200",
                                       "--seed", "13", "--out", str(out)])
        assert res.exit_code == 0, res.output
        trees.append({str(p.relative_to(out)): p.read_bytes()
                      for p in sorted(out.rglob("*")) if p.is_file()})
    identical = trees[0] == trees[1]
    report("criterion-8 pipeline determinism", identical,
           f"{len(trees[0])} files, byte-identical: {identical}")


def test_criterion_9_noam_schedule(report):
    warmup = 400
    lrs = [noam_lr(s, 256, warmup, 0.1) for s in range(1, 10 * warmup + 1)]
    peak_step = max(range(len(lrs)), key=lrs.__getitem__) + 1
    rising = all(lrs[i] > lrs[i - 1] for i in range(1, warmup))
    falling = all(lrs[i] < lrs[i - 1] for i in range(warmup, len(lrs)))
    ok = peak_step == warmup and rising and falling
    report("criterion-9 noam schedule", ok,
           f"peak at step {peak_step}, strict rise {rising}, "
           f"strict decay {falling}")
