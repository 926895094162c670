"""Self-contained verification suites: gradient checking, metric-oracle
equivalence, and tokenizer round-trip stability.

Each suite returns a report dict with per-check status and measured errors;
`run_suites` aggregates them. Oracles here are deliberately independent of
the implementations they check (exhaustive offset search, recursive edit
distance, brute-force recomputation).
"""

from __future__ import annotations

import random
from functools import lru_cache

from .corpus import SyntheticSpec, generate_synthetic_tables
from .latex import detokenize, tokenize_locr, tokenize_tsr
from .metrics import (
    evaluate_pair,
    exact_match,
    levenshtein,
    match_at_95,
)
from .model.network import ModelConfig, Variant
from .model.training import gradient_check
from .tokens import Task, TokenSequence

GRADIENT_TOLERANCE = 1e-4

TINY_CONFIG = dict(vocab_size=12, d_model=16, n_enc_layers=1, n_dec_layers=1,
                   n_heads=2, cnn_channels=(4, 4, 8, 8), image_size=32,
                   max_decode_len=16, dropout=0.0)


def oracle_match_at_95(pred: TokenSequence, truth: TokenSequence) -> bool:
    """Exhaustive all-offsets search for the longest common contiguous run."""
    a, b = pred.texts(), truth.texts()
    if a == b:
        return True
    best = 0
    for i in range(len(a)):
        for j in range(len(b)):
            l = 0
            while i + l < len(a) and j + l < len(b) and a[i + l] == b[j + l]:
                l += 1
            best = max(best, l)
    return best - 1 >= 0.95 * len(b)


def oracle_levenshtein(pred: TokenSequence, truth: TokenSequence) -> int:
    """Memoized recursive edit distance (independent of the iterative DP)."""
    a, b = pred.texts(), truth.texts()

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return go(i + 1, j + 1)
        return 1 + min(go(i + 1, j), go(i, j + 1), go(i + 1, j + 1))

    return go(0, 0)


def random_token_pair(rng: random.Random, task: Task,
                      max_len: int = 30) -> tuple[TokenSequence, TokenSequence]:
    """Seeded (pred, truth) pair with structure-shaped or content-shaped
    tokens; predictions are mutated copies of truth about half the time."""
    if task is Task.TSR:
        pool = ["CELL", "&", "\\\\", "\\hline", "c", "l", "r", "|", "2", "3"]
    else:
        pool = list("abc19=$.{}_") + ["\\textbf", "\\%", "¦", "&", "\\\\"]

    def fresh() -> list[str]:
        n = rng.randint(1, max_len)
        toks = [rng.choice(pool) for _ in range(n)]
        if task is Task.TSR:
            toks = ["\\{", rng.choice("clr"), "\\}"] + toks[:max_len - 3]
        return toks

    truth = fresh()
    if rng.random() < 0.5:
        pred = list(truth)
        for _ in range(rng.randint(0, 3)):
            op = rng.random()
            if op < 0.4 and pred:
                pred[rng.randrange(len(pred))] = rng.choice(pool)
            elif op < 0.7 and pred:
                del pred[rng.randrange(len(pred))]
            else:
                pred.insert(rng.randrange(len(pred) + 1), rng.choice(pool))
        if not pred:
            pred = [rng.choice(pool)]
    else:
        pred = fresh()
    return (TokenSequence.from_texts(task, pred),
            TokenSequence.from_texts(task, truth))


def suite_gradients(seed: int = 0) -> dict:
    checks = []
    for variant in (Variant.RT, Variant.FGRT, Variant.PGRT):
        cfg = ModelConfig(variant=variant, **TINY_CONFIG)
        errs = gradient_check(cfg, n_per_param=4, seed=seed)
        worst = max(errs.values())
        checks.append({
            "name": f"gradients/{variant.value}",
            "max_relative_error": worst,
            "tolerance": GRADIENT_TOLERANCE,
            "passed": worst <= GRADIENT_TOLERANCE,
            "worst_parameter": max(errs, key=errs.get),
        })
    return {"suite": "gradients", "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def suite_metrics_oracle(n: int = 1000, seed: int = 0) -> dict:
    rng = random.Random(seed)
    mismatches = {"EA": 0, "E95": 0, "ALD": 0, "implications": 0}
    for k in range(n):
        task = Task.TSR if k % 2 == 0 else Task.LOCR
        pred, truth = random_token_pair(rng, task)
        ea = exact_match(pred, truth)
        if ea != (pred.texts() == truth.texts()):
            mismatches["EA"] += 1
        if match_at_95(pred, truth) != oracle_match_at_95(pred, truth):
            mismatches["E95"] += 1
        dist = levenshtein(pred, truth)
        if dist != oracle_levenshtein(pred, truth):
            mismatches["ALD"] += 1
        per = evaluate_pair(pred, truth)
        if ea and not per["E95"]:
            mismatches["implications"] += 1
        if ea != (dist == 0):
            mismatches["implications"] += 1
    checks = [{"name": f"metrics_oracle/{k}", "mismatches": v, "passed": v == 0}
              for k, v in mismatches.items()]
    return {"suite": "metrics_oracle", "n": n, "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def suite_roundtrip(n: int = 200, seed: int = 0) -> dict:
    spec = SyntheticSpec(rows=(1, 5), cols=(1, 5), span_probability=0.3)
    tables = generate_synthetic_tables(seed, spec, n)
    failures = {"tsr": 0, "locr": 0}
    for t in tables:
        tsr = tokenize_tsr(t.source)
        rewrapped = "\\begin{tabular}" + detokenize(tsr) + " \\end{tabular}"
        if tokenize_tsr(rewrapped).texts() != tsr.texts():
            failures["tsr"] += 1
        locr = tokenize_locr(t.source)
        body = "\\begin{tabular}{c} " + detokenize(locr) + " \\end{tabular}"
        if tokenize_locr(body).texts() != locr.texts():
            failures["locr"] += 1
    checks = [{"name": f"roundtrip/{k}", "failures": v, "passed": v == 0}
              for k, v in failures.items()]
    return {"suite": "roundtrip", "n": n, "checks": checks,
            "passed": all(c["passed"] for c in checks)}


SUITES = {
    "gradients": suite_gradients,
    "metrics_oracle": suite_metrics_oracle,
    "roundtrip": suite_roundtrip,
}


def run_suites(which: str, n: int | None = None, seed: int = 0) -> dict:
    names = list(SUITES) if which == "all" else [which]
    reports = []
    for name in names:
        fn = SUITES[name]
        if name == "gradients":
            reports.append(fn(seed=seed))
        elif n is not None:
            reports.append(fn(n=n, seed=seed))
        else:
            reports.append(fn(seed=seed))
    return {"suites": reports, "passed": all(r["passed"] for r in reports)}
