"""Evaluation metrics over (prediction, ground-truth) token sequence pairs.

Structure task report: EA, E95, RA, CA, MCR, MRR.
Content task report: EA, E95, AN, LT, LS, NLS, ALD.

All rate metrics are per-sample means; MCR/MRR are computed over the samples
whose ground truth actually contains the span command. ALD is a mean
token-level edit distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyCorpus, NoPreamble, TaskMismatch
from .latex import TokenCategory, classify_token, parse_structure
from .tokens import Task, TokenSequence


def _check_tasks(pred: TokenSequence, truth: TokenSequence) -> None:
    if pred.task is not truth.task:
        raise TaskMismatch(f"{pred.task} vs {truth.task}")


def exact_match(pred: TokenSequence, truth: TokenSequence) -> bool:
    _check_tasks(pred, truth)
    return pred.texts() == truth.texts()


def _longest_common_substring(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    """Length of the longest contiguous run shared by a and b (O(n*m) DP)."""
    if not a or not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def match_at_95(pred: TokenSequence, truth: TokenSequence) -> bool:
    """A contiguous run of l+1 matching tokens exists with l >= 0.95 * |truth|.

    An exact match always qualifies, so this contains exact_match even for
    short sequences where the run-length inequality alone cannot hold.
    """
    _check_tasks(pred, truth)
    if not truth.tokens:
        raise ValueError("truth sequence must be non-empty")
    if exact_match(pred, truth):
        return True
    run = _longest_common_substring(pred.texts(), truth.texts())
    return run - 1 >= 0.95 * len(truth)


def _try_parse(seq: TokenSequence):
    try:
        return parse_structure(seq)
    except (NoPreamble, ValueError):
        return None


def row_match(pred: TokenSequence, truth: TokenSequence) -> bool:
    _check_tasks(pred, truth)
    sp, st = _try_parse(pred), _try_parse(truth)
    return sp is not None and st is not None and sp.n_rows == st.n_rows


def col_match(pred: TokenSequence, truth: TokenSequence) -> bool:
    _check_tasks(pred, truth)
    sp, st = _try_parse(pred), _try_parse(truth)
    return sp is not None and st is not None and sp.n_cols == st.n_cols


def _span_sizes(seq: TokenSequence, kind: str) -> list[int] | None:
    s = _try_parse(seq)
    if s is None:
        return None
    return [sp.size for sp in s.spans if sp.kind == kind]


def _span_match(pred: TokenSequence, truth: TokenSequence, kind: str) -> bool | None:
    """None when the ground truth has no such span (sample ineligible)."""
    _check_tasks(pred, truth)
    truth_sizes = _span_sizes(truth, kind)
    if not truth_sizes:
        return None
    pred_sizes = _span_sizes(pred, kind)
    return pred_sizes == truth_sizes


def multicolumn_match(pred: TokenSequence, truth: TokenSequence) -> bool | None:
    return _span_match(pred, truth, "multicolumn")


def multirow_match(pred: TokenSequence, truth: TokenSequence) -> bool | None:
    return _span_match(pred, truth, "multirow")


def _category_filter(seq: TokenSequence, category: TokenCategory) -> tuple[str, ...]:
    return tuple(t.text for t in seq.tokens if classify_token(t) is category)


def category_match(pred: TokenSequence, truth: TokenSequence,
                   category: TokenCategory) -> bool:
    """Order-preserving equality of the category-filtered token strings."""
    _check_tasks(pred, truth)
    return _category_filter(pred, category) == _category_filter(truth, category)


def levenshtein(pred: TokenSequence, truth: TokenSequence) -> int:
    """Token-level edit distance (insertions, deletions, substitutions)."""
    a, b = pred.texts(), truth.texts()
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


TSR_METRICS = ("EA", "E95", "RA", "CA", "MCR", "MRR")
LOCR_METRICS = ("EA", "E95", "AN", "LT", "LS", "NLS", "ALD")


@dataclass
class MetricReport:
    task: Task
    total: int
    metrics: dict[str, float]
    eligible: dict[str, int]
    diagnostics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "total": self.total,
            "metrics": self.metrics,
            "eligible": self.eligible,
            "diagnostics": self.diagnostics,
        }


def evaluate_pair(pred: TokenSequence, truth: TokenSequence) -> dict[str, float | None]:
    """Per-sample metric indicators; None marks an ineligible sample."""
    _check_tasks(pred, truth)
    out: dict[str, float | None] = {
        "EA": float(exact_match(pred, truth)),
        "E95": float(match_at_95(pred, truth)),
    }
    if pred.task is Task.TSR:
        out["RA"] = float(row_match(pred, truth))
        out["CA"] = float(col_match(pred, truth))
        mc = multicolumn_match(pred, truth)
        mr = multirow_match(pred, truth)
        out["MCR"] = None if mc is None else float(mc)
        out["MRR"] = None if mr is None else float(mr)
    else:
        out["AN"] = float(category_match(pred, truth, TokenCategory.AN))
        out["LT"] = float(category_match(pred, truth, TokenCategory.LT))
        out["LS"] = float(category_match(pred, truth, TokenCategory.LS))
        out["NLS"] = float(category_match(pred, truth, TokenCategory.NLS))
        out["ALD"] = float(levenshtein(pred, truth))
    return out


def evaluate_corpus(pairs: list[tuple[TokenSequence, TokenSequence]],
                    task: Task) -> MetricReport:
    """Aggregate per-sample indicators into a corpus-level report."""
    if not pairs:
        raise EmptyCorpus("no (pred, truth) pairs to evaluate")
    names = TSR_METRICS if task is Task.TSR else LOCR_METRICS
    sums = {m: 0.0 for m in names}
    counts = {m: 0 for m in names}
    micro = {"MCR": [0, 0], "MRR": [0, 0]}  # span-level alternative aggregation
    for pred, truth in pairs:
        if pred.task is not task or truth.task is not task:
            raise TaskMismatch("pair task tag does not match corpus task")
        per = evaluate_pair(pred, truth)
        for m in names:
            v = per[m]
            if v is None:
                continue
            sums[m] += v
            counts[m] += 1
        if task is Task.TSR:
            for m, kind in (("MCR", "multicolumn"), ("MRR", "multirow")):
                t_sizes = _span_sizes(truth, kind) or []
                p_sizes = _span_sizes(pred, kind) or []
                micro[m][1] += len(t_sizes)
                micro[m][0] += sum(1 for k, s in enumerate(t_sizes)
                                   if k < len(p_sizes) and p_sizes[k] == s)
    metrics = {m: (sums[m] / counts[m] if counts[m] else 0.0) for m in names}
    diagnostics: dict[str, float] = {}
    if task is Task.TSR:
        for m in ("MCR", "MRR"):
            hit, tot = micro[m]
            diagnostics[f"{m}_micro"] = hit / tot if tot else 0.0
    return MetricReport(task=task, total=len(pairs), metrics=metrics,
                        eligible=counts, diagnostics=diagnostics)
