"""Shared fixtures: a six-row, four-column reference table exercising rules,
vertical bars, subscripts, escaped percent, and bold cells."""

import pytest

REFERENCE_TABLE = (
    "\\begin{tabular}{|c||c|c|c|} \\hline "
    "Accuracy(\\%) & Colon Cancer & Duke Cancer & Leukemia \\\\ \\hline "
    "RVM & 85.48 & 80.95 & 93.06 \\\\ \\hline "
    "SVM & 83.87 & 85.71 & 87.50 \\\\ \\hline "
    "RVM$_{PFCVM}$ & 87.10 & 92.86 & 95.83 \\\\ \\hline "
    "SVM$_{PFCVM}$ & 85.48 & \\textbf{97.62} & 95.83 \\\\ \\hline "
    "PFCVM$_{LP}$ & \\textbf{96.77} & 95.24 & \\textbf{98.61} \\\\ \\hline "
    "\\end{tabular}"
)


@pytest.fixture
def reference_table() -> str:
    return REFERENCE_TABLE
