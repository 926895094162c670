"""Exception types shared across the package."""


class Tab2TexError(Exception):
    """Base class for all package errors."""


class MalformedSource(Tab2TexError):
    """Raised when a tabular block is structurally broken (unbalanced braces,
    missing \\end{tabular}, or a nested tabular environment)."""


class UnbalancedBraces(Tab2TexError):
    """Raised by the tokenizers when brace depth does not return to zero."""


class UnknownStructure(Tab2TexError):
    """Raised when representing a table's structure would require a token
    outside the structure vocabulary (e.g. a p{..} column type)."""


class NoPreamble(Tab2TexError):
    """Raised when a structure token sequence does not start with a column spec."""


class CellCountMismatch(Tab2TexError):
    """Structure and content predictions disagree on the number of cells."""

    def __init__(self, expected: int, found: int):
        super().__init__(f"expected {expected} content cells, found {found}")
        self.expected = expected
        self.found = found


class TaskMismatch(Tab2TexError):
    """Metric inputs carry different task tags."""


class EmptyCorpus(Tab2TexError):
    """Metric aggregation over zero samples."""


class EmptyDataset(Tab2TexError):
    """No snippet survived dataset filtering."""


class UnsupportedGlyph(Tab2TexError):
    """A character outside the rasterizer's glyph atlas."""


class DecodeError(Tab2TexError):
    """An external image file could not be decoded."""


class EmptyImage(Tab2TexError):
    """An image with zero pixels."""


class ShapeError(Tab2TexError):
    """Tensor shapes incompatible with the requested operation."""


class NonFiniteLoss(Tab2TexError):
    """Training loss became NaN or infinite."""
