"""Exception taxonomy shared across the toolchain.

Every error raised by this package derives from ForgeError so callers
(and the parser fuzz harness) can catch one type. Data-shaped failures
carry enough context (paths, line numbers, offending values) to locate
the source record.
"""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ForgeError):
    """Invalid configuration (unknown task name, bad flag combination)."""


# --- geometry ---------------------------------------------------------------


class GeometryError(ForgeError):
    """Invalid geometric value (inverted box, non-convex input, NaN)."""


class DegeneratePolygon(GeometryError):
    """Polygon with fewer than 3 distinct vertices, zero area, or
    self-intersection."""


# --- location tokens --------------------------------------------------------


class NonPositiveExtent(ForgeError):
    """Quantization extent must be strictly positive."""


class ParsePredictionError(ForgeError):
    """Base for failures while parsing model output text."""


class MalformedLocation(ParsePredictionError):
    """Wrong token arity inside a wrapper, stray tokens, or text that does
    not fit the task grammar."""


class UnbalancedWrapper(ParsePredictionError):
    """Wrapper opened but not closed, closed without opening, or nested."""


class UnknownCategory(ForgeError):
    """Label that cannot be mapped through the category dictionary."""


# --- schema / io ------------------------------------------------------------


class SchemaError(ForgeError):
    """Invalid unified sample or record file."""


class ParseError(SchemaError):
    """A record file line failed to parse."""

    def __init__(self, message: str, line_no: int | None = None, path: str | None = None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f" in {path}"
        if line_no is not None:
            where += f" at line {line_no}"
        super().__init__(message + where)


class DuplicateId(SchemaError):
    """Two records share an id."""


class IoError(ForgeError):
    """Filesystem failure wrapped with the offending path."""


# --- ingest -----------------------------------------------------------------


class DimensionMismatch(ForgeError):
    """Image/mask (or image pair) sizes disagree."""


class UnknownPaletteIndex(ForgeError):
    """Mask contains a class index missing from the palette."""


class PairingError(ForgeError):
    """Change-detection image pair is incomplete."""


# --- prompts ----------------------------------------------------------------


class PromptError(ForgeError):
    """Invalid prompt pool or template instantiation."""


class MissingSlot(PromptError):
    """Template requires a slot that was not supplied."""


class UnexpectedSlot(PromptError):
    """A slot value was supplied that the template does not use."""


class PoolExhausted(PromptError):
    """More variants requested than the pool holds for a task."""


# --- taskgen ----------------------------------------------------------------


class EmptyCaption(ForgeError):
    """Caption text is empty or whitespace."""


# --- evaluation -------------------------------------------------------------


class MetricError(ForgeError):
    """Invalid metric input."""


class EmptyCorpus(MetricError):
    """Corpus-level metric called with no samples."""


class EmptyText(MetricError):
    """Text metric called with an empty candidate or reference."""


class IdMismatch(ForgeError):
    """Prediction id does not resolve against the ground-truth file."""


class TaskMismatch(ForgeError):
    """Prediction task differs from the ground-truth record's task."""
