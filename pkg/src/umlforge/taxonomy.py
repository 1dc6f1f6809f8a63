"""Classification of model responses into error categories, and rate aggregation."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .grammar import DiagramKind, KindGuess, detect_kind, extract_uml_block, marker_counts
from .render import RenderOutcome, render_candidate


class ErrorCategory(enum.Enum):
    CLEAN = "clean"
    SYNTAX_ERROR = "syntax_error"
    UML_ABSENCE = "uml_absence"
    DIAGRAM_MISMATCH = "diagram_mismatch"


class EmptyInput(ValueError):
    pass


def _recognizably_other(block: str) -> bool:
    seq, act, other = marker_counts(block)
    return other > 0 and other >= max(seq, act)


def classify_block(block: str | None, expected: DiagramKind, outcome: RenderOutcome | None = None) -> ErrorCategory:
    """Classify an already extracted block; ``outcome`` may be passed to avoid re-rendering."""
    if block is None:
        return ErrorCategory.UML_ABSENCE
    if outcome is None:
        outcome = render_candidate(block)
    if not outcome.ok:
        # Out-of-subset diagrams (class, state, ...) are outside what the
        # internal renderer accepts; they count as the wrong kind, not as
        # broken syntax.
        if _recognizably_other(block):
            return ErrorCategory.DIAGRAM_MISMATCH
        return ErrorCategory.SYNTAX_ERROR
    if detect_kind(block) != KindGuess(expected.value):
        return ErrorCategory.DIAGRAM_MISMATCH
    return ErrorCategory.CLEAN


def classify(response: str, expected: DiagramKind) -> ErrorCategory:
    """Assign exactly one category to a raw model response.

    Precedence: no extractable ``@startuml``/``@enduml`` block is
    UML_ABSENCE; a block that fails to render is SYNTAX_ERROR; a block of
    another diagram kind is DIAGRAM_MISMATCH; anything else is CLEAN.
    """
    return classify_block(extract_uml_block(response), expected)


@dataclass(frozen=True)
class ErrorAggregate:
    counts: dict[ErrorCategory, int]
    total: int

    def rate(self, category: ErrorCategory) -> Fraction:
        return Fraction(self.counts.get(category, 0), self.total)

    @property
    def syntax_rate(self) -> float:
        return float(self.rate(ErrorCategory.SYNTAX_ERROR))

    @property
    def absence_rate(self) -> float:
        return float(self.rate(ErrorCategory.UML_ABSENCE))

    @property
    def mismatch_rate(self) -> float:
        return float(self.rate(ErrorCategory.DIAGRAM_MISMATCH))

    def formatted(self) -> dict[str, str]:
        """Rates as 4-decimal fixed-point strings."""
        return {
            "syntax_rate": format_rate(self.rate(ErrorCategory.SYNTAX_ERROR)),
            "absence_rate": format_rate(self.rate(ErrorCategory.UML_ABSENCE)),
            "mismatch_rate": format_rate(self.rate(ErrorCategory.DIAGRAM_MISMATCH)),
        }


def format_rate(rate: Fraction | float) -> str:
    """Round half-up to 4 decimals on the exact rational value."""
    exact = Fraction(rate)
    scaled = (exact * 10_000 + Fraction(1, 2)).__floor__()
    return f"{scaled // 10_000}.{scaled % 10_000:04d}"


def aggregate(records: Iterable[ErrorCategory]) -> ErrorAggregate:
    counts = Counter(records)
    total = sum(counts.values())
    if total == 0:
        raise EmptyInput("no records to aggregate")
    return ErrorAggregate({c: counts.get(c, 0) for c in ErrorCategory}, total)
