"""PlantUML subset: AST, parser, canonical printer, validation and kind detection.

The subset covers two diagram kinds.

Sequence::

    participant A
    participant "Long name" as B
    A -> B : label
    B --> A : label
    activate B / deactivate B
    alt guard / else guard / end

Activity::

    start / stop
    :label;
    if (cond) then (yes) / else (no) / endif
    fork / fork again / end fork
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Union

START_TAG = "@startuml"
END_TAG = "@enduml"


class DiagramKind(enum.Enum):
    SEQUENCE = "sequence"
    ACTIVITY = "activity"


class KindGuess(enum.Enum):
    SEQUENCE = "sequence"
    ACTIVITY = "activity"
    OTHER_UML = "other_uml"
    NOT_UML = "not_uml"


class Arrow(enum.Enum):
    SOLID = "->"
    DASHED = "-->"


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticipantDecl:
    name: str
    display: str | None = None


@dataclass(frozen=True)
class Message:
    source: str
    target: str
    arrow: Arrow = Arrow.SOLID
    label: str = ""


@dataclass(frozen=True)
class Activate:
    target: str


@dataclass(frozen=True)
class Deactivate:
    target: str


@dataclass(frozen=True)
class AltBranch:
    guard: str
    elements: tuple[SequenceElement, ...]


@dataclass(frozen=True)
class AltBlock:
    branches: tuple[AltBranch, ...]


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class Stop:
    pass


@dataclass(frozen=True)
class Action:
    label: str


@dataclass(frozen=True)
class Decision:
    """``if (condition) then (then_label) ... [else (else_label) ...] endif``.

    ``else_body`` is None when there is no ``else`` line at all; an ``else``
    without a parenthesised label has ``else_label`` None and a body.
    """

    condition: str
    then_label: str
    then_body: tuple[ActivityElement, ...]
    else_label: str | None = None
    else_body: tuple[ActivityElement, ...] | None = None


@dataclass(frozen=True)
class Fork:
    branches: tuple[tuple[ActivityElement, ...], ...]


SequenceElement = Union[ParticipantDecl, Message, Activate, Deactivate, AltBlock]
ActivityElement = Union[Start, Stop, Action, Decision, Fork]
Element = Union[SequenceElement, ActivityElement]

SEQUENCE_TYPES = (ParticipantDecl, Message, Activate, Deactivate, AltBlock)
ACTIVITY_TYPES = (Start, Stop, Action, Decision, Fork)


@dataclass(frozen=True)
class DiagramAst:
    kind: DiagramKind
    body: tuple[Element, ...] = ()


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class ParseError(Exception):
    """Raised when source text is not in the supported subset.

    Attributes:
        line: 1-based line number (0 when not tied to a line).
        column: 1-based column number.
        reason: human readable description.
    """

    def __init__(self, reason: str, line: int = 0, column: int = 1) -> None:
        super().__init__(f"line {line}, column {column}: {reason}")
        self.reason = reason
        self.line = line
        self.column = column


class MissingStartTag(ParseError):
    pass


class MissingEndTag(ParseError):
    pass


class UnknownStatement(ParseError):
    pass


class UnbalancedBlock(ParseError):
    pass


class UndeclaredParticipant(ParseError):
    pass


class MixedDiagramKinds(ParseError):
    pass


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_IDENT_RE = re.compile(rf"^{IDENT}$")
_PARTICIPANT_RE = re.compile(rf'^participant\s+(?:"([^"]*)"\s+as\s+)?({IDENT})$')
_MESSAGE_RE = re.compile(rf"^({IDENT})\s*(-->|->)\s*({IDENT})\s*(?::(.*))?$")
_ACTIVATE_RE = re.compile(rf"^(activate|deactivate)\s+({IDENT})$")
_ALT_RE = re.compile(r"^alt(?:\s+(.*))?$")
_IF_RE = re.compile(r"^if\s*\((.*)\)\s*then(?:\s*\((.*)\))?$")
_ELSE_RE = re.compile(r"^else(?:\s+(.*))?$")
_PAREN_RE = re.compile(r"^\((.*)\)$")


@dataclass
class _Frame:
    """Open block during parsing."""

    opener: str  # "alt", "if", "fork"
    line: int
    # alt: list of (guard, elements); if: then/else; fork: list of branches
    parts: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    @property
    def current(self) -> list:
        return self.parts[-1]


def _significant_lines(src: str) -> Iterator[tuple[int, str]]:
    for number, raw in enumerate(src.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("'"):
            yield number, line


def parse(src: str, strict: bool = False) -> DiagramAst:
    """Parse PlantUML source text into a :class:`DiagramAst`.

    Structural problems (unknown statements, unclosed blocks, mixed kinds)
    raise a :class:`ParseError` subclass. Semantic rules such as balanced
    activations are left to :func:`validate`.

    Args:
        src: Source text including the ``@startuml``/``@enduml`` lines.
        strict: When true, messages and activations must reference a
            previously declared participant.
    """
    lines = list(_significant_lines(src))
    if not lines or lines[0][1].split()[0] != START_TAG:
        where = lines[0][0] if lines else 1
        raise MissingStartTag("expected @startuml", where)
    end_index = next((i for i, (_, text) in enumerate(lines) if text == END_TAG), None)
    if end_index is None:
        raise MissingEndTag("expected @enduml", lines[-1][0] + 1)
    trailing = lines[end_index + 1:]
    if trailing:
        raise UnknownStatement("content after @enduml", trailing[0][0])

    kind: DiagramKind | None = None
    declared: set[str] = set()
    root: list = []
    stack: list[_Frame] = []

    def target() -> list:
        return stack[-1].current if stack else root

    def claim(new: DiagramKind, number: int) -> None:
        nonlocal kind
        if kind is None:
            kind = new
        elif kind is not new:
            raise MixedDiagramKinds(
                f"{new.value} statement in a {kind.value} diagram", number
            )

    def use(name: str, number: int, column: int) -> None:
        if name not in declared:
            if strict:
                raise UndeclaredParticipant(f"participant {name!r} is not declared", number, column)
            declared.add(name)

    for number, line in lines[1:end_index]:
        top = stack[-1] if stack else None

        if line == "start" or line == "stop":
            claim(DiagramKind.ACTIVITY, number)
            target().append(Start() if line == "start" else Stop())
            continue
        if line.startswith(":") and line.endswith(";") and len(line) >= 2:
            claim(DiagramKind.ACTIVITY, number)
            target().append(Action(line[1:-1].strip()))
            continue
        m = _IF_RE.match(line)
        if m:
            claim(DiagramKind.ACTIVITY, number)
            frame = _Frame("if", number, parts=[[]], labels=[m.group(2) or ""])
            frame.labels.insert(0, m.group(1).strip())
            stack.append(frame)
            continue
        if line == "endif" or line == "end if":
            if top is None or top.opener != "if":
                raise UnbalancedBlock("endif without matching if", number)
            stack.pop()
            cond, then_label = top.labels[0], top.labels[1].strip()
            if len(top.parts) == 1:
                node = Decision(cond, then_label, tuple(top.parts[0]))
            else:
                node = Decision(cond, then_label, tuple(top.parts[0]), top.labels[2], tuple(top.parts[1]))
            target().append(node)
            continue
        if line == "fork":
            claim(DiagramKind.ACTIVITY, number)
            stack.append(_Frame("fork", number, parts=[[]]))
            continue
        if line == "fork again":
            if top is None or top.opener != "fork":
                raise UnbalancedBlock("fork again outside fork", number)
            top.parts.append([])
            continue
        if line == "end fork":
            if top is None or top.opener != "fork":
                raise UnbalancedBlock("end fork without matching fork", number)
            stack.pop()
            target().append(Fork(tuple(tuple(b) for b in top.parts)))
            continue

        m = _ELSE_RE.match(line)
        if m:
            rest = (m.group(1) or "").strip()
            if top is not None and top.opener == "if":
                if len(top.parts) != 1:
                    raise UnbalancedBlock("second else in if block", number)
                label = None
                if rest:
                    pm = _PAREN_RE.match(rest)
                    if pm is None:
                        raise UnknownStatement(f"malformed else label: {line!r}", number)
                    label = pm.group(1).strip()
                top.labels.append(label)
                top.parts.append([])
                continue
            if top is not None and top.opener == "alt":
                top.labels.append(rest)
                top.parts.append([])
                continue
            raise UnbalancedBlock("else outside alt or if", number)

        m = _ALT_RE.match(line)
        if m:
            claim(DiagramKind.SEQUENCE, number)
            stack.append(_Frame("alt", number, parts=[[]], labels=[(m.group(1) or "").strip()]))
            continue
        if line == "end":
            if top is None or top.opener != "alt":
                raise UnbalancedBlock("end without matching alt", number)
            stack.pop()
            branches = tuple(AltBranch(g, tuple(p)) for g, p in zip(top.labels, top.parts))
            target().append(AltBlock(branches))
            continue
        m = _PARTICIPANT_RE.match(line)
        if m:
            claim(DiagramKind.SEQUENCE, number)
            declared.add(m.group(2))
            target().append(ParticipantDecl(m.group(2), m.group(1)))
            continue
        m = _MESSAGE_RE.match(line)
        if m:
            claim(DiagramKind.SEQUENCE, number)
            use(m.group(1), number, m.start(1) + 1)
            use(m.group(3), number, m.start(3) + 1)
            label = (m.group(4) or "").strip()
            target().append(Message(m.group(1), m.group(3), Arrow(m.group(2)), label))
            continue
        m = _ACTIVATE_RE.match(line)
        if m:
            claim(DiagramKind.SEQUENCE, number)
            use(m.group(2), number, m.start(2) + 1)
            node = Activate(m.group(2)) if m.group(1) == "activate" else Deactivate(m.group(2))
            target().append(node)
            continue

        raise UnknownStatement(f"unrecognized statement: {line!r}", number)

    if stack:
        frame = stack[-1]
        raise UnbalancedBlock(f"unclosed {frame.opener} block opened here", frame.line)
    return DiagramAst(kind or DiagramKind.SEQUENCE, tuple(root))


# ---------------------------------------------------------------------------
# Canonical printing
# ---------------------------------------------------------------------------


def _emit(element: Element, out: list[str]) -> None:
    if isinstance(element, ParticipantDecl):
        if element.display is None:
            out.append(f"participant {element.name}")
        else:
            out.append(f'participant "{element.display}" as {element.name}')
    elif isinstance(element, Message):
        line = f"{element.source} {element.arrow.value} {element.target}"
        out.append(f"{line} : {element.label}" if element.label else line)
    elif isinstance(element, Activate):
        out.append(f"activate {element.target}")
    elif isinstance(element, Deactivate):
        out.append(f"deactivate {element.target}")
    elif isinstance(element, AltBlock):
        for i, branch in enumerate(element.branches):
            word = "alt" if i == 0 else "else"
            out.append(f"{word} {branch.guard}" if branch.guard else word)
            for child in branch.elements:
                _emit(child, out)
        out.append("end")
    elif isinstance(element, Start):
        out.append("start")
    elif isinstance(element, Stop):
        out.append("stop")
    elif isinstance(element, Action):
        out.append(f":{element.label};")
    elif isinstance(element, Decision):
        head = f"if ({element.condition}) then"
        out.append(f"{head} ({element.then_label})" if element.then_label else head)
        for child in element.then_body:
            _emit(child, out)
        if element.else_body is not None:
            out.append("else" if element.else_label is None else f"else ({element.else_label})")
            for child in element.else_body:
                _emit(child, out)
        out.append("endif")
    elif isinstance(element, Fork):
        for i, branch in enumerate(element.branches):
            out.append("fork" if i == 0 else "fork again")
            for child in branch:
                _emit(child, out)
        out.append("end fork")
    else:
        raise TypeError(f"not a diagram element: {element!r}")


def to_source(ast: DiagramAst) -> str:
    """Print an AST as canonical source: one statement per line, LF-terminated."""
    out = [START_TAG]
    for element in ast.body:
        _emit(element, out)
    out.append(END_TAG)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    path: tuple[int, ...]
    detail: str = ""

    @property
    def index(self) -> int:
        return self.path[0] if self.path else -1


def _bad_label(text: str) -> bool:
    return text != text.strip() or "\n" in text or "\r" in text


def participants(ast: DiagramAst) -> list[str]:
    """Participant names in order of first appearance (declaration or use)."""
    seen: dict[str, None] = {}

    def walk(elements) -> None:
        for el in elements:
            if isinstance(el, ParticipantDecl):
                seen.setdefault(el.name)
            elif isinstance(el, Message):
                seen.setdefault(el.source)
                seen.setdefault(el.target)
            elif isinstance(el, (Activate, Deactivate)):
                seen.setdefault(el.target)
            elif isinstance(el, AltBlock):
                for branch in el.branches:
                    walk(branch.elements)

    walk(ast.body)
    return list(seen)


def _validate_sequence(body, strict: bool, out: list[Violation]) -> None:
    declared: set[str] = set()

    def ref(name: str, path) -> None:
        if not _IDENT_RE.match(name):
            out.append(Violation("InvalidIdentifier", path, name))
        if name not in declared:
            if strict:
                out.append(Violation("UndeclaredParticipant", path, name))
            declared.add(name)

    def walk(elements, prefix: tuple[int, ...]) -> None:
        open_count: dict[str, list[tuple[int, ...]]] = {}
        for i, el in enumerate(elements):
            path = prefix + (i,)
            if isinstance(el, ACTIVITY_TYPES):
                out.append(Violation("WrongElementKind", path, type(el).__name__))
            elif isinstance(el, ParticipantDecl):
                if not _IDENT_RE.match(el.name):
                    out.append(Violation("InvalidIdentifier", path, el.name))
                if el.name in declared:
                    out.append(Violation("DuplicateParticipant", path, el.name))
                if el.display is not None and ('"' in el.display or _bad_label(el.display)):
                    out.append(Violation("InvalidLabel", path, el.display))
                declared.add(el.name)
            elif isinstance(el, Message):
                ref(el.source, path)
                ref(el.target, path)
                if _bad_label(el.label):
                    out.append(Violation("InvalidLabel", path, el.label))
            elif isinstance(el, Activate):
                ref(el.target, path)
                open_count.setdefault(el.target, []).append(path)
            elif isinstance(el, Deactivate):
                ref(el.target, path)
                if open_count.get(el.target):
                    open_count[el.target].pop()
                else:
                    out.append(Violation("UnmatchedDeactivation", path, el.target))
            elif isinstance(el, AltBlock):
                if not el.branches:
                    out.append(Violation("EmptyAltBlock", path))
                for b, branch in enumerate(el.branches):
                    if _bad_label(branch.guard):
                        out.append(Violation("InvalidLabel", path, branch.guard))
                    walk(branch.elements, path + (b,))
            else:
                out.append(Violation("WrongElementKind", path, type(el).__name__))
        for name, pending in open_count.items():
            for path in pending:
                out.append(Violation("UnmatchedActivation", path, name))

    walk(body, ())
    if not body:
        out.append(Violation("EmptyDiagram", ()))


def _terminates(body) -> bool:
    if not body:
        return False
    last = body[-1]
    if isinstance(last, Stop):
        return True
    if isinstance(last, Decision):
        return (
            last.else_body is not None
            and _terminates(last.then_body)
            and _terminates(last.else_body)
        )
    return False


def _validate_activity(body, out: list[Violation]) -> None:
    def walk(elements, prefix: tuple[int, ...]) -> None:
        for i, el in enumerate(elements):
            path = prefix + (i,)
            if isinstance(el, SEQUENCE_TYPES):
                out.append(Violation("WrongElementKind", path, type(el).__name__))
            elif isinstance(el, Start):
                if path != (0,):
                    out.append(Violation("MisplacedStart", path))
            elif isinstance(el, Stop):
                if i != len(elements) - 1:
                    out.append(Violation("UnreachableAfterStop", path))
            elif isinstance(el, Action):
                if not el.label or _bad_label(el.label):
                    out.append(Violation("InvalidLabel", path, el.label))
            elif isinstance(el, Decision):
                for text in (el.condition, el.then_label, el.else_label or ""):
                    if _bad_label(text) or ")" in text or "(" in text:
                        out.append(Violation("InvalidLabel", path, text))
                if el.else_body is None and el.else_label is not None:
                    out.append(Violation("DanglingElseLabel", path, el.else_label))
                walk(el.then_body, path + (0,))
                if el.else_body is not None:
                    walk(el.else_body, path + (1,))
            elif isinstance(el, Fork):
                if len(el.branches) < 2:
                    out.append(Violation("ForkTooFewBranches", path))
                for b, branch in enumerate(el.branches):
                    walk(branch, path + (b,))
            else:
                out.append(Violation("WrongElementKind", path, type(el).__name__))

    if not body or not isinstance(body[0], Start):
        out.append(Violation("MissingStart", (0,)))
    walk(body, ())
    if not _terminates(body):
        out.append(Violation("MissingStop", (max(len(body) - 1, 0),)))


def validate(ast: DiagramAst, strict: bool = False) -> list[Violation]:
    """Check the semantic invariants of an AST; an empty list means valid."""
    out: list[Violation] = []
    if ast.kind is DiagramKind.SEQUENCE:
        _validate_sequence(ast.body, strict, out)
    else:
        _validate_activity(ast.body, out)
    return out


# ---------------------------------------------------------------------------
# Response handling
# ---------------------------------------------------------------------------


def extract_uml_block(response: str) -> str | None:
    """Return the first ``@startuml`` ... ``@enduml`` span of a response, or None."""
    start = response.find(START_TAG)
    if start < 0:
        return None
    end = response.find(END_TAG, start + len(START_TAG))
    if end < 0:
        return None
    return response[start:end + len(END_TAG)]


_SEQUENCE_MARKERS = [
    re.compile(r"^(participant|actor|boundary|control|entity|database|collections)\b"),
    re.compile(r"^\S+\s*(-->|->|<-|<--)\s*\S+"),
    re.compile(r"^(activate|deactivate)\s"),
    re.compile(r"^alt\b"),
]
_ACTIVITY_MARKERS = [
    re.compile(r"^(start|stop)$"),
    re.compile(r"^:.*;$"),
    re.compile(r"^if\s*\("),
    re.compile(r"^fork$"),
]
_OTHER_MARKERS = [
    re.compile(r"^(abstract\s+class|class|interface|enum|annotation)\s+\S+"),
    re.compile(r"^(state|usecase|object|component|node|package)\s+\S+"),
    re.compile(r"^\[\*\]\s*-->"),
    re.compile(r"^\S+\s*(<\|--|--\|>|\*--|--\*|o--|--o|\.\.\|>|<\|\.\.)\s*\S+"),
]


def _count(markers, lines: list[str]) -> int:
    return sum(1 for line in lines if any(m.search(line) for m in markers))


def marker_counts(text: str) -> tuple[int, int, int]:
    """Count (sequence, activity, other-UML) marker lines in text."""
    lines = [line.strip() for line in text.splitlines()]
    other = _count(_OTHER_MARKERS, lines)
    # class relations and state transitions also look like message arrows
    sequence_lines = [ln for ln in lines if not any(m.search(ln) for m in _OTHER_MARKERS)]
    return _count(_SEQUENCE_MARKERS, sequence_lines), _count(_ACTIVITY_MARKERS, lines), other


def detect_kind(text: str) -> KindGuess:
    """Guess which diagram kind a piece of text encodes.

    Text that parses and validates cleanly reports its parsed kind. Anything
    else is decided by counting marker lines: the strictly largest of
    sequence, activity and other-UML counts wins, ties go to OTHER_UML, and
    a text with no markers at all is NOT_UML.
    """
    if START_TAG not in text:
        return KindGuess.NOT_UML
    block = extract_uml_block(text)
    if block is None:
        block = text[text.find(START_TAG):]
    try:
        ast = parse(block)
    except ParseError:
        pass
    else:
        if not validate(ast):
            return KindGuess(ast.kind.value)

    seq, act, other = marker_counts(block)
    if seq == act == other == 0:
        return KindGuess.NOT_UML
    best = max(seq, act, other)
    winners = [k for k, n in ((KindGuess.SEQUENCE, seq), (KindGuess.ACTIVITY, act), (KindGuess.OTHER_UML, other)) if n == best]
    return winners[0] if len(winners) == 1 else KindGuess.OTHER_UML
