"""Seeded random generation of sequence and activity diagram ASTs."""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass

from .grammar import (
    Action,
    Activate,
    AltBlock,
    AltBranch,
    Arrow,
    Deactivate,
    Decision,
    DiagramAst,
    DiagramKind,
    Fork,
    Message,
    ParticipantDecl,
    Start,
    Stop,
)


class SizeClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    XLARGE = "xlarge"

    @property
    def target_total(self) -> int:
        return SIZE_TARGETS[self]


# Total entries per kind; an 80/20 split gives the train/test sizes.
SIZE_TARGETS = {
    SizeClass.SMALL: 7_500,
    SizeClass.MEDIUM: 15_000,
    SizeClass.LARGE: 30_000,
    SizeClass.XLARGE: 150_000,
}

PARTICIPANT_NAMES = [
    "User", "Client", "Browser", "Server", "Gateway", "AuthService", "Database",
    "Cache", "Queue", "Worker", "Scheduler", "Billing", "Inventory", "Mailer",
    "Logger", "Admin", "Frontend", "Backend", "Api", "Storage", "Payment",
    "Search", "Notifier", "Profile",
]

VERBS = [
    "send", "validate", "fetch", "store", "update", "delete", "create", "check",
    "load", "save", "process", "approve", "reject", "notify", "forward", "parse",
    "render", "submit", "verify", "register", "cancel", "retry", "log", "query",
    "compute", "publish", "receive", "confirm", "archive", "lock", "unlock", "sync",
]

NOUNS = [
    "request", "response", "token", "order", "user", "session", "record", "report",
    "payment", "invoice", "message", "profile", "credentials", "data", "file",
    "result", "event", "account", "item", "cart", "ticket", "status", "config",
    "query", "email", "password", "job", "batch", "entry", "document", "error",
    "receipt",
]

ADJECTIVES = [
    "valid", "available", "complete", "authorized", "empty", "expired", "cached",
    "approved", "found", "ready", "locked", "paid", "active", "urgent", "new",
    "duplicate",
]

BRANCH_LABELS = [("yes", "no"), ("true", "false"), ("valid", "invalid"), ("ok", "error")]


@dataclass(frozen=True)
class GenConfig:
    """Parameters of a random diagram family.

    Ranges are inclusive ``(low, high)`` pairs.
    """

    seed: int = 0
    kind: DiagramKind = DiagramKind.SEQUENCE
    size_class: SizeClass = SizeClass.SMALL
    participants: tuple[int, int] = (2, 6)
    messages: tuple[int, int] = (3, 12)
    actions: tuple[int, int] = (3, 10)
    decision_prob: float = 0.25
    fork_prob: float = 0.15
    alt_prob: float = 0.15
    activation_prob: float = 0.3
    dashed_prob: float = 0.3
    vocab_size: int = 32
    max_depth: int = 2

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for name in ("participants", "messages", "actions"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise ValueError(f"{name} range {low}..{high} is empty")
        if self.participants[1] > len(PARTICIPANT_NAMES):
            raise ValueError("participants range exceeds the name list")
        for name in ("decision_prob", "fork_prob", "alt_prob", "activation_prob", "dashed_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.vocab_size <= min(len(VERBS), len(NOUNS)):
            raise ValueError("vocab_size out of range")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")

    @property
    def target_total(self) -> int:
        return self.size_class.target_total


def draw_rng(config: GenConfig, index: int) -> random.Random:
    """Independent RNG stream for one (seed, kind, index) draw."""
    key = f"{config.seed}:{config.kind.value}:{index}".encode()
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


class _Words:
    def __init__(self, rng: random.Random, vocab_size: int) -> None:
        self.rng = rng
        self.verbs = VERBS[:vocab_size]
        self.nouns = NOUNS[:vocab_size]
        self.adjectives = ADJECTIVES[: max(2, vocab_size // 2)]

    def phrase(self) -> str:
        return f"{self.rng.choice(self.verbs)} {self.rng.choice(self.nouns)}"

    def action(self) -> str:
        return self.phrase().capitalize()

    def condition(self) -> str:
        return f"{self.rng.choice(self.nouns)} {self.rng.choice(self.adjectives)}?"

    def guard(self) -> str:
        return f"{self.rng.choice(self.nouns)} {self.rng.choice(self.adjectives)}"


def _gen_sequence(config: GenConfig, rng: random.Random) -> DiagramAst:
    words = _Words(rng, config.vocab_size)
    count = rng.randint(*config.participants)
    names = rng.sample(PARTICIPANT_NAMES, count)
    body: list = [ParticipantDecl(n) for n in names]
    budget = [rng.randint(*config.messages)]

    def message() -> Message:
        budget[0] -= 1
        source = rng.choice(names)
        target = rng.choice(names) if rng.random() < 0.1 else rng.choice([n for n in names if n != source])
        arrow = Arrow.DASHED if rng.random() < config.dashed_prob else Arrow.SOLID
        return Message(source, target, arrow, words.phrase())

    def block(depth: int, limit: int) -> list:
        out: list = []
        active: list[str] = []
        while budget[0] > 0 and limit > 0:
            limit -= 1
            if depth < config.max_depth and budget[0] >= 2 and rng.random() < config.alt_prob:
                branches = [AltBranch(words.guard(), tuple(block(depth + 1, rng.randint(1, 3))))]
                if budget[0] > 0 and rng.random() < 0.6:
                    branches.append(AltBranch(words.guard(), tuple(block(depth + 1, rng.randint(1, 3)))))
                out.append(AltBlock(tuple(branches)))
                continue
            msg = message()
            out.append(msg)
            if active and rng.random() < 0.35:
                out.append(Deactivate(active.pop()))
            elif rng.random() < config.activation_prob and msg.target not in active:
                out.append(Activate(msg.target))
                active.append(msg.target)
        while active:
            out.append(Deactivate(active.pop()))
        return out

    body.extend(block(0, 10**6))
    return DiagramAst(DiagramKind.SEQUENCE, tuple(body))


def _gen_activity(config: GenConfig, rng: random.Random) -> DiagramAst:
    words = _Words(rng, config.vocab_size)
    budget = [rng.randint(*config.actions)]

    def action() -> Action:
        budget[0] -= 1
        return Action(words.action())

    def block(depth: int, limit: int) -> list:
        out: list = []
        while budget[0] > 0 and limit > 0:
            limit -= 1
            roll = rng.random()
            if depth < config.max_depth and budget[0] >= 2 and roll < config.decision_prob:
                yes, no = rng.choice(BRANCH_LABELS)
                then_body = tuple(block(depth + 1, rng.randint(1, 2))) or (action(),)
                if rng.random() < 0.7:
                    else_body = tuple(block(depth + 1, rng.randint(1, 2))) or (action(),)
                    out.append(Decision(words.condition(), yes, then_body, no, else_body))
                else:
                    out.append(Decision(words.condition(), yes, then_body))
            elif depth < config.max_depth and budget[0] >= 2 and roll < config.decision_prob + config.fork_prob:
                n = rng.randint(2, 3)
                branches = []
                for _ in range(n):
                    branches.append(tuple(block(depth + 1, rng.randint(1, 2))) or (action(),))
                out.append(Fork(tuple(branches)))
            else:
                out.append(action())
        return out

    body = [Start(), *block(0, 10**6), Stop()]
    return DiagramAst(DiagramKind.ACTIVITY, tuple(body))


def gen_ast(config: GenConfig, index: int) -> DiagramAst:
    """Generate the ``index``-th diagram of a configuration.

    The result depends only on ``(config, index)``, so disjoint index ranges
    can be generated independently.
    """
    rng = draw_rng(config, index)
    if config.kind is DiagramKind.SEQUENCE:
        return _gen_sequence(config, rng)
    return _gen_activity(config, rng)
