"""Corpus assembly: deduplication, 80/20 split, and dataset file emission.

A corpus directory looks like::

    corpus_root/
      images/<id>.png
      code/<id>.txt
      manifest.json
      train.json
      test.json
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .generator import GenConfig, SizeClass, gen_ast
from .grammar import DiagramKind, parse, to_source, validate
from .render import render_ast

log = logging.getLogger(__name__)

PROMPT = "<image>\n Generate the most likely UML code from the diagram."
TRAIN_RATIO = 0.8
BUDGET_FACTOR = 10
MIN_TARGET = 5


class BudgetExhausted(RuntimeError):
    """Too many duplicate draws; ``corpus`` holds what was produced."""

    def __init__(self, corpus: Corpus) -> None:
        m = corpus.manifest
        super().__init__(
            f"draw budget exhausted: {m.emitted_total} of {m.requested_total} unique entries"
        )
        self.corpus = corpus
        self.emitted_total = m.emitted_total


class MissingImage(FileNotFoundError):
    def __init__(self, entry_id: str, path: Path) -> None:
        super().__init__(f"image for entry {entry_id} not found at {path}")
        self.entry_id = entry_id


def entry_id(code: str) -> str:
    """Content-derived id: first 16 hex chars of SHA-256 of the canonical source."""
    return hashlib.sha256(code.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    code: str
    image_path: str
    prompt: str = PROMPT

    @classmethod
    def from_code(cls, code: str) -> DatasetEntry:
        eid = entry_id(code)
        return cls(eid, code, f"images/{eid}.png")


@dataclass
class CorpusManifest:
    config: GenConfig
    requested_total: int
    emitted_total: int = 0
    duplicates_dropped: int = 0
    draws: int = 0
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        config = dataclasses.asdict(self.config)
        config["kind"] = self.config.kind.value
        config["size_class"] = self.config.size_class.value
        for key, value in config.items():
            if isinstance(value, tuple):
                config[key] = list(value)
        return {
            "config": config,
            "requested_total": self.requested_total,
            "emitted_total": self.emitted_total,
            "duplicates_dropped": self.duplicates_dropped,
            "draws": self.draws,
            "train_ids": self.train_ids,
            "test_ids": self.test_ids,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> CorpusManifest:
        raw = dict(data["config"])
        raw["kind"] = DiagramKind(raw["kind"])
        raw["size_class"] = SizeClass(raw["size_class"])
        for key in ("participants", "messages", "actions"):
            raw[key] = tuple(raw[key])
        return cls(
            GenConfig(**raw),
            data["requested_total"],
            data["emitted_total"],
            data["duplicates_dropped"],
            data.get("draws", 0),
            list(data["train_ids"]),
            list(data["test_ids"]),
        )


@dataclass
class Corpus:
    manifest: CorpusManifest
    entries: list[DatasetEntry]

    def by_id(self) -> dict[str, DatasetEntry]:
        return {e.id: e for e in self.entries}

    def subset(self, ids: Sequence[str]) -> list[DatasetEntry]:
        index = self.by_id()
        return [index[i] for i in ids]

    @property
    def train(self) -> list[DatasetEntry]:
        return self.subset(self.manifest.train_ids)

    @property
    def test(self) -> list[DatasetEntry]:
        return self.subset(self.manifest.test_ids)


def train_size(total: int, ratio: float = TRAIN_RATIO) -> int:
    """round(ratio * total) with halves rounded up."""
    return int(ratio * total + 0.5)


def split_corpus(ids: Sequence[str], seed: int, ratio: float = TRAIN_RATIO) -> tuple[list[str], list[str]]:
    """Seeded shuffle, then the first round(ratio * N) ids go to train."""
    order = list(ids)
    random.Random(seed).shuffle(order)
    cut = train_size(len(order), ratio)
    return order[:cut], order[cut:]


def build_corpus(config: GenConfig, target_total: int | None = None, allow_partial: bool = False) -> Corpus:
    """Draw ASTs in index order until ``target_total`` unique sources exist.

    Exact duplicates (same canonical source) are dropped. At most
    ``10 * target_total`` draws are made.

    Raises:
        BudgetExhausted: the budget ran out first and ``allow_partial`` is
            false. The partial corpus is attached to the exception.
    """
    target = config.target_total if target_total is None else target_total
    if target < MIN_TARGET:
        raise ValueError(f"target_total must be at least {MIN_TARGET}")
    manifest = CorpusManifest(config, target)
    entries: list[DatasetEntry] = []
    seen: set[str] = set()
    budget = BUDGET_FACTOR * target
    while len(entries) < target and manifest.draws < budget:
        ast = gen_ast(config, manifest.draws)
        manifest.draws += 1
        code = to_source(ast)
        entry = DatasetEntry.from_code(code)
        if entry.id in seen:
            manifest.duplicates_dropped += 1
            continue
        problems = validate(ast)
        if problems:
            raise RuntimeError(f"generator produced an invalid diagram at index {manifest.draws - 1}: {problems}")
        seen.add(entry.id)
        entries.append(entry)
    manifest.emitted_total = len(entries)
    manifest.train_ids, manifest.test_ids = split_corpus([e.id for e in entries], config.seed)
    corpus = Corpus(manifest, entries)
    if len(entries) < target:
        if not allow_partial:
            raise BudgetExhausted(corpus)
        log.warning("draw budget exhausted: %d of %d unique entries", len(entries), target)
    return corpus


# ---------------------------------------------------------------------------
# File emission
# ---------------------------------------------------------------------------


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def _check_images(entries: Sequence[DatasetEntry], root: Path | None) -> None:
    if root is None:
        return
    for entry in entries:
        path = root / entry.image_path
        if not path.is_file():
            raise MissingImage(entry.id, path)


def training_records(entries: Sequence[DatasetEntry], root: Path | None = None) -> list[dict]:
    _check_images(entries, root)
    return [
        {
            "id": e.id,
            "image": e.image_path,
            "conversations": [
                {"from": "human", "value": e.prompt},
                {"from": "gpt", "value": e.code},
            ],
        }
        for e in entries
    ]


def qa_records(entries: Sequence[DatasetEntry], root: Path | None = None) -> list[dict]:
    _check_images(entries, root)
    return [{"id": e.id, "image": e.image_path, "question": e.prompt, "answer": e.code} for e in entries]


def emit_training_json(entries: Sequence[DatasetEntry], path: Path, root: Path | None = None) -> None:
    """Write the conversation-style training file; images are checked under ``root``."""
    path.write_text(dump_json(training_records(entries, root)), encoding="utf-8")


def emit_test_json(entries: Sequence[DatasetEntry], path: Path, root: Path | None = None) -> None:
    """Write the question/answer test file; images are checked under ``root``."""
    path.write_text(dump_json(qa_records(entries, root)), encoding="utf-8")


def training_config(strategy: str) -> dict[str, Any]:
    """Fine-tuning hyperparameters for an external trainer."""
    strategy = strategy.lower()
    if strategy == "lora":
        return {
            "lora_enable": True,
            "lora_r": 128,
            "lora_alpha": 256,
            "mm_projector_lr": 2e-5,
            "learning_rate": 2e-4,
            "per_device_train_batch_size": 16,
            "gradient_accumulation_steps": 4,
        }
    if strategy == "full":
        return {
            "learning_rate": 2e-5,
            "per_device_train_batch_size": 8,
            "gradient_accumulation_steps": 4,
        }
    raise ValueError(f"unknown strategy {strategy!r}; expected 'lora' or 'full'")


def emit_training_config(strategy: str, path: Path) -> None:
    path.write_text(dump_json(training_config(strategy)), encoding="utf-8")


def _render_one(args: tuple[str, str]) -> None:
    code, out = args
    render_ast(parse(code)).save_png(out)


def write_corpus(corpus: Corpus, root: Path, jobs: int = 1) -> None:
    """Render images and write code files, manifest, train.json and test.json."""
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "code").mkdir(exist_ok=True)
    work = [(e.code, str(root / e.image_path)) for e in corpus.entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for _ in pool.map(_render_one, work, chunksize=64):
                pass
    else:
        for item in work:
            _render_one(item)
    for entry in corpus.entries:
        (root / "code" / f"{entry.id}.txt").write_text(entry.code, encoding="utf-8")
    (root / "manifest.json").write_text(dump_json(corpus.manifest.to_json()), encoding="utf-8")
    emit_training_json(corpus.train, root / "train.json", root)
    emit_test_json(corpus.test, root / "test.json", root)


def load_corpus(root: Path) -> Corpus:
    """Read a corpus directory back; entry order follows the manifest (train, then test)."""
    manifest = CorpusManifest.from_json(json.loads((root / "manifest.json").read_text(encoding="utf-8")))
    entries = []
    for eid in manifest.train_ids + manifest.test_ids:
        code = (root / "code" / f"{eid}.txt").read_text(encoding="utf-8")
        entries.append(DatasetEntry(eid, code, f"images/{eid}.png"))
    return Corpus(manifest, entries)
