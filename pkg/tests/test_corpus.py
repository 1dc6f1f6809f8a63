import json
from dataclasses import replace
from pathlib import Path

import pytest

from umlforge.corpus import (
    PROMPT,
    BudgetExhausted,
    Corpus,
    CorpusManifest,
    DatasetEntry,
    MissingImage,
    build_corpus,
    emit_test_json,
    emit_training_config,
    emit_training_json,
    entry_id,
    load_corpus,
    split_corpus,
    train_size,
    training_config,
    write_corpus,
)
from umlforge.generator import GenConfig, SizeClass, gen_ast
from umlforge.grammar import DiagramKind, detect_kind, parse, to_source, validate


# generator


def test_gen_ast_is_deterministic():
    cfg = GenConfig(seed=0, kind=DiagramKind.SEQUENCE)
    assert to_source(gen_ast(cfg, 0)) == to_source(gen_ast(cfg, 0))


def test_gen_ast_depends_on_seed_and_index():
    a = GenConfig(seed=0, kind=DiagramKind.ACTIVITY)
    b = GenConfig(seed=1, kind=DiagramKind.ACTIVITY)
    assert to_source(gen_ast(a, 0)) != to_source(gen_ast(a, 1))
    assert to_source(gen_ast(a, 0)) != to_source(gen_ast(b, 0))


def test_gen_ids_distinct():
    for kind in DiagramKind:
        cfg = GenConfig(seed=0, kind=kind)
        ids = {entry_id(to_source(gen_ast(cfg, i))) for i in range(10_000)}
        # a handful of identical small diagrams is fine; dedup removes them
        assert len(ids) > 9_990


def test_gen_respects_complexity_ranges():
    cfg = GenConfig(seed=4, kind=DiagramKind.SEQUENCE, participants=(3, 3), messages=(5, 5), alt_prob=0.0)
    for i in range(50):
        src = to_source(gen_ast(cfg, i))
        assert src.count("participant ") == 3
        assert src.count(" -> ") + src.count(" --> ") == 5


@pytest.mark.parametrize(
    "kwargs",
    [
        {"participants": (3, 2)},
        {"messages": (0, 4)},
        {"decision_prob": 1.5},
        {"alt_prob": -0.1},
        {"seed": -1},
        {"seed": 2**64},
        {"vocab_size": 0},
    ],
)
def test_gen_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        GenConfig(**kwargs)


def test_size_class_targets():
    assert [s.target_total for s in SizeClass] == [7_500, 15_000, 30_000, 150_000]


# split


@pytest.mark.parametrize(
    "total, train",
    [(5, 4), (7_500, 6_000), (15_000, 12_000), (14_992, 11_994), (29_992, 23_994), (149_992, 119_994), (10, 8)],
)
def test_train_size_rounding(total, train):
    assert train_size(total) == train


def test_split_is_deterministic_and_partitions():
    ids = [f"id{i}" for i in range(10)]
    first = split_corpus(ids, seed=3)
    assert first == split_corpus(ids, seed=3)
    train, test = first
    assert len(train) == 8 and len(test) == 2
    assert not set(train) & set(test)
    assert sorted(train + test) == sorted(ids)


def test_split_7500():
    train, test = split_corpus([str(i) for i in range(7500)], seed=0)
    assert (len(train), len(test)) == (6000, 1500)


# build_corpus


def test_build_corpus_minimum():
    corpus = build_corpus(GenConfig(seed=2, kind=DiagramKind.ACTIVITY), 5)
    m = corpus.manifest
    assert (m.emitted_total, len(m.train_ids), len(m.test_ids)) == (5, 4, 1)
    with pytest.raises(ValueError):
        build_corpus(GenConfig(), 4)


def test_build_corpus_entries_are_clean_and_unique():
    cfg = GenConfig(seed=6, kind=DiagramKind.SEQUENCE)
    corpus = build_corpus(cfg, 300)
    codes = [e.code for e in corpus.entries]
    assert len(set(codes)) == len(codes) == 300
    for e in corpus.entries:
        ast = parse(e.code)
        assert validate(ast) == []
        assert detect_kind(e.code).value == cfg.kind.value
        assert e.image_path == f"images/{e.id}.png"
        assert e.id == entry_id(e.code) and len(e.id) == 16


def test_build_corpus_drops_duplicates_and_exhausts_budget():
    # one action from a one-word vocabulary: a single distinct diagram
    cfg = GenConfig(seed=0, kind=DiagramKind.ACTIVITY, actions=(1, 1), vocab_size=1,
                    decision_prob=0.0, fork_prob=0.0)
    with pytest.raises(BudgetExhausted) as info:
        build_corpus(cfg, 50)
    partial = info.value.corpus
    m = partial.manifest
    assert info.value.emitted_total == m.emitted_total == 1
    assert m.draws == 500
    assert m.duplicates_dropped == 500 - m.emitted_total
    assert len(m.train_ids) + len(m.test_ids) == m.emitted_total

    corpus = build_corpus(cfg, 50, allow_partial=True)
    assert corpus.manifest.to_json() == m.to_json()


def test_manifest_json_round_trip():
    corpus = build_corpus(GenConfig(seed=8, kind=DiagramKind.ACTIVITY, size_class=SizeClass.MEDIUM), 12)
    data = json.loads(json.dumps(corpus.manifest.to_json()))
    assert CorpusManifest.from_json(data) == corpus.manifest


# emission

ENTRY_CODE = "@startuml\nstart\n:Receive request;\nstop\n@enduml\n"


def test_training_json_golden(tmp_path):
    entry = DatasetEntry.from_code(ENTRY_CODE)
    (tmp_path / "images").mkdir()
    (tmp_path / entry.image_path).write_bytes(b"png")
    out = tmp_path / "train.json"
    emit_training_json([entry], out, tmp_path)
    golden = (Path(__file__).parent / "fixtures" / "train_golden.json").read_text()
    assert out.read_text() == golden


def test_training_json_empty(tmp_path):
    out = tmp_path / "train.json"
    emit_training_json([], out, tmp_path)
    assert out.read_text().strip() == "[]"


def test_test_json_schema(tmp_path):
    entry = DatasetEntry.from_code(ENTRY_CODE)
    out = tmp_path / "test.json"
    emit_test_json([entry], out)
    data = json.loads(out.read_text())
    assert data == [{"id": entry.id, "image": entry.image_path, "question": PROMPT, "answer": ENTRY_CODE}]


def test_missing_image(tmp_path):
    entry = DatasetEntry.from_code(ENTRY_CODE)
    with pytest.raises(MissingImage) as info:
        emit_training_json([entry], tmp_path / "t.json", tmp_path)
    assert info.value.entry_id == entry.id
    with pytest.raises(MissingImage):
        emit_test_json([entry], tmp_path / "q.json", tmp_path)


def test_training_config_values(tmp_path):
    lora = training_config("lora")
    assert lora["lora_enable"] is True
    assert (lora["lora_r"], lora["lora_alpha"]) == (128, 256)
    assert lora["mm_projector_lr"] == 2e-5 and lora["learning_rate"] == 2e-4
    assert (lora["per_device_train_batch_size"], lora["gradient_accumulation_steps"]) == (16, 4)
    full = training_config("full")
    assert full == {"learning_rate": 2e-5, "per_device_train_batch_size": 8, "gradient_accumulation_steps": 4}
    assert not any(k.startswith("lora") or k.startswith("mm_") for k in full)
    emit_training_config("LoRA", tmp_path / "cfg.json")
    assert json.loads((tmp_path / "cfg.json").read_text()) == lora
    with pytest.raises(ValueError):
        training_config("qlora")


def test_write_and_load_corpus(small_corpus):
    corpus, root = small_corpus
    assert sorted(p.name for p in root.iterdir()) == ["code", "images", "manifest.json", "test.json", "train.json"]
    assert len(list((root / "images").glob("*.png"))) == 20
    test = json.loads((root / "test.json").read_text())
    assert [t["id"] for t in test] == corpus.manifest.test_ids
    train = json.loads((root / "train.json").read_text())
    assert [t["id"] for t in train] == corpus.manifest.train_ids
    assert all(t["conversations"][0] == {"from": "human", "value": PROMPT} for t in train)
    loaded = load_corpus(root)
    assert loaded.manifest == corpus.manifest
    assert loaded.by_id() == corpus.by_id()


def test_write_corpus_is_byte_stable(tmp_path):
    corpus = build_corpus(GenConfig(seed=21, kind=DiagramKind.ACTIVITY), 10)
    write_corpus(corpus, tmp_path / "a")
    write_corpus(build_corpus(GenConfig(seed=21, kind=DiagramKind.ACTIVITY), 10), tmp_path / "b")
    for name in ("manifest.json", "train.json", "test.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_write_matches_serial(tmp_path):
    corpus = build_corpus(GenConfig(seed=22, kind=DiagramKind.SEQUENCE), 8)
    write_corpus(corpus, tmp_path / "serial")
    write_corpus(corpus, tmp_path / "parallel", jobs=2)
    for entry in corpus.entries:
        assert (tmp_path / "serial" / entry.image_path).read_bytes() == (tmp_path / "parallel" / entry.image_path).read_bytes()


def test_corpus_subsets():
    corpus = build_corpus(GenConfig(seed=23), 10)
    assert isinstance(corpus, Corpus)
    assert [e.id for e in corpus.train] == corpus.manifest.train_ids
    assert len(corpus.test) == 2
    assert replace(corpus.entries[0]).prompt == PROMPT
