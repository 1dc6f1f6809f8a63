import base64
import errno
import json

import pytest

from umlforge import cli
from umlforge.corpus import BudgetExhausted, build_corpus, load_corpus
from umlforge.evaluate import ROW_FIELDS, load_report


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert run("generate", "--kind", "sequence", "--seed", 5, "--total", 30, "--out", out) == 0
    return out


def echo_answers(stub, root):
    corpus = load_corpus(root)
    for entry in corpus.entries:
        stub.answers[base64.b64encode((root / entry.image_path).read_bytes()).decode()] = entry.code
    return corpus


def tree(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and not p.name.endswith(".meta.json")
    }


# generate


def test_generate_layout(corpus_dir, capsys):
    names = sorted(p.name for p in corpus_dir.iterdir())
    assert names == ["code", "generate.meta.json", "images", "manifest.json", "test.json", "train.json"]
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    assert (len(manifest["train_ids"]), len(manifest["test_ids"])) == (24, 6)
    assert len(list((corpus_dir / "images").iterdir())) == 30


def test_generate_is_deterministic(tmp_path, corpus_dir):
    out = tmp_path / "again"
    assert run("generate", "--kind", "sequence", "--seed", 5, "--total", 30, "--out", out, "--jobs", 2) == 0
    assert tree(out) == tree(corpus_dir)


def test_generate_refuses_non_empty_output(tmp_path, capsys):
    (tmp_path / "keep.txt").write_text("x")
    assert run("generate", "--kind", "activity", "--total", 5, "--out", tmp_path) == 2
    assert "not empty" in capsys.readouterr().err
    assert [p.name for p in tmp_path.iterdir()] == ["keep.txt"]


def test_generate_disk_full_cleans_up(tmp_path, monkeypatch, capsys):
    real = cli.write_corpus

    def write_then_fail(corpus, root, jobs=1):
        real(corpus, root, jobs)
        raise OSError(errno.ENOSPC, "No space left on device")

    monkeypatch.setattr(cli, "write_corpus", write_then_fail)
    out = tmp_path / "full"
    assert run("generate", "--kind", "activity", "--total", 5, "--out", out) == 2
    assert "disk full" in capsys.readouterr().err
    assert not out.exists()


def test_generate_budget_exhausted(tmp_path, monkeypatch, capsys):
    def exhausted(config, target, allow_partial=False):
        raise BudgetExhausted(build_corpus(config, 5))

    monkeypatch.setattr(cli, "build_corpus", exhausted)
    assert run("generate", "--kind", "activity", "--total", 5, "--out", tmp_path / "x") == 2
    assert "--allow-partial" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["generate", "--out", "x"],
        ["generate", "--kind", "class", "--out", "x"],
        ["report"],
        ["train-config", "--strategy", "qlora", "--out", "x"],
    ],
)
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 1


def test_evaluate_needs_exactly_one_source(corpus_dir, tmp_path, capsys):
    assert run("evaluate", "--corpus", corpus_dir, "--out", tmp_path / "r.json") == 1
    code = run("evaluate", "--corpus", corpus_dir, "--endpoint", "http://x", "--responses", tmp_path / "a",
               "--out", tmp_path / "r.json")
    assert code == 1


# evaluate


def test_evaluate_perfect_echo(stub, corpus_dir, tmp_path):
    echo_answers(stub, corpus_dir)
    out = tmp_path / "report.json"
    saved = tmp_path / "responses.json"
    code = run("evaluate", "--corpus", corpus_dir, "--endpoint", stub.url, "--out", out,
               "--model-label", "echo", "--save-responses", saved)
    assert code == 0
    report = load_report(out)
    s = report["summary"]
    assert (s["corpus_bleu"], s["mean_sentence_bleu"], s["mean_ssim"]) == (1.0, 1.0, 1.0)
    assert (s["syntax_rate"], s["absence_rate"], s["mismatch_rate"]) == (0.0, 0.0, 0.0)
    assert s["total"] == 6 and s["counts"]["clean"] == 6
    assert report["dataset_label"] == "small-sequence" and report["model_label"] == "echo"
    assert (tmp_path / "report.meta.json").exists()
    assert len(json.loads(saved.read_text())["responses"]) == 6


def test_evaluate_no_idea(stub, corpus_dir, tmp_path):
    stub.default = "no idea"
    out = tmp_path / "report.json"
    assert run("evaluate", "--corpus", corpus_dir, "--endpoint", stub.url, "--out", out) == 0
    s = load_report(out)["summary"]
    assert s["absence_rate"] == 1.0
    assert s["corpus_bleu"] == 0.0
    assert s["mean_ssim"] < 0.9


def test_replay_is_byte_identical(corpus_dir, tmp_path):
    corpus = load_corpus(corpus_dir)
    texts = {e.id: e.code if i % 2 else "```\n" + e.code + "```" for i, e in enumerate(corpus.test)}
    texts[corpus.test[0].id] = "@startuml\nstart\n:x;\nstop\n@enduml"
    texts[corpus.test[1].id] = "@startuml\nA -> B\nalt g\n@enduml"
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(texts))
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out, jobs in zip(outs, (1, 2)):
        assert run("evaluate", "--corpus", corpus_dir, "--responses", replay, "--out", out, "--jobs", jobs) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()
    s = load_report(outs[0])["summary"]
    assert s["counts"] == {"clean": 4, "syntax_error": 1, "uml_absence": 0, "diagram_mismatch": 1}
    assert s["eval_hours"] == 0.0


def test_replay_missing_entry_is_data_error(corpus_dir, tmp_path, capsys):
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps({"nope": "x"}))
    assert run("evaluate", "--corpus", corpus_dir, "--responses", replay, "--out", tmp_path / "r.json") == 2
    assert "no response" in capsys.readouterr().err


def test_evaluate_missing_corpus(tmp_path):
    code = run("evaluate", "--corpus", tmp_path / "none", "--responses", tmp_path / "r", "--out", tmp_path / "o")
    assert code == 2


def test_evaluate_dead_endpoint(corpus_dir, tmp_path, capsys):
    code = run("evaluate", "--corpus", corpus_dir, "--endpoint", "http://127.0.0.1:9", "--retries", 0,
               "--out", tmp_path / "r.json")
    assert code == 3
    assert not (tmp_path / "r.json").exists()


def test_evaluate_auth_failure(stub, corpus_dir, tmp_path):
    stub.fail_first = 100
    stub.fail_status = 401
    assert run("evaluate", "--corpus", corpus_dir, "--endpoint", stub.url, "--out", tmp_path / "r.json") == 3


# report


def make_report(path, dataset, model, bleu=0.5):
    summary = dict(corpus_bleu=bleu, mean_sentence_bleu=0.4, mean_ssim=0.8, syntax_rate=0.0007,
                   absence_rate=0.0, mismatch_rate=0.01, eval_hours=1.5, total=1500, counts={})
    path.write_text(json.dumps({"schema_version": 1, "dataset_label": dataset, "model_label": model,
                                "summary": summary, "records": []}))
    return path


def test_report_single_row(tmp_path, capsys):
    r = make_report(tmp_path / "r.json", "small-activity", "lora")
    assert run("report", "--inputs", r) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(ROW_FIELDS)
    assert lines[1] == "small-activity,lora,0.5000,0.4000,0.8000,0.0007,0.0000,0.0100,1.5000"
    assert len(lines) == 2


def test_report_sorted_and_markdown(tmp_path):
    paths = [
        make_report(tmp_path / "1.json", "small-sequence", "full"),
        make_report(tmp_path / "2.json", "large-activity", "lora"),
        make_report(tmp_path / "3.json", "large-activity", "full"),
    ]
    out = tmp_path / "table.md"
    assert run("report", "--inputs", *paths, "--format", "markdown", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("| dataset_label | model_label |")
    assert [line.split("|")[1:3] for line in lines[2:]] == [
        [" large-activity ", " full "],
        [" large-activity ", " lora "],
        [" small-sequence ", " full "],
    ]


def test_report_csv_file_uses_crlf(tmp_path):
    out = tmp_path / "t.csv"
    assert run("report", "--inputs", make_report(tmp_path / "r.json", "a", "b"), "--out", out) == 0
    assert out.read_bytes().count(b"\r\n") == 2


@pytest.mark.parametrize(
    "content, needle",
    [
        ("{not json", "not valid JSON"),
        ('{"schema_version": 1}', "schema error"),
        ('{"schema_version": 1, "dataset_label": "a", "model_label": "b", "records": [],'
         ' "summary": {"corpus_bleu": 2}}', "schema error"),
    ],
)
def test_report_rejects_malformed(tmp_path, capsys, content, needle):
    bad = tmp_path / "bad.json"
    bad.write_text(content)
    assert run("report", "--inputs", bad) == 2
    assert needle in capsys.readouterr().err


def test_report_bad_rate_names_field(tmp_path, capsys):
    r = make_report(tmp_path / "r.json", "a", "b", bleu=1.5)
    assert run("report", "--inputs", r) == 2
    assert "summary/corpus_bleu" in capsys.readouterr().err


# train-config


@pytest.mark.parametrize("strategy, lr", [("lora", 2e-4), ("full", 2e-5)])
def test_train_config(tmp_path, strategy, lr):
    out = tmp_path / "cfg.json"
    assert run("train-config", "--strategy", strategy, "--out", out) == 0
    assert json.loads(out.read_text())["learning_rate"] == lr
