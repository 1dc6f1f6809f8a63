"""Scoring of model responses against a corpus test split, and report tables.

report.json layout::

    {
      "schema_version": 1,
      "dataset_label": "small-activity",
      "model_label": "llava-13b-lora",
      "summary": {ReportRow fields, "total": N, "counts": {...}},
      "records": [{"id", "category", "sentence_bleu", "ssim",
                   "latency_seconds", "status"}, ...]
    }

Rates are stored rounded to 4 decimals.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema

from .corpus import Corpus
from .grammar import DiagramKind, extract_uml_block
from .metrics import bleu, corpus_bleu, ssim, tokenize
from .render import ERROR_PLATE, load_png, render_candidate
from .taxonomy import ErrorCategory, aggregate, classify_block, format_rate

SCHEMA_VERSION = 1

ROW_FIELDS = (
    "dataset_label",
    "model_label",
    "corpus_bleu",
    "mean_sentence_bleu",
    "mean_ssim",
    "syntax_rate",
    "absence_rate",
    "mismatch_rate",
    "eval_hours",
)

_RATE = {"type": "number", "minimum": 0, "maximum": 1}

REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "dataset_label", "model_label", "summary", "records"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "dataset_label": {"type": "string"},
        "model_label": {"type": "string"},
        "summary": {
            "type": "object",
            "required": list(ROW_FIELDS[2:]),
            "properties": {
                "corpus_bleu": _RATE,
                "mean_sentence_bleu": _RATE,
                "mean_ssim": {"type": "number", "minimum": -1, "maximum": 1},
                "syntax_rate": _RATE,
                "absence_rate": _RATE,
                "mismatch_rate": _RATE,
                "eval_hours": {"type": "number", "minimum": 0},
            },
        },
        "records": {"type": "array"},
    },
}


@dataclass(frozen=True)
class EvalRecord:
    id: str
    category: str
    sentence_bleu: float
    ssim: float
    latency_seconds: float
    status: str


@dataclass(frozen=True)
class ReportRow:
    dataset_label: str
    model_label: str
    corpus_bleu: float
    mean_sentence_bleu: float
    mean_ssim: float
    syntax_rate: float
    absence_rate: float
    mismatch_rate: float
    eval_hours: float


@dataclass(frozen=True)
class Response:
    """A model's raw output for one entry, live or replayed."""

    id: str
    text: str
    latency_seconds: float = 0.0
    status: str = "ok"


def _score_entry(args: tuple[str, str, str, DiagramKind, Response]) -> tuple[EvalRecord, list[str], list[str]]:
    entry_id, code, image_path, kind, response = args
    block = extract_uml_block(response.text)
    outcome = render_candidate(block) if block is not None else None
    category = classify_block(block, kind, outcome)
    candidate_tokens = tokenize(block if block is not None else response.text)
    reference_tokens = tokenize(code)
    image = outcome.image if outcome is not None else ERROR_PLATE
    reference_image = load_png(image_path)
    record = EvalRecord(
        entry_id,
        category.value,
        bleu(candidate_tokens, reference_tokens, smooth=True).value,
        ssim(image, reference_image),
        response.latency_seconds,
        response.status,
    )
    return record, candidate_tokens, reference_tokens


def score(
    corpus: Corpus,
    root: Path,
    responses: dict[str, Response],
    dataset_label: str,
    model_label: str,
    eval_seconds: float | None = None,
    jobs: int = 1,
) -> dict[str, Any]:
    """Score the test split and build the report dictionary.

    ``eval_seconds`` is the wall-clock time of a live run; replays use the
    sum of recorded latencies so the report stays reproducible.
    """
    kind = corpus.manifest.config.kind
    tests = corpus.test
    missing = [e.id for e in tests if e.id not in responses]
    if missing:
        raise KeyError(f"no response for {len(missing)} test entries, e.g. {missing[0]}")
    work = [(e.id, e.code, str(root / e.image_path), kind, responses[e.id]) for e in tests]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_score_entry, work, chunksize=8))
    else:
        results = [_score_entry(w) for w in work]

    records = [r for r, _, _ in results]
    corpus_score = corpus_bleu([(c, ref) for _, c, ref in results])
    errors = aggregate(ErrorCategory(r.category) for r in records)
    if eval_seconds is None:
        eval_seconds = sum(r.latency_seconds for r in records)
    row = ReportRow(
        dataset_label,
        model_label,
        corpus_score.value,
        corpus_score.mean_sentence or 0.0,
        sum(r.ssim for r in records) / len(records),
        float(format_rate(errors.rate(ErrorCategory.SYNTAX_ERROR))),
        float(format_rate(errors.rate(ErrorCategory.UML_ABSENCE))),
        float(format_rate(errors.rate(ErrorCategory.DIAGRAM_MISMATCH))),
        eval_seconds / 3600.0,
    )
    summary = {k: v for k, v in asdict(row).items() if k not in ("dataset_label", "model_label")}
    summary["total"] = errors.total
    summary["counts"] = {c.value: errors.counts[c] for c in ErrorCategory}
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset_label": dataset_label,
        "model_label": model_label,
        "summary": summary,
        "records": [asdict(r) for r in records],
    }


def load_responses(path: Path) -> dict[str, Response]:
    """Read a replay file.

    Accepts either ``{"<id>": "<text>", ...}`` or
    ``{"responses": [{"id", "text", "latency_seconds"?, "status"?}, ...]}``.
    """
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and isinstance(data.get("responses"), list):
        out = {}
        for item in data["responses"]:
            out[item["id"]] = Response(
                item["id"], item["text"], float(item.get("latency_seconds", 0.0)), item.get("status", "ok")
            )
        return out
    if isinstance(data, dict) and all(isinstance(v, str) for v in data.values()):
        return {k: Response(k, v) for k, v in data.items()}
    raise ValueError(f"{path}: unrecognized responses format")


def dump_responses(responses: Iterable[Response]) -> str:
    items = [asdict(r) for r in responses]
    return json.dumps({"responses": items}, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------


def load_report(path: Path) -> dict[str, Any]:
    """Load and schema-check a report file; raises ValueError with the reason."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(data, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"{path}: schema error at {where}: {exc.message}") from exc
    return data


def report_rows(reports: Sequence[dict[str, Any]]) -> list[ReportRow]:
    rows = [
        ReportRow(r["dataset_label"], r["model_label"], **{k: r["summary"][k] for k in ROW_FIELDS[2:]})
        for r in reports
    ]
    return sorted(rows, key=lambda row: (row.dataset_label, row.model_label))


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(ROW_FIELDS)
    for row in rows:
        writer.writerow([_cell(getattr(row, f)) for f in ROW_FIELDS])
    return buf.getvalue()


def format_markdown(rows: Sequence[ReportRow]) -> str:
    lines = ["| " + " | ".join(ROW_FIELDS) + " |", "|" + "---|" * len(ROW_FIELDS)]
    for row in rows:
        cells = [_cell(getattr(row, f)).replace("|", "\\|") for f in ROW_FIELDS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
