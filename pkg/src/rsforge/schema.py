"""Unified sample data model, record validation, and line-delimited I/O.

File format version ``falcon-sft-v1``: UTF-8, one JSON object per line,
fields exactly ``id, source_dataset, image_refs, image_w, image_h, task,
instruction, answer, ground_truth, prompt_variant_id``. Files are sorted
by id on write; the writer spills sorted chunks to temporary files and
merges them, so memory stays bounded regardless of corpus size.

ground_truth is stored alongside the textual answer so evaluation never
re-parses answers it generated; a mismatch between the two is a validation
failure, not a silent repair.
"""

from __future__ import annotations

import heapq
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .categories import CategoryDict
from .errors import DuplicateId, ForgeError, IoError, ParseError
from .geometry import HBB, Geometry, Polygon, Quad
from .loctok import StructuredPrediction, emit_answer, parse_prediction
from .tasks import TaskKind

FORMAT_VERSION = "falcon-sft-v1"

_FIELDS = (
    "id",
    "source_dataset",
    "image_refs",
    "image_w",
    "image_h",
    "task",
    "instruction",
    "answer",
    "ground_truth",
    "prompt_variant_id",
)


@dataclass(frozen=True)
class UnifiedSample:
    """One (image(s), task, instruction, answer, ground truth) record."""

    id: str
    source_dataset: str
    image_refs: tuple[str, ...]
    image_w: int
    image_h: int
    task: TaskKind
    instruction: str
    answer: str
    ground_truth: StructuredPrediction
    prompt_variant_id: int


# --- geometry / prediction (de)serialization ---------------------------------


def geom_to_json(g: Geometry) -> dict:
    if isinstance(g, HBB):
        return {"type": "hbb", "coords": [g.x_min, g.y_min, g.x_max, g.y_max]}
    if isinstance(g, Quad):
        return {"type": "quad", "points": [list(p) for p in g.points]}
    if isinstance(g, Polygon):
        return {"type": "polygon", "points": [list(p) for p in g.points]}
    raise ForgeError(f"unserializable geometry {type(g).__name__}")


def geom_from_json(doc: dict) -> Geometry:
    kind = doc.get("type")
    if kind == "hbb":
        return HBB(*doc["coords"])
    if kind == "quad":
        return Quad(tuple(tuple(p) for p in doc["points"]))
    if kind == "polygon":
        return Polygon(tuple(tuple(p) for p in doc["points"]))
    raise ForgeError(f"unknown geometry type {kind!r}")


def prediction_to_json(p: StructuredPrediction) -> dict:
    doc: dict = {"kind": p.kind}
    if p.kind == "label":
        doc["labels"] = list(p.labels)
    elif p.kind == "count":
        doc["count"] = p.count
    elif p.kind == "caption":
        doc["caption"] = p.caption
    elif p.kind == "detections":
        doc["items"] = [
            {"category": c, "geometry": geom_to_json(g)} for c, g in p.detections
        ]
    elif p.kind == "regions":
        doc["geometries"] = [geom_to_json(g) for g in p.regions]
    elif p.kind == "masks":
        doc["items"] = [
            {"category": c, "polygons": [geom_to_json(q) for q in polys]}
            for c, polys in p.masks
        ]
    else:
        raise ForgeError(f"unserializable prediction kind {p.kind!r}")
    return doc


def prediction_from_json(doc: dict) -> StructuredPrediction:
    kind = doc.get("kind")
    if kind == "label":
        return StructuredPrediction.of_labels(doc["labels"])
    if kind == "count":
        return StructuredPrediction.of_count(doc["count"])
    if kind == "caption":
        return StructuredPrediction.of_caption(doc["caption"])
    if kind == "detections":
        return StructuredPrediction.of_detections(
            (item["category"], geom_from_json(item["geometry"]))
            for item in doc["items"]
        )
    if kind == "regions":
        return StructuredPrediction.of_regions(
            geom_from_json(g) for g in doc["geometries"]
        )
    if kind == "masks":
        return StructuredPrediction.of_masks(
            (item["category"], [geom_from_json(q) for q in item["polygons"]])
            for item in doc["items"]
        )
    raise ForgeError(f"unknown prediction kind {kind!r}")


def sample_to_line(s: UnifiedSample) -> str:
    doc = {
        "id": s.id,
        "source_dataset": s.source_dataset,
        "image_refs": list(s.image_refs),
        "image_w": s.image_w,
        "image_h": s.image_h,
        "task": s.task.value,
        "instruction": s.instruction,
        "answer": s.answer,
        "ground_truth": prediction_to_json(s.ground_truth),
        "prompt_variant_id": s.prompt_variant_id,
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))


def sample_from_line(line: str, line_no: int | None = None, path: str | None = None) -> UnifiedSample:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line_no, path) from None
    if not isinstance(doc, dict):
        raise ParseError("record is not an object", line_no, path)
    missing = [f for f in _FIELDS if f not in doc]
    if missing:
        raise ParseError(f"missing field(s) {missing}", line_no, path)
    extra = [k for k in doc if k not in _FIELDS]
    if extra:
        raise ParseError(f"unknown field(s) {extra}", line_no, path)
    try:
        return UnifiedSample(
            id=str(doc["id"]),
            source_dataset=str(doc["source_dataset"]),
            image_refs=tuple(str(r) for r in doc["image_refs"]),
            image_w=int(doc["image_w"]),
            image_h=int(doc["image_h"]),
            task=TaskKind(doc["task"]),
            instruction=str(doc["instruction"]),
            answer=str(doc["answer"]),
            ground_truth=prediction_from_json(doc["ground_truth"]),
            prompt_variant_id=int(doc["prompt_variant_id"]),
        )
    except (ValueError, TypeError, KeyError, ForgeError) as e:
        raise ParseError(f"bad record: {e}", line_no, path) from None


# --- streaming file I/O -------------------------------------------------------


def read_unified(path: str | Path) -> Iterator[UnifiedSample]:
    """Stream samples from a unified file, checking for duplicate ids."""
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot open {path}: {e}") from None
    seen: set[str] = set()
    with fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            sample = sample_from_line(stripped, line_no, str(path))
            if sample.id in seen:
                raise DuplicateId(f"duplicate id {sample.id!r} at line {line_no}")
            seen.add(sample.id)
            yield sample


def write_unified_lines(
    lines: Iterable[tuple[str, str]], path: str | Path, chunk_size: int = 100_000
) -> int:
    """Write pre-serialized (id, line) pairs sorted by id; returns count.

    External merge sort: sorted chunks spill to temp files, then a k-way
    merge streams the result, so peak memory is one chunk.
    """
    path = Path(path)
    chunks: list[Path] = []
    buf: list[tuple[str, str]] = []
    total = 0
    tmpdir = tempfile.TemporaryDirectory(prefix="forge-sort-")

    def spill() -> None:
        buf.sort()
        p = Path(tmpdir.name) / f"chunk-{len(chunks):05d}.jsonl"
        with p.open("w", encoding="utf-8") as out:
            for sid, line in buf:
                out.write(sid + "\t" + line + "\n")
        chunks.append(p)
        buf.clear()

    try:
        for sid, line in lines:
            if "\t" in sid or "\n" in sid:
                raise ForgeError(f"id {sid!r} contains control characters")
            buf.append((sid, line))
            total += 1
            if len(buf) >= chunk_size:
                spill()
        if chunks:
            if buf:
                spill()
            files = [p.open("r", encoding="utf-8") for p in chunks]
            try:
                streams = (
                    (ln.rstrip("\n").split("\t", 1) for ln in f) for f in files
                )
                with path.open("w", encoding="utf-8") as out:
                    prev_id: str | None = None
                    for sid, line in heapq.merge(*streams, key=lambda t: t[0]):
                        if sid == prev_id:
                            raise DuplicateId(f"duplicate id {sid!r}")
                        prev_id = sid
                        out.write(line + "\n")
            finally:
                for f in files:
                    f.close()
        else:
            buf.sort()
            with path.open("w", encoding="utf-8") as out:
                prev_id = None
                for sid, line in buf:
                    if sid == prev_id:
                        raise DuplicateId(f"duplicate id {sid!r}")
                    prev_id = sid
                    out.write(line + "\n")
    finally:
        tmpdir.cleanup()
    return total


def write_unified(
    samples: Iterable[UnifiedSample], path: str | Path, chunk_size: int = 100_000
) -> int:
    """Serialize and write samples sorted by id; returns the record count."""
    return write_unified_lines(
        ((s.id, sample_to_line(s)) for s in samples), path, chunk_size
    )


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def _geometry_points(g: Geometry):
    if isinstance(g, HBB):
        return ((g.x_min, g.y_min), (g.x_max, g.y_max))
    return g.points


def _iter_geometries(p: StructuredPrediction):
    for _, g in p.detections:
        yield g
    yield from p.regions
    for _, polys in p.masks:
        yield from polys


def validate_sample(s: UnifiedSample, dictionary: CategoryDict) -> list[Violation]:
    """Check every sample invariant; violations are data, not exceptions."""
    out: list[Violation] = []
    n_refs = len(s.image_refs)
    if s.task is TaskKind.CD:
        if n_refs != 2:
            out.append(
                Violation("CardinalityViolation", f"CD sample has {n_refs} image_refs")
            )
    elif n_refs != 1:
        out.append(
            Violation("CardinalityViolation", f"{s.task} sample has {n_refs} image_refs")
        )
    if not s.instruction.strip():
        out.append(Violation("EmptyInstruction", "instruction is empty"))
    if s.image_w < 1 or s.image_h < 1:
        out.append(
            Violation("BadDimensions", f"image size {s.image_w}x{s.image_h}")
        )
        return out
    if s.prompt_variant_id < 0:
        out.append(
            Violation("BadVariantId", f"prompt_variant_id {s.prompt_variant_id}")
        )
    try:
        parse_prediction(s.answer, s.task, s.image_w, s.image_h, dictionary)
    except ForgeError as e:
        out.append(Violation("GrammarViolation", f"answer fails task grammar: {e}"))
    try:
        emitted = emit_answer(s.task, s.ground_truth, s.image_w, s.image_h)
        if emitted != s.answer:
            out.append(
                Violation(
                    "EmissionMismatch",
                    "answer differs from re-emission of ground_truth",
                )
            )
    except ForgeError as e:
        out.append(Violation("EmissionMismatch", f"ground_truth does not emit: {e}"))
    for g in _iter_geometries(s.ground_truth):
        for x, y in _geometry_points(g):
            if not (0 <= x <= s.image_w and 0 <= y <= s.image_h):
                out.append(
                    Violation(
                        "BoundsViolation",
                        f"ground-truth coordinate ({x},{y}) outside "
                        f"{s.image_w}x{s.image_h}",
                    )
                )
                break
        else:
            continue
        break
    return out
