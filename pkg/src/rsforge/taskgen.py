"""The 7-to-14 task conversion engine.

Each RawRecord expands into unified samples for every applicable enabled
task; each logical sample is emitted in M instruction-variant copies whose
template choice is a pure function of (seed, sample key). Ids follow
``{source_dataset}/{split}/{original_id}/{task}/{k}`` where original_id
carries a per-instance discriminator (category or object index).

Box derivation from segmentation polygons is semantic by default: the
horizontal-box task uses the axis-aligned enclosing rectangle and the
oriented-box task the minimum-area enclosing rectangle. The
``literal_seg_box_rows`` switch restores the swapped pairing as closely as
the answer grammars allow.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .categories import CategoryDict, map_category
from .errors import ConfigError, DegeneratePolygon, EmptyCaption, GeometryError, UnknownCategory
from .geometry import HBB, Polygon, Quad, aabb_of, min_area_rect
from .ingest import (
    Captions,
    ChangePair,
    Detections,
    Grounding,
    RawRecord,
    SceneLabels,
    SegmentationRegions,
    VQAPairs,
)
from .loctok import StructuredPrediction, emit_answer, emit_location
from .prompts import PromptPool, instantiate, sample_variants
from .tasks import SLOTS, TaskKind

_SENTENCE_SPLIT = re.compile(r"[.!?]+")

ALL_TASKS = frozenset(TaskKind)


@dataclass(frozen=True)
class ConversionConfig:
    enabled_tasks: frozenset[TaskKind] = ALL_TASKS
    caption_min_sentences: int = 4
    caption_min_words: int = 35
    caption_connective: str = "or"
    include_zero_counts: bool = False
    zero_count_categories: tuple[str, ...] = ()
    prompt_variants_per_sample: int = 3
    seed: int = 0
    literal_seg_box_rows: bool = False

    def __post_init__(self) -> None:
        if self.prompt_variants_per_sample < 1:
            raise ConfigError("prompt_variants_per_sample must be >= 1")
        if self.caption_min_sentences < 1 or self.caption_min_words < 1:
            raise ConfigError("caption split thresholds must be >= 1")
        if self.caption_connective not in ("or", "and"):
            raise ConfigError(
                f"caption_connective must be 'or' or 'and', got {self.caption_connective!r}"
            )


def split_caption(text: str, cfg: ConversionConfig) -> TaskKind:
    """Route a caption to Cap or DCap by sentence and word thresholds."""
    if not text.strip():
        raise EmptyCaption("caption is empty")
    segments = [s for s in _SENTENCE_SPLIT.split(text) if s.strip()]
    sentences = len(segments)
    words = len(text.split())
    long_s = sentences >= cfg.caption_min_sentences
    long_w = words >= cfg.caption_min_words
    is_detailed = (long_s or long_w) if cfg.caption_connective == "or" else (long_s and long_w)
    return TaskKind.DCAP if is_detailed else TaskKind.CAP


def _slug(category: str) -> str:
    return category.replace(" ", "-")


@dataclass
class GenTally:
    """Annotation accounting produced while converting one record stream."""

    used: int = 0
    rejects: dict[str, int] = field(default_factory=dict)
    skipped_by_config: int = 0

    def reject(self, reason: str, n: int = 1) -> None:
        self.rejects[reason] = self.rejects.get(reason, 0) + n

    @property
    def rejected_total(self) -> int:
        return sum(self.rejects.values())


from .schema import UnifiedSample  # noqa: E402  (after dataclasses to avoid cycle)


class TaskGenerator:
    """Expands RawRecords into UnifiedSamples under one config."""

    def __init__(
        self,
        cfg: ConversionConfig,
        pool: PromptPool,
        dictionary: CategoryDict,
        tally: GenTally | None = None,
    ):
        self.cfg = cfg
        self.pool = pool
        self.dictionary = dictionary
        self.tally = tally if tally is not None else GenTally()

    # -- plumbing ---------------------------------------------------------

    def _variants(self, task: TaskKind, sample_key: str):
        m = min(self.cfg.prompt_variants_per_sample, self.pool.size(task))
        return sample_variants(self.pool, task, m, self.cfg.seed, sample_key)

    def _emit(
        self,
        record: RawRecord,
        task: TaskKind,
        discriminator: str,
        slots: dict[str, str],
        ground_truth: StructuredPrediction,
    ) -> list[UnifiedSample]:
        original_id = (
            f"{record.record_id}.{discriminator}" if discriminator else record.record_id
        )
        key = f"{record.source_dataset}/{record.split}/{original_id}/{task.value}"
        answer = emit_answer(task, ground_truth, record.image_w, record.image_h)
        out = []
        for k, template in enumerate(self._variants(task, key)):
            out.append(
                UnifiedSample(
                    id=f"{key}/{k}",
                    source_dataset=record.source_dataset,
                    image_refs=record.image_refs,
                    image_w=record.image_w,
                    image_h=record.image_h,
                    task=task,
                    instruction=instantiate(template, slots),
                    answer=answer,
                    ground_truth=ground_truth,
                    prompt_variant_id=template.template_id,
                )
            )
        return out

    def _enabled(self, task: TaskKind) -> bool:
        return task in self.cfg.enabled_tasks

    def _map_items(self, items):
        """Canonicalize labels; unmappable annotations are rejected."""
        mapped = []
        for label, payload in items:
            try:
                mapped.append((map_category(label, self.dictionary), payload))
            except UnknownCategory:
                self.tally.reject("unknown_category")
        return mapped

    # -- detection --------------------------------------------------------

    def gen_from_detection(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, Detections)
        items = self._map_items(record.payload.items)
        oriented = bool(items) and isinstance(items[0][1], Quad)
        cls_task = TaskKind.CLS_OBB if oriented else TaskKind.CLS_HBB
        det_task = TaskKind.DET_OBB if oriented else TaskKind.DET_HBB
        applicable = [TaskKind.CLS, TaskKind.COUNT, cls_task, det_task]
        out: list[UnifiedSample] = []
        categories = sorted({c for c, _ in items})

        if items and self._enabled(TaskKind.CLS):
            gt = StructuredPrediction.of_labels(categories)
            out.extend(self._emit(record, TaskKind.CLS, "", {}, gt))
        if self._enabled(TaskKind.COUNT):
            for cat in categories:
                n = sum(1 for c, _ in items if c == cat)
                gt = StructuredPrediction.of_count(n)
                out.extend(
                    self._emit(record, TaskKind.COUNT, _slug(cat), {"class": cat}, gt)
                )
            if self.cfg.include_zero_counts:
                for cat in self.cfg.zero_count_categories:
                    if cat not in categories:
                        gt = StructuredPrediction.of_count(0)
                        out.extend(
                            self._emit(
                                record, TaskKind.COUNT, _slug(cat), {"class": cat}, gt
                            )
                        )
        if self._enabled(cls_task):
            for i, (cat, geom) in enumerate(items):
                region = emit_location(geom, record.image_w, record.image_h)
                gt = StructuredPrediction.of_labels((cat,))
                out.extend(
                    self._emit(record, cls_task, f"obj{i}", {"region": region}, gt)
                )
        if self._enabled(det_task):
            for cat in categories:
                dets = [(c, g) for c, g in items if c == cat]
                gt = StructuredPrediction.of_detections(dets)
                out.extend(
                    self._emit(record, det_task, _slug(cat), {"class": cat}, gt)
                )
        if items:
            if any(self._enabled(t) for t in applicable):
                self.tally.used += len(items)
            else:
                self.tally.skipped_by_config += len(items)
        return out

    # -- segmentation -----------------------------------------------------

    def gen_from_segmentation(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, SegmentationRegions)
        items = self._map_items(record.payload.items)
        out: list[UnifiedSample] = []
        categories = sorted({c for c, _ in items})
        applicable = [
            TaskKind.CLS,
            TaskKind.CLS_POLY,
            TaskKind.SEG,
            TaskKind.DET_HBB,
            TaskKind.DET_OBB,
        ]

        def clamp_quad(q: Quad) -> Quad | None:
            pts = tuple(
                (
                    min(max(x, 0.0), float(record.image_w)),
                    min(max(y, 0.0), float(record.image_h)),
                )
                for x, y in q.points
            )
            try:
                return Quad(pts)
            except (DegeneratePolygon, GeometryError):
                return None

        if items and self._enabled(TaskKind.CLS):
            gt = StructuredPrediction.of_labels(categories)
            out.extend(self._emit(record, TaskKind.CLS, "", {}, gt))
        if self._enabled(TaskKind.CLS_POLY):
            for i, (cat, poly) in enumerate(items):
                region = emit_location(poly, record.image_w, record.image_h)
                gt = StructuredPrediction.of_labels((cat,))
                out.extend(
                    self._emit(
                        record, TaskKind.CLS_POLY, f"obj{i}", {"region": region}, gt
                    )
                )
        if self._enabled(TaskKind.SEG):
            for cat in categories:
                polys = [p for c, p in items if c == cat]
                gt = StructuredPrediction.of_masks([(cat, polys)])
                out.extend(
                    self._emit(record, TaskKind.SEG, _slug(cat), {"class": cat}, gt)
                )
        hbb_enabled = self._enabled(TaskKind.DET_HBB)
        obb_enabled = self._enabled(TaskKind.DET_OBB)
        if hbb_enabled or obb_enabled:
            for cat in categories:
                polys = [p for c, p in items if c == cat]
                if hbb_enabled:
                    if self.cfg.literal_seg_box_rows:
                        boxes = [
                            (cat, aabb_of(min_area_rect(p))) for p in polys
                        ]
                    else:
                        boxes = [(cat, aabb_of(p)) for p in polys]
                    gt = StructuredPrediction.of_detections(boxes)
                    out.extend(
                        self._emit(
                            record, TaskKind.DET_HBB, _slug(cat), {"class": cat}, gt
                        )
                    )
                if obb_enabled:
                    quads: list[tuple[str, Quad]] = []
                    for p in polys:
                        if self.cfg.literal_seg_box_rows:
                            q: Quad | None = Quad(aabb_of(p).corners())
                        else:
                            q = clamp_quad(min_area_rect(p))
                        if q is None:
                            self.tally.reject("degenerate_obb")
                            continue
                        quads.append((cat, q))
                    if quads:
                        gt = StructuredPrediction.of_detections(quads)
                        out.extend(
                            self._emit(
                                record, TaskKind.DET_OBB, _slug(cat), {"class": cat}, gt
                            )
                        )
        if items:
            if any(self._enabled(t) for t in applicable):
                self.tally.used += len(items)
            else:
                self.tally.skipped_by_config += len(items)
        return out

    # -- captions ---------------------------------------------------------

    def gen_from_captions(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, Captions)
        out: list[UnifiedSample] = []
        for i, text in enumerate(record.payload.texts):
            try:
                task = split_caption(text, self.cfg)
            except EmptyCaption:
                self.tally.reject("empty_caption")
                continue
            if not self._enabled(task):
                self.tally.skipped_by_config += 1
                continue
            gt = StructuredPrediction.of_caption(text)
            out.extend(self._emit(record, task, f"cap{i}", {}, gt))
            self.tally.used += 1
        return out

    # -- grounding ---------------------------------------------------------

    def gen_from_grounding(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, Grounding)
        out: list[UnifiedSample] = []
        vg_on = self._enabled(TaskKind.VG)
        rcap_on = self._enabled(TaskKind.RCAP)
        for i, (desc, box) in enumerate(record.payload.pairs):
            if not (vg_on or rcap_on):
                self.tally.skipped_by_config += 1
                continue
            region = emit_location(box, record.image_w, record.image_h)
            if vg_on:
                gt = StructuredPrediction.of_regions((box,))
                out.extend(
                    self._emit(record, TaskKind.VG, f"ph{i}", {"question": desc}, gt)
                )
            if rcap_on:
                gt = StructuredPrediction.of_caption(desc)
                out.extend(
                    self._emit(record, TaskKind.RCAP, f"ph{i}", {"region": region}, gt)
                )
            self.tally.used += 1
        return out

    # -- pass-through tasks -------------------------------------------------

    def gen_from_vqa(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, VQAPairs)
        out: list[UnifiedSample] = []
        for i, (question, answer) in enumerate(record.payload.pairs):
            if not self._enabled(TaskKind.VQA):
                self.tally.skipped_by_config += 1
                continue
            gt = StructuredPrediction.of_caption(answer)
            out.extend(
                self._emit(record, TaskKind.VQA, f"qa{i}", {"question": question}, gt)
            )
            self.tally.used += 1
        return out

    def gen_from_cls(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, SceneLabels)
        mapped = self._map_items((lab, None) for lab in record.payload.labels)
        labels = sorted({c for c, _ in mapped})
        if not labels:
            return []
        if not self._enabled(TaskKind.CLS):
            self.tally.skipped_by_config += len(mapped)
            return []
        gt = StructuredPrediction.of_labels(labels)
        out = self._emit(record, TaskKind.CLS, "", {}, gt)
        self.tally.used += len(mapped)
        return out

    def gen_from_cd(self, record: RawRecord) -> list[UnifiedSample]:
        assert isinstance(record.payload, ChangePair)
        if not self._enabled(TaskKind.CD):
            self.tally.skipped_by_config += len(record.payload.polygons)
            return []
        gt = StructuredPrediction.of_regions(record.payload.polygons)
        out = self._emit(record, TaskKind.CD, "", {}, gt)
        self.tally.used += len(record.payload.polygons)
        return out

    # -- dispatch -----------------------------------------------------------

    def generate(self, record: RawRecord) -> list[UnifiedSample]:
        payload = record.payload
        if isinstance(payload, Detections):
            return self.gen_from_detection(record)
        if isinstance(payload, SegmentationRegions):
            return self.gen_from_segmentation(record)
        if isinstance(payload, Captions):
            return self.gen_from_captions(record)
        if isinstance(payload, Grounding):
            return self.gen_from_grounding(record)
        if isinstance(payload, VQAPairs):
            return self.gen_from_vqa(record)
        if isinstance(payload, SceneLabels):
            return self.gen_from_cls(record)
        if isinstance(payload, ChangePair):
            return self.gen_from_cd(record)
        raise ConfigError(f"no generator for payload {type(payload).__name__}")
