"""Readers that lift source annotation formats into RawRecords.

A small set of documented interchange schemas (detection, mask+palette,
captions, vqa, grounding, cd-pair, classification) stands in for bespoke
per-dataset parsers; adapters to these schemas live outside the core. See
docs/interchange.md for the file layouts.

Readers are deterministic (same file, same record stream) and never drop
an annotation silently: every rejected annotation lands in the counter
passed by the caller, so conversion can reconcile counts exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import measure

from .errors import (
    DegeneratePolygon,
    DimensionMismatch,
    GeometryError,
    IoError,
    PairingError,
    ParseError,
    UnknownPaletteIndex,
)
from .geometry import HBB, Polygon, Quad

log = logging.getLogger(__name__)

DEFAULT_MIN_HOLE_AREA = 16.0  # px^2; mask-noise holes below this are dropped
DEFAULT_SIMPLIFY_TOL = 0.5  # px; max contour deviation after simplification


# --- payloads -----------------------------------------------------------------


@dataclass(frozen=True)
class Detections:
    items: tuple[tuple[str, HBB | Quad], ...]


@dataclass(frozen=True)
class SegmentationRegions:
    items: tuple[tuple[str, Polygon], ...]


@dataclass(frozen=True)
class Captions:
    texts: tuple[str, ...]


@dataclass(frozen=True)
class VQAPairs:
    pairs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Grounding:
    pairs: tuple[tuple[str, HBB], ...]


@dataclass(frozen=True)
class ChangePair:
    polygons: tuple[Polygon, ...]


@dataclass(frozen=True)
class SceneLabels:
    labels: tuple[str, ...]


Payload = (
    Detections
    | SegmentationRegions
    | Captions
    | VQAPairs
    | Grounding
    | ChangePair
    | SceneLabels
)


@dataclass(frozen=True)
class RawRecord:
    source_dataset: str
    split: str
    record_id: str
    image_refs: tuple[str, ...]
    image_w: int
    image_h: int
    payload: Payload


@dataclass
class IngestCounter:
    """Annotation bookkeeping for the reconciliation report."""

    annotations_in: int = 0
    rejects: dict[str, int] = field(default_factory=dict)

    def saw(self, n: int = 1) -> None:
        self.annotations_in += n

    def reject(self, reason: str, n: int = 1) -> None:
        self.rejects[reason] = self.rejects.get(reason, 0) + n

    @property
    def rejected_total(self) -> int:
        return sum(self.rejects.values())


# --- shared helpers -----------------------------------------------------------


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot open {path}: {e}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                doc = json.loads(stripped)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line_no, str(path)) from None
            if not isinstance(doc, dict):
                raise ParseError("record is not an object", line_no, str(path))
            yield line_no, doc


def _require(doc: dict, key: str, line_no: int, path: str):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", line_no, path)
    return doc[key]


def _image_size(doc: dict, line_no: int, path: str) -> tuple[int, int]:
    w = int(_require(doc, "width", line_no, path))
    h = int(_require(doc, "height", line_no, path))
    if w < 1 or h < 1:
        raise ParseError(f"bad image size {w}x{h}", line_no, path)
    return w, h


def _clamp_point(x: float, y: float, w: float, h: float) -> tuple[float, float]:
    return (min(max(x, 0.0), w), min(max(y, 0.0), h))


def _stem(image_ref: str) -> str:
    return Path(image_ref).stem


# --- detection ----------------------------------------------------------------


def read_detection_source(
    path: str | Path,
    flavor: str,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
) -> Iterator[RawRecord]:
    """Read labeled boxes (flavor ``axis_aligned``) or quads (``oriented``)."""
    if flavor not in ("axis_aligned", "oriented"):
        raise ParseError(f"unknown detection flavor {flavor!r}")
    counter = counter if counter is not None else IngestCounter()
    for line_no, doc in _read_jsonl(path):
        image = str(_require(doc, "image", line_no, str(path)))
        w, h = _image_size(doc, line_no, str(path))
        split = str(doc.get("split", "train"))
        items: list[tuple[str, HBB | Quad]] = []
        for det in _require(doc, "detections", line_no, str(path)):
            counter.saw()
            label = str(det.get("label", "")).strip()
            if not label:
                counter.reject("empty_label")
                continue
            try:
                if flavor == "axis_aligned":
                    x1, y1, x2, y2 = det["bbox"]
                    if x2 < x1 or y2 < y1:
                        raise GeometryError(
                            f"inverted bbox {det['bbox']} at line {line_no}"
                        )
                    (x1, y1) = _clamp_point(x1, y1, w, h)
                    (x2, y2) = _clamp_point(x2, y2, w, h)
                    geom: HBB | Quad = HBB(x1, y1, x2, y2)
                else:
                    pts = [
                        _clamp_point(float(p[0]), float(p[1]), w, h)
                        for p in det["quad"]
                    ]
                    geom = Quad(tuple(pts))
            except (KeyError, TypeError, ValueError):
                raise ParseError(
                    f"bad detection entry {det!r}", line_no, str(path)
                ) from None
            items.append((label, geom))
        yield RawRecord(
            source_dataset=source_dataset,
            split=split,
            record_id=_stem(image),
            image_refs=(image,),
            image_w=w,
            image_h=h,
            payload=Detections(tuple(items)),
        )


# --- masks --------------------------------------------------------------------


def _load_index_mask(mask_path: str | Path) -> np.ndarray:
    try:
        with Image.open(mask_path) as im:
            return np.asarray(im.convert("I"), dtype=np.int32)
    except OSError as e:
        raise IoError(f"cannot read mask {mask_path}: {e}") from None


def trace_mask(
    mask: np.ndarray,
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL,
) -> tuple[list[Polygon], int]:
    """Trace a binary mask into simple polygons (marching squares at the
    pixel-center 0.5 iso-level, then simplification bounded by simplify_tol).

    Holes cannot be represented in the polygon payload; holes smaller than
    min_hole_area are dropped silently, larger ones are counted and logged.
    Returns (polygons, dropped_components).
    """
    dropped = 0
    polygons: list[Polygon] = []
    labeled, n = ndimage.label(mask.astype(bool))
    for comp in range(1, n + 1):
        comp_mask = labeled == comp
        padded = np.pad(comp_mask.astype(np.float64), 1)
        contours = measure.find_contours(padded, 0.5)
        outer = None
        outer_area = 0.0
        for c in contours:
            x = c[:, 1]
            y = c[:, 0]
            area = 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))
            if area > outer_area:
                outer, outer_area = c, area
            elif area < 0 and -area >= min_hole_area:
                log.warning(
                    "dropping mask hole of area %.1f px^2 (unrepresentable)", -area
                )
        if outer is None:
            dropped += 1
            continue
        ring = outer
        if simplify_tol > 0:
            ring = measure.approximate_polygon(ring, tolerance=simplify_tol)
        pts = [(float(c) - 0.5, float(r) - 0.5) for r, c in ring]
        if len(pts) >= 2 and pts[0] == pts[-1]:
            pts = pts[:-1]
        try:
            polygons.append(Polygon(tuple(pts)))
        except DegeneratePolygon:
            if simplify_tol > 0:
                # simplification can occasionally pinch a ring; retry raw
                pts = [(float(c) - 0.5, float(r) - 0.5) for r, c in outer]
                if len(pts) >= 2 and pts[0] == pts[-1]:
                    pts = pts[:-1]
                try:
                    polygons.append(Polygon(tuple(pts)))
                    continue
                except DegeneratePolygon:
                    pass
            dropped += 1
    return polygons, dropped


def read_mask_source(
    image_path: str | Path,
    mask_path: str | Path,
    palette: dict[int, str],
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
    split: str = "train",
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL,
    image_size: tuple[int, int] | None = None,
) -> RawRecord:
    """Trace a class-index raster into labeled polygons.

    image_size (w, h) may be passed to avoid opening the image file; when
    both are available they must agree with the mask raster.
    """
    counter = counter if counter is not None else IngestCounter()
    mask = _load_index_mask(mask_path)
    mh, mw = mask.shape
    if image_size is not None:
        iw, ih = image_size
    else:
        try:
            with Image.open(image_path) as im:
                iw, ih = im.size
        except OSError as e:
            raise IoError(f"cannot read image {image_path}: {e}") from None
    if (iw, ih) != (mw, mh):
        raise DimensionMismatch(
            f"image {iw}x{ih} vs mask {mw}x{mh} for {image_path}"
        )
    items: list[tuple[str, Polygon]] = []
    present = sorted(int(v) for v in np.unique(mask) if v != 0)
    for index in present:
        if index not in palette:
            raise UnknownPaletteIndex(f"mask index {index} missing from palette")
        label = palette[index]
        class_mask = mask == index
        counter.saw(int(ndimage.label(class_mask)[1]))
        polys, dropped = trace_mask(class_mask, min_hole_area, simplify_tol)
        if dropped:
            counter.reject("untraceable_component", dropped)
        for poly in polys:
            items.append((label, poly))
    return RawRecord(
        source_dataset=source_dataset,
        split=split,
        record_id=_stem(str(image_path)),
        image_refs=(str(image_path),),
        image_w=mw,
        image_h=mh,
        payload=SegmentationRegions(tuple(items)),
    )


def read_mask_index(
    index_path: str | Path,
    palette: dict[int, str],
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
    root: Path | None = None,
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL,
) -> Iterator[RawRecord]:
    """Read a JSONL index of (image, mask) pairs through read_mask_source."""
    base = root if root is not None else Path(index_path).parent
    for line_no, doc in _read_jsonl(index_path):
        image = str(_require(doc, "image", line_no, str(index_path)))
        mask = str(_require(doc, "mask", line_no, str(index_path)))
        size = None
        if "width" in doc and "height" in doc:
            size = (int(doc["width"]), int(doc["height"]))
        record = read_mask_source(
            base / image,
            base / mask,
            palette,
            counter=counter,
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            min_hole_area=min_hole_area,
            simplify_tol=simplify_tol,
            image_size=size,
        )
        # keep the relative ref from the index, not the resolved path
        yield RawRecord(
            source_dataset=record.source_dataset,
            split=record.split,
            record_id=record.record_id,
            image_refs=(image,),
            image_w=record.image_w,
            image_h=record.image_h,
            payload=record.payload,
        )


def load_palette(path: str | Path) -> dict[int, str]:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except OSError as e:
        raise IoError(f"cannot read palette {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid palette JSON: {e.msg}", path=str(path)) from None
    return {int(k): str(v) for k, v in doc.items()}


# --- captions / vqa / grounding / classification -------------------------------


def read_caption_source(
    path: str | Path,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
) -> Iterator[RawRecord]:
    counter = counter if counter is not None else IngestCounter()
    for line_no, doc in _read_jsonl(path):
        image = str(_require(doc, "image", line_no, str(path)))
        w, h = _image_size(doc, line_no, str(path))
        texts: list[str] = []
        for cap in _require(doc, "captions", line_no, str(path)):
            counter.saw()
            text = str(cap)
            if not text.strip():
                counter.reject("empty_caption")
                continue
            texts.append(text)
        yield RawRecord(
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            record_id=_stem(image),
            image_refs=(image,),
            image_w=w,
            image_h=h,
            payload=Captions(tuple(texts)),
        )


def read_vqa_source(
    path: str | Path,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
) -> Iterator[RawRecord]:
    counter = counter if counter is not None else IngestCounter()
    for line_no, doc in _read_jsonl(path):
        image = str(_require(doc, "image", line_no, str(path)))
        w, h = _image_size(doc, line_no, str(path))
        pairs: list[tuple[str, str]] = []
        for qa in _require(doc, "qa", line_no, str(path)):
            counter.saw()
            q = str(qa.get("question", "")).strip()
            a = str(qa.get("answer", "")).strip()
            if not q or not a:
                counter.reject("incomplete_qa")
                continue
            pairs.append((q, a))
        yield RawRecord(
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            record_id=_stem(image),
            image_refs=(image,),
            image_w=w,
            image_h=h,
            payload=VQAPairs(tuple(pairs)),
        )


def read_grounding_source(
    path: str | Path,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
) -> Iterator[RawRecord]:
    counter = counter if counter is not None else IngestCounter()
    for line_no, doc in _read_jsonl(path):
        image = str(_require(doc, "image", line_no, str(path)))
        w, h = _image_size(doc, line_no, str(path))
        pairs: list[tuple[str, HBB]] = []
        for phrase in _require(doc, "phrases", line_no, str(path)):
            counter.saw()
            desc = str(phrase.get("description", "")).strip()
            if not desc:
                counter.reject("empty_description")
                continue
            try:
                x1, y1, x2, y2 = phrase["bbox"]
            except (KeyError, TypeError, ValueError):
                raise ParseError(
                    f"bad phrase entry {phrase!r}", line_no, str(path)
                ) from None
            if x2 < x1 or y2 < y1:
                raise GeometryError(f"inverted bbox {phrase['bbox']} at line {line_no}")
            (x1, y1) = _clamp_point(x1, y1, w, h)
            (x2, y2) = _clamp_point(x2, y2, w, h)
            pairs.append((desc, HBB(x1, y1, x2, y2)))
        yield RawRecord(
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            record_id=_stem(image),
            image_refs=(image,),
            image_w=w,
            image_h=h,
            payload=Grounding(tuple(pairs)),
        )


def read_classification_source(
    path: str | Path,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
) -> Iterator[RawRecord]:
    counter = counter if counter is not None else IngestCounter()
    for line_no, doc in _read_jsonl(path):
        image = str(_require(doc, "image", line_no, str(path)))
        w, h = _image_size(doc, line_no, str(path))
        labels: list[str] = []
        for lab in _require(doc, "labels", line_no, str(path)):
            counter.saw()
            text = str(lab).strip()
            if not text:
                counter.reject("empty_label")
                continue
            labels.append(text)
        yield RawRecord(
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            record_id=_stem(image),
            image_refs=(image,),
            image_w=w,
            image_h=h,
            payload=SceneLabels(tuple(labels)),
        )


# --- change detection -----------------------------------------------------------


def read_cd_source(
    path: str | Path,
    counter: IngestCounter | None = None,
    source_dataset: str = "unknown",
    root: Path | None = None,
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL,
) -> Iterator[RawRecord]:
    """Read co-registered image pairs plus a binary change mask."""
    counter = counter if counter is not None else IngestCounter()
    base = root if root is not None else Path(path).parent
    for line_no, doc in _read_jsonl(path):
        image_a = str(doc.get("image_a", "")).strip()
        image_b = str(doc.get("image_b", "")).strip()
        if not image_a or not image_b:
            raise PairingError(
                f"incomplete image pair at line {line_no} of {path}"
            )
        w, h = _image_size(doc, line_no, str(path))
        mask_ref = str(_require(doc, "change_mask", line_no, str(path)))
        mask = _load_index_mask(base / mask_ref)
        mh, mw = mask.shape
        if (mw, mh) != (w, h):
            raise DimensionMismatch(
                f"change mask {mw}x{mh} vs declared {w}x{h} at line {line_no}"
            )
        binary = mask != 0
        counter.saw(int(ndimage.label(binary)[1]))
        polys, dropped = trace_mask(binary, min_hole_area, simplify_tol)
        if dropped:
            counter.reject("untraceable_component", dropped)
        yield RawRecord(
            source_dataset=source_dataset,
            split=str(doc.get("split", "train")),
            record_id=_stem(image_a),
            image_refs=(image_a, image_b),
            image_w=w,
            image_h=h,
            payload=ChangePair(tuple(polys)),
        )
