"""Location-token grammar: quantize coordinates into 1000 bins, serialize
geometry to ``<box>/<quad>/<poly>`` strings, and parse output text back into
structured predictions.

Grammar version: ``falcon-grammar-v1``. Task answer grammars (EBNF)::

    det_hbb  := { category, { box } }            box  := "<box>", loc*4, "</box>"
    det_obb  := { category, { quad } }           quad := "<quad>", loc*8, "</quad>"
    seg      := { category, { poly } }           poly := "<poly>", loc*2n (n>=3), "</poly>"
    vg       := box          region_cls := category       count := decimal-integer
    cls      := category, { ",", category }      cap/vqa/region_cap := free text
    cd       := { poly } | "no change"
    loc      := "<loc_", integer 0..999, ">"

``<sep>`` is tolerated between category groups on input and never emitted.
Category recognition is delimiter-based (text between wrapper groups, commas
for cls), which accepts the same language as longest-match lexing over the
dictionary's surface forms. Emission produces the canonical form: x
quantized against image width, y against height, categories canonical.
Parsing is strict; dequantization returns bin centers, which halves the
worst-case reconstruction error versus bin left edges.

Note on round-trips: construction normalizes polygon/quad winding, so
``emit(parse(s)) == s`` holds for canonical strings (anything this module
emitted); a string encoding reversed winding re-emits normalized.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

from .categories import CategoryDict, normalize_label
from .errors import (
    GeometryError,
    MalformedLocation,
    NonPositiveExtent,
    UnbalancedWrapper,
)
from .geometry import HBB, Geometry, Polygon, Quad
from .tasks import GRAMMAR, NO_CHANGE, TaskKind

GRAMMAR_VERSION = "falcon-grammar-v1"

log = logging.getLogger(__name__)

NUM_BINS = 1000

_LOC_RE = re.compile(r"<loc_(0|[1-9]\d{0,2})>")
_TOKEN_RE = re.compile(
    r"<box>|</box>|<quad>|</quad>|<poly>|</poly>|<sep>|<loc_(?:0|[1-9]\d{0,2})>"
)
_COUNT_RE = re.compile(r"[0-9]+")

_OPEN = {"<box>": "box", "<quad>": "quad", "<poly>": "poly"}
_CLOSE = {"</box>": "box", "</quad>": "quad", "</poly>": "poly"}
_ARITY = {"box": 4, "quad": 8}


def quantize(coord: float, extent: float) -> int:
    """Bin index of a pixel coordinate: clamp(floor(coord/extent*1000), 0, 999)."""
    if extent <= 0:
        raise NonPositiveExtent(f"extent must be positive, got {extent}")
    b = math.floor(coord / extent * NUM_BINS)
    if b < 0 or b > NUM_BINS - 1:
        log.debug("coordinate %s outside [0, %s]; bin clamped", coord, extent)
        return min(NUM_BINS - 1, max(0, b))
    return b


def dequantize(bin_value: int, extent: float) -> float:
    """Pixel coordinate of a bin center: (bin + 0.5)/1000 * extent."""
    if extent <= 0:
        raise NonPositiveExtent(f"extent must be positive, got {extent}")
    return (bin_value + 0.5) / NUM_BINS * extent


def _loc(bin_value: int) -> str:
    return f"<loc_{bin_value}>"


def _emit_points(points, image_w: float, image_h: float) -> str:
    return "".join(
        _loc(quantize(x, image_w)) + _loc(quantize(y, image_h)) for x, y in points
    )


def emit_location(g: Geometry, image_w: float, image_h: float) -> str:
    """Serialize one geometry to its wrapped location-token string."""
    if isinstance(g, HBB):
        return (
            "<box>"
            + _loc(quantize(g.x_min, image_w))
            + _loc(quantize(g.y_min, image_h))
            + _loc(quantize(g.x_max, image_w))
            + _loc(quantize(g.y_max, image_h))
            + "</box>"
        )
    if isinstance(g, Quad):
        return "<quad>" + _emit_points(g.points, image_w, image_h) + "</quad>"
    if isinstance(g, Polygon):
        return "<poly>" + _emit_points(g.points, image_w, image_h) + "</poly>"
    raise GeometryError(f"cannot emit location for {type(g).__name__}")


# --- structured predictions --------------------------------------------------


@dataclass(frozen=True)
class StructuredPrediction:
    """Tagged union of per-task answer structures.

    kind is one of: label (category set), count, caption, detections
    (category-tagged boxes/quads), regions (bare geometry), masks
    (category-tagged polygon groups). unknown_labels records surface forms
    that did not map through the dictionary; they stay in place normalized
    so scoring can count them as wrong.
    """

    kind: str
    labels: tuple[str, ...] = ()
    count: int | None = None
    caption: str | None = None
    detections: tuple[tuple[str, Geometry], ...] = ()
    regions: tuple[Geometry, ...] = ()
    masks: tuple[tuple[str, tuple[Polygon, ...]], ...] = ()
    unknown_labels: tuple[str, ...] = ()

    @classmethod
    def of_labels(cls, labels, unknown=()) -> "StructuredPrediction":
        return cls(kind="label", labels=tuple(labels), unknown_labels=tuple(unknown))

    @classmethod
    def of_count(cls, count: int | None) -> "StructuredPrediction":
        return cls(kind="count", count=count)

    @classmethod
    def of_caption(cls, text: str) -> "StructuredPrediction":
        return cls(kind="caption", caption=text)

    @classmethod
    def of_detections(cls, items, unknown=()) -> "StructuredPrediction":
        return cls(
            kind="detections", detections=tuple(items), unknown_labels=tuple(unknown)
        )

    @classmethod
    def of_regions(cls, geoms) -> "StructuredPrediction":
        return cls(kind="regions", regions=tuple(geoms))

    @classmethod
    def of_masks(cls, items, unknown=()) -> "StructuredPrediction":
        return cls(
            kind="masks",
            masks=tuple((c, tuple(ps)) for c, ps in items),
            unknown_labels=tuple(unknown),
        )


def emit_answer(
    task: TaskKind, pred: StructuredPrediction, image_w: float, image_h: float
) -> str:
    """Canonical answer text for a structured value under the task grammar."""
    grammar = GRAMMAR[task]
    if grammar == "free_text":
        return pred.caption or ""
    if grammar == "count":
        if pred.count is None:
            return ""
        return str(pred.count)
    if grammar == "category":
        return pred.labels[0] if pred.labels else ""
    if grammar == "category_list":
        return ", ".join(pred.labels)
    if grammar in ("det_box", "det_quad"):
        parts: list[str] = []
        last_label: str | None = None
        for label, geom in pred.detections:
            if label != last_label:
                parts.append(label)
                last_label = label
            parts.append(emit_location(geom, image_w, image_h))
        return "".join(parts)
    if grammar == "vg_box":
        if not pred.regions:
            return ""
        return emit_location(pred.regions[0], image_w, image_h)
    if grammar == "seg_poly":
        parts = []
        for label, polys in pred.masks:
            parts.append(label)
            for poly in polys:
                parts.append(emit_location(poly, image_w, image_h))
        return "".join(parts)
    if grammar == "cd_poly":
        if not pred.regions:
            return NO_CHANGE
        return "".join(emit_location(g, image_w, image_h) for g in pred.regions)
    raise AssertionError(f"unhandled grammar {grammar}")


# --- parsing ------------------------------------------------------------------


def _tokenize(text: str):
    """Yield ('text', s) / ('open', kind) / ('close', kind) / ('loc', k) / ('sep', None)."""
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if m.start() > pos:
            yield ("text", text[pos : m.start()])
        tok = m.group(0)
        if tok in _OPEN:
            yield ("open", _OPEN[tok])
        elif tok in _CLOSE:
            yield ("close", _CLOSE[tok])
        elif tok == "<sep>":
            yield ("sep", None)
        else:
            yield ("loc", int(tok[5:-1]))
        pos = m.end()
    if pos < len(text):
        yield ("text", text[pos:])


def _bins_to_points(bins: list[int], image_w: float, image_h: float):
    it = iter(bins)
    return [(dequantize(x, image_w), dequantize(y, image_h)) for x, y in zip(it, it)]


def _build_geometry(kind: str, bins: list[int], image_w: float, image_h: float) -> Geometry:
    if kind == "box":
        x1, y1, x2, y2 = (
            dequantize(bins[0], image_w),
            dequantize(bins[1], image_h),
            dequantize(bins[2], image_w),
            dequantize(bins[3], image_h),
        )
        return HBB(x1, y1, x2, y2)
    pts = _bins_to_points(bins, image_w, image_h)
    if kind == "quad":
        return Quad(tuple(pts))
    return Polygon(tuple(pts))


def _scan_groups(text: str, wrapper: str, image_w: float, image_h: float):
    """Parse `{ category, { wrapper } }` text into [(label_text, [geometry])].

    Raises UnbalancedWrapper / MalformedLocation on any structural defect.
    """
    groups: list[tuple[str, list[Geometry]]] = []
    label_parts: list[str] = []
    open_kind: str | None = None
    bins: list[int] = []
    arity = _ARITY.get(wrapper)

    def flush_label() -> None:
        label = "".join(label_parts).strip()
        label_parts.clear()
        if label:
            groups.append((label, []))

    for kind, value in _tokenize(text):
        if open_kind is None:
            if kind == "text":
                label_parts.append(value)
            elif kind == "sep":
                flush_label()
            elif kind == "open":
                if value != wrapper:
                    raise MalformedLocation(
                        f"<{value}> not allowed in this task's answer"
                    )
                flush_label()
                if not groups:
                    raise MalformedLocation(f"<{wrapper}> without a category")
                open_kind = value
                bins = []
            elif kind == "close":
                raise UnbalancedWrapper(f"</{value}> without opening")
            else:  # loc
                raise MalformedLocation("<loc_k> outside a wrapper")
        else:
            if kind == "loc":
                bins.append(value)
            elif kind == "close":
                if value != open_kind:
                    raise UnbalancedWrapper(
                        f"</{value}> closes <{open_kind}>"
                    )
                if arity is not None:
                    if len(bins) != arity:
                        raise MalformedLocation(
                            f"<{wrapper}> holds {len(bins)} loc tokens, needs {arity}"
                        )
                else:  # poly: 2n with n >= 3
                    if len(bins) < 6 or len(bins) % 2 != 0:
                        raise MalformedLocation(
                            f"<poly> holds {len(bins)} loc tokens, needs even >= 6"
                        )
                groups[-1][1].append(_build_geometry(wrapper, bins, image_w, image_h))
                open_kind = None
            elif kind == "open":
                raise UnbalancedWrapper(f"<{value}> nested inside <{open_kind}>")
            else:
                raise MalformedLocation(f"{kind} token inside <{open_kind}>")
    if open_kind is not None:
        raise UnbalancedWrapper(f"<{open_kind}> never closed")
    if label_parts and "".join(label_parts).strip():
        # trailing category with zero geometry: grammar-legal, contributes nothing
        pass
    return groups


def _scan_bare(text: str, wrapper: str, image_w: float, image_h: float):
    """Parse `{ wrapper }` text (no categories) into [geometry]."""
    geoms: list[Geometry] = []
    open_kind: str | None = None
    bins: list[int] = []
    arity = _ARITY.get(wrapper)
    for kind, value in _tokenize(text):
        if open_kind is None:
            if kind == "text":
                if value.strip():
                    raise MalformedLocation(f"unexpected text {value.strip()[:40]!r}")
            elif kind == "open":
                if value != wrapper:
                    raise MalformedLocation(f"<{value}> not allowed here")
                open_kind = value
                bins = []
            elif kind == "close":
                raise UnbalancedWrapper(f"</{value}> without opening")
            elif kind == "sep":
                continue
            else:
                raise MalformedLocation("<loc_k> outside a wrapper")
        else:
            if kind == "loc":
                bins.append(value)
            elif kind == "close":
                if value != open_kind:
                    raise UnbalancedWrapper(f"</{value}> closes <{open_kind}>")
                if arity is not None and len(bins) != arity:
                    raise MalformedLocation(
                        f"<{wrapper}> holds {len(bins)} loc tokens, needs {arity}"
                    )
                if arity is None and (len(bins) < 6 or len(bins) % 2 != 0):
                    raise MalformedLocation(
                        f"<poly> holds {len(bins)} loc tokens, needs even >= 6"
                    )
                geoms.append(_build_geometry(wrapper, bins, image_w, image_h))
                open_kind = None
            elif kind == "open":
                raise UnbalancedWrapper(f"<{value}> nested inside <{open_kind}>")
            else:
                raise MalformedLocation(f"{kind} token inside <{open_kind}>")
    if open_kind is not None:
        raise UnbalancedWrapper(f"<{open_kind}> never closed")
    return geoms


def _map_label(raw: str, dictionary: CategoryDict, unknown: list[str]) -> str:
    mapped = dictionary.lookup(raw)
    if mapped is None:
        norm = normalize_label(raw)
        unknown.append(norm)
        return norm
    return mapped


def parse_prediction(
    text: str,
    task: TaskKind,
    image_w: float,
    image_h: float,
    dictionary: CategoryDict,
) -> StructuredPrediction:
    """Strict parse of answer/output text under the task grammar.

    Location tokens are dequantized to pixel coordinates (bin centers) and
    categories canonicalized; unmappable labels are kept normalized and
    recorded in unknown_labels. Empty text yields an empty structure for
    tasks whose answers are collections.
    """
    grammar = GRAMMAR[task]
    if grammar == "free_text":
        return StructuredPrediction.of_caption(text)
    if grammar == "count":
        stripped = text.strip()
        if not stripped:
            return StructuredPrediction.of_count(None)
        if not _COUNT_RE.fullmatch(stripped):
            raise MalformedLocation(f"count answer {stripped[:40]!r} is not an integer")
        return StructuredPrediction.of_count(int(stripped))
    if grammar == "category":
        stripped = text.strip()
        if not stripped:
            return StructuredPrediction.of_labels(())
        if _TOKEN_RE.search(stripped):
            raise MalformedLocation("category answer contains location tokens")
        unknown: list[str] = []
        return StructuredPrediction.of_labels(
            (_map_label(stripped, dictionary, unknown),), unknown
        )
    if grammar == "category_list":
        stripped = text.strip()
        if not stripped:
            return StructuredPrediction.of_labels(())
        if _TOKEN_RE.search(stripped):
            raise MalformedLocation("category list contains location tokens")
        unknown = []
        labels = []
        for part in stripped.split(","):
            part = part.strip()
            if not part:
                raise MalformedLocation("empty category in list")
            labels.append(_map_label(part, dictionary, unknown))
        return StructuredPrediction.of_labels(labels, unknown)
    if grammar in ("det_box", "det_quad"):
        wrapper = "box" if grammar == "det_box" else "quad"
        unknown = []
        items: list[tuple[str, Geometry]] = []
        for raw_label, geoms in _scan_groups(text, wrapper, image_w, image_h):
            label = _map_label(raw_label, dictionary, unknown)
            for g in geoms:
                items.append((label, g))
        return StructuredPrediction.of_detections(items, unknown)
    if grammar == "vg_box":
        geoms = _scan_bare(text, "box", image_w, image_h)
        if len(geoms) > 1:
            raise MalformedLocation(f"grounding answer holds {len(geoms)} boxes, needs 1")
        return StructuredPrediction.of_regions(geoms)
    if grammar == "seg_poly":
        unknown = []
        mask_items: list[tuple[str, tuple[Polygon, ...]]] = []
        for raw_label, geoms in _scan_groups(text, "poly", image_w, image_h):
            label = _map_label(raw_label, dictionary, unknown)
            mask_items.append((label, tuple(geoms)))  # type: ignore[arg-type]
        return StructuredPrediction.of_masks(mask_items, unknown)
    if grammar == "cd_poly":
        if text.strip().lower() == NO_CHANGE:
            return StructuredPrediction.of_regions(())
        return StructuredPrediction.of_regions(_scan_bare(text, "poly", image_w, image_h))
    raise AssertionError(f"unhandled grammar {grammar}")
