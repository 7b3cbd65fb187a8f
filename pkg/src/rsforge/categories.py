"""Canonical category list and alias mapping for source-label normalization.

The shipped dictionary has 129 canonical names plus a curated alias table;
both live in a versioned data file so label mapping is reproducible
bit-for-bit. Lookup is deterministic: normalize the surface form, then an
exact table lookup (no embedding similarity).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, UnknownCategory

_WS = re.compile(r"[\s_\-]+")


def normalize_label(raw: str) -> str:
    """Lowercase, trim, and collapse whitespace/underscores/hyphens."""
    return _WS.sub(" ", raw.strip().lower()).strip()


@dataclass(frozen=True)
class CategoryDict:
    version: str
    canonical: tuple[str, ...]
    aliases: dict[str, str]  # normalized surface form -> canonical name

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for name in self.canonical:
            norm = normalize_label(name)
            if norm in seen:
                raise ConfigError(
                    f"canonical names {seen[norm]!r} and {name!r} collide after normalization"
                )
            seen[norm] = name
        canon_set = set(self.canonical)
        for surface, target in self.aliases.items():
            if target not in canon_set:
                raise ConfigError(
                    f"alias {surface!r} maps to unknown canonical {target!r}"
                )
            if normalize_label(surface) != surface:
                raise ConfigError(f"alias key {surface!r} is not normalized")

    def lookup(self, raw: str) -> str | None:
        norm = normalize_label(raw)
        if norm in self._canon_index:
            return self._canon_index[norm]
        return self.aliases.get(norm)

    @property
    def _canon_index(self) -> dict[str, str]:
        idx = getattr(self, "_canon_index_cache", None)
        if idx is None:
            idx = {normalize_label(c): c for c in self.canonical}
            object.__setattr__(self, "_canon_index_cache", idx)
        return idx

    def surface_forms(self) -> set[str]:
        return set(self._canon_index) | set(self.aliases)


def map_category(raw: str, dictionary: CategoryDict) -> str:
    """Map a raw source label to its canonical category name."""
    found = dictionary.lookup(raw)
    if found is None:
        raise UnknownCategory(f"label {raw!r} not in category dictionary")
    return found


def load_category_dict(path: str | Path | None = None) -> CategoryDict:
    """Load a category dictionary file; None loads the packaged default."""
    if path is None:
        text = (
            resources.files("rsforge").joinpath("data/categories.json").read_text("utf-8")
        )
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    return CategoryDict(
        version=doc["version"],
        canonical=tuple(doc["canonical"]),
        aliases=dict(doc["aliases"]),
    )
