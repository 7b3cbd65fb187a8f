"""Instruction template registry with deterministic variant sampling.

The multi-instruction pool is a static, versioned data file of curated
paraphrases per task. Variant choice is keyed by hash(seed, sample_id)
rather than a shared RNG stream, so results do not depend on record
processing order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, MissingSlot, PoolExhausted, UnexpectedSlot
from .tasks import SLOTS, TaskKind

_SLOT_RE = re.compile(r"\{(class|region|question)\}")


@dataclass(frozen=True)
class PromptTemplate:
    task: TaskKind
    template_id: int
    text: str

    def slots(self) -> frozenset[str]:
        return frozenset(_SLOT_RE.findall(self.text))


@dataclass(frozen=True)
class PromptPool:
    pool_version: str
    templates: dict[TaskKind, tuple[PromptTemplate, ...]]

    def __post_init__(self) -> None:
        for task in TaskKind:
            entries = self.templates.get(task, ())
            if not entries:
                raise ConfigError(f"prompt pool has no templates for task {task}")
            ids = [t.template_id for t in entries]
            if len(set(ids)) != len(ids):
                raise ConfigError(f"duplicate template_id for task {task}")
            required = SLOTS[task]
            for t in entries:
                if not t.text.strip():
                    raise ConfigError(f"empty template {task}/{t.template_id}")
                found = t.slots()
                if found != required:
                    raise ConfigError(
                        f"template {task}/{t.template_id} uses slots {sorted(found)}, "
                        f"task requires {sorted(required)}"
                    )

    def size(self, task: TaskKind) -> int:
        return len(self.templates[task])


def instantiate(template: PromptTemplate, slots: dict[str, str]) -> str:
    """Pure slot substitution; rejects missing or extraneous slot values."""
    needed = template.slots()
    provided = set(slots)
    missing = needed - provided
    if missing:
        raise MissingSlot(f"template needs slot(s) {sorted(missing)}")
    extra = provided - needed
    if extra:
        raise UnexpectedSlot(f"template does not use slot(s) {sorted(extra)}")
    out = template.text
    for name, value in slots.items():
        out = out.replace("{" + name + "}", value)
    return out


def _draw_key(seed: int, sample_id: str) -> int:
    digest = hashlib.blake2b(
        f"{seed}|{sample_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def sample_variants(
    pool: PromptPool, task: TaskKind, m: int, seed: int, sample_id: str
) -> list[PromptTemplate]:
    """Sample M distinct templates for one sample, without replacement.

    Keyed by hash(seed, sample_id): stable across runs, record order and
    worker counts, and uniform over the pool.
    """
    entries = pool.templates[task]
    if m < 1:
        raise ConfigError(f"variant count must be >= 1, got {m}")
    if m > len(entries):
        raise PoolExhausted(
            f"requested {m} variants, pool holds {len(entries)} for {task}"
        )
    rng = random.Random(_draw_key(seed, sample_id))
    return rng.sample(entries, m)


def load_prompt_pool(path: str | Path | None = None) -> PromptPool:
    """Load a prompt pool file; None loads the packaged default."""
    if path is None:
        text = (
            resources.files("rsforge").joinpath("data/prompt_pool.json").read_text("utf-8")
        )
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    templates: dict[TaskKind, tuple[PromptTemplate, ...]] = {}
    for task_name, entries in doc["tasks"].items():
        task = TaskKind(task_name)
        templates[task] = tuple(
            PromptTemplate(task=task, template_id=e["template_id"], text=e["text"])
            for e in entries
        )
    return PromptPool(pool_version=doc["pool_version"], templates=templates)
