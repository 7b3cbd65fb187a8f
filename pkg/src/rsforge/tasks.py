"""The closed set of 14 tasks and their answer/instruction shapes."""

from __future__ import annotations

import enum

from .errors import ConfigError


class TaskKind(enum.Enum):
    """Serialized names are stable strings used in files and ids."""

    CLS = "Cls"
    CAP = "Cap"
    DCAP = "DCap"
    COUNT = "Count"
    VQA = "VQA"
    CLS_HBB = "ClsHBB"
    CLS_OBB = "ClsOBB"
    RCAP = "RCap"
    DET_HBB = "DetHBB"
    DET_OBB = "DetOBB"
    VG = "VG"
    CLS_POLY = "ClsPoly"
    SEG = "Seg"
    CD = "CD"

    def __str__(self) -> str:
        return self.value


def task_from_name(name: str) -> TaskKind:
    try:
        return TaskKind(name)
    except ValueError:
        raise ConfigError(f"unknown task name {name!r}") from None


# answer grammar used when emitting and parsing textual answers
GRAMMAR: dict[TaskKind, str] = {
    TaskKind.CLS: "category_list",
    TaskKind.CAP: "free_text",
    TaskKind.DCAP: "free_text",
    TaskKind.COUNT: "count",
    TaskKind.VQA: "free_text",
    TaskKind.CLS_HBB: "category",
    TaskKind.CLS_OBB: "category",
    TaskKind.RCAP: "free_text",
    TaskKind.DET_HBB: "det_box",
    TaskKind.DET_OBB: "det_quad",
    TaskKind.VG: "vg_box",
    TaskKind.CLS_POLY: "category",
    TaskKind.SEG: "seg_poly",
    TaskKind.CD: "cd_poly",
}

# instruction template slots each task requires
SLOTS: dict[TaskKind, frozenset[str]] = {
    TaskKind.CLS: frozenset(),
    TaskKind.CAP: frozenset(),
    TaskKind.DCAP: frozenset(),
    TaskKind.COUNT: frozenset({"class"}),
    TaskKind.VQA: frozenset({"question"}),
    TaskKind.CLS_HBB: frozenset({"region"}),
    TaskKind.CLS_OBB: frozenset({"region"}),
    TaskKind.RCAP: frozenset({"region"}),
    TaskKind.DET_HBB: frozenset({"class"}),
    TaskKind.DET_OBB: frozenset({"class"}),
    TaskKind.VG: frozenset({"question"}),
    TaskKind.CLS_POLY: frozenset({"region"}),
    TaskKind.SEG: frozenset({"class"}),
    TaskKind.CD: frozenset(),
}

# metric family used by the evaluation harness
ACCURACY_TASKS = frozenset(
    {
        TaskKind.CLS,
        TaskKind.COUNT,
        TaskKind.VQA,
        TaskKind.CLS_HBB,
        TaskKind.CLS_OBB,
        TaskKind.CLS_POLY,
    }
)
CAPTION_TASKS = frozenset({TaskKind.CAP, TaskKind.DCAP, TaskKind.RCAP})
DETECTION_TASKS = frozenset({TaskKind.DET_HBB, TaskKind.DET_OBB, TaskKind.VG})
SEGMENTATION_TASKS = frozenset({TaskKind.SEG, TaskKind.CD})

# sentinel answer for a change-detection sample with no changed regions
NO_CHANGE = "no change"
