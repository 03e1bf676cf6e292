"""Parse O*NET task files, derive frequency weights and build the task table."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable

from .errors import (
    DuplicateTask,
    InconsistentTask,
    MalformedRow,
    MissingColumn,
    OutOfRangeValue,
    UnmappedOccupation,
)

logger = logging.getLogger(__name__)

SOC_PATTERN = re.compile(r"^\d{2}-\d{4}\.\d{2}$")


class RoleGroup(str, Enum):
    CLINICIAN = "Clinician"
    NON_CLINICIAN = "NonClinician"


class WeightSource(str, Enum):
    FT_EXPECTED = "FT_expected"
    IM_FALLBACK = "IM_fallback"
    UNIFORM_FALLBACK = "Uniform_fallback"


@dataclass(frozen=True)
class TaskStatementRow:
    soc_code: str
    occupation_title: str
    task_id: int
    task_text: str
    task_type: str = "Unknown"


@dataclass(frozen=True)
class TaskRatingRow:
    soc_code: str
    task_id: int
    scale_id: str
    category: int | None
    data_value: float


@dataclass(frozen=True)
class TaskOccupationRow:
    soc_code: str
    occupation_title: str
    task_id: int
    task_text: str
    task_key: str
    weight: float
    role_group: RoleGroup
    weight_source: WeightSource


# Serialisation order of the canonical task table. Do not reorder.
TASK_TABLE_FIELDS = (
    "soc_code",
    "occupation_title",
    "task_id",
    "task_text",
    "task_key",
    "weight",
    "role_group",
    "weight_source",
)


@dataclass
class HealthFilterConfig:
    included_soc_prefixes: list[str] = field(default_factory=lambda: ["29-", "31-"])
    role_map: list[tuple[str, RoleGroup]] = field(
        default_factory=lambda: [
            ("29-", RoleGroup.CLINICIAN),
            ("31-", RoleGroup.NON_CLINICIAN),
        ]
    )
    per_occupation_overrides: dict[str, RoleGroup] = field(default_factory=dict)

    def includes(self, soc_code: str) -> bool:
        return any(soc_code.startswith(p) for p in self.included_soc_prefixes)

    def role_for(self, soc_code: str) -> RoleGroup:
        if soc_code in self.per_occupation_overrides:
            return RoleGroup(self.per_occupation_overrides[soc_code])
        for prefix, group in self.role_map:
            if soc_code.startswith(prefix):
                return RoleGroup(group)
        raise UnmappedOccupation(
            f"occupation {soc_code} passes the health filter but matches no role rule"
        )


def task_key(task_text: str) -> str:
    """SHA-256 of the exact UTF-8 task text. No normalisation."""
    return hashlib.sha256(task_text.encode("utf-8")).hexdigest()


# Accepted header spellings, compared case-insensitively.
_ALIASES = {
    "soc_code": ("o*net-soc code", "onetsoc_code", "soc code", "soc_code"),
    "title": ("title", "occupation title", "occupation_title"),
    "task_id": ("task id", "task_id"),
    "task": ("task", "task statement", "task_text"),
    "task_type": ("task type", "task_type"),
    "scale_id": ("scale id", "scale_id"),
    "category": ("category",),
    "data_value": ("data value", "data_value"),
}


def _read_table(stream: IO[str], required: Iterable[str], optional: Iterable[str]):
    text = stream.read()
    if text.startswith("﻿"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn("empty file: no header row") from None
    lowered = [h.strip().lower() for h in header]
    index = {}
    for name in list(required) + list(optional):
        for alias in _ALIASES[name]:
            if alias in lowered:
                index[name] = lowered.index(alias)
                break
    missing = [name for name in required if name not in index]
    if missing:
        raise MissingColumn(f"header lacks required column(s): {', '.join(missing)}")
    rows = []
    for line_no, fields in enumerate(reader, start=2):
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        rows.append((line_no, fields))
    return len(header), index, rows


def parse_task_statements(stream: IO[str], source: str = "<stream>") -> list[TaskStatementRow]:
    """Parse an O*NET ``Task Statements`` file.

    Columns are located by header name. Every malformed line is collected and
    reported together in one :class:`MalformedRow`.
    """
    width, idx, lines = _read_table(stream, ("soc_code", "task_id", "task"), ("title", "task_type"))
    out, problems = [], []
    for line_no, f in lines:
        if len(f) != width:
            problems.append((line_no, f"expected {width} fields, found {len(f)}"))
            continue
        soc = f[idx["soc_code"]].strip()
        if not SOC_PATTERN.match(soc):
            problems.append((line_no, f"bad O*NET-SOC code {soc!r}"))
            continue
        try:
            tid = int(f[idx["task_id"]])
        except ValueError:
            problems.append((line_no, f"task id {f[idx['task_id']]!r} is not an integer"))
            continue
        text = f[idx["task"]]
        if not text.strip():
            problems.append((line_no, "empty task text"))
            continue
        ttype = f[idx["task_type"]].strip() if "task_type" in idx else ""
        if ttype not in ("Core", "Supplemental"):
            ttype = "Unknown"
        title = f[idx["title"]].strip() if "title" in idx else ""
        out.append(TaskStatementRow(soc, title, tid, text, ttype))
    if problems:
        raise MalformedRow(problems, source)
    return out


def parse_task_ratings(stream: IO[str], source: str = "<stream>") -> list[TaskRatingRow]:
    """Parse an O*NET ``Task Ratings`` file (FT, IM and RT scales)."""
    width, idx, lines = _read_table(
        stream, ("soc_code", "task_id", "scale_id", "category", "data_value"), ()
    )
    out, malformed, out_of_range = [], [], []
    for line_no, f in lines:
        if len(f) != width:
            malformed.append((line_no, f"expected {width} fields, found {len(f)}"))
            continue
        soc = f[idx["soc_code"]].strip()
        if not SOC_PATTERN.match(soc):
            malformed.append((line_no, f"bad O*NET-SOC code {soc!r}"))
            continue
        try:
            tid = int(f[idx["task_id"]])
            value = float(f[idx["data_value"]])
        except ValueError:
            malformed.append((line_no, "task id or data value is not numeric"))
            continue
        scale = f[idx["scale_id"]].strip()
        if scale not in ("FT", "IM", "RT"):
            scale = "Other"
        category = None
        if scale == "FT":
            raw = f[idx["category"]].strip()
            try:
                category = int(raw)
            except ValueError:
                malformed.append((line_no, f"FT category {raw!r} is not an integer"))
                continue
            if not 1 <= category <= 7:
                out_of_range.append((line_no, f"FT category {category} outside 1..7"))
                continue
            if not 0.0 <= value <= 100.0:
                out_of_range.append((line_no, f"FT percentage {value} outside [0, 100]"))
                continue
        elif scale == "IM" and not 1.0 <= value <= 5.0:
            out_of_range.append((line_no, f"IM value {value} outside [1, 5]"))
            continue
        out.append(TaskRatingRow(soc, tid, scale, category, value))
    if malformed:
        raise MalformedRow(malformed + out_of_range, source)
    if out_of_range:
        raise OutOfRangeValue(out_of_range, source)
    return out


def compute_frequency_weight(ratings_for_task: list[TaskRatingRow]) -> tuple[float, WeightSource]:
    """Frequency weight for one (occupation, task) pair.

    FT rows give the expected frequency category (1..7). The percentages are
    renormalised by their total so published rounding does not push the
    expectation outside [1, 7]. Falls back to mean IM, then to 1.0.
    """
    ids = {(r.soc_code, r.task_id) for r in ratings_for_task}
    if len(ids) > 1:
        raise InconsistentTask(f"ratings mix several tasks: {sorted(ids)}")
    ft = [r for r in ratings_for_task if r.scale_id == "FT"]
    total = sum(r.data_value for r in ft)
    if ft and total > 0:
        return sum(r.category * r.data_value for r in ft) / total, WeightSource.FT_EXPECTED
    im = [r.data_value for r in ratings_for_task if r.scale_id == "IM"]
    if im:
        return sum(im) / len(im), WeightSource.IM_FALLBACK
    return 1.0, WeightSource.UNIFORM_FALLBACK


def build_task_table(
    statements: list[TaskStatementRow],
    ratings: list[TaskRatingRow],
    config: HealthFilterConfig,
) -> list[TaskOccupationRow]:
    by_task = defaultdict(list)
    for r in ratings:
        by_task[(r.soc_code, r.task_id)].append(r)
    seen = set()
    table = []
    for st in statements:
        if not config.includes(st.soc_code):
            continue
        ident = (st.soc_code, st.task_id)
        if ident in seen:
            raise DuplicateTask(f"task {st.task_id} listed twice for {st.soc_code}")
        seen.add(ident)
        role = config.role_for(st.soc_code)
        weight, source = compute_frequency_weight(by_task.get(ident, []))
        table.append(
            TaskOccupationRow(
                soc_code=st.soc_code,
                occupation_title=st.occupation_title,
                task_id=st.task_id,
                task_text=st.task_text,
                task_key=task_key(st.task_text),
                weight=weight,
                role_group=role,
                weight_source=source,
            )
        )
    table.sort(key=lambda r: (r.soc_code, r.task_id))
    return table


def dedup_tasks(table: list[TaskOccupationRow]):
    """Collapse the table to unique task texts (exact byte match).

    Returns ``(unique_tasks, membership)`` where ``unique_tasks`` is a list of
    ``(task_key, task_text)`` sorted by key and ``membership`` maps each key to
    the indices of the table rows carrying that text.
    """
    membership: dict[str, list[int]] = {}
    texts: dict[str, str] = {}
    for i, row in enumerate(table):
        membership.setdefault(row.task_key, []).append(i)
        texts[row.task_key] = row.task_text
    unique = sorted(texts.items())
    for a, b in whitespace_variants(unique):
        logger.warning("task texts differ only by whitespace: %r vs %r", a, b)
    return unique, membership


def whitespace_variants(unique_tasks) -> list[tuple[str, str]]:
    """Pairs of distinct task texts that are equal once whitespace is collapsed."""
    groups = defaultdict(list)
    for _, text in unique_tasks:
        groups[" ".join(text.split())].append(text)
    pairs = []
    for texts in groups.values():
        texts = sorted(texts)
        pairs.extend((texts[0], other) for other in texts[1:])
    return sorted(pairs)


def _row_record(row: TaskOccupationRow) -> dict:
    rec = {name: getattr(row, name) for name in TASK_TABLE_FIELDS}
    rec["role_group"] = row.role_group.value
    rec["weight_source"] = row.weight_source.value
    return rec


def dump_task_table(table: list[TaskOccupationRow]) -> str:
    """Canonical JSON-lines serialisation of the task table."""
    return "".join(json.dumps(_row_record(r), ensure_ascii=False) + "\n" for r in table)


def load_task_table(text: str) -> list[TaskOccupationRow]:
    rows = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append(
                TaskOccupationRow(
                    soc_code=rec["soc_code"],
                    occupation_title=rec["occupation_title"],
                    task_id=int(rec["task_id"]),
                    task_text=rec["task_text"],
                    task_key=rec["task_key"],
                    weight=float(rec["weight"]),
                    role_group=RoleGroup(rec["role_group"]),
                    weight_source=WeightSource(rec["weight_source"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedRow([(line_no, f"bad task-table record: {exc}")], "task table") from None
    return rows
