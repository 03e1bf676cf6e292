"""Frequency-weighted occupation metrics and pooled group headlines."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields

from .errors import EmptyGroup, EmptyOccupation, UnknownKey
from .ingest import RoleGroup, TaskOccupationRow
from .schema import CATEGORIES, CategoryCode
from .scorer import ScoredCorpus


@dataclass(frozen=True)
class ScoredRow:
    soc_code: str
    occupation_title: str
    task_id: int
    task_text: str
    task_key: str
    weight: float
    role_group: RoleGroup
    weight_source: str
    tc_category: CategoryCode
    tc_intensity: int


@dataclass
class OccupationMetrics:
    soc_code: str
    occupation_title: str
    role_group: RoleGroup
    n_tasks: int
    total_weight: float
    tci: float
    tci_sd: float
    shares: dict[CategoryCode, float]
    excluded_tasks: int = 0

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "shares"}
        d["role_group"] = self.role_group.value
        d["shares"] = {c.value: self.shares[c] for c in CATEGORIES}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OccupationMetrics":
        d = dict(d)
        d["role_group"] = RoleGroup(d["role_group"])
        d["shares"] = {CategoryCode(k): float(v) for k, v in d["shares"].items()}
        return cls(**d)


@dataclass
class GroupHeadline:
    role_group: RoleGroup
    weighted_mean_tci: float
    shares: dict[CategoryCode, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "role_group": self.role_group.value,
            "weighted_mean_tci": self.weighted_mean_tci,
            "shares": {c.value: self.shares[c] for c in CATEGORIES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupHeadline":
        return cls(RoleGroup(d["role_group"]), float(d["weighted_mean_tci"]),
                   {CategoryCode(k): float(v) for k, v in d["shares"].items()})


def join_scores(table: list[TaskOccupationRow], corpus: ScoredCorpus):
    """Attach scores to table rows; failed tasks are dropped and counted per occupation."""
    rows, exclusions = [], Counter()
    for row in table:
        score = corpus.scores.get(row.task_key)
        if score is not None:
            rows.append(ScoredRow(
                row.soc_code, row.occupation_title, row.task_id, row.task_text, row.task_key,
                row.weight, row.role_group, row.weight_source.value,
                score.tc_category, score.tc_intensity,
            ))
        elif row.task_key in corpus.failures:
            exclusions[row.soc_code] += 1
        else:
            raise UnknownKey(
                f"task {row.task_id} of {row.soc_code} (key {row.task_key[:12]}) has no score "
                "or failure record; the scored corpus is stale, re-run the score stage"
            )
    return rows, dict(sorted(exclusions.items()))


def _check(rows):
    if not rows:
        raise EmptyOccupation("no scored tasks")


def weighted_tci(rows) -> float:
    _check(rows)
    total = math.fsum(r.weight for r in rows)
    return math.fsum(r.weight * r.tc_intensity for r in rows) / total


def weighted_tci_sd(rows) -> float:
    """Square root of the population-style weighted variance (divides by the weight sum)."""
    _check(rows)
    total = math.fsum(r.weight for r in rows)
    mean = weighted_tci(rows)
    var = math.fsum(r.weight * (r.tc_intensity - mean) ** 2 for r in rows) / total
    return math.sqrt(max(var, 0.0))


def category_shares(rows) -> dict[CategoryCode, float]:
    _check(rows)
    total = math.fsum(r.weight for r in rows)
    by_cat = defaultdict(list)
    for r in rows:
        by_cat[r.tc_category].append(r.weight)
    return {c: math.fsum(by_cat[c]) / total for c in CATEGORIES}


def aggregate_all(rows, exclusions=None) -> list[OccupationMetrics]:
    exclusions = exclusions or {}
    by_occ = defaultdict(list)
    for r in rows:
        by_occ[r.soc_code].append(r)
    out = []
    for soc in sorted(by_occ):
        occ = by_occ[soc]
        out.append(OccupationMetrics(
            soc_code=soc,
            occupation_title=occ[0].occupation_title,
            role_group=occ[0].role_group,
            n_tasks=len(occ),
            total_weight=math.fsum(r.weight for r in occ),
            tci=weighted_tci(occ),
            tci_sd=weighted_tci_sd(occ),
            shares=category_shares(occ),
            excluded_tasks=exclusions.get(soc, 0),
        ))
    return out


def omitted_occupations(metrics, exclusions) -> list[str]:
    """Occupations whose every task failed scoring."""
    present = {m.soc_code for m in metrics}
    return sorted(soc for soc in exclusions if soc not in present)


def group_headline(rows, group: RoleGroup, metrics=None, pooling: str = "rows") -> GroupHeadline:
    """Group-level TCI and shares.

    ``pooling="rows"`` pools every task-occupation row of the group.
    ``pooling="occupations"`` takes the unweighted mean of the occupation
    metrics instead (needs ``metrics``).
    """
    group = RoleGroup(group)
    if pooling == "rows":
        members = [r for r in rows if r.role_group == group]
        if not members:
            raise EmptyGroup(f"no scored rows for group {group.value}")
        return GroupHeadline(group, weighted_tci(members), category_shares(members))
    if pooling == "occupations":
        if metrics is None:
            metrics = aggregate_all(rows)
        members = [m for m in metrics if m.role_group == group]
        if not members:
            raise EmptyGroup(f"no occupations for group {group.value}")
        n = len(members)
        return GroupHeadline(
            group,
            math.fsum(m.tci for m in members) / n,
            {c: math.fsum(m.shares[c] for m in members) / n for c in CATEGORIES},
        )
    raise ValueError(f"unknown pooling {pooling!r}")
