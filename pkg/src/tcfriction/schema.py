"""The scoring record and its validator.

The wire shape a backend must return is a single flat JSON object::

    {"tc_category": "SEARCH_INFO", "tc_intensity": 3, "drivers": {"uncertainty": 1, "measurability": 1, "asset_specificity": 0, "interdependence": 2, "opportunism": 0}, "tags": ["information search"]}

``WIRE_EXAMPLE`` holds exactly that line; the prompt, the validator and the
fixtures all use it, so they cannot drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class CategoryCode(str, Enum):
    SEARCH_INFO = "SEARCH_INFO"
    BARGAIN_DECIDE = "BARGAIN_DECIDE"
    MONITOR_ENFORCE = "MONITOR_ENFORCE"
    ADAPT_COORDINATE = "ADAPT_COORDINATE"


# Reporting order for shares and tables.
CATEGORIES = tuple(CategoryCode)

CATEGORY_DEFINITIONS = {
    CategoryCode.SEARCH_INFO: (
        "information search: finding, gathering, checking and making usable the "
        "information needed to act"
    ),
    CategoryCode.BARGAIN_DECIDE: (
        "decision and bargaining: reaching decisions or commitments, including "
        "agreement across people, teams or services"
    ),
    CategoryCode.MONITOR_ENFORCE: (
        "monitoring and enforcement: documentation, assurance, audit, compliance "
        "and checking that agreed work is done correctly"
    ),
    CategoryCode.ADAPT_COORDINATE: (
        "adaptation and coordination: replanning, handovers, scheduling and "
        "exception handling when circumstances change"
    ),
}

DRIVERS = ("uncertainty", "measurability", "asset_specificity", "interdependence", "opportunism")
INTENSITY_RANGE = (0, 5)
DRIVER_RANGE = (0, 3)
MAX_TAG_LENGTH = 40
TOP_LEVEL_FIELDS = ("tc_category", "tc_intensity", "drivers", "tags")

WIRE_EXAMPLE = (
    '{"tc_category": "SEARCH_INFO", "tc_intensity": 3, "drivers": {"uncertainty": 1, '
    '"measurability": 1, "asset_specificity": 0, "interdependence": 2, "opportunism": 0}, '
    '"tags": ["information search"]}'
)

CONSTRAINTS = ("NotParseable", "MissingField", "WrongType", "OutOfRange", "NotInEnum", "ExtraField")


@dataclass(frozen=True)
class DriverScores:
    uncertainty: int
    measurability: int
    asset_specificity: int
    interdependence: int
    opportunism: int

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in DRIVERS}


@dataclass(frozen=True)
class ScorePayload:
    tc_category: CategoryCode
    tc_intensity: int
    drivers: DriverScores
    tags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "tc_category": self.tc_category.value,
            "tc_intensity": self.tc_intensity,
            "drivers": self.drivers.as_dict(),
            "tags": list(self.tags),
        }


@dataclass(frozen=True)
class ScoreMeta:
    attempts: int
    repaired: bool
    model_id: str
    scored_at: str
    transport_retries: int = 0

    def as_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "repaired": self.repaired,
            "model_id": self.model_id,
            "scored_at": self.scored_at,
            "transport_retries": self.transport_retries,
        }


@dataclass(frozen=True)
class TaskScore:
    task_key: str
    payload: ScorePayload
    meta: ScoreMeta

    @property
    def tc_category(self) -> CategoryCode:
        return self.payload.tc_category

    @property
    def tc_intensity(self) -> int:
        return self.payload.tc_intensity

    def as_dict(self) -> dict:
        return {"task_key": self.task_key, **self.payload.as_dict(), "meta": self.meta.as_dict()}

    @classmethod
    def from_dict(cls, rec: dict) -> "TaskScore":
        body = {k: rec[k] for k in TOP_LEVEL_FIELDS if k in rec}
        payload = validate_candidate(body)
        if isinstance(payload, list):
            raise ValueError("; ".join(v.message for v in payload))
        m = rec["meta"]
        meta = ScoreMeta(
            attempts=int(m["attempts"]),
            repaired=bool(m["repaired"]),
            model_id=str(m["model_id"]),
            scored_at=str(m["scored_at"]),
            transport_retries=int(m.get("transport_retries", 0)),
        )
        return cls(rec["task_key"], payload, meta)


@dataclass(frozen=True)
class ValidationViolation:
    field_path: str
    constraint: str
    message: str
    allowed: str = field(default="", compare=False)

    def as_dict(self) -> dict:
        return {"field_path": self.field_path, "constraint": self.constraint, "message": self.message}


@dataclass(frozen=True)
class Unparseable:
    """Marker for a backend response that is not a JSON document."""

    raw: str
    reason: str


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def parse_candidate(text: str) -> Any:
    """Parse a raw response body. Returns :class:`Unparseable` on failure."""
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except (ValueError, TypeError) as exc:
        return Unparseable(text if isinstance(text, str) else repr(text), str(exc))


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_bounded_int(path, value, lo, hi, out):
    allowed = f"integer {lo}..{hi}"
    if not _is_int(value):
        out.append(ValidationViolation(
            path, "WrongType", f"{path} must be an integer, got {value!r}", allowed))
    elif not lo <= value <= hi:
        out.append(ValidationViolation(
            path, "OutOfRange", f"{path}={value} is outside {lo}..{hi}", allowed))


def validate_candidate(candidate: Any) -> ScorePayload | list[ValidationViolation]:
    """Check a parsed record against the scoring schema.

    Returns the typed payload when the record is clean, otherwise every
    violation found. Never raises.
    """
    if isinstance(candidate, Unparseable):
        return [ValidationViolation(
            "$", "NotParseable",
            f"response is not valid JSON ({candidate.reason}): {candidate.raw[:80]!r}",
            "one JSON object")]
    if not isinstance(candidate, dict):
        return [ValidationViolation(
            "$", "WrongType", f"response must be a JSON object, got {type(candidate).__name__}",
            "one JSON object")]

    out: list[ValidationViolation] = []
    for key in sorted(candidate):
        if key not in TOP_LEVEL_FIELDS:
            out.append(ValidationViolation(
                str(key), "ExtraField", f"unexpected field {key!r}",
                "fields " + ", ".join(TOP_LEVEL_FIELDS)))

    legal = ", ".join(c.value for c in CATEGORIES)
    category = None
    if "tc_category" not in candidate:
        out.append(ValidationViolation("tc_category", "MissingField", "tc_category is missing", legal))
    else:
        value = candidate["tc_category"]
        if not isinstance(value, str):
            out.append(ValidationViolation(
                "tc_category", "WrongType",
                f"tc_category must be a single string, got {value!r}", legal))
        elif value not in CategoryCode.__members__:
            out.append(ValidationViolation(
                "tc_category", "NotInEnum", f"tc_category {value!r} is not a legal category", legal))
        else:
            category = CategoryCode(value)

    if "tc_intensity" not in candidate:
        out.append(ValidationViolation(
            "tc_intensity", "MissingField", "tc_intensity is missing", "integer 0..5"))
    else:
        _check_bounded_int("tc_intensity", candidate["tc_intensity"], *INTENSITY_RANGE, out)

    drivers = None
    if "drivers" not in candidate:
        out.append(ValidationViolation(
            "drivers", "MissingField", "drivers is missing", "object with " + ", ".join(DRIVERS)))
    elif not isinstance(candidate["drivers"], dict):
        out.append(ValidationViolation(
            "drivers", "WrongType", f"drivers must be an object, got {candidate['drivers']!r}",
            "object with " + ", ".join(DRIVERS)))
    else:
        raw = candidate["drivers"]
        n_before = len(out)
        for key in sorted(raw):
            if key not in DRIVERS:
                out.append(ValidationViolation(
                    f"drivers.{key}", "ExtraField", f"unexpected driver {key!r}",
                    "drivers " + ", ".join(DRIVERS)))
        for name in DRIVERS:
            path = f"drivers.{name}"
            if name not in raw:
                out.append(ValidationViolation(path, "MissingField", f"{path} is missing", "integer 0..3"))
            else:
                _check_bounded_int(path, raw[name], *DRIVER_RANGE, out)
        if len(out) == n_before:
            drivers = DriverScores(**{name: raw[name] for name in DRIVERS})

    tags: tuple[str, ...] = ()
    if "tags" in candidate:
        raw_tags = candidate["tags"]
        tag_rule = f"distinct lowercase strings of 1..{MAX_TAG_LENGTH} characters"
        if not isinstance(raw_tags, list):
            out.append(ValidationViolation(
                "tags", "WrongType", f"tags must be a list, got {raw_tags!r}", tag_rule))
        else:
            seen = set()
            for i, tag in enumerate(raw_tags):
                path = f"tags[{i}]"
                if not isinstance(tag, str):
                    out.append(ValidationViolation(path, "WrongType", f"{path} must be a string, got {tag!r}", tag_rule))
                elif not tag.strip() or len(tag) > MAX_TAG_LENGTH:
                    out.append(ValidationViolation(
                        path, "OutOfRange", f"{path} {tag!r} must have 1..{MAX_TAG_LENGTH} characters", tag_rule))
                elif tag != tag.lower():
                    out.append(ValidationViolation(path, "OutOfRange", f"{path} {tag!r} must be lowercase", tag_rule))
                elif tag in seen:
                    out.append(ValidationViolation(path, "OutOfRange", f"{path} {tag!r} is a duplicate", tag_rule))
                else:
                    seen.add(tag)
            if not out:
                tags = tuple(raw_tags)

    if out:
        return sorted(out, key=lambda v: v.field_path)
    return ScorePayload(category, candidate["tc_intensity"], drivers, tags)


def render_violations(violations: list[ValidationViolation]) -> str:
    """Corrective message sent back to the backend during repair."""
    if any(v.constraint == "NotParseable" for v in violations):
        return (
            "Your previous response could not be parsed as JSON.\n"
            "Reply with a single well-formed JSON object and no surrounding prose, "
            "markdown or code fences, in exactly this shape:\n"
            f"{WIRE_EXAMPLE}\n"
        )
    lines = ["Your previous response violated the output schema:"]
    for v in sorted(violations, key=lambda v: (v.field_path, v.constraint, v.message)):
        lines.append(f"- {v.field_path} [{v.constraint}]: {v.message}; allowed: {v.allowed}")
    lines.append("Resend one corrected JSON object only, with no other text.")
    return "\n".join(lines) + "\n"
