"""Friction-map quadrants and the checksummed summary pack."""

from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import statistics
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import IoError, PartialPackPrevented
from .ingest import RoleGroup
from .schema import CATEGORIES


class Quadrant(str, Enum):
    TARGETED_TASK_FIXES = "TargetedTaskFixes"      # low mean, high dispersion
    STRUCTURAL_REDESIGN = "StructuralRedesign"     # high mean, low dispersion
    MIXED_AUGMENTATION = "MixedAugmentation"       # high mean, high dispersion
    LOW_FRICTION = "LowFriction"                   # low mean, low dispersion


@dataclass(frozen=True)
class Thresholds:
    tci_cut: float
    sd_cut: float
    rule: str = "median"

    def as_dict(self) -> dict:
        return {"tci_cut": self.tci_cut, "sd_cut": self.sd_cut, "rule": self.rule}


@dataclass(frozen=True)
class FrictionPoint:
    soc_code: str
    title: str
    role_group: RoleGroup
    tci: float
    tci_sd: float
    quadrant: Quadrant


@dataclass
class SummaryPack:
    out_dir: Path
    manifest: list[dict]
    thresholds: Thresholds
    provenance: dict


def median_thresholds(metrics) -> Thresholds:
    return Thresholds(
        statistics.median(m.tci for m in metrics),
        statistics.median(m.tci_sd for m in metrics),
        "median",
    )


def resolve_thresholds(metrics, tci_cut=None, sd_cut=None) -> Thresholds:
    """Median cuts by default; either axis may be fixed explicitly."""
    med = median_thresholds(metrics)
    if tci_cut is None and sd_cut is None:
        return med
    rule = "fixed" if tci_cut is not None and sd_cut is not None else "mixed"
    return Thresholds(
        med.tci_cut if tci_cut is None else float(tci_cut),
        med.sd_cut if sd_cut is None else float(sd_cut),
        rule,
    )


def classify(tci: float, tci_sd: float, th: Thresholds) -> Quadrant:
    # A value equal to its cut counts as low.
    high_mean = tci > th.tci_cut
    high_sd = tci_sd > th.sd_cut
    if high_mean:
        return Quadrant.MIXED_AUGMENTATION if high_sd else Quadrant.STRUCTURAL_REDESIGN
    return Quadrant.TARGETED_TASK_FIXES if high_sd else Quadrant.LOW_FRICTION


def quadrant_classify(metrics, thresholds: Thresholds | None = None) -> list[FrictionPoint]:
    if thresholds is None:
        thresholds = median_thresholds(metrics)
    return [
        FrictionPoint(m.soc_code, m.occupation_title, m.role_group, m.tci, m.tci_sd,
                      classify(m.tci, m.tci_sd, thresholds))
        for m in metrics
    ]


# --- formatting -------------------------------------------------------------

def fmt(x) -> str:
    """Fixed decimal formatting for the delimited outputs.

    Integers print as-is. Floats are rounded to 6 fractional digits with
    trailing zeros trimmed; nonzero magnitudes below 1e-4 use 6 significant
    digits in exponent form so small p-values are not flattened to zero.
    """
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if x != 0.0 and abs(x) < 1e-4:
            return f"{x:.6g}"
        s = f"{x:.6f}".rstrip("0").rstrip(".")
        return "0" if s in ("-0", "") else s
    return str(x)


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        cells = []
        for v in row:
            cell = fmt(v)
            if any(ch in cell for ch in ',"\n'):
                cell = '"' + cell.replace('"', '""') + '"'
            cells.append(cell)
        buf.write(",".join(cells) + "\n")
    return buf.getvalue().encode("utf-8")


SHARE_COLUMNS = tuple(f"share_{c.value}" for c in CATEGORIES)
METRICS_HEADER = ("soc_code", "title", "group", "n_tasks", "total_weight", "tci", "tci_sd",
                  *SHARE_COLUMNS, "excluded_tasks")
HEADLINE_HEADER = ("group", "weighted_mean_tci", *SHARE_COLUMNS)
TESTS_HEADER = ("variable", "p", "p_fdr", "u", "delta", "median_clin", "median_non", "method")
FRICTIONMAP_HEADER = ("soc_code", "title", "group", "tci", "tci_sd", "quadrant")


def metrics_csv(metrics) -> bytes:
    return _csv(METRICS_HEADER, (
        (m.soc_code, m.occupation_title, m.role_group.value, m.n_tasks, m.total_weight,
         m.tci, m.tci_sd, *(m.shares[c] for c in CATEGORIES), m.excluded_tasks)
        for m in metrics
    ))


def headline_csv(headlines) -> bytes:
    return _csv(HEADLINE_HEADER, (
        (h.role_group.value, h.weighted_mean_tci, *(h.shares[c] for c in CATEGORIES))
        for h in headlines
    ))


def tests_csv(tests) -> bytes:
    return _csv(TESTS_HEADER, (
        (t.variable, t.p, t.p_fdr, float(t.u), t.delta, t.median_x, t.median_y, t.method)
        for t in tests
    ))


def frictionmap_csv(points) -> bytes:
    return _csv(FRICTIONMAP_HEADER, (
        (p.soc_code, p.title, p.role_group.value, p.tci, p.tci_sd, p.quadrant.value)
        for p in points
    ))


def frictionmap_svg(points, thresholds: Thresholds) -> bytes:
    """Static scatter of occupations by TCI and TCI_sd, coloured by role group.

    Rendered with a fixed hash salt and no date metadata so the bytes are
    reproducible.
    """
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    style = {
        "svg.hashsalt": "tcfriction",
        "svg.fonttype": "path",
        "font.family": "DejaVu Sans",
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
    colours = {RoleGroup.CLINICIAN: "#b2182b", RoleGroup.NON_CLINICIAN: "#2166ac"}
    with matplotlib.rc_context(style):
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        try:
            for group in (RoleGroup.NON_CLINICIAN, RoleGroup.CLINICIAN):
                pts = [p for p in points if p.role_group == group]
                if pts:
                    ax.scatter([p.tci for p in pts], [p.tci_sd for p in pts], s=22,
                               color=colours[group], alpha=0.8, label=group.value,
                               edgecolors="none")
            # Headroom so corner labels do not sit on points.
            ax.margins(x=0.1, y=0.2)
            ax.axvline(thresholds.tci_cut, color="0.5", lw=0.8, ls="--")
            ax.axhline(thresholds.sd_cut, color="0.5", lw=0.8, ls="--")
            labels = (
                (0.02, 0.97, "targeted task fixes", "left"),
                (0.98, 0.97, "mixed augmentation", "right"),
                (0.98, 0.03, "structural redesign", "right"),
                (0.02, 0.03, "low friction", "left"),
            )
            for x, y, text, ha in labels:
                ax.text(x, y, text, transform=ax.transAxes, ha=ha,
                        va="top" if y > 0.5 else "bottom", color="0.35", fontsize=8)
            ax.set_xlabel("TCI (weighted mean intensity)")
            ax.set_ylabel("TCI_sd (within-occupation dispersion)")
            ax.legend(frameon=False, loc="center left", bbox_to_anchor=(1.0, 0.5))
            fig.tight_layout()
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def emit_summary_pack(metrics, headlines, tests, points, out_dir, *, thresholds: Thresholds,
                      provenance: dict, figure: bool = True) -> SummaryPack:
    """Write the pack into a staging directory, then swap it into ``out_dir``.

    Either the complete pack is in place afterwards, or ``out_dir`` is left
    exactly as it was.
    """
    out_dir = Path(out_dir)
    files = [
        ("metrics.csv", "occupation_metrics", metrics_csv(metrics)),
        ("headline.csv", "group_headline", headline_csv(headlines)),
        ("tests.csv", "group_tests", tests_csv(tests)),
        ("frictionmap.csv", "frictionmap_points", frictionmap_csv(points)),
    ]
    provenance = dict(provenance, thresholds=thresholds.as_dict())
    files.append(("provenance.json", "provenance", _json_bytes(provenance)))
    if figure:
        files.append(("frictionmap.svg", "frictionmap_figure", frictionmap_svg(points, thresholds)))
    manifest = [{"file": name, "role": role, "sha256": sha256_bytes(data)} for name, role, data in files]
    manifest_doc = {"files": manifest, "thresholds": thresholds.as_dict()}

    try:
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging-", dir=out_dir.parent))
    except OSError as exc:
        raise IoError(out_dir, f"cannot create staging directory: {exc.strerror or exc}") from None
    backup = None
    try:
        for name, _, data in files:
            (staging / name).write_bytes(data)
        (staging / "manifest.json").write_bytes(_json_bytes(manifest_doc))
        for fh_path in staging.iterdir():
            with open(fh_path, "rb") as fh:
                os.fsync(fh.fileno())
        if out_dir.exists():
            backup = out_dir.with_name(f".{out_dir.name}.old-{staging.name[-8:]}")
            os.replace(out_dir, backup)
        os.replace(staging, out_dir)
    except OSError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        if backup is not None and not out_dir.exists():
            os.replace(backup, out_dir)
        raise PartialPackPrevented(out_dir, f"pack not written: {exc}") from None
    if backup is not None:
        shutil.rmtree(backup, ignore_errors=True)
    return SummaryPack(out_dir, manifest, thresholds, provenance)


def verify_pack(out_dir) -> list[str]:
    """Names of files whose checksum does not match the manifest, plus unlisted files."""
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    listed = set()
    for entry in doc["files"]:
        listed.add(entry["file"])
        path = out_dir / entry["file"]
        if not path.exists() or sha256_bytes(path.read_bytes()) != entry["sha256"]:
            bad.append(entry["file"])
    for path in sorted(out_dir.iterdir()):
        if path.name != "manifest.json" and path.name not in listed:
            bad.append(path.name)
    return bad
