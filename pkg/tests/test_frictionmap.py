import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from tcfriction.aggregate import GroupHeadline, OccupationMetrics
from tcfriction.errors import IoError
from tcfriction.frictionmap import (
    METRICS_HEADER,
    Quadrant,
    Thresholds,
    classify,
    emit_summary_pack,
    fmt,
    frictionmap_svg,
    median_thresholds,
    quadrant_classify,
    resolve_thresholds,
    verify_pack,
)
from tcfriction.ingest import RoleGroup
from tcfriction.schema import CATEGORIES
from tcfriction.stats import compare_groups

Q = Quadrant
EVEN = dict(zip(CATEGORIES, (0.25, 0.25, 0.25, 0.25)))


def metric(soc, tci, sd, group=RoleGroup.CLINICIAN, title="Occupation"):
    return OccupationMetrics(soc, title, group, 4, 10.0, tci, sd, dict(EVEN), 0)


def sample_metrics():
    return [
        metric("29-1001.00", 3.8, 0.4, title="High, steady"),
        metric("29-1002.00", 3.6, 1.4),
        metric("29-1003.00", 2.0, 1.3),
        metric("31-1001.00", 1.8, 0.3, RoleGroup.NON_CLINICIAN),
        metric("31-1002.00", 2.9, 0.9, RoleGroup.NON_CLINICIAN, title="Aide, general"),
        metric("31-1003.00", 2.2, 0.6, RoleGroup.NON_CLINICIAN),
    ]


def write_pack(out_dir, metrics=None, figure=True):
    metrics = metrics or sample_metrics()
    th = median_thresholds(metrics)
    headlines = [GroupHeadline(RoleGroup.NON_CLINICIAN, 2.3, dict(EVEN)),
                 GroupHeadline(RoleGroup.CLINICIAN, 3.1, dict(EVEN))]
    return emit_summary_pack(metrics, headlines, compare_groups(metrics), quadrant_classify(metrics, th),
                             out_dir, thresholds=th, provenance={"tool": "t"}, figure=figure)


@pytest.mark.parametrize("tci,sd,expected", [
    (4.0, 0.2, Q.STRUCTURAL_REDESIGN),
    (4.0, 2.0, Q.MIXED_AUGMENTATION),
    (1.0, 2.0, Q.TARGETED_TASK_FIXES),
    (1.0, 0.2, Q.LOW_FRICTION),
])
def test_classify_examples(tci, sd, expected):
    assert classify(tci, sd, Thresholds(2.5, 1.0)) is expected


def test_tie_counts_as_low():
    th = Thresholds(2.5, 1.0)
    assert classify(2.5, 1.0, th) is Q.LOW_FRICTION
    assert classify(2.5, 1.5, th) is Q.TARGETED_TASK_FIXES
    assert classify(3.0, 1.0, th) is Q.STRUCTURAL_REDESIGN


def test_median_structural_redesign():
    points = {p.soc_code: p.quadrant for p in quadrant_classify(sample_metrics())}
    assert points["29-1001.00"] is Q.STRUCTURAL_REDESIGN
    assert points["29-1002.00"] is Q.MIXED_AUGMENTATION
    assert points["31-1001.00"] is Q.LOW_FRICTION
    assert points["29-1003.00"] is Q.TARGETED_TASK_FIXES


def test_degenerate_all_equal():
    ms = [metric(f"29-100{i}.00", 2.0, 0.5) for i in range(4)]
    assert {p.quadrant for p in quadrant_classify(ms)} == {Q.LOW_FRICTION}


def test_resolve_thresholds():
    ms = sample_metrics()
    assert resolve_thresholds(ms) == median_thresholds(ms)
    assert resolve_thresholds(ms, 3.0, 1.0) == Thresholds(3.0, 1.0, "fixed")
    mixed = resolve_thresholds(ms, tci_cut=3.0)
    assert (mixed.tci_cut, mixed.sd_cut, mixed.rule) == (3.0, median_thresholds(ms).sd_cut, "mixed")


metric_sets = st.lists(st.tuples(st.floats(0, 5), st.floats(0, 2.5)), min_size=1, max_size=30)


@given(metric_sets)
def test_partition(values):
    ms = [metric(f"29-{1000 + i}.00", a, b) for i, (a, b) in enumerate(values)]
    th = median_thresholds(ms)
    points = quadrant_classify(ms, th)
    assert len(points) == len(ms)
    for p in points:
        assert (p.quadrant in (Q.STRUCTURAL_REDESIGN, Q.MIXED_AUGMENTATION)) == (p.tci > th.tci_cut)
        assert (p.quadrant in (Q.TARGETED_TASK_FIXES, Q.MIXED_AUGMENTATION)) == (p.tci_sd > th.sd_cut)


@given(metric_sets)
def test_at_most_half_high(values):
    ms = [metric(f"29-{1000 + i}.00", a, b) for i, (a, b) in enumerate(values)]
    points = quadrant_classify(ms)
    assert 2 * sum(p.quadrant in (Q.STRUCTURAL_REDESIGN, Q.MIXED_AUGMENTATION) for p in points) <= len(ms)


@pytest.mark.parametrize("value,text", [
    (3, "3"), (0.5, "0.5"), (2.0, "2"), (1 / 3, "0.333333"), (0.0, "0"), (-0.0, "0"),
    (1.2e-5, "1.2e-05"), (-2.5e-6, "-2.5e-06"), (0.0001, "0.0001"), (1075.5, "1075.5"),
    (-0.297, "-0.297"), ("Exact", "Exact"),
])
def test_fmt(value, text):
    assert fmt(value) == text


def test_pack_contents_and_manifest(tmp_path):
    out = tmp_path / "pack"
    pack = write_pack(out)
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(["metrics.csv", "headline.csv", "tests.csv", "frictionmap.csv",
                            "provenance.json", "frictionmap.svg", "manifest.json"])
    assert verify_pack(out) == []
    assert [e["file"] for e in pack.manifest][:5] == ["metrics.csv", "headline.csv", "tests.csv",
                                                       "frictionmap.csv", "provenance.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["thresholds"]["rule"] == "median"
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert '"Aide, general"' in (out / "metrics.csv").read_text()
    assert len(lines) == 7
    tests = (out / "tests.csv").read_text().splitlines()
    assert tests[0] == "variable,p,p_fdr,u,delta,median_clin,median_non,method"
    assert len(tests) == 7


def test_pack_without_figure(tmp_path):
    write_pack(tmp_path / "pack", figure=False)
    assert not (tmp_path / "pack" / "frictionmap.svg").exists()
    assert verify_pack(tmp_path / "pack") == []


def test_verify_detects_tampering(tmp_path):
    write_pack(tmp_path / "pack")
    with open(tmp_path / "pack" / "tests.csv", "a") as fh:
        fh.write("x\n")
    (tmp_path / "pack" / "stray.txt").write_text("")
    assert verify_pack(tmp_path / "pack") == ["tests.csv", "stray.txt"]


def test_pack_byte_identical_rerun(tmp_path):
    write_pack(tmp_path / "a")
    write_pack(tmp_path / "b")
    write_pack(tmp_path / "b")
    for name in (p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pack_replaces_previous(tmp_path):
    out = tmp_path / "pack"
    write_pack(out)
    write_pack(out, figure=False)
    assert not (out / "frictionmap.svg").exists()
    assert [p.name for p in tmp_path.iterdir()] == ["pack"]


def test_unwritable_destination(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(IoError):
        write_pack(blocker / "pack")
    assert blocker.read_text() == "not a directory"
    assert [p.name for p in tmp_path.iterdir()] == ["file"]


def test_failed_swap_leaves_old_pack(tmp_path, monkeypatch):
    out = tmp_path / "pack"
    write_pack(out)
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    import tcfriction.frictionmap as fm

    real = fm.os.fsync

    def broken(fd):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr(fm.os, "fsync", broken)
    with pytest.raises(IoError):
        write_pack(out, figure=False)
    monkeypatch.setattr(fm.os, "fsync", real)
    assert {p.name: p.read_bytes() for p in out.iterdir()} == before
    assert [p.name for p in tmp_path.iterdir()] == ["pack"]


def test_svg_deterministic():
    ms = sample_metrics()
    th = median_thresholds(ms)
    a = frictionmap_svg(quadrant_classify(ms, th), th)
    b = frictionmap_svg(quadrant_classify(ms, th), th)
    assert a == b
    assert a.startswith(b"<?xml") and b"<dc:date>" not in a
