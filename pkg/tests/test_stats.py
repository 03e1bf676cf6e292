import math
import warnings
from itertools import combinations

import pytest
from hypothesis import assume, given, settings, strategies as st

from tcfriction.aggregate import OccupationMetrics
from tcfriction.errors import DegenerateSample, EmptyGroup, OutOfRangeP
from tcfriction.ingest import RoleGroup
from tcfriction.schema import CATEGORIES, CategoryCode
from tcfriction.stats import (
    VARIABLES,
    bh_adjust,
    cliffs_delta,
    compare_groups,
    exact_p,
    normal_p,
    mann_whitney_u,
    u_statistic,
)

C = CategoryCode


def permutation_p(x, y):
    """Two-sided exact p by enumerating every relabelling of the pooled sample."""
    pooled = list(x) + list(y)
    n = len(x)
    u_obs = u_statistic(x, y)
    lower = upper = total = 0
    for idx in combinations(range(len(pooled)), n):
        chosen = set(idx)
        u = u_statistic([pooled[i] for i in idx], [pooled[i] for i in range(len(pooled)) if i not in chosen])
        total += 1
        lower += u <= u_obs
        upper += u >= u_obs
    return min(1.0, 2 * min(lower, upper) / total)


def naive_delta(x, y):
    return sum((a > b) - (a < b) for a in x for b in y) / (len(x) * len(y))


def test_u_fully_separated():
    assert u_statistic([3, 4], [1, 2]) == 4
    assert u_statistic([1, 2], [3, 4]) == 0


def test_u_ties_count_half():
    assert u_statistic([1, 2], [2, 3]) == 0.5
    assert u_statistic([2, 3], [1, 2]) == 3.5


def test_exact_p_small_examples():
    assert mann_whitney_u([1, 2], [3, 4]) == (0, pytest.approx(1 / 3, abs=1e-15), "Exact")
    assert mann_whitney_u([1, 3], [2])[1] == 1.0


def test_auto_switches_to_normal_with_ties():
    assert mann_whitney_u([1, 2, 2], [3, 4])[2] == "NormalApprox"


def test_auto_switches_to_normal_when_large():
    x = list(range(0, 22, 2))
    y = list(range(1, 23, 2))
    assert mann_whitney_u(x, y)[2] == "NormalApprox"


def test_forced_exact_with_ties_falls_back():
    assert mann_whitney_u([1, 2, 2], [3, 4], method="exact")[2] == "NormalApprox"


def test_forced_approx():
    assert mann_whitney_u([1, 2], [3, 4], method="approx")[2] == "NormalApprox"


def test_degenerate_sample_warns():
    with pytest.warns(DegenerateSample):
        u, p, _ = mann_whitney_u([2.0, 2.0, 2.0], [2.0, 2.0])
    assert (u, p) == (3.0, 1.0)


def test_empty_split():
    with pytest.raises(EmptyGroup):
        mann_whitney_u([], [1.0])
    with pytest.raises(EmptyGroup):
        cliffs_delta([1.0], [])


def test_unknown_method():
    with pytest.raises(ValueError):
        mann_whitney_u([1, 2], [3, 4], method="bootstrap")


def test_cliffs_delta_examples():
    assert cliffs_delta([3, 4], [1, 2]) == 1.0
    assert cliffs_delta([1, 2], [3, 4]) == -1.0
    assert cliffs_delta([1, 2], [1, 2]) == 0.0


def test_bh_examples():
    assert bh_adjust([0.01, 0.02, 0.03]) == pytest.approx([0.03, 0.03, 0.03])
    assert bh_adjust([0.04, 0.01]) == pytest.approx([0.04, 0.02])
    assert bh_adjust([0.5]) == [0.5]


@pytest.mark.parametrize("bad", [[], [1.2], [-0.1], [float("nan")]])
def test_bh_rejects(bad):
    with pytest.raises(OutOfRangeP):
        bh_adjust(bad)


samples = st.lists(st.integers(-5, 5), min_size=1, max_size=8)
distinct = st.lists(st.integers(-1000, 1000), min_size=2, max_size=10, unique=True)


@given(samples, samples)
def test_u_antisymmetry(x, y):
    assert u_statistic(x, y) + u_statistic(y, x) == len(x) * len(y)
    assert cliffs_delta(x, y) == -cliffs_delta(y, x)


@given(samples, samples, st.integers(-100, 100))
def test_translation_invariance(x, y, c):
    assert u_statistic(x, y) == u_statistic([v + c for v in x], [v + c for v in y])
    assert cliffs_delta(x, y) == cliffs_delta([v + c for v in x], [v + c for v in y])


@given(samples, samples)
def test_delta_u_identity(x, y):
    assert abs(cliffs_delta(x, y) - (2 * u_statistic(x, y) / (len(x) * len(y)) - 1)) <= 1e-12


@given(samples, samples)
def test_delta_matches_enumeration(x, y):
    assert cliffs_delta(x, y) == naive_delta(x, y)


@given(distinct, st.data())
def test_exact_matches_permutation(pool, data):
    n = data.draw(st.integers(1, len(pool) - 1))
    x, y = pool[:n], pool[n:]
    u, p, method = mann_whitney_u(x, y)
    assert method == "Exact"
    assert abs(p - permutation_p(x, y)) <= 1e-9


@given(st.integers(1, 9), st.integers(1, 9))
def test_exact_distribution_symmetric(n, m):
    for u in range(n * m + 1):
        assert exact_p(u, n, m) == exact_p(n * m - u, n, m)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_bh_properties(ps):
    q = bh_adjust(ps)
    assert all(0 <= qi <= 1 for qi in q)
    assert all(qi >= pi - 1e-15 for pi, qi in zip(ps, q))
    order = sorted(range(len(ps)), key=lambda i: ps[i])
    ranked = [q[i] for i in order]
    assert ranked == sorted(ranked)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_bh_permutation_equivariant(ps, rnd):
    perm = list(range(len(ps)))
    rnd.shuffle(perm)
    q = bh_adjust(ps)
    q_perm = bh_adjust([ps[i] for i in perm])
    assert q_perm == [q[i] for i in perm]


def metric(soc, group, tci, sd, shares=(0.25, 0.25, 0.25, 0.25)):
    return OccupationMetrics(soc, "Occupation", group, 3, 3.0, tci, sd,
                             dict(zip(CATEGORIES, shares)), 0)


def build_metrics(clin, non):
    out = [metric(f"29-{1000 + i}.00", RoleGroup.CLINICIAN, *v) for i, v in enumerate(clin)]
    out += [metric(f"31-{1000 + i}.00", RoleGroup.NON_CLINICIAN, *v) for i, v in enumerate(non)]
    return out


def test_compare_identical_groups():
    vals = [(1.0, 0.5), (2.0, 0.7), (3.0, 0.9)]
    results = compare_groups(build_metrics(vals, vals))
    assert [r.variable for r in results] == list(VARIABLES)
    for r in results:
        assert r.delta == 0.0
        assert r.p == 1.0 and r.p_fdr == 1.0


def test_compare_orientation():
    results = compare_groups(build_metrics([(4.0, 1.0), (5.0, 1.1)], [(1.0, 1.2), (2.0, 1.3)]))
    tci = results[0]
    assert tci.delta == 1.0 and tci.u == 4
    assert (tci.median_x, tci.median_y) == (4.5, 1.5)
    assert results[-1].delta == -1.0


def test_compare_joint_adjustment():
    results = compare_groups(build_metrics([(4.0, 1.0), (5.0, 1.1), (6.0, 0.2)],
                                           [(1.0, 1.2), (2.0, 1.3), (0.5, 0.1)]))
    assert [r.p_fdr for r in results] == bh_adjust([r.p for r in results])


int_pairs = st.lists(st.tuples(st.integers(0, 50), st.integers(0, 25)), min_size=1, max_size=6)


@given(int_pairs, int_pairs, st.sampled_from([0.5, 2.0, 3.0, 7.25]))
def test_compare_scale_invariance(clin, non, k):
    clin = [(float(a), float(b)) for a, b in clin]
    non = [(float(a), float(b)) for a, b in non]
    base = compare_groups(build_metrics(clin, non))
    scaled = compare_groups(build_metrics([(a * k, b * k) for a, b in clin],
                                          [(a * k, b * k) for a, b in non]))
    for r, s in zip(base, scaled):
        assert (r.u, r.p, r.delta, r.method) == (s.u, s.p, s.delta, s.method)


def test_compare_needs_both_groups():
    with pytest.raises(EmptyGroup):
        compare_groups(build_metrics([(1.0, 0.1)], []))


def test_compare_suppresses_degenerate_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        compare_groups(build_metrics([(1.0, 0.1)], [(2.0, 0.2)]))


def test_normal_tracks_exact_when_both_groups_have_three():
    for big_n in range(10, 15):
        for n in range(3, big_n - 2):
            m = big_n - n
            x, y = list(range(n)), list(range(100, 100 + m))
            for u in range(n * m + 1):
                assert abs(normal_p(u, x, y) - exact_p(u, n, m)) <= 0.03
