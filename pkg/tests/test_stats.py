import math

import mpmath as mp
import numpy as np
import pytest

from structpulse.stats import (StatsError, aggregate, bh_adjust, dominated_mask,
                               nondominated_front, welch_test)

mp.mp.dps = 30


# --- independent t-distribution oracle (regularized incomplete beta) ---

def oracle_t_cdf(t, df):
    x = df / (df + t * t)
    tail = mp.betainc(df / 2, mp.mpf(1) / 2, 0, x, regularized=True) / 2
    return tail if t < 0 else 1 - tail


def oracle_t_sf2(t, df):
    return float(2 * (1 - oracle_t_cdf(abs(t), df)))


def oracle_t_ppf(q, df):
    lo, hi = mp.mpf(0), mp.mpf(100)
    for _ in range(200):
        mid = (lo + hi) / 2
        if oracle_t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def oracle_welch(a, b):
    a = [mp.mpf(x) for x in a]
    b = [mp.mpf(x) for x in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    delta = ma - mb
    se2 = va / na + vb / nb
    se = mp.sqrt(se2)
    t = delta / se
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = oracle_t_sf2(float(t), float(df))
    tq = oracle_t_ppf(mp.mpf("0.975"), float(df))
    pooled = mp.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    g = (delta / pooled) * (1 - mp.mpf(3) / (4 * (na + nb) - 9))
    return dict(delta=float(delta), t=float(t), df=float(df), p=p,
                ci=(float(delta - tq * se), float(delta + tq * se)), g=float(g))


def test_welch_identical_samples():
    r = welch_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.delta_mean == 0.0
    assert r.hedges_g == 0.0
    assert r.p == pytest.approx(1.0)


def test_welch_fixture_matches_direct_formula_oracle():
    # frozen from the incomplete-beta oracle above:
    # t = -1.0954451150103322, df = 6, p = 0.31533359620122973,
    # ci = [-3.2337146951647055, 1.2337146951647055], g = -0.67356232107955076
    a, b = [1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.0]
    r = welch_test(a, b)
    o = oracle_welch(a, b)
    assert r.t == pytest.approx(-1.0954451150103322, abs=1e-12)
    assert r.df == pytest.approx(6.0, abs=1e-12)
    assert r.p == pytest.approx(0.31533359620122973, abs=1e-10)
    assert r.ci_low == pytest.approx(-3.2337146951647055, abs=1e-10)
    assert r.ci_high == pytest.approx(1.2337146951647055, abs=1e-10)
    assert r.hedges_g == pytest.approx(-0.67356232107955076, abs=1e-12)
    assert r.p == pytest.approx(o["p"], abs=1e-10)
    assert (r.ci_low, r.ci_high) == pytest.approx(o["ci"], abs=1e-10)
    assert r.hedges_g == pytest.approx(o["g"], abs=1e-10)


def test_welch_random_fixtures_against_oracle():
    gen = np.random.default_rng(17)
    for _ in range(10):
        a = gen.normal(size=gen.integers(3, 12)) * gen.uniform(0.5, 3)
        b = gen.normal(loc=gen.uniform(-1, 1), size=gen.integers(3, 12))
        r = welch_test(a, b)
        o = oracle_welch(a, b)
        assert r.p == pytest.approx(o["p"], abs=1e-10)
        assert r.ci_low == pytest.approx(o["ci"][0], abs=1e-10)
        assert r.ci_high == pytest.approx(o["ci"][1], abs=1e-10)
        assert r.hedges_g == pytest.approx(o["g"], abs=1e-10)


def test_welch_large_effect_small_variance():
    # tiny within-group spread, visible mean gap: huge effect size
    a = [0.66720, 0.66721, 0.66719, 0.66720, 0.66722]
    b = [0.66630, 0.66629, 0.66631, 0.66630, 0.66628]
    r = welch_test(a, b)
    assert r.hedges_g > 5
    assert r.p < 1e-8


def test_welch_symmetry():
    gen = np.random.default_rng(23)
    a = gen.normal(size=6)
    b = gen.normal(loc=0.4, size=9)
    r1 = welch_test(a, b)
    r2 = welch_test(b, a)
    assert r1.delta_mean == pytest.approx(-r2.delta_mean)
    assert r1.t == pytest.approx(-r2.t)
    assert r1.p == pytest.approx(r2.p)
    assert abs(r1.hedges_g) == pytest.approx(abs(r2.hedges_g))


def test_welch_degenerate_constant_unequal():
    r = welch_test([1.0, 1.0, 1.0], [2.0, 2.0])
    assert r.degenerate
    assert r.p == 0.0
    assert math.isinf(r.hedges_g)


def test_welch_requires_two_observations():
    with pytest.raises(StatsError):
        welch_test([1.0], [1.0, 2.0])


def test_bh_step_up_example():
    q = bh_adjust([0.01, 0.02, 0.03, 0.04])
    assert np.allclose(q, [0.04, 0.04, 0.04, 0.04], atol=1e-15)


def test_bh_single_p_unchanged():
    assert bh_adjust([0.2])[0] == pytest.approx(0.2)


def test_bh_hand_worked_case():
    # m = 3: sorted q candidates: .03*3/1=.09, .04*3/2=.06, .09*3/3=.09
    # step-up mins from the right: [.06, .06, .09]
    q = bh_adjust([0.04, 0.09, 0.03])
    assert np.allclose(q, [0.06, 0.09, 0.06], atol=1e-12)


def test_bh_properties_random():
    gen = np.random.default_rng(29)
    for _ in range(20):
        p = gen.uniform(size=gen.integers(1, 15))
        q = bh_adjust(p)
        assert np.all(q >= p - 1e-15)
        assert np.all(q <= 1.0)
        order = np.argsort(p)
        assert np.all(np.diff(q[order]) >= -1e-15)


def test_bh_rejects_out_of_range():
    with pytest.raises(StatsError):
        bh_adjust([0.5, 1.5])


def test_aggregate_constant_sample():
    a = aggregate([1.0, 1.0, 1.0])
    assert a.mean == 1.0 and a.std == 0.0
    assert (a.ci_low, a.ci_high) == (1.0, 1.0)


def test_aggregate_hand_arithmetic():
    a = aggregate([1.0, 2.0, 3.0])
    assert a.mean == pytest.approx(2.0)
    assert a.std == pytest.approx(1.0)
    assert a.stderr == pytest.approx(1.0 / math.sqrt(3))
    assert a.median == pytest.approx(2.0)


def test_aggregate_ci_t_table_oracle():
    # t_{0.975, 2} = 4.3026527297494639 from the incomplete-beta oracle
    a = aggregate([1.0, 2.0, 3.0])
    tq = 4.3026527297494639
    assert oracle_t_ppf(mp.mpf("0.975"), 2.0) == pytest.approx(tq, abs=1e-10)
    assert a.ci_low == pytest.approx(2.0 - tq / math.sqrt(3), abs=1e-9)
    assert a.ci_high == pytest.approx(2.0 + tq / math.sqrt(3), abs=1e-9)


def test_aggregate_direction_flag():
    x = [3.0, 1.0, 2.0]
    assert aggregate(x, best="max").best == 3.0
    assert aggregate(x, best="min").best == 1.0
    with pytest.raises(StatsError):
        aggregate(x, best="sideways")


def test_aggregate_single_observation_flagged():
    a = aggregate([5.0])
    assert a.degenerate and a.n == 1
    assert a.std == 0.0 and a.stderr == 0.0
    assert (a.ci_low, a.ci_high) == (5.0, 5.0)


def test_aggregate_order_independent():
    x = [0.3, 0.7, 0.1, 0.9]
    a = aggregate(x)
    b = aggregate(sorted(x))
    assert (a.mean, a.std, a.median, a.best) == (b.mean, b.std, b.median, b.best)


# --- non-dominated front vs the O(n^2) pairwise oracle ---

def brute_force_front(points):
    n = len(points)
    keep = []
    for i in range(n):
        fi, ci = points[i]
        dominated = False
        for j in range(n):
            if i == j:
                continue
            fj, cj = points[j]
            if fj >= fi and cj <= ci and (fj > fi or cj < ci):
                dominated = True
                break
            if fj == fi and cj == ci and j < i:
                dominated = True  # exact tie: keep the earliest index
                break
        if not dominated:
            keep.append(i)
    return sorted(keep, key=lambda i: (points[i][1], i))


def test_front_spec_example():
    pts = [(0.9, 5.0), (0.8, 1.0), (0.7, 3.0)]
    assert nondominated_front(pts) == [1, 0]


def test_front_single_point():
    assert nondominated_front([(0.5, 2.0)]) == [0]


def test_front_empty():
    assert nondominated_front([]) == []


def test_front_rejects_nonfinite():
    with pytest.raises(StatsError):
        nondominated_front([(float("nan"), 1.0)])


def test_front_matches_pairwise_oracle_1000():
    gen = np.random.default_rng(31)
    for _ in range(1000):
        n = int(gen.integers(1, 28))
        # one-decimal rounding injects plenty of exact ties
        pts = [(round(float(gen.uniform(0, 1)), 1), round(float(gen.uniform(0, 5)), 1))
               for _ in range(n)]
        assert nondominated_front(pts) == brute_force_front(pts)


def test_dominated_mask_consistency():
    gen = np.random.default_rng(37)
    pts = [(float(gen.uniform()), float(gen.uniform())) for _ in range(50)]
    mask = dominated_mask(pts)
    front = set(nondominated_front(pts))
    for i in range(50):
        assert mask[i] == (i not in front)
