import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from perpgrad.stats import (
    SeedMetricSet,
    aggregate,
    compare,
    students_t_cdf,
    t_two_sided_p,
    to_csv,
    to_markdown,
)

# frozen from the mpmath oracle (tests/oracles.py)
FIXED_D = -0.6324555320336759
FIXED_P = 0.3465935070873343
T_CDF_2_10 = 0.9633059826146299


def test_fixed_vectors_match_oracle():
    r = compare([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert abs(r.effect_size - FIXED_D) <= 1e-9
    assert abs(r.p_value - FIXED_P) <= 1e-9
    assert r.ci_lo < r.effect_size < r.ci_hi


def test_unequal_sizes_match_oracle():
    a, b = [0.1, 0.4, 0.35, 0.8], [0.9, 1.1, 0.7, 1.4, 1.3]
    d, p = oracles.welch_cohen(a, b)
    r = compare(a, b)
    assert r.effect_size == pytest.approx(d, abs=1e-12)
    assert r.p_value == pytest.approx(p, abs=1e-12)


def test_t_cdf_values():
    assert abs(students_t_cdf(2.0, 10) - T_CDF_2_10) <= 1e-12
    assert students_t_cdf(0.0, 4) == 0.5
    assert abs(students_t_cdf(1.96, 1e7) - 0.975) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 30), st.floats(0.5, 500))
def test_t_cdf_matches_quadrature(t, df):
    assert students_t_cdf(t, df) == pytest.approx(oracles.t_cdf(t, df), abs=1e-11)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.floats(0.5, 200))
def test_t_cdf_symmetry_and_monotonicity(t, df):
    assert students_t_cdf(t, df) + students_t_cdf(-t, df) == pytest.approx(1.0, abs=1e-14)
    assert students_t_cdf(t + 0.1, df) >= students_t_cdf(t, df)


def test_two_sided_p_bounds():
    assert t_two_sided_p(0.0, 5) == pytest.approx(1.0)
    assert t_two_sided_p(math.inf, 5) == 0.0
    with pytest.raises(ValueError):
        t_two_sided_p(1.0, 0)


samples = st.lists(st.floats(-1e3, 1e3, allow_subnormal=False), min_size=2, max_size=25)


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_antisymmetry(a, b):
    assume(np.std(a) > 1e-6 or np.std(b) > 1e-6)
    ab, ba = compare(a, b), compare(b, a)
    assert ab.effect_size == pytest.approx(-ba.effect_size, rel=1e-12, abs=1e-12)
    assert ab.p_value == pytest.approx(ba.p_value, rel=1e-12, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(samples, samples, st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_affine_invariance(a, b, scale, shift):
    assume(np.std(a) > 1e-3 and np.std(b) > 1e-3)
    r0 = compare(a, b)
    r1 = compare([scale * v + shift for v in a], [scale * v + shift for v in b])
    assert r1.effect_size == pytest.approx(r0.effect_size, rel=1e-7, abs=1e-9)
    assert r1.p_value == pytest.approx(r0.p_value, rel=1e-6, abs=1e-12)


def test_identical_samples():
    r = compare([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.effect_size == 0.0 and r.p_value == pytest.approx(1.0)


def test_degenerate_constant_groups():
    r = compare([1.0, 1.0, 1.0], [2.0, 2.0])
    assert r.degenerate and r.effect_size == -math.inf and math.isnan(r.p_value)
    same = compare([4.0, 4.0], [4.0, 4.0])
    assert not same.degenerate and same.effect_size == 0.0 and same.p_value == 1.0


def test_too_few_values():
    with pytest.raises(ValueError):
        compare([1.0], [1.0, 2.0])


def test_aggregate_orders_rows_and_checks_keys():
    sets = [SeedMetricSet(s, {"zeta": float(s), "nll": 1.0 + s, "top1_acc": 0.5}) for s in range(3)]
    rows = aggregate(sets)
    assert [r.metric for r in rows] == ["top1_acc", "nll", "zeta"]
    assert rows[1].mean == 2.0 and rows[1].sd == pytest.approx(1.0)
    assert aggregate(sets[:1])[0].sd is None
    with pytest.raises(ValueError):
        aggregate([sets[0], SeedMetricSet(9, {"nll": 1.0})])


def test_markdown_and_csv_render():
    rows = [compare([1, 2, 3], [2, 3, 5], "nll"), compare([1, 1], [2, 2], "ece")]
    md = to_markdown(rows)
    assert md.splitlines()[0].startswith("| | SGD | PerpGrad | Effect Size")
    assert "| Loss |" in md and "(degenerate)" in md
    csv_text = to_csv(rows)
    assert csv_text.splitlines()[0].startswith("metric,mean_a,mean_b")
    assert len(csv_text.splitlines()) == 3
