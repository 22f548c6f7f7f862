import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condmeas import treeperc as tp
from condmeas.errors import DomainError, InvalidInput, ResourceError

SQ2 = math.sqrt(2)


def test_survival_prob_examples():
    assert tp.survival_prob(2, 0.5) == 0.0
    assert tp.survival_prob(2, 2**-0.5) == pytest.approx(2 * SQ2 - 2, abs=1e-13)
    assert tp.survival_prob(2, 1.0) == 1.0
    with pytest.raises(InvalidInput):
        tp.survival_prob(1, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.floats(0.05, 1.0))
def test_survival_is_the_smallest_fixed_point(m, p):
    s = tp.survival_prob(m, p)
    q = 1 - s
    assert abs(q - (1 - p + p * q) ** m) < 1e-10
    assert 0 <= s <= 1
    grid = np.linspace(0, q, 200, endpoint=False)
    # below the smallest fixed point the generating function stays above the diagonal
    assert np.all((1 - p + p * grid) ** m - grid > -1e-12)


def test_cylinder_and_F_examples():
    p = 2**-0.5
    assert tp.cylinder_hit_prob(0, 2, p) == pytest.approx(2 * SQ2 - 2)
    assert tp.cylinder_hit_prob(1, 2, p) == pytest.approx(2 - SQ2, abs=1e-13)
    assert tp.cylinder_hit_prob(5, 2, 1.0) == 1.0
    assert tp.F_tree("0", "1", 2, p) == 1.0
    assert tp.F_tree("000", "001", 2, p) == pytest.approx(2.0)
    assert tp.F_tree("0", "01", 2, p) == pytest.approx(1 + SQ2 / 2)
    assert tp.F_tree("01", "01", 2, p) == pytest.approx(1 / tp.cylinder_hit_prob(2, 2, p))


def test_sampling_examples():
    full = tp.sample_percolation(1, tp.TreeSpec(2, 1e-12, 4), 5)
    assert full.spec.p == pytest.approx(1.0)
    spec = tp.TreeSpec(2, 0.5, 6)
    a = tp.sample_percolation(3, spec, 100)
    b = tp.sample_percolation(3, spec, 100)
    assert all(np.array_equal(x, y) for x, y in zip(a.open_bits, b.open_bits))
    assert np.array_equal(a.survival, b.survival)
    big = tp.sample_percolation(4, spec, 100_000)
    f = big.hit(1)[:, 0].mean()
    target = 2 - SQ2
    assert abs(f - target) <= 3 * math.sqrt(target * (1 - target) / 100_000)


def test_all_open_tree_is_hit_everywhere():
    spec = tp.TreeSpec(2, 1.0, 3)
    s = tp.PercolationSample(spec, [np.ones((1, 2**j), bool) for j in (1, 2, 3)], np.ones((1, 8), bool))
    assert all(s.hit(j).all() for j in range(4))


def test_hit_requires_alive_and_survival():
    spec = tp.TreeSpec(2, 0.5, 2)
    bits = [np.array([[True, False]]), np.array([[True, True, True, True]])]
    surv = np.array([[False, True, True, True]])
    s = tp.PercolationSample(spec, bits, surv)
    assert s.alive(2).tolist() == [[True, True, False, False]]
    assert s.hit(2).tolist() == [[False, True, False, False]]
    assert s.hit(1).tolist() == [[True, False]]
    assert s.survives().tolist() == [True]


def test_conditional_and_cascade_measures():
    spec = tp.TreeSpec(2, 0.5, 3)
    nu = tp.TreeMeasure.uniform(2, 3)
    s = tp.sample_percolation(0, spec, 1)
    dead = tp.PercolationSample(spec, [np.zeros((1, 2**j), bool) for j in (1, 2, 3)], np.zeros((1, 8), bool))
    assert tp.conditional_measure_tree(dead, nu, 2).total() == 0
    cm = tp.conditional_measure_tree(s, nu, 2)
    for v, mass in cm.entries.items():
        assert mass == pytest.approx(0.25 / tp.cylinder_hit_prob(2, 2, spec.p))
    with pytest.raises(InvalidInput):
        tp.conditional_measure_tree(s, nu, 4)
    one = tp.TreeSpec(2, 1e-15, 3)
    allopen = tp.sample_percolation(1, one, 1)
    mu = tp.cascade_measure(allopen, nu, 2)
    assert mu.total() == pytest.approx(1.0) and len(mu.entries) == 4
    with pytest.raises(DomainError):
        tp.conditional_masses(tp.sample_percolation(1, tp.TreeSpec(2, 1.0, 2), 1), tp.TreeMeasure.uniform(2, 2), 1)


def test_brute_force_examples():
    spec = tp.TreeSpec(2, 0.5, 3)
    p, s = spec.p, spec.s
    assert tp.brute_force_joint(spec, [tp.open_event("0")]) == pytest.approx(p, abs=1e-14)
    assert tp.brute_force_joint(spec, [tp.hit_event("0")]) == pytest.approx(2 - SQ2, abs=1e-14)
    both = tp.brute_force_joint(spec, [tp.hit_event("0"), tp.hit_event("1")])
    assert both == pytest.approx((p * s) ** 2, abs=1e-14)
    assert both == pytest.approx(0.3431458, abs=1e-7)
    with pytest.raises(ResourceError):
        tp.brute_force_joint(tp.TreeSpec(2, 0.5, 4), [tp.hit_event("0")])


@pytest.mark.parametrize("alpha", [0.5, 0.8])
def test_unbiasedness_and_second_moment_exact(alpha):
    spec = tp.TreeSpec(2, alpha, 3)
    nu = tp.TreeMeasure(2, np.arange(1, 9) / 36)
    for k in (1, 2, 3):
        e = tp.brute_force_expectation(spec, lambda c, k=k: c.conditional_total(nu, k))
        assert abs(e - 1.0) <= 1e-12
    for k in (1, 2):
        for n in (1, 2):
            lhs = tp.second_moment_exact(spec, nu, k, tp.TreeMeasure.uniform(2, 3), n)
            rhs = tp.second_moment_kernel(spec, nu, k, tp.TreeMeasure.uniform(2, 3), n)
            assert abs(lhs - rhs) <= 1e-12


def test_hand_checked_second_moment():
    spec = tp.TreeSpec(2, 0.5, 2)
    nu = tp.TreeMeasure.uniform(2, 2)
    p, s = spec.p, spec.s
    exact = 1 / (2 * p * s) + 0.5
    assert exact == pytest.approx(1.3535534, abs=1e-7)
    assert tp.second_moment_exact(spec, nu, 1) == pytest.approx(exact, abs=1e-13)
    assert tp.second_moment_kernel(spec, nu, 1) == pytest.approx(0.5 * 1 + 2 * 0.25 / (p * s), abs=1e-13)


def test_cascade_gap_formula_matches_enumeration_and_decays():
    spec = tp.TreeSpec(2, 0.5, 3)
    nu = tp.TreeMeasure.uniform(2, 3)
    vals = []
    for k in (1, 2, 3):
        exact = tp.brute_force_expectation(
            spec, lambda c, k=k: (c.cascade_total(nu, k) - c.conditional_total(nu, k)) ** 2)
        formula = tp.cascade_gap_formula(spec, nu, k)
        assert abs(exact - formula) <= 1e-12
        vals.append(formula)
    ratios = np.array(vals[1:]) / np.array(vals[:-1])
    assert np.allclose(ratios, 1 / (2 * spec.p))


def test_martingale_step_exact():
    spec = tp.TreeSpec(3, 0.7, 4)
    nu = tp.TreeMeasure(3, np.random.default_rng(1).random(81))
    s = tp.sample_percolation(2, spec, 20)
    for i in range(20):
        for k in range(3):
            cond, mu = tp.martingale_step(s, nu, k, index=i)
            assert cond == pytest.approx(mu, rel=1e-12, abs=1e-12)


def test_tree_measure_csv(tmp_path):
    nu = tp.TreeMeasure(3, np.arange(9.0))
    nu.to_csv(tmp_path / "nu.csv")
    text = (tmp_path / "nu.csv").read_text().splitlines()
    assert text[0] == "path,mass" and text[1].startswith("00,")
    back = tp.TreeMeasure.from_csv(tmp_path / "nu.csv", 3)
    assert np.array_equal(back.masses, nu.masses)
    assert np.allclose(nu.at_depth(1), [3, 12, 21])
    with pytest.raises(InvalidInput):
        tp.TreeMeasure(2, np.ones(3))
