import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condmeas.errors import InvalidInput
from condmeas.harness import (
    EstimatorSummary,
    convergence_check,
    derive_seed,
    run_batches,
    run_trials,
    trial_rng,
)


def constant(rng):
    return 1.0


def bernoulli(rng):
    return float(rng.random() < 0.25)


def flaky(rng):
    if rng.random() < 0.1:
        raise ValueError("boom")
    return rng.normal()


def batch_uniform(rng, size):
    return rng.random(size)


def test_trial_streams_are_reproducible():
    a = trial_rng(5, 3).random(4)
    assert np.array_equal(a, trial_rng(5, 3).random(4))
    assert not np.array_equal(a, trial_rng(5, 4).random(4))
    assert derive_seed(5, 1) != derive_seed(5, 2)


def test_constant_experiment():
    s = run_trials(constant, 50, 1, workers=1)
    assert s.mean == 1 and s.variance == 0 and s.n == 50


def test_bernoulli_mean():
    s = run_trials(bernoulli, 100_000, 11, workers=1, target=0.25)
    assert abs(s.mean - 0.25) <= 3 * 0.00137
    assert abs(s.z) <= 3


def test_failures_are_counted():
    s = run_trials(flaky, 400, 2, workers=1)
    assert s.failures > 0 and s.n + s.failures == 400


def test_worker_independence():
    one = run_trials(flaky, 300, 9, workers=1, keep_values=True)
    two = run_trials(flaky, 300, 9, workers=2, keep_values=True)
    assert np.array_equal(one.values, two.values)
    assert one.mean == two.mean and one.m2 == two.m2 and one.failures == two.failures
    b1 = run_batches(batch_uniform, 2500, 4, batch_size=1000, workers=1)
    b2 = run_batches(batch_uniform, 2500, 4, batch_size=1000, workers=2)
    assert np.array_equal(b1, b2) and len(b1) == 2500


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_merge_is_exact_associative_commutative(a, b, c):
    sa, sb, sc = (EstimatorSummary.from_values(v) for v in (a, b, c))
    full = EstimatorSummary.from_values(a + b + c)
    left = sa.merge(sb).merge(sc)
    right = sa.merge(sb.merge(sc))
    swap = sc.merge(sa).merge(sb)
    for s in (left, right, swap):
        assert s.n == full.n
        assert s.mean == pytest.approx(full.mean, rel=1e-12, abs=1e-9)
        assert s.m2 == pytest.approx(full.m2, rel=1e-9, abs=1e-6)
        assert s.min == full.min and s.max == full.max


def test_merge_of_disjoint_runs_equals_joint_run():
    s = EstimatorSummary.from_values(np.arange(10.0))
    t = EstimatorSummary.from_values(np.arange(10.0, 30.0))
    u = EstimatorSummary.from_values(np.arange(30.0))
    m = s.merge(t)
    assert m.mean == pytest.approx(u.mean, rel=1e-12) and m.variance == pytest.approx(u.variance, rel=1e-12)
    assert m.stderr == pytest.approx(math.sqrt(u.variance / 30))


def test_summary_json_schema():
    doc = EstimatorSummary.from_values([1.0, 2.0, 3.0], target=2.0).to_json("x", {"a": 1})
    assert set(doc) == {"experiment", "params", "n", "failures", "mean", "stderr", "target", "z"}
    assert doc["z"] == 0


def test_convergence_check():
    vals = {k: np.full(20, 2.0) for k in (1, 2, 3)}
    rep = convergence_check(vals, 2.0, [0.1, 0.5])
    assert np.all(rep.fractions == 0) and all(rep.monotone)
    rng = np.random.default_rng(0)
    vals = {k: 1 + rng.normal(0, 2.0**-k, 500) for k in (1, 2, 3, 4)}
    rep = convergence_check(vals, 1.0, [0.05, 0.2])
    assert all(rep.strictly_decreasing) and rep.median_decreasing
    assert np.all((rep.fractions >= 0) & (rep.fractions <= 1))
    with pytest.raises(InvalidInput):
        convergence_check({1: [1.0]}, 1.0, [0.1])
    assert len(list(rep.rows())) == 8


def test_run_trials_rejects_zero():
    with pytest.raises(InvalidInput):
        run_trials(constant, 0, 1)
