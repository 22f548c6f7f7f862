import math

import numpy as np
import pytest

from condmeas.brownian.cubes import (
    Density,
    HitProbTable,
    WeightedCubeMeasure,
    calibrate_hit_probs,
    calibrate_hit_tables,
    conditional_measure_sample,
    cube_masses,
    path_hits,
    visited_cubes,
)
from condmeas.brownian.occupation import (
    boxcount_scaling,
    first_moment,
    occupation_measure,
    occupation_via_condmeasure,
    second_moment_ball,
)
from condmeas.brownian.paths import (
    FocusedPath,
    Trajectory,
    hit_prob_ball,
    simulate_focused,
    simulate_path,
)
from condmeas.brownian.wos import wos_ball_hits, wos_joint_ball_hit, wos_nested_box_hits
from condmeas.dyadic import DyadicCube, cube_of_point
from condmeas.errors import InvalidInput, MissingCubeError
from condmeas.harness import trial_rng
from condmeas.potential import DiscreteMeasure
from condmeas.regions import Ball, Box


def test_simulate_path_determinism_and_stop():
    a = simulate_path(3, d=3, dt=1e-3, escape_radius=5.0)
    b = simulate_path(3, d=3, dt=1e-3, escape_radius=5.0)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.times, b.times)
    assert np.all(a.positions[0] == 0)
    norms = np.linalg.norm(a.positions, axis=1)
    assert norms[-1] > 5.0 and np.all(norms[:-1] <= 5.0)
    far = simulate_path(4, d=3, dt=1e-2, escape_radius=50.0)
    assert np.linalg.norm(far.positions[-1]) > 50


def test_simulate_path_validation():
    with pytest.raises(InvalidInput):
        simulate_path(1, d=3, dt=0.0)
    with pytest.raises(InvalidInput):
        simulate_path(1, d=3, escape_radius=-1.0)
    with pytest.raises(InvalidInput):
        simulate_path(1, d=2)
    with pytest.raises(InvalidInput):
        simulate_path(1, d=3, escape_radius=1.0, start=(2.0, 0.0, 0.0))


def test_second_moment_of_increments():
    sq = np.empty(10_000)
    for i in range(len(sq)):
        tr = simulate_path((17, i), d=3, dt=1e-2, escape_radius=1e6, max_time=1.0)
        sq[i] = float(tr.positions[-1] @ tr.positions[-1])
        assert tr.times[-1] == pytest.approx(1.0)
    se = sq.std(ddof=1) / math.sqrt(len(sq))
    assert abs(sq.mean() - 3.0) <= 3 * se


def test_trajectory_dump_roundtrip(tmp_path):
    tr = simulate_path(8, d=3, dt=1e-3, escape_radius=2.0)
    tr.save(tmp_path / "t.bin")
    back = Trajectory.load(tmp_path / "t.bin")
    assert np.array_equal(back.positions, tr.positions) and np.array_equal(back.times, tr.times)
    assert back.dt == tr.dt and back.escape_radius == 2.0 and back.seed == 8
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(InvalidInput):
        Trajectory.load(tmp_path / "bad.bin")


def test_hit_prob_ball_examples():
    assert hit_prob_ball((2, 0, 0), 0.5, 3) == pytest.approx(0.25)
    assert hit_prob_ball((2, 0, 0, 0), 0.5, 4) == pytest.approx(0.0625)
    assert hit_prob_ball((0.1, 0, 0), 0.5, 3) == 1.0


def test_wos_examples():
    res = wos_ball_hits(1, [(2.0, 0, 0)], [0.5], 20_000)
    f = res.frequencies()[0]
    assert abs(f - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / 20_000)
    assert res.bias_bound == pytest.approx(2.5 / 1e4)
    assert wos_joint_ball_hit(3, [((0.0, 0.0, 0.0), 0.3), ((3.0, 0, 0), 0.1)], 3).tolist()[0]
    with pytest.raises(InvalidInput):
        wos_ball_hits(1, [(1.0, 0, 0), (1.2, 0, 0)], [0.2, 0.2], 10)


def test_escape_radius_doubling_within_bias_bound():
    n = 20_000
    a = wos_ball_hits(5, [(2.0, 0, 0)], [0.5], n, far_radius=50.0)
    b = wos_ball_hits(5, [(2.0, 0, 0)], [0.5], n, far_radius=100.0)
    diff = abs(a.frequencies()[0] - b.frequencies()[0])
    assert diff <= a.bias_bound + 3 * math.sqrt(a.bias_bound / n)


def test_nested_box_hits_are_monotone():
    boxes = [cube_of_point((1.5, 0.0, 0.0), k).box() for k in (1, 2, 3)]
    hits = wos_nested_box_hits(2, boxes, 5000).hits
    assert np.all(hits[:, 1] <= hits[:, 0]) and np.all(hits[:, 2] <= hits[:, 1])
    with pytest.raises(InvalidInput):
        wos_nested_box_hits(2, boxes[::-1], 10)


def _fake_path(samples, dt=1e-3):
    return Trajectory(np.arange(len(samples)) * dt, np.asarray(samples, float), dt, 100.0)


def test_visited_cubes_single_and_bridged():
    tr = _fake_path([[1.1, 1.1, 1.1], [1.12, 1.1, 1.1], [1.15, 1.2, 1.1]])
    assert visited_cubes(tr, 1) == {DyadicCube(1, (2, 2, 2))}
    jump = _fake_path([[1.05, 0.05, 0.05], [1.05 + 3 * 0.25, 0.05, 0.05]], dt=0.01)
    cubes = visited_cubes(jump, 2)
    idx = np.array(sorted(q.index for q in cubes))
    assert len(cubes) >= 4
    # the bridged set is connected under Chebyshev adjacency
    seen, todo = {tuple(idx[0])}, [tuple(idx[0])]
    pool = {tuple(r) for r in idx}
    while todo:
        c = todo.pop()
        for o in pool:
            if o not in seen and max(abs(a - b) for a, b in zip(o, c)) <= 1:
                seen.add(o)
                todo.append(o)
    assert seen == pool
    region = Box.parse("1:1.5,0:1,0:1")
    assert all(region.contains(q.center) for q in visited_cubes(jump, 2, region))


def test_cube_hit_frequency_between_ball_sandwich():
    q = DyadicCube(2, (6, 0, 0))
    tab = calibrate_hit_probs(4, 2, q.box(), 10_000, dt=1e-3)
    c = q.center
    lo, hi = hit_prob_ball(c, q.side / 2, 3), hit_prob_ball(c, q.diam / 2, 3)
    p = tab.prob(q)
    se = math.sqrt(p * (1 - p) / tab.trials)
    assert lo - 3 * se <= p <= hi + 3 * se


def test_calibration_contracts(tmp_path):
    region = Box.parse("2:2.5,0:0.5,0:0.5")
    a = calibrate_hit_probs(9, 3, region, 1000, dt=1e-3)
    b = calibrate_hit_probs(9, 3, region, 1000, dt=1e-3)
    assert np.array_equal(a.counts, b.counts) and a.table_id == b.table_id
    assert np.all((a.p > 0) & (a.p <= 1))
    never = a.flagged
    assert np.all(a.p[never] == 0.5 / 1000)
    a.to_csv(tmp_path / "tab.csv")
    back = HitProbTable.from_csv(tmp_path / "tab.csv", region)
    assert np.array_equal(back.counts, a.counts)
    with pytest.raises(InvalidInput):
        calibrate_hit_probs(9, 3, region, 999)
    with pytest.raises(InvalidInput):
        calibrate_hit_probs(9, 3, Box.parse("-1:1,-1:1,-1:1"), 1000)


def test_floor_applies_to_unreachable_cube():
    counts = np.zeros(8, dtype=np.int64)
    counts[0] = 3
    tab = HitProbTable(1, Box.parse("1:2,0:1,0:1"), counts, 1000)
    assert tab.flagged.sum() == 7 and tab.p[1] == 0.0005


def test_conditional_measure_sample_contract():
    region = Box.parse("1:2,0:1,0:1")
    counts = np.full(64, 100, dtype=np.int64)
    tab = HitProbTable(2, region, counts, 1000)
    x = (1.3, 0.1, 0.6)
    atom = DiscreteMeasure([x], [1.0])
    empty = conditional_measure_sample(set(), atom, tab)
    assert isinstance(empty, WeightedCubeMeasure) and empty.total() == 0
    q = cube_of_point(x, 2)
    one = conditional_measure_sample({q, DyadicCube(2, (7, 3, 3))}, atom, tab)
    assert one.entries == {q: pytest.approx(10.0)}
    with pytest.raises(MissingCubeError):
        conditional_measure_sample({DyadicCube(2, (0, 0, 0))}, atom, tab)
    dens = Density(lambda y: np.ones(len(y)), region)
    full = conditional_measure_sample({q}, dens, tab)
    assert full.entries[q] == pytest.approx(4**-3 / 0.1)
    assert cube_masses(dens, tab.grid).sum() == pytest.approx(1.0)


def test_unbiasedness_small():
    region = Box.parse("1:2,0:1,0:1")
    tab = calibrate_hit_tables(31, [1], region, 3000, dt=1e-3, keep_hits=True)[1]
    dens = Density(lambda y: np.ones(len(y)), region)
    m = cube_masses(dens, tab.grid)
    w = m / tab.p
    vals = []
    for i in range(3000):
        rng = trial_rng(32, i)
        h = path_hits(simulate_focused(rng, 3, 1e-3, 50.0, region), [1], region, rng)[1]
        vals.append(w[h].sum())
    vals = np.array(vals)
    se = math.hypot(vals.std(ddof=1) / math.sqrt(len(vals)), tab.calibration_stderr(m))
    assert abs(vals.mean() - 1.0) <= 3 * se


def test_second_moment_kernel_identity():
    """Mean of C_k(nu)(X)^2 against the double sum of table ratios p_QR / (p_Q p_R)."""
    region = Box.parse("1:2,0:1,0:1")
    q1, q2 = DyadicCube(2, (4, 0, 0)), DyadicCube(2, (7, 3, 3))
    nu = DiscreteMeasure([q1.center, q2.center], [0.5, 0.5])
    tabs = calibrate_hit_tables(41, [2], region, 4000, dt=1e-3, joint_cubes=[q1, q2])
    tab = tabs[2]
    w = np.array([0.5, 0.5])
    p = np.array([tab.prob(q1), tab.prob(q2)])
    J = np.array([[tab.joint_prob(a, b) for b in (q1, q2)] for a in (q1, q2)])
    kernel = float(w @ (J / np.outer(p, p)) @ w)
    f1, f2 = tab.grid.flat_of(q1), tab.grid.flat_of(q2)
    vals = []
    for i in range(4000):
        rng = trial_rng(42, i)
        h = set(path_hits(simulate_focused(rng, 3, 1e-3, 50.0, region), [2], region, rng)[2].tolist())
        vals.append((0.5 * (f1 in h) / p[0] + 0.5 * (f2 in h) / p[1]) ** 2)
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    # the table enters through p^-2, so allow its own sampling error as well
    assert abs(vals.mean() - kernel) <= 3 * se * math.sqrt(2)


def test_occupation_measure_examples():
    tr = _fake_path([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]], dt=0.5)
    res = occupation_measure(tr, [Box.parse("5:6,5:6,5:6"), Box.parse("-1:1,-1:1,-1:1"), Box.parse("0.15:1,-1:1,-1:1")])
    assert res.times[0] == 0 and res.times[1] == pytest.approx(1.0) and res.times[2] == pytest.approx(0.25)
    assert np.all(res.bias_bound > 0)


def test_moment_formulas():
    assert first_moment(Ball((0, 0, 0), 1.0), 3) == pytest.approx(1.0)
    assert first_moment(Ball((0, 0, 0, 0), 1.0), 4) == pytest.approx(0.5)
    assert second_moment_ball(1.0, 3) == pytest.approx(5 / 3, rel=1e-10)
    # product rule on a box against a much finer rule
    A = Box.parse("1:2,1:2,1:2")
    assert first_moment(A, 3, n_sub=4) == pytest.approx(first_moment(A, 3, n_sub=32), rel=1e-8)


def test_second_moment_against_six_dimensional_mc():
    rng = np.random.default_rng(12)
    n = 400_000

    def ball(size):
        v = rng.normal(size=(size, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * rng.random((size, 1)) ** (1 / 3)

    x, y = ball(n), ball(n)
    vol = 4 * math.pi / 3
    c = 1 / (2 * math.pi)
    f = 2 * c * c * vol * vol / (np.linalg.norm(x, axis=1) * np.linalg.norm(x - y, axis=1))
    se = f.std() / math.sqrt(n)
    assert abs(f.mean() - second_moment_ball(1.0, 3)) <= 4 * se


def test_occupation_via_condmeasure_empty_and_scaling():
    A = Box.parse("1:2,1:2,1:2")
    tab = HitProbTable(1, A, np.full(8, 500, dtype=np.int64), 1000)
    assert occupation_via_condmeasure(set(), 1, A, tab) == 0
    full = {DyadicCube(1, (i, j, k)) for i in (2, 3) for j in (2, 3) for k in (2, 3)}
    val = occupation_via_condmeasure(full, 1, A, tab)
    assert val == pytest.approx(2 * first_moment(A, 3), rel=1e-4)


def test_boxcount_conventions():
    res = boxcount_scaling([(1, i) for i in range(10)], [0, 20, 40], d=3, dt=1e-2)
    assert res.N_values == [20.0, 40.0]
    assert res.per_path.shape == (10, 2) and np.all(res.per_path > 0)
    with pytest.raises(InvalidInput):
        boxcount_scaling([1], [40, 20])
    r4 = boxcount_scaling([(2, i) for i in range(20)], [50], d=4, dt=1e-2)
    r3 = boxcount_scaling([(2, i) for i in range(20)], [50], d=3, dt=1e-2)
    assert r4.mean[0] != r3.mean[0]


def test_focused_path_matches_plain_occupation_in_mean():
    ball = Ball((0.0, 0.0, 0.0), 1.0)
    vals = [occupation_measure(simulate_focused(trial_rng(3, i), 3, 1e-3, 20.0, ball), [ball]).times[0]
            for i in range(1500)]
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    # truncation at radius 20 removes about (1/20) * 2/3 of the mean
    assert abs(vals.mean() - (1 - 2 / 3 / 20)) <= 3 * se + 0.02
    fp = simulate_focused(trial_rng(3, 0), 3, 1e-3, 20.0, ball)
    assert isinstance(fp, FocusedPath) and fp.euler_steps > 0
