import math

import numpy as np
import pytest
from scipy import stats

from jumpldp.measure import ControlFunction, MarkMeasure, TimeGrid
from jumpldp.prm import (DegenerateWeightError, PointPattern, SeededRng, events_from_counts, likelihood_ratio,
                         log_likelihood_ratio_counts, sample_bin_counts, sample_controlled_prm, sample_prm,
                         sample_small_noise_prm)

N = 10_000


def totals(sampler, n=N):
    return np.array([len(sampler(SeededRng(s))) for s in range(n)])


def test_zero_mass_is_empty():
    p = sample_prm(MarkMeasure.single(0.0), TimeGrid(1.0, 4), SeededRng(1))
    assert len(p) == 0


def test_requires_cells():
    with pytest.raises(ValueError):
        sample_prm(MarkMeasure([]), TimeGrid(1.0, 4), SeededRng(1))


def test_prm_mean_mass5():
    m = totals(lambda r: sample_prm(MarkMeasure.single(5.0), TimeGrid(1.0, 8), r))
    assert abs(m.mean() - 5) <= 3 * math.sqrt(5 / N)


def test_prm_cells_independent():
    marks = MarkMeasure([("a", 2.0), ("b", 3.0)])
    grid = TimeGrid(1.0, 4)
    counts = np.array([sample_prm(marks, grid, SeededRng(s)).bin_counts(grid, 2).sum(axis=0) for s in range(N)])
    assert abs(np.corrcoef(counts.T)[0, 1]) < 0.03
    np.testing.assert_allclose(counts.mean(axis=0), [2, 3], atol=3 * math.sqrt(3 / N))


def test_controlled_zero_and_theta():
    grid = TimeGrid(1.0, 8)
    five = MarkMeasure.single(5.0)
    zero = ControlFunction.constant(grid, five, 0.0)
    assert all(len(sample_controlled_prm(zero, SeededRng(s))) == 0 for s in range(50))
    g2 = ControlFunction.constant(grid, five, 2.0)
    m = totals(lambda r: sample_controlled_prm(g2, r))
    assert abs(m.mean() - 10) <= 3 * math.sqrt(10 / N)


def test_controlled_half_interval():
    grid = TimeGrid(1.0, 2)
    g = ControlFunction(grid, MarkMeasure.single(4.0), [[2.0], [1.0]])
    c = np.array([sample_controlled_prm(g, SeededRng(s)).bin_counts(grid, 1)[:, 0] for s in range(N)])
    assert abs(c[:, 0].mean() - 4) <= 3 * math.sqrt(4 / N)
    assert abs(c[:, 1].mean() - 2) <= 3 * math.sqrt(2 / N)


def test_literal_thinning_matches_law():
    grid = TimeGrid(1.0, 4)
    g = ControlFunction(grid, MarkMeasure([("a", 1.0), ("b", 2.0)]), [[0.5, 2], [1, 0], [3, 1], [0.2, 0.7]])
    lam = g.bin_intensity()
    c = np.array([sample_controlled_prm(g, SeededRng(s), literal_thinning=True).bin_counts(grid, 2)
                  for s in range(N)])
    se = np.sqrt(np.maximum(lam, 1e-12) / N)
    assert np.all(np.abs(c.mean(axis=0) - lam) <= 3.5 * se + 1e-12)
    # variance = mean for Poisson counts
    var_se = np.sqrt(np.maximum(lam + 2 * lam**2, 1e-12) / N)
    assert np.all(np.abs(c.var(axis=0) - lam) <= 4 * var_se + 1e-12)
    assert np.all(c[:, 1, 1] == 0)


def test_small_noise_means():
    grid = TimeGrid(1.0, 4)
    m1 = MarkMeasure.single(1.0)
    one = ControlFunction.constant(grid, m1, 1.0)
    a = sample_small_noise_prm(1.0, one, SeededRng(9))
    b = sample_controlled_prm(one, SeededRng(9))
    assert np.array_equal(a.times, b.times)
    g = ControlFunction.constant(grid, MarkMeasure.single(2.0), 1.0)
    m = totals(lambda r: sample_small_noise_prm(0.1, g, r))
    assert abs(m.mean() - 20) <= 3 * math.sqrt(20 / N)
    g2 = ControlFunction.constant(grid, m1, 2.0)
    m = totals(lambda r: sample_small_noise_prm(0.5, g2, r))
    assert abs(m.mean() - 4) <= 3 * math.sqrt(4 / N)
    with pytest.raises(ValueError):
        sample_small_noise_prm(0.0, g2, SeededRng(0))


def test_likelihood_ratio_examples():
    grid = TimeGrid(1.0, 4)
    five = MarkMeasure.single(5.0)
    g1 = ControlFunction.constant(grid, five, 1.0)
    p = sample_prm(five, grid, SeededRng(2))
    assert likelihood_ratio(p, g1) == 1.0
    g2 = ControlFunction.constant(grid, five, 2.0)
    empty = PointPattern.empty(1.0)
    # dP/dP^g: P(empty) / P^g(empty) = e^{-5} / e^{-10}
    assert abs(likelihood_ratio(empty, g2) - math.exp(5)) < 1e-9
    one = PointPattern([0.3], [0], 1.0)
    assert abs(likelihood_ratio(one, g2) - math.exp(5) / 2) < 1e-9
    assert abs(likelihood_ratio(one, g2) - 74.2066) < 1e-3
    # the reciprocal is the density of the tilted law
    assert abs(1 / likelihood_ratio(empty, g2) - 0.006738) < 1e-6


def test_degenerate_weight():
    grid = TimeGrid(1.0, 2)
    g = ControlFunction(grid, MarkMeasure.single(1.0), [[0.0], [1.0]])
    with pytest.raises(DegenerateWeightError):
        likelihood_ratio(PointPattern([0.2], [0], 1.0), g)
    assert likelihood_ratio(PointPattern([0.7], [0], 1.0), g) == pytest.approx(math.exp(-0.5))


def test_determinism_and_children():
    g = ControlFunction.constant(TimeGrid(1.0, 16), MarkMeasure([("a", 3.0), ("b", 1.0)]), 1.5)
    a = sample_controlled_prm(g, SeededRng(123))
    b = sample_controlled_prm(g, SeededRng(123))
    assert a.times.tobytes() == b.times.tobytes() and a.cells.tobytes() == b.cells.tobytes()
    r = SeededRng(5)
    assert r.child(1).spawn_key == (1,) and r.child(1).child(2).spawn_key == (1, 2)
    x = r.child(0).generator.random(4)
    y = SeededRng(5).child(0).generator.random(4)
    assert np.array_equal(x, y)
    assert not np.array_equal(x, r.child(1).generator.random(4))
    with pytest.raises(ValueError):
        SeededRng(-1)


def test_pattern_json_and_validation():
    p = PointPattern([0.1, 0.5], [0, 1], 1.0)
    assert p.to_json() == [{"t": 0.1, "cell": 0}, {"t": 0.5, "cell": 1}]
    q = PointPattern.from_json(p.to_json(), 1.0)
    assert np.array_equal(q.times, p.times)
    with pytest.raises(ValueError):
        PointPattern([0.5, 0.1], [0, 0], 1.0)
    with pytest.raises(ValueError):
        PointPattern([1.5], [0], 1.0)


def test_superposition():
    grid = TimeGrid(1.0, 4)
    m1, m2 = MarkMeasure.single(1.5), MarkMeasure.single(2.5)
    merged = np.array([len(sample_prm(m1, grid, SeededRng(s)).merge(sample_prm(m2, grid, SeededRng(s + N))))
                       for s in range(N)])
    direct = totals(lambda r: sample_prm(MarkMeasure.single(4.0), grid, r))
    assert abs(merged.mean() - 4) <= 3 * math.sqrt(4 / N)
    assert abs(merged.var() - 4) <= 0.3
    # two-sample chi-square on the count histograms
    k = np.arange(13)
    h1 = np.array([(np.minimum(merged, 12) == i).sum() for i in k])
    h2 = np.array([(np.minimum(direct, 12) == i).sum() for i in k])
    keep = (h1 + h2) > 0
    assert stats.chi2_contingency(np.vstack([h1[keep], h2[keep]]))[1] > 0.001


def test_reweighting_identity():
    grid = TimeGrid(1.0, 4)
    marks = MarkMeasure([("a", 1.0), ("b", 0.5)])
    g = ControlFunction(grid, marks, [[2.0, 0.5], [1.5, 1.0], [0.6, 1.8], [1.2, 0.9]])
    base = ControlFunction.constant(grid, marks, 1.0)
    n = 40_000
    c_t = sample_bin_counts(g, SeededRng(1), n)
    c_b = sample_bin_counts(base, SeededRng(2), n)
    w = np.exp(log_likelihood_ratio_counts(c_t, g))
    F = lambda c: np.minimum(c[:, :, 0].sum(axis=1), 3) + 0.5 * (c[:, :2, 1].sum(axis=1) > 0)
    a, b = F(c_t) * w, F(c_b)
    se = math.sqrt(a.var() / n + b.var() / n)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_events_from_counts():
    grid = TimeGrid(1.0, 4)
    counts = np.array([[[1, 0], [0, 2], [0, 0], [1, 0]], [[0, 0], [0, 0], [0, 0], [0, 0]]])
    t, c = events_from_counts(grid, counts, SeededRng(0))
    assert t.shape == (2, 4)
    assert np.all(np.diff(t[0]) >= 0) and np.all(np.isinf(t[1]))
    assert list(c[0]) == [0, 1, 1, 0] and np.all(c[1] == -1)
    assert 0 <= t[0, 0] < 0.25 and 0.25 <= t[0, 1] < 0.5 and 0.75 <= t[0, 3] <= 1.0
