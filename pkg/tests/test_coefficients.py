import math

import numpy as np
import pytest

from jumpldp.coefficients import (DiffusionSpec, DriftSpec, SamplerConfig, check_hypothesis3, check_linear_growth,
                                  check_lipschitz_aggregate, check_semimonotone, estimate_G_norms, eval_diffusion,
                                  eval_drift)
from jumpldp.measure import MarkMeasure
from jumpldp.semigroup import SpectralGenerator

S1 = SpectralGenerator.scalar([-1.0])


def test_eval_drift_examples():
    assert np.array_equal(eval_drift(DriftSpec("zero"), S1, [3.0]), [0.0])
    assert np.array_equal(eval_drift(DriftSpec("linear", c=-1.0), S1, [2.0]), [-2.0])
    v = eval_drift(DriftSpec("tanh-monotone", a=1.0, b=1.0), S1, [1.0])[0]
    assert abs(v - (-1 - math.tanh(1))) < 1e-15 and abs(v + 1.761594) < 1e-6


def test_eval_diffusion_examples():
    e1 = np.eye(3)[0]
    x = np.array([0.3, -2.0, 5.0])
    assert np.all(eval_diffusion(DiffusionSpec.additive(0.0, [1.0], [e1]), 0.0, x, 0) == 0)
    assert np.array_equal(eval_diffusion(DiffusionSpec.additive(1.0, [1.0], [e1]), 0.0, x, 0), e1)
    aff = DiffusionSpec(1.0, [1.0], [e1], "affine-bounded", 1.0)
    np.testing.assert_allclose(eval_diffusion(aff, 0.0, e1, 0), 1.5 * e1, rtol=0, atol=1e-15)
    with pytest.raises(IndexError):
        eval_diffusion(aff, 0.0, e1, 1)


def test_semimonotone_examples():
    r = check_semimonotone(DriftSpec("linear", c=-1.0), S1)
    assert r.passed and abs(r.value + 1) < 1e-12
    r = check_semimonotone(DriftSpec("tanh-monotone", a=0.7, b=2.0), S1)
    assert r.passed and r.value <= -0.7 + 1e-9
    r = check_semimonotone(DriftSpec("linear", c=1.0, M=0.0), S1)
    assert not r.passed and abs(r.value - 1) < 1e-12


def test_semimonotone_field():
    gen = SpectralGenerator.heat1d(6)
    r = check_semimonotone(DriftSpec("tanh-monotone", a=0.5, b=1.0), gen, SamplerConfig(500))
    assert r.passed and r.value <= 1e-9


def test_linear_growth():
    assert check_linear_growth(DriftSpec("tanh-monotone", a=1.0, b=1.0), S1).passed
    assert not check_linear_growth(DriftSpec("linear", c=-2.0, C=1.0), S1).passed


def test_G_norm_examples():
    add = DiffusionSpec.additive(2.0, [1.0], [[1.0]])
    n0, n1 = estimate_G_norms(add, 0)
    assert n1 == 0.0
    assert n0 <= 2.0 and n0 > 2.0 - 1e-5
    aff = DiffusionSpec(1.0, [1.0], [[1.0]], "affine-bounded", 1.0)
    n0, n1 = estimate_G_norms(aff, 0)
    assert n1 <= 1.0 + 1e-6 and n0 <= aff.norm0_bounds()[0]


def test_lipschitz_aggregate():
    marks = MarkMeasure([("a", 1.0), ("b", 2.0)])
    dirs = np.eye(2)
    aff = DiffusionSpec(1.5, [1.0, 0.5], dirs, "affine-bounded", 0.8)
    assert check_lipschitz_aggregate(aff, marks).passed
    tight = DiffusionSpec(1.5, [1.0, 0.5], dirs, "affine-bounded", 0.8, M=1e-3)
    assert not check_lipschitz_aggregate(tight, marks).passed


def test_hypothesis3_examples():
    zero = DiffusionSpec.additive(0.0, [1.0, 1.0], [[1.0], [1.0]])
    marks2 = MarkMeasure([("a", 1.0), ("b", 2.0)])
    rep = check_hypothesis3(zero, marks2, 1.5)
    assert all(v == 4.5 for v in rep.integral_norm0)
    one = DiffusionSpec.additive(1.0, [1.0], [[1.0]])
    rep = check_hypothesis3(one, MarkMeasure.single(1.0), 1.0, deltas=(1.0,))
    assert abs(rep.integral_norm0[0] - math.e) < 1e-12
    two = DiffusionSpec.additive(1.0, [1.0, 2.0], [[1.0], [1.0]])
    rep = check_hypothesis3(two, MarkMeasure([("a", 1.0), ("b", 1.0)]), 1.0, deltas=(0.5,))
    assert abs(rep.integral_norm0[0] - (math.exp(0.5) + math.exp(2))) < 1e-12
    assert rep.finite


def test_drift_commutes_with_roundtrip():
    gen = SpectralGenerator.heat1d(16, n_points=64)
    x = np.random.default_rng(4).normal(size=16)
    lin = DriftSpec("linear", c=-0.5)
    via_field = gen.from_field(lin.pointwise(gen.to_field(x)))
    assert np.max(np.abs(via_field - eval_drift(lin, gen, x))) <= 1e-8
    tanh = DriftSpec("tanh-monotone", a=1.0, b=1.0)
    direct = eval_drift(tanh, gen, x)
    again = eval_drift(tanh, gen, gen.from_field(gen.to_field(x)))
    assert np.max(np.abs(direct - again)) <= 1e-8


def test_spec_validation():
    with pytest.raises(ValueError):
        DriftSpec("cubic")
    with pytest.raises(ValueError):
        DriftSpec("tanh-monotone", a=-1.0)
    with pytest.raises(ValueError):
        DiffusionSpec(1.0, [1.0], [[1.0]], "affine-bounded", -0.5)
