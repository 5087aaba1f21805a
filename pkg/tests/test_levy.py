import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levybsde.errors import ConfigError
from levybsde.levy import (
    CompoundPoissonDoubleExp,
    CompoundPoissonNormal,
    LevyModel,
    VarianceGammaLike,
    builtin_models,
    make_model,
    partial_mean,
    register_model,
    second_moment,
    tail_mass,
)


def mp_moment(model, k, a, b):
    """Independent reference: mpmath tanh-sinh quadrature of x^k g(x)."""
    f = lambda x: x**k * mpmath.mpf(float(model.density(float(x))))
    return float(mpmath.quad(f, [a, b]))


@pytest.mark.parametrize(
    "model, sigma2",
    [
        (CompoundPoissonNormal(1.0, 1.0), 1.0),
        (CompoundPoissonNormal(2.0, 0.5), 0.5),
        (CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0), 0.95),
        (VarianceGammaLike(1.0, 1.0), 2.0),
        (VarianceGammaLike(3.0, 2.0), 1.5),
    ],
)
def test_sigma2_closed_forms(model, sigma2):
    assert model.sigma2 == pytest.approx(sigma2, rel=1e-12)
    assert second_moment(model) == pytest.approx(sigma2, rel=1e-12)


def test_vg_tail_mass_is_twice_e1():
    vg = VarianceGammaLike(1.0, 1.0)
    assert tail_mass(vg, 1.0) == pytest.approx(0.438767868791041, rel=1e-12)
    assert tail_mass(vg, 1.0) == pytest.approx(2 * float(mpmath.e1(1)), rel=1e-13)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("a, b", [(0.05, 0.3), (0.3, 2.0), (2.0, 9.0), (-1.5, -0.2), (-6.0, -1.5)])
def test_interval_moments_match_mpmath(model, k, a, b):
    assert model.moment(k, a, b) == pytest.approx(mp_moment(model, k, a, b), rel=1e-9, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(0.01, 5.0),
    width=st.floats(0.01, 5.0),
    side=st.sampled_from([1, -1]),
    idx=st.integers(0, 2),
)
def test_interval_moments_additive(lo, width, side, idx):
    model = builtin_models()[idx]
    a, b = lo, lo + width
    if side < 0:
        a, b = -b, -a
    mid = 0.5 * (a + b)
    for k in (0, 1, 2):
        whole = model.moment(k, a, b)
        parts = model.moment(k, a, mid) + model.moment(k, mid, b)
        assert whole == pytest.approx(parts, rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
def test_mean_jump_and_partial_mean(model):
    # compensated process: the mean of ν need not vanish, but partial means must add up
    total = partial_mean(model, [(-math.inf, -1.0), (-1.0, 1.0), (1.0, math.inf)])
    assert total == pytest.approx(model.mean_jump(), abs=1e-12)


def test_symmetric_models_have_zero_mean_jump():
    assert CompoundPoissonNormal().mean_jump() == pytest.approx(0.0, abs=1e-15)
    assert VarianceGammaLike().mean_jump() == pytest.approx(0.0, abs=1e-15)
    kou = CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0)
    assert kou.mean_jump() == pytest.approx(0.7 / 2.0 - 0.3 / 1.0, rel=1e-12)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
def test_truncation_radius_controls_tail(model):
    R = model.truncation_radius
    assert tail_mass(model, R) * R * R < 1e-10
    assert tail_mass(model, R / 1.05) * (R / 1.05) ** 2 >= 1e-10 * 0.999


def test_reflect_kou_swaps_sides():
    kou = CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0)
    ref = kou.reflect()
    for a, b in [(0.1, 1.0), (1.0, 4.0)]:
        assert ref.moment(0, a, b) == pytest.approx(kou.moment(0, -b, -a), rel=1e-12)
        assert ref.moment(1, a, b) == pytest.approx(-kou.moment(1, -b, -a), rel=1e-12)


def test_moment_rejects_straddling_interval():
    with pytest.raises(ValueError):
        CompoundPoissonNormal().moment(0, -1.0, 1.0)


def test_catalog_and_errors():
    assert make_model("kou", rate=1.0, p=0.7, eta1=2.0, eta2=1.0).sigma2 == pytest.approx(0.95)
    with pytest.raises(ConfigError):
        make_model("nope")
    with pytest.raises(ConfigError):
        make_model("kou", bogus=1)
    with pytest.raises(ConfigError):
        CompoundPoissonNormal(rate=-1.0)


class Triangular(LevyModel):
    """Quadrature-only user model: density (1 - |x|)⁺ on [-1, 1]."""

    def __init__(self):
        super().__init__("triangular", {}, "finite", 1.0, 0.0, 1.0)

    def density(self, x):
        return np.maximum(1.0 - np.abs(np.asarray(x, dtype=float)), 0.0)


def test_user_model_uses_quadrature():
    register_model("triangular", Triangular)
    m = make_model("triangular")
    # ∫ x² (1 - |x|) dx over [-1, 1] = 2 (1/3 - 1/4)
    assert m.sigma2 == pytest.approx(1.0 / 6.0, rel=1e-10)
    assert m.moment(1, 0.0, 0.5) == pytest.approx(0.5**2 / 2 - 0.5**3 / 3, rel=1e-10)
