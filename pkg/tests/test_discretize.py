import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levybsde.discretize import (
    ZERO_PROB_BOUND,
    QLift,
    TemporalGrid,
    balance_thresholds,
    _integrate_against,
    build_bins,
    build_law,
    snap_to_lattice,
    spatial_mesh,
    validate_moment_conditions,
)
from levybsde.errors import (
    ConfigError,
    DegenerateMeasure,
    InfeasibleRebalance,
    SupportMismatch,
)
from levybsde.levy import CompoundPoissonDoubleExp, CompoundPoissonNormal, VarianceGammaLike, builtin_models


def test_spatial_mesh():
    assert spatial_mesh(0.1, 1.0) == pytest.approx(math.sqrt(0.3), rel=1e-15)
    with pytest.raises(DegenerateMeasure):
        spatial_mesh(0.1, 0.0)
    with pytest.raises(ConfigError):
        spatial_mesh(0.0, 1.0)


def test_symmetric_models_have_equal_thresholds():
    for model in (CompoundPoissonNormal(), VarianceGammaLike()):
        h = spatial_mesh(0.1, model.sigma2)
        assert balance_thresholds(model, h) == (h, h)


def test_kou_threshold_matches_independent_root():
    # ∫_u^∞ x c η e^{-η x} dx = c (u + 1/η) e^{-η u}; at h the down tail dominates
    kou = CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0)
    h = spatial_mesh(0.1, kou.sigma2)
    up = 0.7 * (h + 0.5) * mpmath.e ** (-2 * h)
    assert up < 0.3 * (h + 1.0) * mpmath.e ** (-h)
    u = float(mpmath.findroot(lambda u: up - 0.3 * (u + 1.0) * mpmath.e ** (-u), 1.0))
    h_minus, h_plus = balance_thresholds(kou, h)
    assert h_plus == h
    assert h_minus == pytest.approx(u, abs=1e-10)
    assert h_minus == pytest.approx(0.7423529554231363, abs=1e-10)


def test_grid_and_monitoring():
    g = TemporalGrid(1.0, 8, (4,))
    assert g.monitoring == (0, 4, 8)
    assert g.delta == 0.125 and g.time(3) == 0.375
    assert TemporalGrid.with_fractions(1.0, 8, [0.5]).monitoring == (0, 4, 8)
    with pytest.raises(ConfigError):
        TemporalGrid.with_fractions(1.0, 3, [0.5])
    with pytest.raises(ConfigError):
        TemporalGrid(1.0, 0)
    with pytest.raises(ConfigError):
        TemporalGrid(1.0, 4, (7,))


@settings(max_examples=30, deadline=None)
@given(delta=st.floats(0.004, 0.2), idx=st.integers(0, 2))
def test_construction_moments_exact(delta, idx):
    model = builtin_models()[idx]
    layout, law = build_law(model, delta)
    assert law.mass() == pytest.approx(1.0, abs=1e-12)
    assert abs(law.mean()) <= 1e-12
    assert law.second_moment() == pytest.approx(delta * model.sigma2, abs=1e-10)
    assert law.p0 > ZERO_PROB_BOUND
    assert law.p_plus <= 1 / 6 + 1e-15 and law.p_minus <= 1 / 6 + 1e-15
    assert law.p_plus == law.p_minus
    S, V = layout.inner_second, layout.outer_variance
    assert law.p_plus == pytest.approx((S + V) / (6 * model.sigma2), rel=1e-9)
    assert V >= -1e-12
    assert np.all(law.probs > 0)


def test_frozen_cpn_law():
    layout, law = build_law(CompoundPoissonNormal(), 0.1)
    assert law.size == 29
    assert law.p0 == pytest.approx(0.923587171318843, rel=1e-12)
    assert law.p_plus == pytest.approx(0.009012293302060206, rel=1e-10)
    assert layout.inner_second == pytest.approx(0.03997151969312246, rel=1e-12)


def test_bins_tile_outside_core():
    model = CompoundPoissonDoubleExp()
    h = spatial_mesh(0.05, model.sigma2)
    lay = build_bins(model, balance_thresholds(model, h), h)
    assert lay.lo[0] == -math.inf and lay.hi[-1] == math.inf
    gaps = lay.lo[1:] - lay.hi[:-1]
    core = np.flatnonzero(gaps != 0)
    assert len(core) == 1
    assert lay.hi[core[0]] == pytest.approx(-lay.h_minus) and lay.lo[core[0] + 1] == pytest.approx(lay.h_plus)
    assert np.all((lay.means > lay.lo) & (lay.means <= lay.hi))
    with pytest.raises(ConfigError):
        build_bins(model, (h, h), h, R=h / 2)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
@pytest.mark.parametrize("N", [4, 8, 16, 32])
def test_snapping(model, N):
    delta = 1.0 / N
    _, raw = build_law(model, delta)
    law = snap_to_lattice(raw, 8)
    unit = raw.h / 8
    assert law.lattice_unit == unit
    assert np.max(np.abs(law.bin_points - raw.bin_points)) <= unit / 2 + 1e-15
    assert np.array_equal(np.rint(law.support / unit).astype(np.int64), law.lattice_index)
    assert law.mass() == pytest.approx(1.0, abs=1e-12)
    assert abs(law.mean()) <= 1e-12
    assert law.second_moment() == pytest.approx(delta * model.sigma2, abs=1e-10)
    again = snap_to_lattice(law, 8)
    np.testing.assert_array_equal(again.support, law.support)
    np.testing.assert_allclose(again.probs, law.probs, rtol=0, atol=1e-15)


def test_snapping_errors():
    _, raw = build_law(CompoundPoissonNormal(), 1 / 64)
    with pytest.raises(InfeasibleRebalance):
        snap_to_lattice(raw, 8)
    snap_to_lattice(raw, 32)
    with pytest.raises(ConfigError):
        snap_to_lattice(raw, 0)


def test_qlift_shape_and_linearity():
    layout, law = build_law(CompoundPoissonNormal(), 0.1)
    lift = QLift(law, layout)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, law.size))
    x = np.array([-5.0, -1.3, -0.2, 0.0, 0.2, 1.3, 5.0])
    np.testing.assert_allclose(lift.apply(2 * a - b, x), 2 * lift.apply(a, x) - lift.apply(b, x), atol=1e-13)
    np.testing.assert_array_equal(lift.apply(np.zeros(law.size), x), 0.0)
    assert lift.apply(a, [0.0])[0, 0] == 0.0
    # on a bin the lift equals the table at that bin's atom
    b0 = layout.n_bins - 1
    assert lift.apply(a, [layout.means[b0]])[0, 0] == a[law.bin_atoms[b0]]
    # inside the core it is linear in x through (z(-h) + z(h)) / (√2 h)
    slope = (a[law.plus_index] + a[law.minus_index]) / (math.sqrt(2) * law.h)
    assert lift.apply(a, [0.1])[0, 0] == pytest.approx(0.1 * slope, rel=1e-13)


def test_qlift_rejects_foreign_layout():
    layout, _ = build_law(CompoundPoissonNormal(), 0.1)
    _, other = build_law(CompoundPoissonNormal(), 0.02)
    with pytest.raises(SupportMismatch):
        QLift(other, layout)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
def test_qlift_l2_matches_quadrature(model):
    layout, law = build_law(model, 0.1)
    lift = QLift(law, layout)
    t = np.random.default_rng(0).normal(size=law.size)
    t[law.zero_index] = 0.0
    # direct ∫ (Q t)² dν by quadrature over bins and core
    g = lambda x: lift.apply(t, [x])[0, 0] ** 2
    ref = sum(_integrate_against(model, g, a, b) for a, b in zip(layout.lo, layout.hi))
    ref += _integrate_against(model, g, -layout.h_minus, 0.0) + _integrate_against(model, g, 0.0, layout.h_plus)
    assert lift.l2_nu(t)[0] == pytest.approx(ref, rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), idx=st.integers(0, 2))
def test_core_bound_characterisation(a, b, idx):
    """For a table supported on ±h only, I_Q ≤ ∫ z² dν^(π) iff 2abS ≤ (a² + b²)V."""
    model = builtin_models()[idx]
    layout, law = build_law(model, 0.1)
    lift = QLift(law, layout)
    t = np.zeros(law.size)
    t[law.minus_index], t[law.plus_index] = a, b
    lhs, rhs = lift.l2_nu(t)[0], lift.l2_nu_pi(t)[0]
    S, V = layout.inner_second, layout.outer_variance
    margin = (a * a + b * b) * V - 2 * a * b * S
    scale = (a * a + b * b) * (S + V) + 1e-300
    if abs(margin) > 1e-9 * scale:
        assert (lhs <= rhs) == (margin > 0)


def test_law_to_dict():
    layout, law = build_law(CompoundPoissonDoubleExp(), 0.1, kappa=8)
    d = law.to_dict(layout)
    for k in ("h", "delta", "sigma2", "support", "probs", "h_minus", "h_plus", "edges_pos", "edges_neg",
              "lattice_unit", "kappa"):
        assert k in d
    assert sum(d["probs"]) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("model", builtin_models(), ids=lambda m: m.name)
def test_moment_conditions(model):
    rows = validate_moment_conditions(model, [0.1 * 2.0**-k for k in range(6)])
    ratios = [r.xx0_ratio for r in rows]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] <= 0.5 * ratios[0]
    assert max(r.xx1_residual for r in rows) <= 1e-9
    assert min(r.p0 for r in rows) > ZERO_PROB_BOUND
    errs = [r.xx2_max_error for r in rows]
    assert errs[-1] < errs[0]
    with pytest.raises(ConfigError):
        validate_moment_conditions(model, [0.01, 0.1])
