import math

import numpy as np
import pytest
from conftest import make_walk

from levybsde.discretize import lift_driver
from levybsde.drivers import ConstantDriver, FunctionDriver, JumpIntegralDriver, LinearYDriver, ZeroDriver
from levybsde.errors import ConfigError, NoSampler, TreeTooLarge
from levybsde.levy import CompoundPoissonDoubleExp, CompoundPoissonNormal, VarianceGammaLike
from levybsde.oracles import (
    brute_force_tree,
    enumeration_terminal,
    expectation_terminal,
    has_sampler,
    linear_driver_value,
    monte_carlo_terminal,
)
from levybsde.solver import backward_solve
from levybsde.terminal import average, call, identity, polynomial, square


def test_linear_driver_value():
    assert linear_driver_value(0.0, 0.2, 1.0, 2.0) == pytest.approx(1.4)
    assert linear_driver_value(0.5, 0.1, 1.0, 1.0) == pytest.approx(math.exp(0.5) + 0.2 * (math.exp(0.5) - 1))
    assert linear_driver_value(0.5, 0.0, 0.0, 1.0) == 0.0


def test_closed_form_polynomial():
    kou = CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0)
    v = expectation_terminal(kou, polynomial(1.0, 3.0, 2.0), 2.0)
    assert v.method == "closed_form" and v.std_error == 0.0
    assert v.value == pytest.approx(1.0 + 2.0 * 2.0 * 0.95)
    with pytest.raises(ConfigError):
        expectation_terminal(kou, call(0.0), 1.0, method="closed_form")
    with pytest.raises(ConfigError):
        expectation_terminal(kou, call(0.0), 1.0, method="enumeration")
    with pytest.raises(ConfigError):
        expectation_terminal(kou, call(0.0), 1.0, method="bogus")


@pytest.mark.parametrize("model", [CompoundPoissonNormal(), CompoundPoissonDoubleExp()], ids=lambda m: m.name)
def test_monte_carlo_matches_closed_form(model):
    mc = monte_carlo_terminal(model, square(), 1.0, 200_000, seed=1)
    assert abs(mc.value - model.sigma2) <= 3 * mc.std_error
    mean = monte_carlo_terminal(model, identity(), 1.0, 200_000, seed=1)
    assert abs(mean.value) <= 3 * mean.std_error


def test_monte_carlo_reproducible_and_monitored():
    m = CompoundPoissonNormal()
    a = monte_carlo_terminal(m, average(4), 1.0, 70_000, seed=3)
    b = monte_carlo_terminal(m, average(4), 1.0, 70_000, seed=3)
    assert a == b
    assert abs(a.value) <= 4 * a.std_error


def test_no_sampler_for_infinite_activity():
    vg = VarianceGammaLike()
    assert not has_sampler(vg)
    with pytest.raises(NoSampler):
        monte_carlo_terminal(vg, call(0.0), 1.0, 10)


def test_enumeration_matches_walk_variance():
    _, law, walk = make_walk(N=4)
    v = enumeration_terminal(walk, square())
    assert v.value == pytest.approx(4 * law.second_moment(), abs=1e-13)


def test_brute_force_simple_values():
    layout, law, walk = make_walk(N=3, T=0.3)
    assert brute_force_tree(walk, lift_driver(ZeroDriver(), law, layout), identity()) == pytest.approx(0.0, abs=1e-14)
    one = brute_force_tree(walk, lift_driver(ConstantDriver(1.0), law, layout), polynomial())
    assert one == pytest.approx(0.3, abs=1e-14)


def test_brute_force_limits():
    layout, law, walk = make_walk(N=5)
    with pytest.raises(TreeTooLarge):
        brute_force_tree(walk, lift_driver(ZeroDriver(), law, layout), identity())


@pytest.mark.parametrize(
    "f, F, brownian, N",
    [
        (LinearYDriver(0.5, 0.1), call(0.1), None, 3),
        (JumpIntegralDriver(0.3, 1.0), average(3), None, 3),
        (FunctionDriver(lambda t, y, z, zt: 0.3 * np.sin(y) + 0.2 * np.tanh(zt.integrate_x()), 0.6), square(), None, 3),
        (FunctionDriver(lambda t, y, z, zt: 0.3 * np.cos(y) + 0.2 * z, 0.5, ("y", "z")), call(0.0), "trinomial", 2),
    ],
    ids=["linear", "jump_integral", "custom", "mixed"],
)
def test_solver_agrees_with_brute_force(f, F, brownian, N):
    layout, law, walk = make_walk(N=N, brownian=brownian)
    fp = lift_driver(f, law, layout)
    tree = brute_force_tree(walk, fp, F)
    sol = backward_solve(walk, fp, F)
    assert sol.y0 == pytest.approx(tree, abs=1e-12)


def test_brute_force_linear_in_terminal():
    layout, law, walk = make_walk(N=3)
    fp = lift_driver(JumpIntegralDriver(0.3, 1.0), law, layout)
    a = brute_force_tree(walk, fp, call(0.1))
    b = brute_force_tree(walk, fp, square())
    from levybsde.terminal import TerminalCondition

    mix = TerminalCondition(lambda xs, w: 2 * call(0.1)(xs) - square()(xs), math.inf)
    assert brute_force_tree(walk, fp, mix) == pytest.approx(2 * a - b, abs=1e-12)
