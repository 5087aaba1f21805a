"""BSDE drivers ``f(t, y, z, z̃)`` and the built-in driver catalog.

Drivers are evaluated on a whole time slice at once: ``y`` and ``z`` are
arrays over lattice nodes and ``zt`` is the lifted jump coefficient ``Q z̃``
(a :class:`~levybsde.discretize.LiftedJumpFunction`) for the same nodes.
``z`` is ``None`` in pure-jump mode.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigError


class Driver:
    """Base driver.

    Attributes
    ----------
    lipschitz : float
        Declared bound ``K`` on the Lipschitz modulus in ``(y, z, z̃)``.
    depends_on : frozenset of {"y", "z", "zt"}
    """

    name = "driver"
    lipschitz: float = 0.0
    depends_on: frozenset = frozenset()

    def __call__(self, t: float, y: np.ndarray, z, zt) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}


class ZeroDriver(Driver):
    name = "zero"

    def __call__(self, t, y, z, zt):
        return np.zeros_like(y)


class ConstantDriver(Driver):
    name = "constant"

    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, t, y, z, zt):
        return np.full_like(y, self.c)

    def describe(self):
        return {"name": self.name, "c": self.c}


class LinearYDriver(Driver):
    """``f(t, y) = a y + c``."""

    name = "linear_y"
    depends_on = frozenset({"y"})

    def __init__(self, a: float, c: float = 0.0):
        self.a, self.c = float(a), float(c)
        self.lipschitz = abs(self.a)

    def __call__(self, t, y, z, zt):
        return self.a * y + self.c

    def describe(self):
        return {"name": self.name, "a": self.a, "c": self.c}


class JumpIntegralDriver(Driver):
    """``f = ∫ ρ(x) z̃(x) x ν(dx)`` for a constant or callable weight ``ρ``.

    The Lipschitz constant is ``sqrt(∫ ρ(x)² x² ν(dx))`` (Cauchy-Schwarz),
    which reduces to ``|ρ| Σ`` for constant ``ρ``.
    """

    name = "jump_integral"
    depends_on = frozenset({"zt"})

    def __init__(self, rho, sigma2: float, lipschitz: float | None = None):
        self.rho = rho
        if callable(rho):
            if lipschitz is None:
                raise ConfigError("a callable rho needs an explicit Lipschitz constant")
            self.lipschitz = float(lipschitz)
            self._weight = lambda x: rho(x) * x
        else:
            self.rho = float(rho)
            self.lipschitz = abs(self.rho) * math.sqrt(sigma2) if lipschitz is None else float(lipschitz)

    def __call__(self, t, y, z, zt):
        if callable(self.rho):
            return zt.integrate(self._weight)
        return self.rho * zt.integrate_x()

    def describe(self):
        return {"name": self.name, "rho": self.rho if not callable(self.rho) else "callable"}


class FunctionDriver(Driver):
    """Wraps a user evaluator ``fn(t, y, z, zt)``."""

    name = "custom"

    def __init__(self, fn: Callable, lipschitz: float, depends_on=("y", "z", "zt"), label="custom"):
        self.fn = fn
        self.lipschitz = float(lipschitz)
        self.depends_on = frozenset(depends_on)
        self.label = label

    def __call__(self, t, y, z, zt):
        return np.asarray(self.fn(t, y, z, zt), dtype=float)

    def describe(self):
        return {"name": self.name, "label": self.label}


# name -> factory(model, **params)
DRIVER_CATALOG: dict[str, Callable[..., Driver]] = {
    "zero": lambda model: ZeroDriver(),
    "constant": lambda model, c: ConstantDriver(c),
    "linear_y": lambda model, a, c=0.0: LinearYDriver(a, c),
    "jump_integral": lambda model, rho: JumpIntegralDriver(rho, model.sigma2),
}


def register_driver(name: str, factory: Callable[..., Driver]) -> None:
    """Register a ``custom`` driver factory ``factory(model, **params)``."""
    DRIVER_CATALOG[name] = factory


def make_driver(name: str, model, **params) -> Driver:
    try:
        factory = DRIVER_CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown driver {name!r}; known: {sorted(DRIVER_CATALOG)}") from None
    try:
        return factory(model, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for driver {name!r}: {exc}") from None
