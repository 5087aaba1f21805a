"""Terminal conditions ``F = H(X_{s_0}, ..., X_{s_D}[, W_T])``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class TerminalCondition:
    """A Lipschitz functional of the monitored jump-walk values.

    ``H(xs, w)`` receives ``xs`` of shape ``(n, D + 1)`` holding
    ``X_{s_0} = 0, X_{s_1}, ..., X_{s_D} = X_T`` and ``w`` of shape ``(n,)``
    holding ``W_T`` (``None`` in pure-jump mode).

    ``monitoring`` lists the monitoring times ``s_0 = 0 < ... < s_D = T`` as
    fractions of the horizon.  ``poly`` carries ``(c0, c1, c2)`` when ``H`` is
    the polynomial ``c0 + c1 x_T + c2 x_T²``, which the oracles evaluate in
    closed form.
    """

    H: Callable
    lipschitz: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    monitoring: tuple[float, ...] = (0.0, 1.0)
    uses_w: bool = False
    poly: tuple[float, float, float] | None = None

    def __call__(self, xs, w=None) -> np.ndarray:
        return np.asarray(self.H(np.asarray(xs, dtype=float), w), dtype=float)

    def shifted(self, a: float) -> "TerminalCondition":
        """``H + a``."""
        poly = None if self.poly is None else (self.poly[0] + a, self.poly[1], self.poly[2])
        H = self.H
        return TerminalCondition(
            lambda xs, w: H(xs, w) + a, self.lipschitz, f"{self.name}+{a}", dict(self.params),
            self.monitoring, self.uses_w, poly,
        )

    def describe(self) -> dict:
        return {"name": self.name, **self.params, "monitoring": list(self.monitoring)}


def polynomial(c0=0.0, c1=0.0, c2=0.0) -> TerminalCondition:
    # Lipschitz only when c2 == 0; quadratic payoffs are still square-integrable
    c0, c1, c2 = float(c0), float(c1), float(c2)
    return TerminalCondition(
        lambda xs, w: c0 + c1 * xs[:, -1] + c2 * xs[:, -1] ** 2,
        lipschitz=abs(c1) if c2 == 0 else float("inf"),
        name="polynomial", params={"c0": c0, "c1": c1, "c2": c2}, poly=(c0, c1, c2),
    )


def identity() -> TerminalCondition:
    return TerminalCondition(lambda xs, w: xs[:, -1], 1.0, "identity", poly=(0.0, 1.0, 0.0))


def square() -> TerminalCondition:
    return TerminalCondition(lambda xs, w: xs[:, -1] ** 2, float("inf"), "square", poly=(0.0, 0.0, 1.0))


def affine(slope=1.0, intercept=0.0) -> TerminalCondition:
    s, b = float(slope), float(intercept)
    return TerminalCondition(
        lambda xs, w: s * xs[:, -1] + b, abs(s), "affine", {"slope": s, "intercept": b}, poly=(b, s, 0.0)
    )


def call(strike=0.0) -> TerminalCondition:
    k = float(strike)
    return TerminalCondition(lambda xs, w: np.maximum(xs[:, -1] - k, 0.0), 1.0, "call", {"strike": k})


def put(strike=0.0) -> TerminalCondition:
    k = float(strike)
    return TerminalCondition(lambda xs, w: np.maximum(k - xs[:, -1], 0.0), 1.0, "put", {"strike": k})


def average(dates=4, strike=None) -> TerminalCondition:
    """Arithmetic average of ``X`` over ``dates`` equally spaced monitoring times (optionally a call on it)."""
    d = int(dates)
    if d < 1:
        raise ConfigError("dates must be >= 1")
    mon = tuple(j / d for j in range(d + 1))
    if strike is None:
        return TerminalCondition(lambda xs, w: xs[:, 1:].mean(axis=1), 1.0, "average", {"dates": d}, mon)
    k = float(strike)
    return TerminalCondition(
        lambda xs, w: np.maximum(xs[:, 1:].mean(axis=1) - k, 0.0), 1.0, "average",
        {"dates": d, "strike": k}, mon,
    )


def w_square() -> TerminalCondition:
    """``F = W_T²``; only meaningful in mixed mode."""
    return TerminalCondition(lambda xs, w: w**2, float("inf"), "w_square", uses_w=True)


TERMINAL_CATALOG: dict[str, Callable[..., TerminalCondition]] = {
    "identity": identity,
    "square": square,
    "affine": affine,
    "polynomial": polynomial,
    "call": call,
    "put": put,
    "average": average,
    "w_square": w_square,
}


def register_terminal(name: str, factory: Callable[..., TerminalCondition]) -> None:
    TERMINAL_CATALOG[name] = factory


def make_terminal(name: str, **params) -> TerminalCondition:
    try:
        factory = TERMINAL_CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown terminal {name!r}; known: {sorted(TERMINAL_CATALOG)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for terminal {name!r}: {exc}") from None
