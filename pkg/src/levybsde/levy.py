"""Lévy measures of the driving pure-jump process.

A model is described by its Lévy density ``g`` on the punctured line.  All
integrals used downstream are of the form ``∫_a^b x^k g(x) dx`` over an
interval that does not straddle the origin, with ``k`` in {0, 1, 2}.  The
built-in models implement these in closed form; any other model falls back
to adaptive Gauss-Kronrod quadrature (QUADPACK via :func:`scipy.integrate.quad`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, DegenerateMeasure, QuadratureDivergence

Interval = tuple[float, float]


@dataclass(frozen=True)
class QuadratureConfig:
    tol: float = 1e-10
    limit: int = 500


DEFAULT_QUAD = QuadratureConfig()


class LevyModel:
    """A square-integrable, zero-mean, pure-jump Lévy process.

    Subclasses provide the density and, when available, closed-form interval
    moments through :meth:`_side_moment`.  ``X`` is always the compensated
    process, so its mean is zero whatever the asymmetry of the jumps.

    Parameters
    ----------
    name : str
        Catalog name, echoed in reports.
    params : dict
        Constructor parameters, echoed in reports.
    activity : {"finite", "infinite"}
    total_rate : float
        ``ν(ℝ \\ {0})``; ``inf`` for infinite activity.
    bg_index : float
        Blumenthal-Getoor index, must lie in [0, 2).
    moment_eps : float
        An ``ε > 0`` with ``∫_{|x|>1} |x|^{2+ε} ν(dx) < ∞``.  Recorded only.
    truncation_radius : float, optional
        Bin construction cutoff ``R``.  Chosen so that
        ``ν(|x| > R) R² < 1e-10`` when omitted.
    """

    closed_form = False

    def __init__(
        self,
        name: str,
        params: dict,
        activity: str,
        total_rate: float,
        bg_index: float,
        moment_eps: float,
        truncation_radius: float | None = None,
        quad: QuadratureConfig = DEFAULT_QUAD,
    ):
        if activity not in ("finite", "infinite"):
            raise ConfigError(f"activity must be 'finite' or 'infinite', got {activity!r}")
        if not 0.0 <= bg_index < 2.0:
            raise ConfigError(f"Blumenthal-Getoor index must lie in [0, 2), got {bg_index}")
        if moment_eps <= 0:
            raise ConfigError("moment_eps must be positive")
        self.name = name
        self.params = dict(params)
        self.activity = activity
        self.total_rate = float(total_rate)
        self.bg_index = float(bg_index)
        self.moment_eps = float(moment_eps)
        self.quad = quad
        self._sigma2: float | None = None
        self._radius = truncation_radius

    # -- density ----------------------------------------------------------
    def density(self, x):
        raise NotImplementedError

    def closed_form_sigma2(self) -> float | None:
        return None

    # -- interval moments -------------------------------------------------
    def _side_moment(self, k: int, lo: float, hi: float, side: int) -> float:
        """``∫_{lo}^{hi} u^k g(side*u) du`` for ``0 <= lo < hi <= inf``."""
        return quad_side_moment(self.density, k, lo, hi, side, self.quad)

    def moment(self, k: int, a: float, b: float) -> float:
        """``∫_a^b x^k ν(dx)`` for an interval on one side of the origin."""
        if not a < b:
            return 0.0
        if a >= 0.0:
            return self._side_moment(k, a, b, +1)
        if b <= 0.0:
            return (-1.0) ** k * self._side_moment(k, -b, -a, -1)
        raise ValueError(f"interval ({a}, {b}) straddles the origin")

    def mass(self, a: float, b: float) -> float:
        return self.moment(0, a, b)

    def first(self, a: float, b: float) -> float:
        return self.moment(1, a, b)

    def second(self, a: float, b: float) -> float:
        return self.moment(2, a, b)

    def mean_jump(self) -> float:
        """``∫ x ν(dx)`` over the whole line (the compensator drift)."""
        return self.first(0.0, math.inf) + self.first(-math.inf, 0.0)

    # -- derived quantities -----------------------------------------------
    @property
    def sigma2(self) -> float:
        if self._sigma2 is None:
            self._sigma2 = second_moment(self, self.quad)
        return self._sigma2

    @property
    def truncation_radius(self) -> float:
        if self._radius is None:
            self._radius = default_truncation_radius(self)
        return self._radius

    def is_symmetric(self) -> bool:
        return False

    def reflect(self) -> "LevyModel":
        """The model of ``-X``."""
        return ReflectedModel(self)

    def describe(self) -> dict:
        return {"name": self.name, **self.params}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


def quad_side_moment(density, k, lo, hi, side, quad: QuadratureConfig) -> float:
    def integrand(u):
        return u**k * float(density(side * u))

    val, err = _quad(integrand, lo, hi, quad)
    return val


def _quad(fn, a, b, quad: QuadratureConfig):
    val, err, *rest = integrate.quad(
        fn, a, b, epsabs=quad.tol * 1e-2, epsrel=1e-12, limit=quad.limit, full_output=1
    )
    # rest[1] is the QUADPACK message when the routine flagged a problem
    if err > quad.tol and err > 1e-10 * abs(val):
        raise QuadratureDivergence(f"quadrature on [{a}, {b}] reached error {err:.3g}")
    return val, err


class ReflectedModel(LevyModel):
    def __init__(self, base: LevyModel):
        super().__init__(
            name=f"reflected_{base.name}",
            params=base.params,
            activity=base.activity,
            total_rate=base.total_rate,
            bg_index=base.bg_index,
            moment_eps=base.moment_eps,
            truncation_radius=base.truncation_radius,
            quad=base.quad,
        )
        self.base = base
        self.closed_form = base.closed_form

    def density(self, x):
        return self.base.density(-np.asarray(x))

    def _side_moment(self, k, lo, hi, side):
        return self.base._side_moment(k, lo, hi, -side)

    def closed_form_sigma2(self):
        return self.base.closed_form_sigma2()

    def is_symmetric(self):
        return self.base.is_symmetric()

    def reflect(self):
        return self.base


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------


class CompoundPoissonNormal(LevyModel):
    """Compound Poisson process with N(0, σ²) jumps at rate λ."""

    closed_form = True

    def __init__(self, rate: float = 1.0, sigma: float = 1.0, truncation_radius=None):
        if rate <= 0 or sigma <= 0:
            raise ConfigError("rate and sigma must be positive")
        super().__init__(
            "compound_poisson_normal",
            {"rate": rate, "sigma": sigma},
            activity="finite",
            total_rate=rate,
            bg_index=0.0,
            moment_eps=1.0,
            truncation_radius=truncation_radius,
        )
        self.rate = float(rate)
        self.sigma = float(sigma)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return self.rate * np.exp(-0.5 * (x / self.sigma) ** 2) / (self.sigma * math.sqrt(2 * math.pi))

    def _side_moment(self, k, lo, hi, side):
        s, lam = self.sigma, self.rate
        a, b = lo / s, hi / s
        pa, pb = _phi(a), _phi(b)
        # survival difference stays accurate far in the tail
        tail = special.ndtr(-a) - special.ndtr(-b)
        if k == 0:
            return lam * tail
        if k == 1:
            return lam * s * (pa - pb)
        if k == 2:
            return lam * s * s * (_xphi(a) - _xphi(b) + tail)
        raise ValueError(k)

    def closed_form_sigma2(self):
        return self.rate * self.sigma**2

    def is_symmetric(self):
        return True

    def sample_jumps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(0.0, self.sigma, size)


class CompoundPoissonDoubleExp(LevyModel):
    """Kou's double-exponential jumps: up with probability ``p`` (rate η₁), down otherwise (rate η₂)."""

    closed_form = True

    def __init__(self, rate=1.0, p=0.5, eta1=1.0, eta2=1.0, truncation_radius=None):
        if rate <= 0 or eta1 <= 0 or eta2 <= 0 or not 0 < p < 1:
            raise ConfigError("need rate > 0, eta1 > 0, eta2 > 0 and 0 < p < 1")
        super().__init__(
            "kou",
            {"rate": rate, "p": p, "eta1": eta1, "eta2": eta2},
            activity="finite",
            total_rate=rate,
            bg_index=0.0,
            moment_eps=1.0,
            truncation_radius=truncation_radius,
        )
        self.rate, self.p, self.eta1, self.eta2 = float(rate), float(p), float(eta1), float(eta2)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        up = self.rate * self.p * self.eta1 * np.exp(-self.eta1 * np.abs(x))
        down = self.rate * (1 - self.p) * self.eta2 * np.exp(-self.eta2 * np.abs(x))
        return np.where(x > 0, up, down)

    def _side_moment(self, k, lo, hi, side):
        if side > 0:
            c, eta = self.rate * self.p * self.eta1, self.eta1
        else:
            c, eta = self.rate * (1 - self.p) * self.eta2, self.eta2
        return c * _exp_moment(k, eta, lo, hi)

    def closed_form_sigma2(self):
        return self.rate * (2 * self.p / self.eta1**2 + 2 * (1 - self.p) / self.eta2**2)

    def is_symmetric(self):
        return self.p == 0.5 and self.eta1 == self.eta2

    def reflect(self):
        return CompoundPoissonDoubleExp(self.rate, 1 - self.p, self.eta2, self.eta1, self._radius)

    def sample_jumps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        up = rng.random(size) < self.p
        e = rng.standard_exponential(size)
        return np.where(up, e / self.eta1, -e / self.eta2)


class VarianceGammaLike(LevyModel):
    """Symmetric density ``C e^{-M|x|} / |x|``: infinite activity, index 0."""

    closed_form = True

    def __init__(self, C=1.0, M=1.0, truncation_radius=None):
        if C <= 0 or M <= 0:
            raise ConfigError("C and M must be positive")
        super().__init__(
            "variance_gamma",
            {"C": C, "M": M},
            activity="infinite",
            total_rate=math.inf,
            bg_index=0.0,
            moment_eps=1.0,
            truncation_radius=truncation_radius,
        )
        self.C, self.M = float(C), float(M)

    def density(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            return self.C * np.exp(-self.M * x) / x

    def _side_moment(self, k, lo, hi, side):
        C, M = self.C, self.M
        if k == 0:
            if lo == 0.0:
                return math.inf
            return C * (special.exp1(M * lo) - (special.exp1(M * hi) if math.isfinite(hi) else 0.0))
        # x^k e^{-Mx}/x = x^{k-1} e^{-Mx}
        return C * _exp_moment(k - 1, M, lo, hi)

    def closed_form_sigma2(self):
        return 2 * self.C / self.M**2

    def is_symmetric(self):
        return True


def _phi(u):
    if math.isinf(u):
        return 0.0
    return math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)


def _xphi(u):
    return 0.0 if math.isinf(u) else u * _phi(u)


def _exp_moment(k, eta, lo, hi):
    """``∫_lo^hi u^k e^{-η u} du``."""

    def antider(u):
        # -e^{-ηu} Σ_{j<=k} k!/(k-j)! u^{k-j} / η^{j+1}
        if math.isinf(u):
            return 0.0
        s = sum(math.factorial(k) / math.factorial(k - j) * u ** (k - j) / eta ** (j + 1) for j in range(k + 1))
        return -math.exp(-eta * u) * s

    return antider(hi) - antider(lo)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


def second_moment(model: LevyModel, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """``Σ² = ∫ x² ν(dx)`` by quadrature, checked against the closed form when one exists."""
    val = 0.0
    for side in (+1, -1):
        val += quad_side_moment(model.density, 2, 0.0, math.inf, side, quad)
    if val <= quad.tol:
        raise DegenerateMeasure(f"second moment {val} is not positive")
    exact = model.closed_form_sigma2()
    if exact is not None:
        if abs(exact - val) > quad.tol:
            raise QuadratureDivergence(
                f"quadrature Σ²={val!r} disagrees with closed form {exact!r}"
            )
        return float(exact)
    return float(val)


def tail_mass(model: LevyModel, r: float) -> float:
    """``ν({|x| > r})``."""
    if r <= 0:
        raise ValueError("r must be positive")
    return model.mass(r, math.inf) + model.mass(-math.inf, -r)


def partial_mean(model: LevyModel, A: Iterable[Interval]) -> float:
    """``∫_A x ν(dx)`` for a finite union of intervals bounded away from zero."""
    total = 0.0
    for a, b in _split_at_zero(A):
        total += model.first(a, b)
    return total


def _split_at_zero(A: Iterable[Interval]) -> list[Interval]:
    out = []
    for a, b in A:
        if a < 0.0 < b:
            out.extend([(a, 0.0), (0.0, b)])
        else:
            out.append((a, b))
    return out


def default_truncation_radius(model: LevyModel, target: float = 1e-10) -> float:
    r = 1.0
    while tail_mass(model, r) * r * r >= target:
        r *= 1.05
        if r > 1e6:
            raise DegenerateMeasure("tails too heavy to pick a truncation radius")
    return round(r, 6)


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

MODEL_CATALOG: dict[str, Callable[..., LevyModel]] = {
    "compound_poisson_normal": CompoundPoissonNormal,
    "kou": CompoundPoissonDoubleExp,
    "variance_gamma": VarianceGammaLike,
}


def register_model(name: str, factory: Callable[..., LevyModel]) -> None:
    MODEL_CATALOG[name] = factory


def make_model(name: str, **params) -> LevyModel:
    try:
        factory = MODEL_CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(MODEL_CATALOG)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from None


def builtin_models() -> Sequence[LevyModel]:
    return (
        CompoundPoissonNormal(1.0, 1.0),
        CompoundPoissonDoubleExp(1.0, 0.7, 2.0, 1.0),
        VarianceGammaLike(1.0, 1.0),
    )
