"""Reference values for the solver: closed forms, exact enumeration and Monte Carlo."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .discretize import LiftedDriver
from .errors import ConfigError, NoSampler, TreeTooLarge
from .levy import LevyModel
from .solver import build_lattice, monitoring_indices, solve_implicit, terminal_values
from .terminal import TerminalCondition
from .walks import CHUNK, WalkLaw, chunk_rng

DEFAULT_MC_SAMPLES = 1_000_000
TREE_MAX_N = 4
TREE_MAX_LEAVES = 100_000


@dataclass(frozen=True)
class OracleValue:
    value: float
    std_error: float
    method: str
    n_samples: int | None = None

    def band(self, k: float = 3.0) -> float:
        return k * self.std_error

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Terminal samplers
# ---------------------------------------------------------------------------

# name -> sampler(model, rng, lengths, m) returning (m, len(lengths)) increments of X
TERMINAL_SAMPLERS: dict[str, Callable] = {}


def register_sampler(model_name: str, sampler: Callable) -> None:
    TERMINAL_SAMPLERS[model_name] = sampler


def compound_poisson_increments(model: LevyModel, rng: np.random.Generator, lengths, m: int) -> np.ndarray:
    """Exact increments of the compensated compound Poisson process over consecutive intervals."""
    out = np.empty((m, len(lengths)))
    drift = model.mean_jump()
    for j, L in enumerate(lengths):
        counts = rng.poisson(model.total_rate * L, m)
        jumps = model.sample_jumps(rng, int(counts.sum()))
        sums = np.bincount(np.repeat(np.arange(m), counts), weights=jumps, minlength=m)
        out[:, j] = sums - L * drift
    return out


def _sampler_for(model: LevyModel) -> Callable:
    if model.name in TERMINAL_SAMPLERS:
        return TERMINAL_SAMPLERS[model.name]
    if model.activity == "finite" and hasattr(model, "sample_jumps"):
        return compound_poisson_increments
    raise NoSampler(f"no exact terminal sampler for {model.name!r} (infinite activity)")


def has_sampler(model: LevyModel) -> bool:
    try:
        _sampler_for(model)
    except NoSampler:
        return False
    return True


def monte_carlo_terminal(
    model: LevyModel, F: TerminalCondition, T: float, n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0
) -> OracleValue:
    """``E[F]`` from exact samples of ``X`` at the monitoring dates (and ``W_T`` if needed).

    Samples are drawn in fixed chunks, each from its own counter-based stream,
    so the estimate depends only on ``(seed, n_samples)``.
    """
    sampler = _sampler_for(model)
    fr = np.asarray(F.monitoring, dtype=float)
    lengths = np.diff(fr) * T
    total = 0.0
    total_sq = 0.0
    for c, start in enumerate(range(0, n_samples, CHUNK)):
        m = min(CHUNK, n_samples - start)
        rng = chunk_rng(seed, c)
        inc = sampler(model, rng, lengths, m)
        xs = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        w = rng.normal(0.0, math.sqrt(T), m) if F.uses_w else None
        v = F(xs, w)
        total += float(v.sum())
        total_sq += float((v * v).sum())
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / max(n_samples - 1, 1)
    return OracleValue(mean, math.sqrt(var / n_samples), "monte_carlo", n_samples)


def enumeration_terminal(walk: WalkLaw, F: TerminalCondition) -> OracleValue:
    """``E[F^(π)]`` under the discrete walk by forward occupation probabilities."""
    lat = build_lattice(walk, F)
    occ = lat.occupation()[-1]
    return OracleValue(float(terminal_values(lat, F) @ occ), 0.0, "enumeration")


def expectation_terminal(
    model: LevyModel,
    F: TerminalCondition,
    T: float,
    method: str = "auto",
    seed: int = 0,
    n_samples: int = DEFAULT_MC_SAMPLES,
    walk: WalkLaw | None = None,
) -> OracleValue:
    """Reference value of ``E[F]`` for the continuous-time process.

    ``method`` is ``closed_form`` (polynomial terminals in ``X_T``),
    ``monte_carlo``, ``enumeration`` (discrete walk, needs ``walk``) or
    ``auto`` (closed form when available, else Monte Carlo).
    """
    if method == "auto":
        method = "closed_form" if F.poly is not None else "monte_carlo"
    if method == "closed_form":
        if F.poly is None:
            raise ConfigError(f"no closed form for terminal {F.name!r}")
        c0, _, c2 = F.poly
        return OracleValue(c0 + c2 * T * model.sigma2, 0.0, "closed_form")
    if method == "monte_carlo":
        return monte_carlo_terminal(model, F, T, n_samples, seed)
    if method == "enumeration":
        if walk is None:
            raise ConfigError("enumeration needs the discrete walk")
        return enumeration_terminal(walk, F)
    raise ConfigError(f"unknown oracle method {method!r}")


def linear_driver_value(a: float, c: float, EF: float, T: float) -> float:
    """``y(0)`` for ``y' = -(a y + c)``, ``y(T) = EF``."""
    if a == 0.0:
        return EF + c * T
    g = math.exp(a * T)
    return g * EF + (c / a) * (g - 1.0)


# ---------------------------------------------------------------------------
# Full-tree enumeration
# ---------------------------------------------------------------------------


def brute_force_tree(
    walk: WalkLaw, f_pi: LiftedDriver, F: TerminalCondition, fp_tol: float = 1e-12, fp_max_iter: int = 100
) -> float:
    """``Y_0`` by recursion over every increment sequence (no state merging)."""
    N = walk.grid.N
    xl, wl = walk.x_law, walk.w_law
    w_pts = np.zeros(1) if wl is None else np.asarray(wl.support)
    w_prb = np.ones(1) if wl is None else np.asarray(wl.probs)
    x_pts, x_prb = np.asarray(xl.support), np.asarray(xl.probs)
    leaves = float(len(w_pts) * len(x_pts)) ** N
    if N > TREE_MAX_N or leaves > TREE_MAX_LEAVES:
        raise TreeTooLarge(f"N={N} with {len(w_pts) * len(x_pts)} joint atoms is too large for the full tree")
    mon = set(monitoring_indices(F, N)[1:])
    i0 = xl.zero_index
    delta = walk.grid.delta

    def value(i: int, path: tuple, w: float) -> float:
        if i == N:
            xs = np.array([[0.0, *path]])
            return float(F(xs, None if wl is None else np.array([w]))[0])
        x = path[-1] if path else 0.0
        table = np.empty((len(w_pts), len(x_pts)))
        for a, dw in enumerate(w_pts):
            for b, dx in enumerate(x_pts):
                xn = x + dx
                # the path keeps X at monitoring dates only; the last entry is the current X
                kept = path[:-1] if path and i not in mon else path
                table[a, b] = value(i + 1, kept + (xn,), w + dw)
        E = float(w_prb @ table @ x_prb)
        cond = w_prb @ table
        Zt = (cond - cond[i0])[None, :]
        Z = None if wl is None else np.array([float((w_pts * w_prb) @ table @ x_prb) / delta])
        Y, _ = solve_implicit(f_pi, walk.grid.time(i), np.array([E]), Z, Zt, delta, fp_tol, fp_max_iter)
        return float(Y[0])

    return value(0, (), 0.0)
