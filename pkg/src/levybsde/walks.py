"""Joint random walk ``(W^(π), X^(π))`` and forward path sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discretize import IncrementLaw, TemporalGrid, _frozen
from .errors import ConfigError

CHUNK = 1 << 16


def brownian_increment_law(delta: float, variant: str = "rademacher") -> IncrementLaw:
    """Two-point ``±√Δ`` or three-point ``{-c, 0, c}`` (``c² = 3Δ/2``) Brownian step."""
    if delta <= 0:
        raise ConfigError("Δ must be positive")
    if variant == "rademacher":
        c = math.sqrt(delta)
        idx, probs = [-1, 1], [0.5, 0.5]
    elif variant == "trinomial":
        c = math.sqrt(1.5 * delta)
        idx, probs = [-1, 0, 1], [1 / 3, 1 / 3, 1 / 3]
    else:
        raise ConfigError(f"unknown Brownian variant {variant!r}")
    idx = np.array(idx, dtype=np.int64)
    return IncrementLaw(
        support=_frozen(idx * c), probs=_frozen(probs), delta=float(delta), sigma2=1.0, h=c,
        zero_prob_bound=0.0, kind="brownian", lattice_unit=c, lattice_index=_frozen(idx, np.int64), kappa=1,
    )


def check_brownian_condition(law: IncrementLaw) -> float:
    """``max(|E ΔW|, |E ΔW² - Δ|)``."""
    mean = float(law.support @ law.probs)
    var = float(law.support**2 @ law.probs)
    return max(abs(mean), abs(var - law.delta))


@dataclass(frozen=True)
class WalkLaw:
    x_law: IncrementLaw
    grid: TemporalGrid
    w_law: IncrementLaw | None = None

    def __post_init__(self):
        for law in (self.x_law, self.w_law):
            if law is not None and not math.isclose(law.delta, self.grid.delta, rel_tol=1e-12):
                raise ConfigError(f"law mesh {law.delta} does not match grid mesh {self.grid.delta}")

    @property
    def mode(self) -> str:
        return "pure_jump" if self.w_law is None else "mixed"

    @property
    def d1(self) -> int:
        return 0 if self.w_law is None else 1

    def joint(self):
        """Joint step atoms ``(w, x, prob)`` with ``w`` outer and ``x`` inner."""
        if self.w_law is None:
            return np.zeros(self.x_law.size), self.x_law.support, self.x_law.probs
        w = np.repeat(self.w_law.support, self.x_law.size)
        x = np.tile(self.x_law.support, self.w_law.size)
        p = np.outer(self.w_law.probs, self.x_law.probs).ravel()
        return w, x, p


@dataclass(frozen=True)
class PathBatch:
    """``X`` (and ``W``) on the grid; rows are paths, columns are ``t_0..t_N``."""

    times: np.ndarray
    X: np.ndarray
    W: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def to_csv(self, path: str | Path, which: str = "X") -> None:
        """Write one matrix as CSV with a header row of grid times."""
        data = self.X if which == "X" else self.W
        if data is None:
            raise ValueError(f"no {which} paths in this batch")
        header = ",".join(repr(float(t)) for t in self.times)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    def to_npz(self, path: str | Path) -> None:
        arrays = {"times": self.times, "X": self.X}
        if self.W is not None:
            arrays["W"] = self.W
        np.savez(path, **arrays)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based stream for one chunk of paths; independent of how chunks are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))


def sample_paths(law: WalkLaw, n_paths: int, seed: int) -> PathBatch:
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    N = law.grid.N
    xs, ws = [], []
    for c, start in enumerate(range(0, n_paths, CHUNK)):
        m = min(CHUNK, n_paths - start)
        rng = chunk_rng(seed, c)
        ix = rng.choice(law.x_law.size, size=(m, N), p=law.x_law.probs)
        xs.append(_cumulate(law.x_law.support[ix]))
        if law.w_law is not None:
            iw = rng.choice(law.w_law.size, size=(m, N), p=law.w_law.probs)
            ws.append(_cumulate(law.w_law.support[iw]))
    times = np.array([law.grid.time(i) for i in range(N + 1)])
    return PathBatch(times, np.vstack(xs), np.vstack(ws) if ws else None)


def _cumulate(steps: np.ndarray) -> np.ndarray:
    out = np.zeros((steps.shape[0], steps.shape[1] + 1))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out
