"""Exact lattice evaluation of the L² stability estimate for a pair of BSΔEs.

For solutions ``k = 0, 1`` on a common lattice, with ``δ = (·)^0 - (·)^1``:

    LHS = E[max_j |δY_j|²] + Σ_j E[|δZ_j|² Δ + |δM_j|² + Var_j(δZ̃_j(ΔX))]
    RHS = E[|δY_N|²] + Σ_j E[|δf_j|²] Δ

where ``δf_j = f^0 - f^1`` evaluated along solution 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretize import LiftedDriver
from .solver import DiscreteSolution, Lattice, _Step


@dataclass(frozen=True)
class StabilityTerms:
    max_dy2: float
    sum_dz2: float
    sum_dm2: float
    sum_jump_var: float
    terminal_dy2: float
    sum_df2: float
    lemma_var: float  # Σ E[Var_j(δZ̃_j)]
    lemma_mean2: float  # Σ E[|E_j δZ̃_j|²]
    max_dy2_width: float = 0.0  # bracket width of the running-max term (0 when exact)

    @property
    def lhs(self) -> float:
        return self.max_dy2 + self.sum_dz2 + self.sum_dm2 + self.sum_jump_var

    @property
    def rhs(self) -> float:
        return self.terminal_dy2 + self.sum_df2

    @property
    def ratio(self) -> float:
        """``LHS / RHS``; ``0`` when both sides vanish, ``inf`` when only the RHS does."""
        lhs, rhs = self.lhs, self.rhs
        if rhs == 0.0:
            return 0.0 if lhs == 0.0 else float("inf")
        return lhs / rhs

    @property
    def lemma_ratio(self) -> float:
        """``Σ E Var / Σ E |E δZ̃|²`` (``inf`` if the denominator vanishes)."""
        if self.lemma_mean2 == 0.0:
            return float("inf")
        return self.lemma_var / self.lemma_mean2


STATE_CAP = 20_000


@dataclass(frozen=True)
class RunningMax:
    """``E[max_j D_j]`` with a rigorous bracket ``[lower, upper]`` (equal when exact)."""

    lower: float
    upper: float
    method: str

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _subtree_bounds(lattice: Lattice, D):
    N = lattice.N
    bound = [None] * (N + 1)
    bound[N] = D[N]
    for i in range(N - 1, -1, -1):
        bound[i] = np.maximum(D[i], bound[i + 1][lattice.children[i]].max(axis=1))
    return bound


def _forward_running_max(lattice: Lattice, D, bound, pj, state_cap: int) -> float | None:
    """Exact forward recursion over ``(node, running max)`` pairs; ``None`` past ``state_cap``.

    A pair is absorbed as soon as its running max dominates every value
    reachable from its node, so only pairs whose outcome is open are carried.
    """
    nodes = np.zeros(1, dtype=np.int64)
    run = np.asarray(D[0][:1], dtype=float)
    prob = np.ones(1)
    done = run >= bound[0][nodes]
    total = float(prob[done] @ run[done])
    nodes, run, prob = nodes[~done], run[~done], prob[~done]
    for i in range(lattice.N):
        if len(nodes) == 0:
            break
        if len(nodes) > state_cap:
            return None
        ch = lattice.children[i][nodes]
        cn = ch.ravel()
        cr = np.maximum(np.repeat(run, ch.shape[1]), D[i + 1][cn])
        cp = (prob[:, None] * pj[None, :]).ravel()
        done = cr >= bound[i + 1][cn]
        total += float(cp[done] @ cr[done])
        cn, cr, cp = cn[~done], cr[~done], cp[~done]
        order = np.lexsort((cr, cn))
        cn, cr, cp = cn[order], cr[order], cp[order]
        new = np.ones(len(cn), dtype=bool)
        new[1:] = (cn[1:] != cn[:-1]) | (cr[1:] != cr[:-1])
        starts = np.flatnonzero(new)
        nodes, run = cn[starts], cr[starts]
        prob = np.add.reduceat(cp, starts) if len(starts) else cp[:0]
    return total


def _exceed_probs(lattice: Lattice, D, pj, u: np.ndarray) -> np.ndarray:
    """``P(max_j D_j > u)`` for every threshold in ``u`` by backward recursion."""
    q = (D[lattice.N][:, None] > u[None, :]).astype(float)
    for i in range(lattice.N - 1, -1, -1):
        q = np.where(D[i][:, None] > u[None, :], 1.0, lattice.transition(i) @ q)
    return q[0]


def _threshold_running_max(lattice: Lattice, D, pj, rtol: float, max_thresholds: int, batch: int = 64) -> RunningMax:
    """Bracket ``E[max] = ∫ P(max >= u) du`` between adaptively refined thresholds.

    On ``(a, b]`` the integrand lies in ``[P(max > b), P(max > a)]``, and equals
    ``P(max > a)`` when no value of ``D`` falls strictly inside, so refining at
    the distinct values of ``D`` converges to the exact expectation.
    """
    vals = np.unique(np.concatenate(D))
    top = float(vals[-1])
    if top <= 0.0:
        return RunningMax(0.0, 0.0, "exact")
    picks = vals[np.unique(np.linspace(0, len(vals) - 1, min(batch, len(vals))).astype(int))]
    G: dict[float, float] = {}
    pending = np.unique(np.concatenate([[0.0], picks, [top]]))
    while True:
        todo = np.array([t for t in pending if t not in G])
        for k in range(0, len(todo), batch):
            chunk = todo[k:k + batch]
            for t, g in zip(chunk, _exceed_probs(lattice, D, pj, chunk)):
                G[float(t)] = float(g)
        ts = np.array(sorted(G))
        gs = np.array([G[t] for t in ts])
        a, b = ts[:-1], ts[1:]
        inside = np.searchsorted(vals, b, side="left") - np.searchsorted(vals, a, side="right")
        lower = (b - a) * np.where(inside > 0, gs[1:], gs[:-1])
        upper = (b - a) * gs[:-1]
        lo, hi = float(lower.sum()), float(upper.sum())
        width = upper - lower
        if hi - lo <= rtol * max(lo, 1e-300) or len(G) >= max_thresholds or not (width > 0).any():
            return RunningMax(lo, hi, "exact" if hi == lo else "bracket")
        worst = np.argsort(width)[::-1][:batch]
        worst = worst[width[worst] > 0]
        mids = []
        for j in worst:
            i0 = np.searchsorted(vals, a[j], side="right")
            i1 = np.searchsorted(vals, b[j], side="left")
            mids.append(vals[(i0 + i1 - 1) // 2])
        pending = np.unique(mids)


def expected_running_max(
    lattice: Lattice, D: list[np.ndarray], state_cap: int = STATE_CAP, rtol: float = 1e-6, max_thresholds: int = 2048
) -> RunningMax:
    """``E[max_j D_j]`` along lattice paths for a nonnegative node field ``D``."""
    _, _, pj = lattice.walk.joint()
    bound = _subtree_bounds(lattice, D)
    exact = _forward_running_max(lattice, D, bound, pj, state_cap)
    if exact is not None:
        return RunningMax(exact, exact, "exact")
    return _threshold_running_max(lattice, D, pj, rtol, max_thresholds)


def stability_terms(
    sol0: DiscreteSolution, sol1: DiscreteSolution, f0: LiftedDriver, f1: LiftedDriver
) -> StabilityTerms:
    lat = sol0.lattice
    if sol1.lattice is not lat:
        raise ValueError("both solutions must share one lattice")
    step = _Step(lat.walk)
    occ = lat.occupation()
    N, delta = lat.N, lat.walk.grid.delta
    dY = [a - b for a, b in zip(sol0.Y, sol1.Y)]
    rm = expected_running_max(lat, [d * d for d in dY])
    dz2 = dm2 = jv = df2 = lv = lm = 0.0
    for i in range(N):
        q = occ[i]
        if sol0.Z[i] is not None:
            dz2 += float(q @ (sol0.Z[i] - sol1.Z[i]) ** 2) * delta
        dm = sol0.dM[i] - sol1.dM[i]
        dm2 += float(q @ ((dm * dm) @ step.p_joint))
        dzt = sol0.Zt[i] - sol1.Zt[i]
        mean = dzt @ step.px
        var = (dzt * dzt) @ step.px - mean * mean
        jv += float(q @ var)
        lv += float(q @ var)
        lm += float(q @ (mean * mean))
        t = lat.walk.grid.time(i)
        args = (t, sol0.Y[i], sol0.Z[i], sol0.Zt[i])
        df = f0(*args) - f1(*args)
        df2 += float(q @ (df * df)) * delta
    term = float(occ[N] @ dY[N] ** 2)
    return StabilityTerms(rm.value, dz2, dm2, jv, term, df2, lv, lm, rm.upper - rm.lower)
