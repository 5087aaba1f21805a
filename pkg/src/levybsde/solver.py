"""Exact backward induction for the BSΔE on the reachable lattice.

At each node the one-step quantities are finite sums over the joint child law:

    E      = E_i[Y_{i+1}]
    Z      = Δ^{-1} E_i[Y_{i+1} ΔW]
    Z̃(x)  = E_i[Y_{i+1} | ΔX = x] - E_i[Y_{i+1} | ΔX = 0]
    Y      = f(t_i, Y, Z, Z̃) Δ + E            (implicit, fixed-point iteration)
    ΔM     = Y_{i+1} - E - Z ΔW - (Z̃(ΔX) - E_i Z̃(ΔX))

Nodes are integer lattice keys ``(x, w, recorded x at past monitoring dates)``
in units of the walk lattice spacings, hashed per slice into int64 codes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .discretize import IncrementLaw, LiftedDriver
from .errors import ConfigError, ContractionViolation, FixedPointStall, NonConvergence, StateExplosion
from .terminal import TerminalCondition
from .walks import WalkLaw


@dataclass(frozen=True)
class SolverOptions:
    node_cap: int = 5_000_000
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    mixed_N_cap: int = 12
    edge_cap: int = 60_000_000


DEFAULT_OPTIONS = SolverOptions()


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------


def monitoring_indices(terminal: TerminalCondition, N: int) -> tuple[int, ...]:
    idx = []
    for s in terminal.monitoring:
        k = round(s * N)
        if abs(k - s * N) > 1e-9:
            raise ConfigError(f"monitoring date {s}·T is not on the grid with N={N}")
        idx.append(int(k))
    if idx[0] != 0 or idx[-1] != N:
        raise ConfigError("monitoring dates must start at 0 and end at T")
    return tuple(idx)


@dataclass
class Lattice:
    """Reachable nodes per slice and the child map between consecutive slices.

    ``keys[i]`` has columns ``(x, w, rec_1, ..., rec_k)`` in lattice units,
    where ``rec_j`` is ``X`` at the j-th interior monitoring date already passed.
    ``children[i][n, a]`` is the index in slice ``i+1`` of node ``n``'s child
    under joint atom ``a`` (W-atom outer, X-atom inner).
    """

    walk: WalkLaw
    monitoring: tuple[int, ...]
    keys: list[np.ndarray]
    children: list[np.ndarray]
    _transitions: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.walk.grid.N

    @property
    def n_nodes(self) -> int:
        return sum(len(k) for k in self.keys)

    def x_values(self, i: int) -> np.ndarray:
        return self.keys[i][:, 0] * self.walk.x_law.lattice_unit

    def w_values(self, i: int) -> np.ndarray | None:
        if self.walk.w_law is None:
            return None
        return self.keys[i][:, 1] * self.walk.w_law.lattice_unit

    def monitored(self, i: int) -> np.ndarray:
        """``(X_{s_0}, ..., X_{s_d})`` for dates ``s_d <= t_i``, the last being the current ``X``."""
        k = self.keys[i]
        u = self.walk.x_law.lattice_unit
        cols = [np.zeros(len(k))]
        cols += [k[:, c] * u for c in range(2, k.shape[1])]
        if i > 0:
            cols.append(k[:, 0] * u)
        return np.column_stack(cols)

    def transition(self, i: int) -> sparse.csr_matrix:
        """One-step transition matrix from slice ``i`` to slice ``i + 1``."""
        if i not in self._transitions:
            _, _, pj = self.walk.joint()
            ch = self.children[i]
            n, S = ch.shape
            rows = np.repeat(np.arange(n), S)
            self._transitions[i] = sparse.csr_matrix(
                (np.tile(pj, n), (rows, ch.ravel())), shape=(n, len(self.keys[i + 1]))
            )
        return self._transitions[i]

    def occupation(self) -> list[np.ndarray]:
        """Forward probabilities of reaching each node."""
        _, _, pj = self.walk.joint()
        probs = [np.ones(1)]
        for i, ch in enumerate(self.children):
            nxt = np.bincount(ch.ravel(), weights=(probs[-1][:, None] * pj[None, :]).ravel(), minlength=len(self.keys[i + 1]))
            probs.append(nxt)
        return probs


def _require_lattice(law: IncrementLaw, what: str) -> np.ndarray:
    if law.lattice_unit is None or law.lattice_index is None:
        raise ConfigError(f"{what} law is not on a lattice; snap it first (snap_to_lattice)")
    return np.asarray(law.lattice_index, dtype=np.int64)


def _decode(codes: np.ndarray, radices: list[int], offsets: list[int]) -> np.ndarray:
    out = np.empty((len(codes), len(radices)), dtype=np.int64)
    rem = codes.copy()
    for c, (r, o) in enumerate(zip(radices, offsets)):
        out[:, c] = rem % r - o
        rem //= r
    return out


def build_lattice(
    walk: WalkLaw,
    terminal: TerminalCondition,
    node_cap: int = DEFAULT_OPTIONS.node_cap,
    edge_cap: int = DEFAULT_OPTIONS.edge_cap,
) -> Lattice:
    """Reachable lattice; ``StateExplosion`` once nodes exceed ``node_cap`` or child-map entries ``edge_cap``.

    Child codes are formed from parent codes in bounded chunks, so an
    oversized lattice is rejected before it is materialised.
    """
    N = walk.grid.N
    mon = monitoring_indices(terminal, N)
    interior = list(mon[1:-1])
    xs = _require_lattice(walk.x_law, "jump")
    ws = _require_lattice(walk.w_law, "Brownian") if walk.w_law is not None else np.zeros(1, dtype=np.int64)
    dx = np.tile(xs, len(ws))
    dw = np.repeat(ws, len(xs))
    S = len(dx)
    xr = N * int(np.abs(xs).max())
    wr = N * int(np.abs(ws).max())
    rx, rw = 2 * xr + 1, 2 * wr + 1
    if float(rx) ** (1 + len(interior)) * rw >= 2.0**62:
        raise StateExplosion("lattice keys do not fit a 64-bit code; reduce monitoring dates or kappa")
    mult = [1, rx] + [rx * rw * rx**j for j in range(len(interior))]
    radices = [rx, rw] + [rx] * len(interior)
    offsets = [xr, wr] + [xr] * len(interior)
    step_code = dx * mult[0] + dw * mult[1]
    chunk = max(1, (1 << 22) // S)

    keys = [np.zeros((1, 2), dtype=np.int64)]
    codes = np.array([xr * mult[0] + wr * mult[1]], dtype=np.int64)
    children = []
    total, edges = 1, 0
    for i in range(N):
        n = len(codes)
        edges += n * S
        if edges > edge_cap:
            raise StateExplosion(f"{edges} child-map entries exceed the cap {edge_cap} at step {i + 1}")
        px = keys[-1][:, 0]
        rec = mult[2 + interior.index(i + 1)] if i + 1 in interior else 0

        def child_codes(a, b):
            c = codes[a:b, None] + step_code[None, :]
            if rec:
                c = c + (px[a:b, None] + dx[None, :] + xr) * rec
            return c

        uniq = np.empty(0, dtype=np.int64)
        for a in range(0, n, chunk):
            uniq = np.union1d(uniq, child_codes(a, a + chunk))
            if total + len(uniq) > node_cap:
                raise StateExplosion(f"more than {node_cap} lattice nodes at step {i + 1}")
        total += len(uniq)
        ch = np.empty((n, S), dtype=np.int32)
        for a in range(0, n, chunk):
            ch[a:a + chunk] = np.searchsorted(uniq, child_codes(a, a + chunk))
        n_cols = 2 + sum(1 for m in interior if m <= i + 1)
        keys.append(_decode(uniq, radices[:n_cols], offsets[:n_cols]))
        children.append(ch)
        codes = uniq
    return Lattice(walk, mon, keys, children)


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass
class DiscreteSolution:
    """Per-slice node tables; ``Z[i]`` is ``None`` in pure-jump mode."""

    lattice: Lattice
    Y: list[np.ndarray]
    Z: list[np.ndarray | None]
    Zt: list[np.ndarray]
    dM: list[np.ndarray]
    fp_iterations: int = 0

    @property
    def y0(self) -> float:
        return float(self.Y[0][0])

    @property
    def N(self) -> int:
        return self.lattice.N

    def max_abs_dm(self) -> float:
        return max(float(np.abs(m).max()) for m in self.dM)

    def summary_rows(self) -> list[dict]:
        """Compact per-slice table: time, Y quantiles over nodes, Y₀, max |ΔM|."""
        grid = self.lattice.walk.grid
        rows = []
        for i in range(self.N + 1):
            q = np.quantile(self.Y[i], [0.0, 0.25, 0.5, 0.75, 1.0])
            rows.append(
                {
                    "t": grid.time(i),
                    "nodes": len(self.Y[i]),
                    "y_min": q[0], "y_q25": q[1], "y_median": q[2], "y_q75": q[3], "y_max": q[4],
                    "y0": self.y0,
                    "max_abs_dm": float(np.abs(self.dM[i]).max()) if i < self.N else 0.0,
                }
            )
        return rows

    def to_json(self) -> str:
        lat = self.lattice
        slices = []
        for i in range(self.N + 1):
            s = {"t": lat.walk.grid.time(i), "keys": lat.keys[i].tolist(), "Y": self.Y[i].tolist()}
            if i < self.N:
                s["Zt"] = self.Zt[i].tolist()
                s["dM"] = self.dM[i].tolist()
                if self.Z[i] is not None:
                    s["Z"] = self.Z[i].tolist()
            slices.append(s)
        return json.dumps(
            {"y0": self.y0, "x_unit": lat.walk.x_law.lattice_unit,
             "x_support": lat.walk.x_law.support.tolist(), "slices": slices}
        )


class _Step:
    """Precomputed joint-law arrays for one-step sums."""

    def __init__(self, walk: WalkLaw):
        self.delta = walk.grid.delta
        self.w_joint, self.x_joint, self.p_joint = walk.joint()
        self.sx = walk.x_law.size
        self.sw = 1 if walk.w_law is None else walk.w_law.size
        self.qw = np.ones(1) if walk.w_law is None else np.asarray(walk.w_law.probs)
        self.px = np.asarray(walk.x_law.probs)
        self.i0 = walk.x_law.zero_index
        self.x_of_joint = np.tile(np.arange(self.sx), self.sw)
        self.mixed = walk.w_law is not None
        self.pw = self.p_joint * self.w_joint
        self.qw_w = np.zeros(1) if walk.w_law is None else self.qw * np.asarray(walk.w_law.support)

    def moments(self, Yc: np.ndarray):
        """``(E, Z, Z̃, cond)`` from the child value table ``Yc`` of shape ``(n, S)``.

        ``E`` is assembled as ``cond(0) + E Z̃`` so that the martingale residual
        below cancels exactly whenever ``Y_{i+1}`` is a function of ``ΔX`` alone.
        """
        Yw = Yc.reshape(-1, self.sw, self.sx)
        cond = np.einsum("nwx,w->nx", Yw, self.qw)
        Zt = cond - cond[:, [self.i0]]
        E = cond[:, self.i0] + Zt @ self.px
        Z = None
        if self.mixed:
            # centred E[Y | ΔW] (E ΔW = 0) so that Y free of W gives Z = 0 exactly
            r = Yw @ self.px
            Z = ((r - r[:, :1]) @ self.qw_w) / self.delta
        return E, Z, Zt, cond

    def martingale(self, Yc, Z, cond):
        # Y_{i+1} - E - ZΔW - (Z̃(ΔX) - E Z̃) with E = cond(0) + E Z̃ and Z̃ = cond - cond(0)
        dM = Yc - cond[:, self.x_of_joint]
        if self.mixed:
            dM = dM - Z[:, None] * self.w_joint[None, :]
        return dM


def solve_implicit(f: Callable, t: float, E, Z, Zt, delta: float, tol: float, max_iter: int, y_init=None):
    """Fixed point of ``Y = f(t, Y, Z, Z̃) Δ + E`` node by node.

    Iteration stops per node once the update is below ``tol · max(1, |Y|)``;
    converged nodes are frozen so a node's result does not depend on the batch
    it is solved in.  Returns ``(Y, iterations)``.
    """
    E = np.asarray(E, dtype=float)
    if "y" not in f.depends_on:
        return E + delta * f(t, E, Z, Zt), 1
    Y = E.copy() if y_init is None else np.array(y_init, dtype=float, copy=True)
    active = np.arange(len(Y))
    for it in range(1, max_iter + 1):
        zi = None if Z is None else Z[active]
        zti = None if Zt is None else Zt[active]
        new = E[active] + delta * f(t, Y[active], zi, zti)
        done = np.abs(new - Y[active]) <= tol * np.maximum(1.0, np.abs(new))
        Y[active] = new
        active = active[~done]
        if len(active) == 0:
            return Y, it
    raise FixedPointStall(f"implicit step did not reach tol {tol} in {max_iter} iterations at t={t}")


def _check_contraction(f_pi, walk: WalkLaw, opts: SolverOptions):
    kd = f_pi.lipschitz * walk.grid.delta
    if not kd < 1.0:
        raise ContractionViolation(f"K·Δ = {kd:.4g} >= 1")
    if walk.w_law is not None and walk.grid.N > opts.mixed_N_cap:
        raise StateExplosion(f"mixed mode limited to N <= {opts.mixed_N_cap}")


def terminal_values(lattice: Lattice, F: TerminalCondition) -> np.ndarray:
    N = lattice.N
    w = lattice.w_values(N)
    if F.uses_w and w is None:
        raise ConfigError(f"terminal {F.name!r} needs the Brownian walk (mixed mode)")
    return F(lattice.monitored(N), w)


def backward_solve(
    walk: WalkLaw,
    f_pi: LiftedDriver,
    F: TerminalCondition,
    opts: SolverOptions = DEFAULT_OPTIONS,
    lattice: Lattice | None = None,
    y_init: Callable | None = None,
) -> DiscreteSolution:
    """Solve the BSΔE on the reachable lattice.

    ``y_init(i, E)`` optionally overrides the fixed-point starting value
    (default ``E_i[Y_{i+1}]``).
    """
    _check_contraction(f_pi, walk, opts)
    lat = lattice if lattice is not None else build_lattice(walk, F, opts.node_cap, opts.edge_cap)
    step = _Step(walk)
    N = walk.grid.N
    Y: list = [None] * (N + 1)
    Z: list = [None] * N
    Zt: list = [None] * N
    dM: list = [None] * N
    Y[N] = terminal_values(lat, F)
    iters = 0
    for i in range(N - 1, -1, -1):
        Yc = Y[i + 1][lat.children[i]]
        E, Z[i], Zt[i], cond = step.moments(Yc)
        start = None if y_init is None else y_init(i, E)
        Y[i], it = solve_implicit(f_pi, walk.grid.time(i), E, Z[i], Zt[i], step.delta, opts.fp_tol, opts.fp_max_iter, start)
        iters = max(iters, it)
        dM[i] = step.martingale(Yc, Z[i], cond)
    return DiscreteSolution(lat, Y, Z, Zt, dM, iters)


def one_step_residuals(sol: DiscreteSolution, f_pi: LiftedDriver) -> tuple[float, float]:
    """Max defects of ``Y_i = fΔ + E_i Y_{i+1}`` and of the full one-step recomposition."""
    lat = sol.lattice
    step = _Step(lat.walk)
    r1 = r2 = 0.0
    for i in range(sol.N):
        Yc = sol.Y[i + 1][lat.children[i]]
        f = f_pi(lat.walk.grid.time(i), sol.Y[i], sol.Z[i], sol.Zt[i])
        E = Yc @ step.p_joint
        r1 = max(r1, float(np.abs(sol.Y[i] - f * step.delta - E).max()))
        jump = sol.Zt[i][:, step.x_of_joint] - (sol.Zt[i] @ step.px)[:, None]
        rhs = -f[:, None] * step.delta + jump + sol.dM[i]
        if sol.Z[i] is not None:
            rhs = rhs + sol.Z[i][:, None] * step.w_joint[None, :]
        r2 = max(r2, float(np.abs((Yc - sol.Y[i][:, None]) - rhs).max()))
    return r1, r2


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------


@dataclass
class PicardResult:
    iterates: list[DiscreteSolution]
    distances: list[float]
    solution: DiscreteSolution
    converged: bool


def _sup_distance(a: DiscreteSolution, b: DiscreteSolution) -> float:
    d = max(float(np.abs(x - y).max()) for x, y in zip(a.Y, b.Y))
    d = max(d, max(float(np.abs(x - y).max()) for x, y in zip(a.Zt, b.Zt)))
    if a.Z[0] is not None:
        d = max(d, max(float(np.abs(x - y).max()) for x, y in zip(a.Z, b.Z)))
    return d


def picard_solve(
    walk: WalkLaw,
    f_pi: LiftedDriver,
    F: TerminalCondition,
    p_max: int = 50,
    tol: float = 1e-10,
    opts: SolverOptions = DEFAULT_OPTIONS,
    lattice: Lattice | None = None,
) -> PicardResult:
    """Picard sequence started from ``(Y, Z, Z̃) ≡ 0``; each iterate is explicit."""
    _check_contraction(f_pi, walk, opts)
    lat = lattice if lattice is not None else build_lattice(walk, F, opts.node_cap, opts.edge_cap)
    step = _Step(walk)
    N = walk.grid.N
    zero_z = [np.zeros(len(lat.keys[i])) if step.mixed else None for i in range(N)]
    current = DiscreteSolution(
        lat,
        [np.zeros(len(k)) for k in lat.keys],
        zero_z,
        [np.zeros((len(lat.keys[i]), step.sx)) for i in range(N)],
        [np.zeros((len(lat.keys[i]), len(step.p_joint))) for i in range(N)],
    )
    FT = terminal_values(lat, F)
    iterates = [current]
    distances: list[float] = []
    for p in range(p_max):
        Y: list = [None] * (N + 1)
        Z: list = [None] * N
        Zt: list = [None] * N
        dM: list = [None] * N
        Y[N] = FT
        for i in range(N - 1, -1, -1):
            Yc = Y[i + 1][lat.children[i]]
            E, Z[i], Zt[i], cond = step.moments(Yc)
            f = f_pi(walk.grid.time(i), current.Y[i], current.Z[i], current.Zt[i])
            Y[i] = E + step.delta * f
            dM[i] = step.martingale(Yc, Z[i], cond)
        nxt = DiscreteSolution(lat, Y, Z, Zt, dM)
        distances.append(_sup_distance(nxt, current))
        iterates.append(nxt)
        current = nxt
        if distances[-1] < tol:
            return PicardResult(iterates, distances, current, True)
    if any(b >= a for a, b in zip(distances[-3:], distances[-2:])):
        raise NonConvergence(f"Picard distances stopped decreasing: {distances[-3:]}")
    return PicardResult(iterates, distances, current, False)


# ---------------------------------------------------------------------------
# Orthogonal martingale diagnostics
# ---------------------------------------------------------------------------


def default_k_family(law: IncrementLaw) -> list[Callable]:
    """Identity plus the indicator of every support atom."""
    fam: list[Callable] = [lambda x: x]
    for a in law.support:
        fam.append(lambda x, a=a: (x == a).astype(float))
    return fam


def orthogonality_check(sol: DiscreteSolution, k_family: Sequence[Callable] | None = None) -> float:
    """Max over nodes of ``|E_i[ΔM ΔW]|`` and ``|E_i[ΔM (k(ΔX) - E k(ΔX))]|``."""
    walk = sol.lattice.walk
    step = _Step(walk)
    fam = default_k_family(walk.x_law) if k_family is None else list(k_family)
    worst = 0.0
    weights = []
    for k in fam:
        kx = np.asarray(k(walk.x_law.support), dtype=float)
        centred = kx - kx @ step.px
        weights.append(step.p_joint * centred[step.x_of_joint])
    if step.mixed:
        weights.append(step.pw)
    Wt = np.column_stack(weights)
    for dm in sol.dM:
        worst = max(worst, float(np.abs(dm @ Wt).max()))
    return worst


@dataclass
class MIncrements:
    max_abs: float
    per_slice: list[float]
    orthogonality: float


def compute_m_increments(sol: DiscreteSolution) -> MIncrements:
    per = [float(np.abs(m).max()) for m in sol.dM]
    return MIncrements(max(per), per, orthogonality_check(sol))


def representation_check(law: IncrementLaw, f_terminal: Callable) -> float:
    """Atomwise defect of ``F = E F + (Z̃(ΔX) - E Z̃(ΔX))`` for ``F = f(ΔX)``."""
    F = np.asarray(f_terminal(law.support), dtype=float) * np.ones(law.size)
    Zt = F - F[law.zero_index]
    rhs = F @ law.probs + (Zt - Zt @ law.probs)
    return float(np.abs(F - rhs).max())
