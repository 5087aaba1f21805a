"""Convergence, stability and validation studies driven by an :class:`ExperimentConfig`."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..discretize import (
    ZERO_PROB_BOUND,
    QLift,
    TemporalGrid,
    build_law,
    lift_driver,
    validate_moment_conditions,
)
from ..drivers import ConstantDriver, Driver, FunctionDriver, JumpIntegralDriver, LinearYDriver, ZeroDriver
from ..errors import LevyBSDEError, NoSampler
from ..oracles import OracleValue, expectation_terminal, has_sampler, linear_driver_value
from ..solver import (
    SolverOptions,
    backward_solve,
    build_lattice,
    one_step_residuals,
    orthogonality_check,
    picard_solve,
    representation_check,
)
from ..stability import stability_terms
from ..terminal import TerminalCondition
from ..walks import WalkLaw, brownian_increment_law, check_brownian_condition
from .config import ExperimentConfig

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


def solver_options(cfg: ExperimentConfig) -> SolverOptions:
    t = cfg.tolerances
    return SolverOptions(node_cap=t.node_cap, edge_cap=t.edge_cap, fp_tol=t.fp_tol, fp_max_iter=t.fp_max_iter,
                         mixed_N_cap=t.mixed_N_cap)


@dataclass
class Instance:
    grid: TemporalGrid
    layout: object
    law: object
    walk: WalkLaw


def build_instance(cfg: ExperimentConfig, model, N: int, brownian: str | None = None) -> Instance:
    d = cfg.discretization
    grid = TemporalGrid(cfg.grid.T, N)
    layout, law = build_law(model, grid.delta, bin_width=d.bin_width, R=d.R, kappa=d.kappa)
    variant = d.brownian if brownian is None else brownian
    w_law = None if variant == "none" else brownian_increment_law(grid.delta, variant)
    return Instance(grid, layout, law, WalkLaw(law, grid, w_law))


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

CONVERGENCE_COLUMNS = (
    "N", "delta", "y0_scheme", "y0_oracle", "oracle_stderr", "abs_error", "p0", "xx0_ratio", "nodes", "seconds",
)


@dataclass
class ConvergenceReport:
    rows: list[dict]
    verdicts: dict
    oracle: dict | None


def continuous_oracle(cfg: ExperimentConfig, model, f: Driver, F: TerminalCondition) -> OracleValue | None:
    """Reference ``Y_0`` for drivers with a known limit, else ``None``."""
    method = cfg.oracle.method
    if method == "none":
        return None
    if not isinstance(f, (ZeroDriver, ConstantDriver, LinearYDriver)):
        return None
    ef = expectation_terminal(
        model, F, cfg.grid.T, method="auto" if method in ("auto", "linear") else method,
        seed=cfg.run.seed, n_samples=cfg.oracle.n_samples,
    )
    a = f.a if isinstance(f, LinearYDriver) else 0.0
    c = f.c if isinstance(f, (ConstantDriver, LinearYDriver)) else 0.0
    return replace(ef, value=linear_driver_value(a, c, ef.value, cfg.grid.T))


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    model = cfg.build_model()
    f = cfg.build_driver(model)
    F = cfg.build_terminal()
    opts = solver_options(cfg)
    verdicts: dict = {}
    try:
        oracle = continuous_oracle(cfg, model, f, F)
    except NoSampler as exc:
        oracle = None
        verdicts["oracle"] = f"{SKIPPED}: {exc}"
    rows = []
    for N in sorted(cfg.grid.N):
        row = dict.fromkeys(CONVERGENCE_COLUMNS)
        row.update(N=N, delta=cfg.grid.T / N, status=PASS)
        t0 = time.perf_counter()
        try:
            inst = build_instance(cfg, model, N)
            sol = backward_solve(inst.walk, lift_driver(f, inst.law, inst.layout), F, opts)
            row.update(
                y0_scheme=sol.y0, p0=inst.law.p0, xx0_ratio=inst.law.abs_moment() / math.sqrt(inst.grid.delta),
                nodes=sol.lattice.n_nodes,
            )
            if oracle is not None:
                row.update(y0_oracle=oracle.value, oracle_stderr=oracle.std_error, abs_error=abs(sol.y0 - oracle.value))
            if not inst.law.p0 > ZERO_PROB_BOUND:
                row["status"] = f"{FAIL}: p0 = {inst.law.p0} <= 1/3"
        except LevyBSDEError as exc:
            row["status"] = f"{FAIL}: {type(exc).__name__}: {exc}"
        if cfg.run.timing:
            row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    verdicts.update(convergence_verdicts(rows, oracle, cfg))
    return ConvergenceReport(rows, verdicts, None if oracle is None else oracle.to_dict())


def convergence_verdicts(rows: list[dict], oracle: OracleValue | None, cfg: ExperimentConfig) -> dict:
    v = {"rows": PASS if all(r["status"] == PASS for r in rows) else FAIL}
    if oracle is None:
        v["accuracy"] = f"{SKIPPED}: no oracle for this driver/terminal"
        return v
    ok = [r for r in rows if r["abs_error"] is not None]
    if len(ok) < 2:
        v["accuracy"] = f"{FAIL}: fewer than two solved rows"
        return v
    increment = abs(ok[-1]["y0_scheme"] - ok[-2]["y0_scheme"])
    band = cfg.tolerances.mc_band * oracle.std_error + 2.0 * increment + cfg.tolerances.zero_slack
    err = ok[-1]["abs_error"]
    v["band"] = band
    v["accuracy"] = PASS if err <= band else f"{FAIL}: error {err:.6g} > band {band:.6g}"
    last = [r["abs_error"] for r in ok[-3:]]
    mono = all(b <= a + band for a, b in zip(last, last[1:]))
    v["monotone"] = PASS if mono else f"{FAIL}: errors {last}"
    return v


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """A second BSΔE ``(f¹, F¹)`` derived from the base pair.

    ``kind`` is ``identical``, ``translation`` (``F¹ = F⁰ + shift``) or
    ``random`` (bounded smooth perturbations of both driver and terminal,
    parameters drawn from ``seed``).
    """

    pair_id: int
    kind: str
    shift: float = 0.0
    seed: int = 0

    def apply(self, f0: Driver, F0: TerminalCondition, sigma2: float):
        if self.kind == "identical":
            return f0, F0
        if self.kind == "translation":
            return f0, F0.shifted(self.shift)
        rng = np.random.default_rng([self.seed, self.pair_id])
        al, be, ph = rng.uniform(0.05, 0.5), rng.uniform(0.5, 2.0), rng.uniform(0.0, 2 * math.pi)
        ga, om, ps = rng.uniform(0.05, 0.5), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2 * math.pi)
        et, rho = rng.uniform(0.0, 0.3), rng.uniform(-1.0, 1.0)
        H0 = F0.H
        F1 = TerminalCondition(
            lambda xs, w: H0(xs, w) + al * np.sin(be * xs[:, -1] + ph),
            F0.lipschitz + al * be, f"{F0.name}~{self.pair_id}", dict(F0.params), F0.monitoring, F0.uses_w,
        )

        def fn(t, y, z, zt):
            out = f0(t, y, z, zt if "zt" in f0.depends_on else None) + ga * np.sin(om * t + y + ps)
            out = out + et * np.tanh(rho * zt.integrate_x())
            if z is not None:
                out = out + 0.1 * et * np.tanh(z)
            return out

        K = f0.lipschitz + ga + et * abs(rho) * math.sqrt(sigma2) + 0.1 * et
        return FunctionDriver(fn, K, ("y", "z", "zt"), f"random~{self.pair_id}"), F1


def default_perturbations(n_random: int, seed: int, shift: float = 0.5) -> list[Perturbation]:
    out = [Perturbation(0, "identical"), Perturbation(1, "translation", shift=shift)]
    out += [Perturbation(2 + k, "random", seed=seed) for k in range(n_random)]
    return out


STABILITY_COLUMNS = (
    "pair_id", "kind", "N", "lhs", "rhs", "ratio", "max_dy2", "sum_dz2", "sum_dm2", "sum_jump_var",
    "terminal_dy2", "sum_df2", "lemma_ratio", "lemma_bound", "p0_bound", "status",
)


@dataclass
class StabilityReport:
    rows: list[dict]
    verdicts: dict


def run_stability(cfg: ExperimentConfig, perturbations: Sequence[Perturbation] | None = None) -> StabilityReport:
    model = cfg.build_model()
    f0 = cfg.build_driver(model)
    F0 = cfg.build_terminal()
    opts = solver_options(cfg)
    if perturbations is None:
        perturbations = default_perturbations(cfg.stability.pairs, cfg.run.seed)
    lemma_bound = ZERO_PROB_BOUND - cfg.stability.lemma_delta
    rows = []
    for N in sorted(cfg.stability.N):
        inst = build_instance(cfg, model, N)
        fp0 = lift_driver(f0, inst.law, inst.layout)
        lat = build_lattice(inst.walk, F0, opts.node_cap, opts.edge_cap)
        sol0 = backward_solve(inst.walk, fp0, F0, opts, lattice=lat)
        p0 = inst.law.p0
        for pert in perturbations:
            row = dict.fromkeys(STABILITY_COLUMNS)
            row.update(pair_id=pert.pair_id, kind=pert.kind, N=N, lemma_bound=lemma_bound, p0_bound=p0 / (1 - p0))
            if pert.kind == "translation" and "y" in f0.depends_on:
                row["status"] = f"{SKIPPED}: translation pair needs a y-independent driver"
                rows.append(row)
                continue
            try:
                f1, F1 = pert.apply(f0, F0, model.sigma2)
                fp1 = lift_driver(f1, inst.law, inst.layout)
                sol1 = backward_solve(inst.walk, fp1, F1, opts, lattice=lat)
                st = stability_terms(sol0, sol1, fp0, fp1)
            except LevyBSDEError as exc:
                row["status"] = f"{FAIL}: {type(exc).__name__}: {exc}"
                rows.append(row)
                continue
            row.update(
                lhs=st.lhs, rhs=st.rhs, ratio=st.ratio, max_dy2=st.max_dy2, sum_dz2=st.sum_dz2, sum_dm2=st.sum_dm2,
                sum_jump_var=st.sum_jump_var, terminal_dy2=st.terminal_dy2, sum_df2=st.sum_df2,
                lemma_ratio=st.lemma_ratio if st.lemma_mean2 > 0 else None, status=PASS,
            )
            if not math.isfinite(st.ratio):
                row["status"] = f"{FAIL}: ratio not finite"
            elif pert.kind == "identical" and st.ratio != 0.0:
                row["status"] = f"{FAIL}: identical pair ratio {st.ratio}"
            elif pert.kind == "translation" and abs(st.ratio - 1.0) > 1e-12:
                row["status"] = f"{FAIL}: translation ratio {st.ratio!r}"
            elif st.lemma_mean2 > 0 and st.lemma_ratio < lemma_bound:
                row["status"] = f"{FAIL}: lemma ratio {st.lemma_ratio} < {lemma_bound}"
            rows.append(row)
    return StabilityReport(rows, stability_verdicts(rows, cfg))


def stability_verdicts(rows: list[dict], cfg: ExperimentConfig) -> dict:
    v = {"rows": PASS if all(not str(r["status"]).startswith(FAIL) for r in rows) else FAIL}
    by_n: dict[int, float] = {}
    for r in rows:
        if r["ratio"] is not None:
            by_n[r["N"]] = max(by_n.get(r["N"], 0.0), r["ratio"])
    if len(by_n) >= 2:
        lo, hi = min(by_n), max(by_n)
        ok = by_n[hi] <= cfg.stability.growth_factor * by_n[lo]
        v["growth"] = PASS if ok else f"{FAIL}: max ratio {by_n[hi]:.6g} at N={hi} vs {by_n[lo]:.6g} at N={lo}"
    v["max_ratio"] = {str(n): r for n, r in sorted(by_n.items())}
    return v


# ---------------------------------------------------------------------------
# Validation suite
# ---------------------------------------------------------------------------

VALIDATION_COLUMNS = ("check", "status", "measured", "threshold", "detail")


@dataclass
class ValidationReport:
    rows: list[dict]
    verdicts: dict


def _check(name: str, ok: bool, measured, threshold, detail: str = "") -> dict:
    return {"check": name, "status": PASS if ok else FAIL, "measured": measured, "threshold": threshold, "detail": detail}


def random_piecewise_tables(law, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` random piecewise-constant functions sampled on the support, zero at the origin."""
    lo, hi = float(law.support[0]), float(law.support[-1])
    out = np.empty((n, law.size))
    for k in range(n):
        m = int(rng.integers(1, 6))
        cuts = np.sort(rng.uniform(lo, hi, m))
        levels = rng.normal(0.0, 1.0, m + 1)
        out[k] = levels[np.searchsorted(cuts, law.support)]
    out[:, law.zero_index] = 0.0
    return out


def q_lift_excess(law, layout, n_pairs: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``(I_Q, ∫|δz̃|² dν^(π))`` for ``n_pairs`` random pairs."""
    lift = QLift(law, layout)
    d = random_piecewise_tables(law, n_pairs, rng) - random_piecewise_tables(law, n_pairs, rng)
    return lift.l2_nu(d), lift.l2_nu_pi(d)


def run_validation(cfg: ExperimentConfig) -> ValidationReport:
    model = cfg.build_model()
    tol = cfg.tolerances
    rows: list[dict] = []
    deltas = sorted(cfg.validation.deltas, reverse=True)

    # construction exactness and zero-jump condition
    worst = {"mass": 0.0, "mean": 0.0, "var": 0.0, "sym": 0.0}
    min_p0, max_p1, min_v = 1.0, 0.0, math.inf
    for d in deltas:
        layout, law = build_law(model, d, bin_width=cfg.discretization.bin_width, R=cfg.discretization.R)
        worst["mass"] = max(worst["mass"], abs(law.mass() - 1.0))
        worst["mean"] = max(worst["mean"], abs(law.mean()))
        worst["var"] = max(worst["var"], abs(law.second_moment() - d * model.sigma2))
        worst["sym"] = max(worst["sym"], abs(law.p_plus - law.p_minus))
        min_p0, max_p1 = min(min_p0, law.p0), max(max_p1, law.p_plus, law.p_minus)
        min_v = min(min_v, layout.outer_variance)
    rows.append(_check("unit_mass", worst["mass"] <= 1e-12, worst["mass"], 1e-12))
    rows.append(_check("zero_mean", worst["mean"] <= 1e-12, worst["mean"], 1e-12))
    rows.append(_check("variance", worst["var"] <= 1e-10, worst["var"], 1e-10))
    rows.append(_check("zero_jump", min_p0 > ZERO_PROB_BOUND, min_p0, ZERO_PROB_BOUND, "min p0 over deltas"))
    rows.append(_check("core_probabilities", max_p1 <= 1 / 6 and worst["sym"] <= 1e-12, max_p1, 1 / 6,
                       f"max |p1 - p-1| = {worst['sym']:.3g}"))
    rows.append(_check("outer_variance", min_v >= -1e-12, min_v, -1e-12))

    # moment conditions along the mesh sequence
    mc = validate_moment_conditions(model, deltas, 1.0, cfg.discretization.R)
    ratios = [r.xx0_ratio for r in mc]
    mono = all(b <= a + 1e-6 for a, b in zip(ratios, ratios[1:]))
    rows.append(_check("xx0_decay", mono and ratios[-1] <= 0.5 * ratios[0], ratios[-1], 0.5 * ratios[0],
                       "E|dX|/sqrt(delta): " + " ".join(f"{r:.6g}" for r in ratios)))
    xx1 = max(r.xx1_residual for r in mc)
    rows.append(_check("xx1_variance", xx1 <= 1e-10, xx1, 1e-10))
    xx2 = [r.xx2_max_error for r in mc]
    rows.append(_check("xx2_weak_limit", xx2[-1] <= xx2[0], xx2[-1], xx2[0], "finest vs coarsest test-family error"))

    if cfg.mixed:
        d = cfg.grid.T / max(cfg.grid.N)
        res = check_brownian_condition(brownian_increment_law(d, cfg.discretization.brownian))
        rows.append(_check("brownian_moments", res <= tol.residual_tol, res, tol.residual_tol))

    # Q-lift Lipschitz property
    rng = np.random.default_rng([cfg.run.seed, 11])
    worst_excess, n_bad, n_all = -math.inf, 0, 0
    for d in deltas[:3]:
        layout, law = build_law(model, d, bin_width=cfg.discretization.bin_width, R=cfg.discretization.R)
        iq, rhs = q_lift_excess(law, layout, cfg.validation.q_pairs, rng)
        ex = iq - rhs
        worst_excess = max(worst_excess, float(ex.max()))
        n_bad += int((ex > tol.q_slack).sum())
        n_all += len(ex)
    rows.append(_check("q_lift_lipschitz", n_bad == 0, worst_excess, tol.q_slack, f"{n_bad}/{n_all} pairs exceed"))

    # representation and martingale structure
    _, law = build_law(model, deltas[0], bin_width=cfg.discretization.bin_width, R=cfg.discretization.R)
    rep = max(representation_check(law, g) for g in (lambda x: x, lambda x: x**2, np.cos))
    rows.append(_check("representation", rep <= tol.residual_tol, rep, tol.residual_tol))

    f = cfg.build_driver(model)
    F = cfg.build_terminal()
    opts = solver_options(cfg)
    N0 = min(cfg.grid.N)
    inst = build_instance(cfg, model, N0, brownian="none")
    sol = backward_solve(inst.walk, lift_driver(f, inst.law, inst.layout), F, opts)
    m = sol.max_abs_dm()
    rows.append(_check("pure_jump_m_zero", m <= tol.residual_tol, m, tol.residual_tol, f"N={N0}"))
    r1, r2 = one_step_residuals(sol, lift_driver(f, inst.law, inst.layout))
    scale = max(1.0, max(float(np.abs(y).max()) for y in sol.Y))
    rows.append(_check("one_step_identity", max(r1, r2) <= tol.fp_tol * scale * 10, max(r1, r2), tol.fp_tol * scale * 10))

    inst = build_instance(cfg, model, min(N0, 4), brownian="trinomial")
    Fm = TerminalCondition(lambda xs, w: np.cos(xs[:, -1]) * w + w**2, math.inf, "mixed_probe", uses_w=True)
    solm = backward_solve(inst.walk, lift_driver(ZeroDriver(), inst.law, inst.layout), Fm, opts)
    orth = orthogonality_check(solm)
    rows.append(_check("orthogonality", orth <= tol.residual_tol, orth, tol.residual_tol, "trinomial W"))

    # Picard decay
    N = cfg.validation.picard_N
    a = min(0.5, 0.25 * N / cfg.grid.T)
    inst = build_instance(cfg, model, N, brownian="none")
    fp = lift_driver(LinearYDriver(a, 0.1), inst.law, inst.layout)
    try:
        pr = picard_solve(inst.walk, fp, F, p_max=tol.picard_max, tol=tol.picard_tol, opts=opts)
        bs = backward_solve(inst.walk, fp, F, opts, lattice=pr.solution.lattice)
        gap = max(float(np.abs(x - y).max()) for x, y in zip(pr.solution.Y, bs.Y))
        dist = pr.distances
        dec = all(b < a_ for a_, b in zip(dist, dist[1:]) if a_ > 0)
        ok = pr.converged and dec and len(dist) <= 20 and gap <= 1e-9
        rows.append(_check("picard_decay", ok, dist[-1], tol.picard_tol, f"{len(dist)} iterations, gap {gap:.3g}"))
    except LevyBSDEError as exc:
        rows.append(_check("picard_decay", False, None, tol.picard_tol, f"{type(exc).__name__}: {exc}"))

    # terminal oracle availability
    if F.poly is None and not has_sampler(model):
        rows.append({"check": "terminal_oracle", "status": SKIPPED, "measured": None, "threshold": None,
                     "detail": f"no exact sampler for {model.name}"})
    else:
        rows.append({"check": "terminal_oracle", "status": PASS, "measured": None, "threshold": None,
                     "detail": "closed form" if F.poly is not None else "monte carlo"})

    verdict = FAIL if any(r["status"] == FAIL for r in rows) else PASS
    return ValidationReport(rows, {"overall": verdict})
