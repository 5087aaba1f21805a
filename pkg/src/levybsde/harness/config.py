"""INI experiment configuration.

Sections ``model``, ``driver`` and ``terminal`` take a ``name`` plus the
factory's keyword parameters; ``driver`` and ``terminal`` also accept
``lipschitz`` to override the declared constant.  Every other section has a
fixed key set and unknown keys are rejected.
"""
from __future__ import annotations

import ast
import configparser
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..drivers import make_driver
from ..errors import ConfigError, ContractionViolation
from ..levy import make_model
from ..terminal import make_terminal

SECTIONS = ("model", "grid", "driver", "terminal", "discretization", "oracle", "tolerances",
            "stability", "validation", "run")


@dataclass
class GridSpec:
    T: float = 1.0
    N: tuple[int, ...] = (4, 8, 16, 32)
    monitoring: tuple[float, ...] | None = None


@dataclass
class DiscretizationSpec:
    R: float | None = None
    bin_width: float | None = None
    kappa: int = 8
    brownian: str = "none"  # none | rademacher | trinomial


@dataclass
class OracleSpec:
    method: str = "auto"  # auto | closed_form | monte_carlo | enumeration | linear | none
    n_samples: int = 1_000_000


@dataclass
class Tolerances:
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    node_cap: int = 5_000_000
    edge_cap: int = 60_000_000
    mixed_N_cap: int = 12
    mc_band: float = 3.0
    zero_slack: float = 1e-10
    picard_tol: float = 1e-10
    picard_max: int = 50
    residual_tol: float = 1e-12
    q_slack: float = 1e-12


@dataclass
class StabilitySpec:
    N: tuple[int, ...] = (4, 8, 16)
    pairs: int = 20
    lemma_delta: float = 0.01
    growth_factor: float = 2.0


@dataclass
class ValidationSpec:
    deltas: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125)
    q_pairs: int = 100
    picard_N: int = 8


@dataclass
class RunSpec:
    seed: int = 0
    out: str = "results"
    format: str = "csv"
    timing: bool = False


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"name": "compound_poisson_normal", "rate": 1.0, "sigma": 1.0})
    driver: dict = field(default_factory=lambda: {"name": "zero"})
    terminal: dict = field(default_factory=lambda: {"name": "square"})
    grid: GridSpec = field(default_factory=GridSpec)
    discretization: DiscretizationSpec = field(default_factory=DiscretizationSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    stability: StabilitySpec = field(default_factory=StabilitySpec)
    validation: ValidationSpec = field(default_factory=ValidationSpec)
    run: RunSpec = field(default_factory=RunSpec)

    # -- builders ------------------------------------------------------------
    def build_model(self):
        p = dict(self.model)
        return make_model(p.pop("name"), **p)

    def build_driver(self, model=None):
        p = dict(self.driver)
        K = p.pop("lipschitz", None)
        f = make_driver(p.pop("name"), model if model is not None else self.build_model(), **p)
        if K is not None:
            f.lipschitz = float(K)
        return f

    def build_terminal(self):
        p = dict(self.terminal)
        K = p.pop("lipschitz", None)
        F = make_terminal(p.pop("name"), **p)
        if K is not None:
            F = replace(F, lipschitz=float(K))
        if self.grid.monitoring is not None:
            F = replace(F, monitoring=tuple(self.grid.monitoring))
        return F

    @property
    def mixed(self) -> bool:
        return self.discretization.brownian != "none"

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        """Parse-time checks: buildable objects, grid compatibility and ``K·Δ < 1``."""
        g = self.grid
        if g.T <= 0 or not g.N or any(n < 1 for n in g.N):
            raise ConfigError("grid needs T > 0 and positive N values")
        if self.discretization.brownian not in ("none", "rademacher", "trinomial"):
            raise ConfigError(f"unknown brownian variant {self.discretization.brownian!r}")
        if self.run.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        model = self.build_model()
        f = self.build_driver(model)
        F = self.build_terminal()
        mon = F.monitoring
        if mon[0] != 0.0 or mon[-1] != 1.0 or any(b <= a for a, b in zip(mon, mon[1:])):
            raise ConfigError("monitoring fractions must increase from 0 to 1")
        for N in sorted(set(g.N) | set(self.stability.N)):
            if f.lipschitz * g.T / N >= 1.0:
                raise ContractionViolation(f"K·Δ = {f.lipschitz * g.T / N:.4g} >= 1 for N={N}")
        for N in g.N:
            for s in mon:
                if abs(s * N - round(s * N)) > 1e-9:
                    raise ConfigError(f"monitoring date {s}·T is not on the grid for N={N}")


_TYPED = {
    "grid": GridSpec,
    "discretization": DiscretizationSpec,
    "oracle": OracleSpec,
    "tolerances": Tolerances,
    "stability": StabilitySpec,
    "validation": ValidationSpec,
    "run": RunSpec,
}


def _value(text: str):
    text = text.strip()
    if text == "":
        return None
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low == "none":
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(section: str, key: str, raw, default):
    if raw is None:
        return None
    try:
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (tuple, list)) else (raw,)
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                raise ValueError(raw)
            return raw
        if isinstance(default, int):
            if isinstance(raw, float) and raw.is_integer():
                raw = int(raw)
            if not isinstance(raw, int):
                raise ValueError(raw)
            return raw
        if isinstance(default, float) or default is None:
            if key in ("monitoring",):
                items = raw if isinstance(raw, (tuple, list)) else (raw,)
                return tuple(float(v) for v in items)
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot interpret {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        items = {k: _value(v) for k, v in cp.items(section)}
        if section in ("model", "driver", "terminal"):
            if "name" not in items:
                raise ConfigError(f"[{section}] needs a name")
            setattr(cfg, section, {k: v for k, v in items.items() if v is not None})
            continue
        spec = getattr(cfg, section)
        defaults = asdict(spec)
        for k, raw in items.items():
            if k not in defaults:
                raise ConfigError(f"unknown key {k!r} in [{section}]")
            if isinstance(defaults[k], str):
                raw = cp.get(section, k).strip()
            setattr(spec, k, _coerce(section, k, raw, defaults[k]))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def config_from_dict(d: dict) -> ExperimentConfig:
    """Inverse of :meth:`ExperimentConfig.to_dict` (lists become tuples)."""
    def tup(spec_cls, data):
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return spec_cls(**kw)

    return ExperimentConfig(
        model=dict(d["model"]), driver=dict(d["driver"]), terminal=dict(d["terminal"]),
        **{name: tup(cls, d[name]) for name, cls in _TYPED.items()},
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float) and math.isinf(v):
        return repr(v)
    return repr(v) if not isinstance(v, str) else v


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = []
    for section in ("model", "driver", "terminal"):
        lines.append(f"[{section}]")
        for k, v in getattr(cfg, section).items():
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")
    for section in _TYPED:
        lines.append(f"[{section}]")
        for k, v in asdict(getattr(cfg, section)).items():
            if isinstance(v, list):
                v = tuple(v)
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)
