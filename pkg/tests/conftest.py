import sys

from levybsde.discretize import TemporalGrid, build_law
from levybsde.levy import CompoundPoissonNormal
from levybsde.walks import WalkLaw, brownian_increment_law


def make_walk(model=None, N=4, T=1.0, kappa=8, brownian=None, R=None, bin_width=None):
    """Snapped walk for ``model`` on a uniform grid; returns ``(layout, law, walk)``."""
    model = CompoundPoissonNormal() if model is None else model
    grid = TemporalGrid(T, N)
    layout, law = build_law(model, grid.delta, bin_width=bin_width, R=R, kappa=kappa)
    w_law = None if brownian is None else brownian_increment_law(grid.delta, brownian)
    return layout, law, WalkLaw(law, grid, w_law)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
