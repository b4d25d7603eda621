import sys

import numpy as np
import pytest

from qcocycle.base_driver import BaseSystem, make_orbit
from qcocycle.map_family import FiberSelector, ObservableSpec, component
from qcocycle.twisted_cocycle import TwistedCocycle, acim_pullback, center_observable
from qcocycle.ulam_core import Partition, UlamCocycle


def build(maps, comps, n_bins=64, base=None, back=600, fwd=600, center=False, scalings=None):
    """(orbit, ulam, tc) for a list of maps and observable components."""
    if base is None:
        base = BaseSystem("rotation", n_symbols=max(2, len(maps)))
    orbit = make_orbit(base, back, fwd)
    ulam = UlamCocycle(FiberSelector(tuple(maps)), Partition(n_bins))
    comps = tuple(c if not isinstance(c, str) else component(c) for c in comps)
    tc = TwistedCocycle(ulam, ObservableSpec(comps, scalings))
    if center:
        tc = tc.with_observable(center_observable(tc, orbit, 0, fwd - 20))
    return orbit, ulam, tc


def acim0(ulam, orbit):
    return acim_pullback(ulam, orbit, 0, 1, tol=1e-13).densities[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
