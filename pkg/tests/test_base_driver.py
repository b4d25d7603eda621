import numpy as np
import pytest

from qcocycle.base_driver import BaseSystem, OmegaState, advance, make_orbit, symbol_at
from qcocycle.errors import ConfigError


def test_advance_zero_is_identity():
    w = OmegaState(BaseSystem("rotation"), 17)
    assert advance(w, 0) == w


def test_rotation_point_after_two_steps():
    w = OmegaState(BaseSystem("rotation", alpha=0.25, x0=0.1), 0)
    assert advance(w, 2).point == pytest.approx(0.6, abs=1e-15)


def test_advance_and_back_is_exact():
    w = OmegaState(BaseSystem("rotation", x0=0.3), 5)
    for k in (1, 37, 10 ** 6, -999_983):
        back = advance(advance(w, k), -k)
        assert back == w
        assert back.point == w.point


def test_group_law_over_wide_window(rng):
    w = OmegaState(BaseSystem("iid", seed=3), 0)
    for a, b in rng.integers(-10 ** 6, 10 ** 6, size=(50, 2)):
        lhs, rhs = advance(w, a + b), advance(advance(w, a), b)
        assert lhs == rhs and symbol_at(lhs) == symbol_at(rhs)


def test_iid_symbol_recomputed_from_scratch():
    w0 = OmegaState(BaseSystem("iid", seed=7), 0)
    fresh = BaseSystem("iid", seed=7)
    assert symbol_at(advance(w0, 5)) == int(fresh.symbols(5))


def test_degenerate_weights_always_zero():
    b = BaseSystem("iid", weights=(1.0, 0.0), seed=1)
    assert np.all(b.symbols(np.arange(-5000, 5000)) == 0)


def test_iid_frequency_binomial_band():
    b = BaseSystem("iid", seed=2024)
    s = b.symbols(np.arange(10 ** 6))
    assert abs(np.mean(s == 0) - 0.5) < 0.002


def test_iid_birkhoff_average_three_se():
    b = BaseSystem("iid", weights=(0.2, 0.3, 0.5), seed=11)
    s = b.symbols(np.arange(10 ** 5))
    f = np.array([1.0, -2.0, 0.5])[s]
    mean = 0.2 * 1.0 + 0.3 * -2.0 + 0.5 * 0.5
    var = 0.2 * 1.0 + 0.3 * 4.0 + 0.5 * 0.25 - mean ** 2
    assert abs(f.mean() - mean) < 3 * np.sqrt(var / len(f))


def test_rotation_symbol_threshold():
    b = BaseSystem("rotation", alpha=0.2, x0=0.7)
    assert int(b.symbols(0)) == 1
    assert int(BaseSystem("rotation", alpha=0.2, x0=0.3).symbols(0)) == 0


def test_orbits_reproducible_and_two_sided():
    o1 = make_orbit(BaseSystem("iid", seed=99), 500, 500, origin_index=-40)
    o2 = make_orbit(BaseSystem("iid", seed=99), 500, 500, origin_index=-40)
    assert np.array_equal(o1.symbols, o2.symbols)
    assert o1.symbol(-500) == int(o1.base.symbols(-540))
    assert np.array_equal(o1.symbol_range(-10, 10), o1.base.symbols(np.arange(-50, -30)))
    with pytest.raises(IndexError):
        o1.symbol(501)


def test_seed_changes_sequence():
    a = BaseSystem("iid", seed=1).symbols(np.arange(256))
    b = BaseSystem("iid", seed=2).symbols(np.arange(256))
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("kw", [dict(kind="rotation", alpha=1.5), dict(kind="iid", weights=(0.5, 0.6)),
                                dict(kind="iid", weights=(1.0,)), dict(kind="shift")])
def test_bad_parameters_rejected(kw):
    with pytest.raises(ConfigError):
        BaseSystem(**kw)
