import numpy as np
import pytest

from qcocycle.base_driver import BaseSystem, make_orbit
from qcocycle.errors import ConvergenceError
from qcocycle.map_family import (FiberSelector, ObservableSpec, PiecewiseAffineMap, beta_map,
                                 component, doubling, golden_beta, tent)
from qcocycle.twisted_cocycle import (TwistedCocycle, acim_pullback, center_observable, choose_depth,
                                      cumulant_derivs, fiber_lambda, fiber_means, lambda_grid,
                                      pi_trace, twisted_apply, twisted_norm_bound,
                                      twisted_norm_growth)
from qcocycle.ulam_core import Partition, UlamCocycle, apply_operator, bv_norm, integral, variation

from conftest import build
from oracles import brute_birkhoff_mgf, brute_twisted

TABLE = PiecewiseAffineMap((0.0, 0.25, 0.5, 1.0), (4.0, -4.0, 2.0), (0.0, 1.0, 0.0))
ALIGNED = (doubling(), tent(), beta_map(4.0), TABLE)


def aligned_system(rng, n=8):
    """Random mixture of grid-aligned maps with a partition-constant observable
    scaled per symbol, so each fiber sees different bin values."""
    base = BaseSystem("iid", weights=(0.25,) * 4, seed=31)
    orbit = make_orbit(base, 10, 10)
    ulam = UlamCocycle(FiberSelector(ALIGNED), Partition(n))
    vals = rng.normal(size=n)
    sc = np.array([[1.0], [-0.5], [2.0], [0.3]])
    tc = TwistedCocycle(ulam, ObservableSpec((component("table", values=list(vals)),), sc))
    return orbit, tc


def _fiber_data(orbit, tc, j):
    s = orbit.symbol(j)
    return tc.ulam.map(s), tc.gmid(s)[:, 0]


@pytest.mark.parametrize("theta", [0.37, -1.1, 0.4 + 0.9j])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_twisted_iterate_matches_brute_force(rng, theta, k):
    orbit, tc = aligned_system(rng)
    f = rng.normal(size=8)
    u = f.astype(complex)
    for j in range(k):
        u = twisted_apply(tc, np.array([theta]), orbit.state(j), u)
    maps, gv = zip(*[_fiber_data(orbit, tc, j) for j in range(k)])
    ref = brute_twisted(maps, gv, theta, f, 8)
    assert np.max(np.abs(u - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))
    # integral identity and the adjoint pairing against a step function h
    assert abs(integral(u) - brute_birkhoff_mgf(maps, gv, theta, f, 8)) <= 1e-10
    h = rng.normal(size=8)
    assert abs(integral(u * h) - integral(ref * h)) <= 1e-10


def test_zero_theta_is_untwisted(rng):
    orbit, tc = aligned_system(rng, n=64)
    f = rng.normal(size=64)
    w = orbit.state(3)
    assert np.array_equal(twisted_apply(tc, [0.0], w, f), apply_operator(tc.ulam.op(orbit.symbol(3)), f))


def test_rademacher_integral_is_cosh():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=2)
    for th in (0.3, -0.8, 1.7):
        assert integral(twisted_apply(tc, [th], orbit.state(0), np.ones(2))) == pytest.approx(np.cosh(th), abs=1e-15)


def test_fiber_lambda_rademacher():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    lam0, v0 = fiber_lambda(tc, orbit, 0.0)
    assert abs(lam0 - 1) < 1e-12 and np.allclose(v0, 1.0)
    lam, _ = fiber_lambda(tc, orbit, 0.3)
    assert abs(lam - np.cosh(0.3)) < 1e-12
    assert abs(np.cosh(0.3) - 1.04534) < 1e-5


def test_fiber_lambda_cos_against_fine_grid():
    vals = []
    for n in (4096, 1 << 16):
        orbit, _, tc = build([doubling()], ["cos"], n_bins=n, back=200, fwd=10)
        vals.append(fiber_lambda(tc, orbit, 0.2)[0])
    assert abs(vals[0] - vals[1]) < 1e-6


def test_conjugate_symmetry_and_equivariance():
    orbit, _, tc = build([doubling(), tent(), beta_map(2.5)], ["cos"], n_bins=256,
                         base=BaseSystem("iid", weights=(0.3, 0.3, 0.4), seed=8))
    th = 0.2 + 0.15j
    l1, v1 = fiber_lambda(tc, orbit, th, j=4)
    l2, _ = fiber_lambda(tc, orbit, np.conj(th), j=4)
    assert abs(l2 - np.conj(l1)) < 1e-12
    _, v_next = fiber_lambda(tc, orbit, th, j=5)
    res = integral(np.abs(twisted_apply(tc, [th], orbit.state(4), v1) - l1 * v_next))
    assert res < 1e-9


def test_pullback_depth_stability():
    orbit, _, tc = build([doubling(), beta_map(3.0)], ["cos", "sin"], n_bins=256,
                         base=BaseSystem("iid", seed=2))
    th = np.array([[0.3, -0.2]])
    N, _ = choose_depth(tc, orbit, th)
    a = pi_trace(tc, orbit, th, 1, depth=N).lambdas[0, 0]
    b = pi_trace(tc, orbit, th, 1, depth=2 * N).lambdas[0, 0]
    assert abs(a - b) < 1e-9


def test_acim_integer_mixture_is_uniform():
    orbit, ulam, _ = build([doubling(), beta_map(3.0)], ["cos"], n_bins=128,
                           base=BaseSystem("iid", seed=5))
    fam = acim_pullback(ulam, orbit, 0, 20)
    assert np.max(np.abs(fam.densities - 1.0)) < 1e-14
    assert np.max(fam.residuals) < 1e-14


def test_acim_golden_is_two_level_and_essinf_positive():
    orbit, ulam, _ = build([golden_beta()], ["cos"], n_bins=1024)
    v = acim_pullback(ulam, orbit, 0, 1, tol=1e-12).densities[0]
    assert integral(v) == pytest.approx(1.0, abs=1e-12)
    assert v.min() > 0.5
    b = (1 + 5 ** 0.5) / 2
    # Parry plateaus: values proportional to 1 + 1/b on [0, 1/b) and 1 on [1/b, 1)
    cut = int(1024 / b)
    lo, hi = np.median(v[cut + 20:-20]), np.median(v[20:cut - 20])
    assert hi / lo == pytest.approx(1 + 1 / b, rel=1e-3)


def test_acim_reports_nonconvergence():
    orbit, ulam, _ = build([doubling()], ["cos"], n_bins=64, back=40)
    with pytest.raises(ConvergenceError):
        acim_pullback(ulam, orbit, 0, 1, N=16, tol=0.0, N_max=32)


def test_centering_examples():
    orbit, _, tc = build([doubling()], ["cos", "rademacher"], n_bins=256)
    g = center_observable(tc, orbit, 0, 10)
    assert np.max(np.abs(g.centering.values)) < 1e-15
    orbit, _, tc = build([doubling()], [component("constant", value=2.5)], n_bins=64)
    g = center_observable(tc, orbit, 0, 10)
    assert np.allclose(g.centering.values, 2.5)
    tc2 = tc.with_observable(g)
    assert np.allclose(fiber_means(tc2, orbit, 0, 10) - g.centering.values, 0.0)


def test_centered_means_vanish_for_skewed_family():
    orbit, _, tc = build([tent(), beta_map(2.5)], ["cos"], n_bins=512, center=True,
                         base=BaseSystem("iid", seed=3))
    raw = fiber_means(tc, orbit, 0, 30)
    assert np.max(np.abs(raw - tc.g.centering.slice(0, 30))) < 1e-10


def test_pi_trace_rademacher_and_additivity():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    tr = pi_trace(tc, orbit, [0.0, 0.4], 50)
    assert np.allclose(tr.pi(50).real, [0.0, 50 * np.log(np.cosh(0.4))], atol=1e-10)
    orbit, _, tc = build([doubling(), tent(), beta_map(2.5)], ["cos"], n_bins=256, center=True,
                         base=BaseSystem("iid", weights=(0.3, 0.3, 0.4), seed=17))
    th = [0.25]
    whole = pi_trace(tc, orbit, th, 27).pi(27)[0]
    parts = pi_trace(tc, orbit, th, 10).pi(10)[0] + pi_trace(tc, orbit, th, 17, start=10).pi(17)[0]
    assert abs(whole - parts) < 1e-9


def test_lambda_grid_log_cosh():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    grid = np.linspace(-0.5, 0.5, 21)
    lg = lambda_grid(tc, orbit, 64, grid)
    assert lg.Lambda[10] == 0.0
    assert np.max(np.abs(lg.Lambda - np.log(np.cosh(grid)))) < 1e-9
    assert np.all(np.diff(lg.Lambda, 2) >= -1e-8)


def test_cumulant_derivs_anchors():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    cd = cumulant_derivs(tc, orbit, [256], order=3)
    assert abs(cd.grad[0, 0]) / 256 < 1e-7
    assert cd.hess[0, 0, 0] / 256 == pytest.approx(1.0, abs=1e-8)
    assert abs(cd.third[0]) / 256 < 1e-8
    orbit, _, tc = build([doubling()], ["cos"], n_bins=1024, center=True)
    cd = cumulant_derivs(tc, orbit, [256], order=2)
    assert abs(cd.grad[0, 0]) / 256 < 1e-7
    assert cd.hess[0, 0, 0] / 256 == pytest.approx(0.5, abs=1e-4)


def test_polarized_cross_derivative_vanishes_for_cos_sin():
    orbit, _, tc = build([doubling()], ["cos", "sin"], n_bins=1024, center=True)
    H = cumulant_derivs(tc, orbit, [128], order=2).hess[0] / 128
    assert np.allclose(H, np.diag([0.5, 0.5]), atol=1e-4)


def test_norm_growth_examples():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=256)
    assert abs(twisted_norm_growth(tc, orbit, np.pi, 64)) < 1e-12
    assert abs(twisted_norm_growth(tc, orbit, 1e-8, 64)) < 0.02
    orbit, _, tc = build([doubling()], ["cos"], n_bins=1024, center=True)
    assert twisted_norm_growth(tc, orbit, 1.0, 64) < -0.05


def test_single_step_norm_bound(rng):
    orbit, _, tc = build([doubling(), tent()], ["cos"], n_bins=128, base=BaseSystem("iid", seed=1))
    H = rng.normal(size=(128, 100)) + 1j * rng.normal(size=(128, 100))
    th = 0.6 - 0.3j
    w = orbit.state(0)
    L0 = tc.ulam.op(orbit.symbol(0)).PT
    weighted = np.exp(th * tc.gmid(orbit.symbol(0))) * H
    # K: BV operator norm of the untwisted step over the functions it is applied to
    K = np.max(bv_norm(L0 @ weighted) / bv_norm(weighted))
    bound = twisted_norm_bound(th, tc.g.sup_bound, variation(tc.gmid(0))[0], K)
    ratio = bv_norm(twisted_apply(tc, [th], w, H)) / bv_norm(H)
    assert np.all(ratio <= bound)
