import numpy as np
import pytest
from scipy import stats

from qcocycle import limit_lab as ll
from qcocycle.errors import ConfigError
from qcocycle.map_family import component, doubling, eval_map
from qcocycle.twisted_cocycle import LambdaGrid, acim_pullback, lambda_grid, pi_trace

from conftest import acim0, build
from oracles import log_cosh_star


def _gk(comps, n_bins=1024, lag=20):
    orbit, ulam, tc = build([doubling()], comps, n_bins=n_bins, center=True)
    ac = acim_pullback(ulam, orbit, 0, 4)
    return ll.green_kubo(tc, orbit, ac, lag), orbit, tc


def test_green_kubo_anchors():
    cov, _, _ = _gk(["cos"])
    assert cov.values[0, 0] == pytest.approx(0.5, abs=1e-6)
    cov, _, _ = _gk(["rademacher"], n_bins=64)
    assert cov.values[0, 0] == pytest.approx(1.0, abs=1e-12)
    cov, _, _ = _gk(["cos", "sin"])
    assert np.allclose(cov.values, np.diag([0.5, 0.5]), atol=1e-6)
    assert cov.min_eig >= -1e-8


def test_sigma_consistency_examples():
    gk, orbit, tc = _gk(["rademacher"], n_bins=64)
    h, _ = ll.hessian_cov(tc, orbit, 256)
    assert abs(h.values[0, 0] - 1) < 1e-6 and ll.sigma_consistency(gk, h).passed
    gk, orbit, tc = _gk(["cos"])
    h, _ = ll.hessian_cov(tc, orbit, 512)
    assert ll.sigma_consistency(gk, h).passed
    z, orbit, tc = _gk([component("constant", value=0.0)], n_bins=64)
    hz, _ = ll.hessian_cov(tc, orbit, 64)
    rep = ll.sigma_consistency(z, hz)
    assert np.all(z.values == 0) and np.allclose(hz.values, 0) and rep.passed


def test_legendre_gaussian_pair():
    Lam = ll.closed_form_cumulant("gaussian", 2.0)
    x = np.linspace(-0.5, 0.5, 11)
    rate = ll.legendre(Lam, 1.0, x)
    assert np.allclose(rate.values, x ** 2 / 4.0, atol=1e-12)
    assert rate.values[5] == 0.0 and rate.maximizers[5, 0] == 0.0


def test_legendre_log_cosh_closed_form():
    Lam = ll.closed_form_cumulant("log-cosh")
    x = np.linspace(-0.45, 0.45, 19)
    rate = ll.legendre(Lam, 0.5, x)
    assert np.max(np.abs(rate.values - log_cosh_star(x))) < 1e-12
    assert not rate.clipped.any() and rate.duality_residual < 1e-8
    v, t, clipped = ll.conjugate_point(Lam, [0.9], 0.5)
    assert clipped and t[0] == 0.5


def test_legendre_two_dimensional_quadratic():
    S = np.array([[1.0, 0.3], [0.3, 0.5]])
    Lam = ll.CumulantFunction(lambda t: 0.5 * t @ S @ t, lambda t: S @ t, lambda t: S, dim=2)
    x = np.array([[0.1, -0.2], [0.0, 0.0], [0.2, 0.1]])
    rate = ll.legendre(Lam, 2.0, x)
    ref = [0.5 * v @ np.linalg.solve(S, v) for v in x]
    assert np.allclose(rate.values, ref, atol=1e-12)


def test_trace_cumulant_gives_cramer_rate():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    Lam = ll.trace_cumulant(tc, orbit, 64)
    assert Lam([0.3]) == pytest.approx(np.log(np.cosh(0.3)), abs=1e-12)
    assert ll.conjugate_point(Lam, [0.2], 0.5)[0] == pytest.approx(0.0201358, abs=1e-6)


def test_grid_cumulant_and_convexity_gate():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    grid = lambda_grid(tc, orbit, 64, np.linspace(-0.5, 0.5, 41))
    Lam = ll.lambda_from_grid(grid)
    rate = ll.legendre(Lam, 0.5, [0.2], grid=grid)
    assert rate.values[0] == pytest.approx(log_cosh_star(0.2), abs=1e-6)
    bent = LambdaGrid(grid.thetas, -grid.Lambda, grid.stderr, grid.n)
    with pytest.raises(ConfigError):
        ll.legendre(Lam, 0.5, [0.2], grid=bent)


def test_ldp_bounds_examples():
    rate = ll.legendre(ll.closed_form_cumulant("log-cosh"), 0.5, np.linspace(-0.45, 0.45, 91))
    b = ll.ldp_bounds(rate, {"kind": "halfspace", "v": [1.0], "a": 0.2})
    assert b.argmin[0] == pytest.approx(0.2, abs=1e-9)
    assert -b.value == pytest.approx(0.020136, abs=1e-6)
    assert ll.ldp_bounds(rate, {"kind": "box", "lo": [-0.1], "hi": [0.3]}).value == 0.0
    assert ll.ldp_bounds(rate, {"kind": "box", "lo": [-0.4], "hi": [-0.25]}).value == pytest.approx(
        -log_cosh_star(-0.25), abs=1e-9)
    with pytest.raises(ConfigError):
        ll.ldp_bounds(rate, {"kind": "halfspace", "v": [1.0], "a": 0.99})


def test_tilting_identity_over_all_words():
    # every x in a 2^12-cell grid is a binary word; weight e^{theta S - Pi_n(theta)}
    n, th = 12, 0.35
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64)
    Pi = float(pi_trace(tc, orbit, [th], n).pi(n)[0].real)
    x = (np.arange(2 ** n) + 0.5) / 2 ** n
    S = np.zeros_like(x)
    for _ in range(n):
        S += np.where(x < 0.5, 1.0, -1.0)
        x = eval_map(doubling(), x)
    w = np.exp(th * S - Pi) / 2 ** n
    vals, pmf = ll.tilted_binomial_pmf(th, n)
    emp = np.array([w[S == v].sum() for v in vals])
    assert np.max(np.abs(emp - pmf)) < 1e-14


def test_mdp_rademacher_and_zero():
    orbit, _, tc = build([doubling()], ["rademacher"], n_bins=64, fwd=(1 << 16) + 1)
    ns = [1 << 10, 1 << 16]
    curve = ll.mdp_scaling(tc, orbit, [1.0], ns, 1.0)
    assert curve.rel_error[-1] < 0.01
    zero = ll.mdp_scaling(tc, orbit, [0.0], ns, 1.0)
    assert np.all(zero.values == 0)


def test_mdp_cos_matches_third_cumulant_correction():
    # at finite n the curve is theta^2 Sigma^2/2 + kappa3 theta^3 / (6 c_n) + O(c_n^-2),
    # with kappa3 = 3/4 for cos(2 pi x) under doubling
    n = 1 << 16
    orbit, _, tc = build([doubling()], ["cos"], n_bins=1024, center=True, fwd=n + 21)
    for th in (0.5, 1.0):
        v = ll.mdp_scaling(tc, orbit, [th], [n], 0.5).values[0]
        pred = 0.25 * th ** 2 + 0.75 * th ** 3 / (6 * n ** 0.25)
        assert v == pytest.approx(pred, rel=5e-3)
    assert abs(v / 0.25 - 1) == pytest.approx(0.03125, abs=0.003)


def test_edgeworth_examples():
    t = np.linspace(-4, 4, 81)
    flat = ll.EdgeworthModel(100, 100.0, 100.0, 0.0)
    assert np.allclose(ll.edgeworth_cdf(flat, t), stats.norm.cdf(t), atol=0)
    sym = ll.EdgeworthModel(100, 100.0, 98.0, 0.0)
    assert sym.b == 0 and np.allclose(ll.edgeworth_cdf(sym, t),
                                       stats.norm.cdf(t) + sym.a * t * stats.norm.pdf(t))
    skew = ll.EdgeworthModel(256, 256.0, 255.0, 4.5 * 256)
    assert ll.edgeworth_cdf(skew, 40.0) == pytest.approx(1.0) and ll.edgeworth_cdf(skew, -40.0) == pytest.approx(0.0)
    assert skew.u == pytest.approx(6 * skew.b * skew.sigma)


def test_edgeworth_sign_fixed_by_fourier_inversion():
    m = ll.EdgeworthModel(64, 64.0, 62.0, 4.5 * 64)
    t = np.linspace(-5, 5, 101)
    ref = ll.edgeworth_density_fourier(m, t)
    assert np.max(np.abs(ll.edgeworth_density(m, t) - ref)) < 1e-10
    assert np.max(np.abs(ll.edgeworth_density(m, t, sign=-ll.SKEW_SIGN) - ref)) > 0.1 * m.b
    # the shipped CDF is the antiderivative of the shipped density
    h = 1e-5
    dA = (ll.edgeworth_cdf(m, t + h) - ll.edgeworth_cdf(m, t - h)) / (2 * h)
    assert np.max(np.abs(dA - ll.edgeworth_density(m, t))) < 1e-8


def test_edgeworth_models_on_skewed_system():
    orbit, ulam, tc = build([doubling()], [component("trig", cos=[(1, 1.0), (3, 1.0)])], n_bins=2048,
                            center=True, fwd=1100)
    models = ll.edgeworth_models(tc, orbit, [256, 1024], acim0(ulam, orbit))
    for m in models:
        assert m.sigma2 / m.n == pytest.approx(1.0, abs=5e-3)
        assert m.pi3 / m.n == pytest.approx(4.5, rel=1e-3)
        assert abs(m.a) * m.n < 1.0
        assert m.b * np.sqrt(m.n) == pytest.approx(0.75, rel=5e-3)


def test_ld_expansion_small_level_and_stable_phi():
    orbit, ulam, tc = build([doubling()], ["rademacher"], n_bins=64, fwd=1100)
    v0 = acim0(ulam, orbit)
    small = ll.ld_expansion(tc, orbit, 1000, 0.01, v0)
    assert small.theta == pytest.approx(np.arctanh(0.01), abs=1e-9)
    assert small.I / (0.01 ** 2 / 2) == pytest.approx(1.0, abs=1e-3)
    assert small.residual < 1e-10 and small.phi == pytest.approx(1.0, abs=1e-12)
    orbit, ulam, tc = build([doubling()], ["cos"], n_bins=1024, center=True, fwd=500)
    ex = ll.ld_expansion(tc, orbit, 400, 0.1, acim0(ulam, orbit))
    assert 0 < ex.theta <= 0.5 and ex.I >= 0 and ex.residual < 1e-10
    assert ex.phi_drift < 1e-6
    with pytest.raises(ConfigError):
        ll.ld_expansion(tc, orbit, 400, 0.9, acim0(ulam, orbit))


def test_concentration_bound_examples():
    assert ll.concentration_bound(0.0, 100, 1, 0.7) == 2.0
    assert ll.concentration_bound(0.2, 500, 1, 0.5) == pytest.approx(2 * np.exp(-10.0))
    assert ll.concentration_bound(0.2, 500, 2, 0.5) == pytest.approx(2 * ll.concentration_bound(0.2, 500, 1, 0.5))


def test_concentration_fit_over_covers_iid_signs(rng):
    eps = np.linspace(0.05, 0.4, 8)
    draw = lambda n, M: 2.0 * rng.binomial(n, 0.5, size=M) - n
    train = {n: draw(n, 100000) for n in (64, 128, 256)}
    fit = ll.fit_concentration(train, eps, c1=1.0)
    assert fit.r2 >= 0.95 and fit.c2 > 0
    held = {n: draw(n, 100000) for n in (64, 128, 256)}
    assert ll.concentration_check(fit, held, eps)[0]


def test_lclt_prediction_examples():
    p = ll.lclt_prediction(0.0, 4096, 0.5, 2 * 0.3)
    assert p.value == pytest.approx(0.6 / (np.sqrt(0.5) * np.sqrt(2 * np.pi * 4096)))
    assert ll.lclt_prediction(0.0, 4096, 1.0, 1.0, lattice=True).refused
    assert ll.lclt_prediction(0.0, 4096, 1.0, 1.0, growth=[-0.1, 0.0]).refused
    with pytest.raises(ConfigError):
        ll.lclt_prediction([0.0, 0.0], 100, np.diag([1.0, 0.0]), 1.0)
    two = ll.lclt_prediction([0.0, 0.0], 100, np.diag([0.5, 0.5]), 1.0)
    assert two.value == pytest.approx(1 / (2 * np.pi * 0.5 * 100))


def test_random_mixture_keeps_anchor_covariances():
    # an i.i.d. choice between x -> 2x and x -> 4x keeps cos and Rademacher
    # values uncorrelated across time, so the doubling anchors still hold
    from qcocycle.base_driver import BaseSystem
    from qcocycle.map_family import beta_map
    base = BaseSystem("iid", seed=77)
    for comp, target, nb in (("cos", 0.5, 1024), ("rademacher", 1.0, 64)):
        orbit, ulam, tc = build([doubling(), beta_map(4.0)], [comp], n_bins=nb, base=base, center=True)
        gk = ll.green_kubo(tc, orbit, acim_pullback(ulam, orbit, 0, 8), 20)
        h, _ = ll.hessian_cov(tc, orbit, 400)
        assert gk.values[0, 0] == pytest.approx(target, abs=1e-6)
        assert ll.sigma_consistency(gk, h).max_rel < 1e-4
