"""Analytic predictors built from cocycle data.

Covariance (Green-Kubo and Hessian), rate functions by Legendre transform,
moderate deviation scaling, the first-order Edgeworth correction, sharp large
deviation prefactors, concentration bounds and local limit predictions.  The
Legendre/LDP part only needs a cumulant function, so it works equally on
closed-form i.i.d. inputs.
"""
from dataclasses import dataclass, field
import csv
import warnings

import numpy as np
from scipy import optimize, stats
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import ConfigError, ConvergenceError, LatticeError
from .twisted_cocycle import (choose_depth, cumulant_derivs, directional_derivs,
                              log_mgf_trace, pi_trace)
from .ulam_core import integral


# -- covariance -------------------------------------------------------------

@dataclass(frozen=True)
class CovMatrix:
    values: np.ndarray
    provenance: str
    lag_or_radius: float
    tail: float = 0.0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", 0.5 * (v + v.T))

    @property
    def min_eig(self):
        return float(np.min(np.linalg.eigvalsh(self.values)))


def green_kubo(tc, orbit, acims, lag_max=40, fibers=None, tol=1e-10):
    """Truncated Green-Kubo sum, averaged over starting fibers.

    Correlations <g^i_k, g^j_{k+l} o T^{(l)}>_{mu_k} are computed as
    int g^j_{k+l} L^{(l)}(g^i_k v_k) dm on the Ulam grid.  tc must carry a
    centered observable covering fibers up to max(fibers) + lag_max.
    """
    if fibers is None:
        fibers = range(acims.lo, acims.hi)
    fibers = list(fibers)
    d = tc.dim
    total = np.zeros((d, d))
    tail = np.zeros((d, d))
    for k in fibers:
        off = tc.offsets(orbit, k, k + lag_max + 1)
        gk = tc.gmid(orbit.symbol(k)) - off[0]
        u = gk * acims.density(k)[:, None]
        S = u.T @ gk / tc.n
        for l in range(1, lag_max + 1):
            u = tc.ulam.op(orbit.symbol(k + l - 1)).PT @ u
            gl = tc.gmid(orbit.symbol(k + l)) - off[l]
            C = u.T @ gl / tc.n
            S += C + C.T
            if l == lag_max:
                tail = np.maximum(tail, np.abs(C))
        total += S
    total /= len(fibers)
    t = float(np.max(tail))
    if t > tol:
        warnings.warn(f"Green-Kubo lag terms still {t:.2e} at lag {lag_max}", RuntimeWarning)
    return CovMatrix(total, "green-kubo", lag_max, t)


def hessian_cov(tc, orbit, n, r0=0.25, start=0):
    """D^2 Lambda(0) ~ Pi''_{omega,n}(0)/n by contour derivatives."""
    cd = cumulant_derivs(tc, orbit, [n], order=2, r0=r0, start=start)
    return CovMatrix(cd.hess[0] / n, "hessian", r0), cd


@dataclass(frozen=True)
class Consistency:
    rel_error: np.ndarray
    max_rel: float
    passed: bool
    tol: float


def sigma_consistency(cov_gk, cov_h, tol=0.02):
    """Entrywise relative difference; entries that vanish in both are judged
    against the largest Green-Kubo entry."""
    A = np.atleast_2d(getattr(cov_gk, "values", cov_gk))
    B = np.atleast_2d(getattr(cov_h, "values", cov_h))
    scale = max(float(np.max(np.abs(A))), float(np.max(np.abs(B))))
    if scale == 0.0:
        rel = np.zeros_like(A)
    else:
        ref = np.maximum(np.abs(A), np.abs(B))
        ref = np.where(ref > 1e-8 * scale, ref, scale)
        rel = np.abs(A - B) / ref
    m = float(np.max(rel))
    return Consistency(rel, m, m <= tol, tol)


# -- cumulant sources and Legendre transform -------------------------------

class CumulantFunction:
    """Lambda on R^d with gradient and Hessian (finite differences by default)."""

    def __init__(self, value, grad=None, hess=None, dim=1, h=1e-4):
        self._v, self._g, self._h = value, grad, hess
        self.dim = dim
        self.h = h

    def __call__(self, t):
        return float(self._v(np.atleast_1d(np.asarray(t, dtype=float))))

    def grad(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._g is not None:
            return np.atleast_1d(np.asarray(self._g(t), dtype=float))
        e = np.eye(self.dim) * self.h
        return np.array([(self(t + e[i]) - self(t - e[i])) / (2 * self.h) for i in range(self.dim)])

    def hess(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._h is not None:
            return np.atleast_2d(np.asarray(self._h(t), dtype=float))
        e = np.eye(self.dim) * self.h
        H = np.array([(self.grad(t + e[i]) - self.grad(t - e[i])) / (2 * self.h) for i in range(self.dim)])
        return 0.5 * (H + H.T)


def closed_form_cumulant(kind, sigma2=1.0):
    """'log-cosh' (Rademacher) or 'gaussian' with variance sigma2, d = 1."""
    if kind == "log-cosh":
        return CumulantFunction(lambda t: np.log(np.cosh(t[0])),
                                lambda t: np.tanh(t), lambda t: [[1 - np.tanh(t[0]) ** 2]])
    if kind == "gaussian":
        return CumulantFunction(lambda t: 0.5 * sigma2 * t[0] ** 2,
                                lambda t: sigma2 * t, lambda t: [[sigma2]])
    raise ConfigError(f"unknown closed-form cumulant {kind!r}")


def trace_cumulant(tc, orbit, n, start=0, radius=0.5, h=1e-5):
    """Lambda_n(theta) = Pi_{omega,n}(theta)/n evaluated by a twisted sweep per call.

    Derivatives are central differences of the sweep values; the pullback depth
    is fixed once from the theta ball of the given radius.
    """
    d = tc.dim
    edge = np.vstack([radius * np.eye(d), -radius * np.eye(d)])
    depth, _ = choose_depth(tc, orbit, edge, start)

    def value(t):
        tr = pi_trace(tc, orbit, np.asarray(t, dtype=float)[None, :], n, start, depth, track=False)
        return float(tr.pi(n)[0].real) / n

    return CumulantFunction(value, dim=d, h=h)


def lambda_from_grid(grid):
    """Spline cumulant function through LambdaGrid data (d = 1 or tensor d = 2)."""
    th = grid.thetas
    d = th.shape[1]
    if d == 1:
        order = np.argsort(th[:, 0])
        sp = CubicSpline(th[order, 0], grid.Lambda[order])
        return CumulantFunction(lambda t: sp(t[0]), lambda t: np.array([sp(t[0], 1)]),
                                lambda t: np.array([[sp(t[0], 2)]]))
    if d == 2:
        xs, ys = np.unique(th[:, 0]), np.unique(th[:, 1])
        if len(xs) * len(ys) != len(th):
            raise ConfigError("2-d Lambda grid must be a tensor product")
        Z = np.full((len(xs), len(ys)), np.nan)
        Z[np.searchsorted(xs, th[:, 0]), np.searchsorted(ys, th[:, 1])] = grid.Lambda
        sp = RectBivariateSpline(xs, ys, Z, kx=3, ky=3)

        def hess(t):
            a, b = t
            fxy = float(sp(a, b, dx=1, dy=1)[0, 0])
            return np.array([[float(sp(a, b, dx=2)[0, 0]), fxy], [fxy, float(sp(a, b, dy=2)[0, 0])]])
        return CumulantFunction(lambda t: float(sp(t[0], t[1])[0, 0]),
                                lambda t: np.array([float(sp(t[0], t[1], dx=1)[0, 0]),
                                                    float(sp(t[0], t[1], dy=1)[0, 0])]),
                                hess, dim=2)
    raise ConfigError("grid cumulants support d <= 2")


def check_convex_grid(grid, tol=1e-8):
    """Discrete second differences along grid lines must be >= -tol."""
    th = grid.thetas
    if th.shape[1] == 1:
        o = np.argsort(th[:, 0])
        t, L = th[o, 0], grid.Lambda[o]
        if len(t) < 3:
            return True
        h1, h2 = np.diff(t)[:-1], np.diff(t)[1:]
        dd = (L[2:] - L[1:-1]) / h2 - (L[1:-1] - L[:-2]) / h1
        return bool(np.all(dd >= -tol))
    xs, ys = np.unique(th[:, 0]), np.unique(th[:, 1])
    Z = np.full((len(xs), len(ys)), np.nan)
    Z[np.searchsorted(xs, th[:, 0]), np.searchsorted(ys, th[:, 1])] = grid.Lambda
    ok = np.all(Z[2:] - 2 * Z[1:-1] + Z[:-2] >= -tol) and np.all(Z[:, 2:] - 2 * Z[:, 1:-1] + Z[:, :-2] >= -tol)
    return bool(ok)


@dataclass
class RateFunction:
    """Lambda* on an x-grid, with maximizers and clipping flags."""
    radius: float
    Lam: CumulantFunction
    x: np.ndarray
    values: np.ndarray
    maximizers: np.ndarray
    clipped: np.ndarray
    duality_residual: float = 0.0

    def __call__(self, x):
        return conjugate_point(self.Lam, x, self.radius)[0]

    def to_csv(self, path):
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{i + 1}" for i in range(d)] + ["Lambda_star"] + [f"t_{i + 1}" for i in range(d)])
            for x, v, t in zip(self.x, self.values, self.maximizers):
                w.writerow([repr(float(a)) for a in x] + [repr(float(v))] + [repr(float(a)) for a in t])


def conjugate_point(Lam, x, radius, tol=1e-11, max_iter=60):
    """sup_{|t| <= radius} (t.x - Lambda(t)) -> (value, maximizer, clipped)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = len(x)
    if d == 1:
        f = lambda s: Lam.grad([s])[0] - x[0]
        lo, hi = -radius, radius
        if f(hi) <= 0:
            t, clipped = hi, True
        elif f(lo) >= 0:
            t, clipped = lo, True
        else:
            t, clipped = 0.0, False
            for _ in range(max_iter):
                g = f(t)
                if abs(g) < tol:
                    break
                if g > 0:
                    hi = t
                else:
                    lo = t
                H = Lam.hess([t])[0, 0]
                step = t - g / H if H > 0 else 0.5 * (lo + hi)
                if abs(step - t) < 1e-14:
                    break
                t = step if lo < step < hi else 0.5 * (lo + hi)
            else:
                t = optimize.brentq(f, lo, hi, xtol=1e-15)
        t = np.array([t])
        return float(t @ x - Lam(t)), t, clipped
    t = np.zeros(d)
    obj = lambda s: -(s @ x - Lam(s))
    for _ in range(max_iter):
        g = Lam.grad(t) - x
        if np.linalg.norm(g) < tol:
            break
        H = Lam.hess(t)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        a = 1.0
        while a > 1e-8 and (np.linalg.norm(t - a * step) > radius or obj(t - a * step) > obj(t) + 1e-15):
            a *= 0.5
        if a <= 1e-8:
            break
        t = t - a * step
    if np.linalg.norm(Lam.grad(t) - x) > 1e-8:
        cons = {"type": "ineq", "fun": lambda s: radius ** 2 - s @ s}
        res = optimize.minimize(obj, t, constraints=[cons], method="SLSQP",
                                options={"ftol": 1e-14, "maxiter": 500})
        t = res.x
    clipped = bool(np.linalg.norm(t) >= radius * (1 - 1e-9))
    return float(t @ x - Lam(t)), t, clipped


def legendre(Lam, radius, x_grid, grid=None):
    """Rate function Lambda* on x_grid; rejects non-convex grid data."""
    if grid is not None and not check_convex_grid(grid):
        raise ConfigError("Lambda grid is not convex; configuration rejected")
    X = np.asarray(x_grid, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    vals, ts, cl = [], [], []
    for x in X:
        v, t, c = conjugate_point(Lam, x, radius)
        vals.append(v)
        ts.append(t)
        cl.append(c)
    ts = np.array(ts)
    res = 0.0
    for t, c in zip(ts, cl):
        if c:
            continue
        y = Lam.grad(t)
        v2 = conjugate_point(Lam, y, radius)[0]
        res = max(res, abs(v2 - (t @ y - Lam(t))))
    return RateFunction(radius, Lam, X, np.array(vals), ts, np.array(cl), res)


@dataclass(frozen=True)
class LdpBound:
    value: float  # -inf_{x in A} Lambda*(x)
    argmin: np.ndarray


def ldp_bounds(rate, A):
    """-inf over A of Lambda*; A is a dict with kind 'halfspace' (v, a),
    'box' (lo, hi) or 'mask' (callable x -> bool)."""
    X = rate.x
    dom = ~rate.clipped
    kind = A.get("kind")
    if kind == "halfspace":
        v = np.atleast_1d(np.asarray(A["v"], dtype=float))
        inA = lambda x: float(v @ x) >= A["a"] - 1e-15
        cons = [{"type": "ineq", "fun": lambda x: v @ x - A["a"]}]
        bounds = None
    elif kind == "box":
        lo = np.atleast_1d(np.asarray(A["lo"], dtype=float))
        hi = np.atleast_1d(np.asarray(A["hi"], dtype=float))
        inA = lambda x: bool(np.all(x >= lo) and np.all(x <= hi))
        cons, bounds = [], list(zip(lo, hi))
    elif kind == "mask":
        inA, cons, bounds = A["mask"], [], None
    else:
        raise ConfigError(f"unknown set kind {kind!r}")
    mask = np.array([inA(x) for x in X]) & dom
    if not np.any(mask):
        raise ConfigError("set A does not meet the rate-function domain")
    k = int(np.argmin(np.where(mask, rate.values, np.inf)))
    best_x, best = X[k], rate.values[k]
    if kind in ("halfspace", "box"):
        res = optimize.minimize(lambda x: rate(x), best_x, method="SLSQP", constraints=cons,
                                bounds=bounds, options={"ftol": 1e-15, "maxiter": 200})
        if res.success and inA(res.x) and res.fun < best:
            best_x, best = res.x, float(res.fun)
    return LdpBound(-float(best), np.atleast_1d(best_x))


def tilted_binomial_pmf(theta, n):
    """Law of S_n for i.i.d. +-1 under the exponential tilt by theta (closed form)."""
    p = np.exp(theta) / (2 * np.cosh(theta))
    k = np.arange(n + 1)
    return 2 * k - n, stats.binom.pmf(k, n, p)


# -- moderate deviations ----------------------------------------------------

@dataclass(frozen=True)
class MdpCurve:
    ns: np.ndarray
    values: np.ndarray
    target: float
    exponent: float

    @property
    def rel_error(self):
        return np.abs(self.values - self.target) / abs(self.target) if self.target else np.abs(self.values)


def mdp_scaling(tc, orbit, theta, ns, sigma2, exponent=0.75, start=0, depth=None):
    """(n / a_n^2) Pi_{omega,n}(theta / c_n) with a_n = n^exponent, c_n = n / a_n."""
    ns = np.asarray(ns, dtype=np.int64)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    an = ns.astype(float) ** exponent
    cn = ns / an
    cols = theta[None, :] / cn[:, None]
    tr = pi_trace(tc, orbit, cols, int(ns.max()), start, depth, track=False)
    S = tr.partial_sums()
    vals = np.array([S[n - 1, i].real for i, n in enumerate(ns)]) / (an ** 2 / ns)
    S2 = np.atleast_2d(getattr(sigma2, "values", sigma2))
    return MdpCurve(ns, vals, float(0.5 * theta @ S2 @ theta), exponent)


# -- Edgeworth --------------------------------------------------------------

# Sign of the skewness term in the shipped closed form.  Fixed by Fourier
# inversion of exp(-t^2/2)(1 + P(t)) read as a characteristic function,
# see edgeworth_density_fourier and the accompanying test.
SKEW_SIGN = -1.0


@dataclass(frozen=True)
class EdgeworthModel:
    n: int
    sigma2: float
    pi2: float
    pi3: float

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2))

    @property
    def a(self):
        return 0.5 * (1.0 - self.pi2 / self.sigma2)

    @property
    def b(self):
        return self.pi3 / (6.0 * self.sigma ** 3)

    @property
    def u(self):
        return self.pi3 / self.sigma2

    def to_csv(self, path, t):
        A = edgeworth_cdf(self, t)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Phi", "A_edgeworth"])
            for ti, p, a in zip(t, stats.norm.cdf(t), A):
                w.writerow([repr(float(ti)), repr(float(p)), repr(float(a))])


def edgeworth_cdf(model, t, sign=SKEW_SIGN):
    """A(t) = Phi(t) + a t phi(t) + sign * b (t^2 - 1) phi(t)."""
    t = np.asarray(t, dtype=float)
    phi = stats.norm.pdf(t)
    return stats.norm.cdf(t) + model.a * t * phi + sign * model.b * (t * t - 1) * phi


def edgeworth_density_fourier(model, t, smax=40.0, m=8001):
    """Density whose characteristic function is exp(-s^2/2)(1 + P(s)).

    f(t) = (1/2pi) int exp(-i s t) exp(-s^2/2)(1 + P(s)) ds by quadrature.
    """
    s = np.linspace(-smax, smax, m)
    P = (-0.5 * model.pi2 * (s / model.sigma) ** 2 + 0.5 * s ** 2
         - (1j / 6.0) * model.pi3 * (s / model.sigma) ** 3)
    psi = np.exp(-0.5 * s ** 2) * (1 + P)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.trapezoid(np.exp(-1j * np.outer(t, s)) * psi, s, axis=1) / (2 * np.pi)
    return vals.real


def edgeworth_density(model, t, sign=SKEW_SIGN):
    """Closed-form derivative of edgeworth_cdf."""
    t = np.asarray(t, dtype=float)
    return stats.norm.pdf(t) * (1 + model.a * (1 - t * t) + sign * model.b * (3 * t - t ** 3))


def edgeworth_models(tc, orbit, ns, v0, sigma2_source="exact", r0=0.25, start=0):
    """Edgeworth models along a ladder of n.

    sigma2_source: "pi" uses Pi''(0); "exact" the variance of S_n under mu_omega
    from the log-moment generating function started at v0; a float array
    overrides (e.g. Monte Carlo variances).
    """
    ns = np.asarray(ns, dtype=np.int64)
    cd = cumulant_derivs(tc, orbit, ns, order=3, r0=r0, start=start)
    pi2, pi3 = cd.hess[:, 0, 0], cd.third
    if isinstance(sigma2_source, str) and sigma2_source == "pi":
        s2 = pi2
    elif isinstance(sigma2_source, str) and sigma2_source == "exact":
        mg = cumulant_derivs(tc, orbit, ns, order=2, r0=r0, mode="mgf", v0=v0, start=start)
        s2 = mg.hess[:, 0, 0]
    else:
        s2 = np.asarray(sigma2_source, dtype=float)
    return [EdgeworthModel(int(n), float(a), float(b), float(c)) for n, a, b, c in zip(ns, s2, pi2, pi3)]


# -- sharp large deviations -------------------------------------------------

@dataclass(frozen=True)
class LdExpansion:
    a: float
    n: int
    theta: float
    I: float
    I2: float
    phi: float
    phi_drift: float
    prefactor: float
    residual: float


def ld_expansion(tc, orbit, n, a, v0, r=0.5, start=0, tol=1e-10, r0=0.05, max_iter=30,
                 m_ladder=(10, 20, 40, 80, 160, 320)):
    """theta solving Pi'_{omega,n}(theta)/n = a, I, I'' and the prefactor
    phi sqrt(I'') / (theta sqrt(2 pi n))."""
    if a <= 0:
        raise ConfigError("level a must be positive")
    kw = dict(start=start, check=False)
    d0 = directional_derivs(tc, orbit, [n], np.ones(1), orders=(2,), **kw)
    th = min(a / (d0.derivs[2][0] / n), 0.5 * r)
    lo, hi = 0.0, r

    def derivs(t):
        rad = min(r0, 0.5 * t)
        dd = directional_derivs(tc, orbit, [n], np.ones(1), center=t, orders=(1, 2), r0=rad, **kw)
        return dd.derivs[1][0] / n, dd.derivs[2][0] / n

    g_hi = derivs(hi)[0]
    if g_hi < a:
        raise ConfigError(f"level a = {a} outside the admissible tilt range (max {g_hi:.4f} at r = {r})")
    res = np.inf
    for _ in range(max_iter):
        g1, g2 = derivs(th)
        if g2 <= 0:
            raise ConvergenceError("Pi is not convex along [0, r]")
        res = g1 - a
        if abs(res) < tol:
            break
        if res > 0:
            hi = th
        else:
            lo = th
        step = th - res / g2
        th = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise ConvergenceError(f"tilt Newton residual {res:.2e}")
    # value of Pi at theta and the ratio defining phi
    m_ladder = [m for m in m_ladder if m <= n] or [n]
    pt = pi_trace(tc, orbit, np.array([[th]]), n, start, track=False)
    mg = log_mgf_trace(tc, orbit, np.array([[th]]), n, v0, start, track=False)
    Pi_n = float(pt.pi(n)[0].real)
    ratio = np.exp(np.cumsum(mg.logs[:, 0].real) - np.cumsum(pt.logs[:, 0].real))
    phis = ratio[np.asarray(m_ladder) - 1]
    phi = float(phis[-1])
    drift = float(abs(phis[-1] - phis[-2])) if len(phis) > 1 else 0.0
    I = th * a - Pi_n / n
    I2 = 1.0 / g2
    pref = phi * np.sqrt(I2) / (th * np.sqrt(2 * np.pi * n))
    return LdExpansion(a, n, float(th), float(I), float(I2), phi, drift, float(pref), float(abs(res)))


# -- concentration ----------------------------------------------------------

def concentration_bound(eps, n, d, c2):
    """2 d exp(-c2 eps^2 n)."""
    return 2 * d * np.exp(-c2 * np.asarray(eps) ** 2 * n)


def _wilson(k, M, z=1.96):
    p = k / M
    den = 1 + z * z / M
    c = (p + z * z / (2 * M)) / den
    h = z * np.sqrt(p * (1 - p) / M + z * z / (4 * M * M)) / den
    return np.clip(c - h, 0, 1), np.clip(c + h, 0, 1)


@dataclass(frozen=True)
class ConcentrationFit:
    c1: float
    c2: float
    r2: float
    slope: float
    points: np.ndarray  # rows (n, eps, x = eps^2 n, p_hat, p_upper)
    d: int


def tail_table(samples, eps_grid, c1):
    """Rows (n, eps, eps^2 n, p_hat, p_up, count, M) of mu(|S_n|_max >= eps n + c1)."""
    rows = []
    for n, S in sorted(samples.items()):
        S = np.atleast_2d(S.T).T
        M = len(S)
        norm = np.max(np.abs(S), axis=1)
        for e in eps_grid:
            k = int(np.sum(norm >= e * n + c1))
            up = _wilson(k, M)[1]
            rows.append((n, e, e * e * n, k / M, up, k, M))
    return np.array(rows)


def fit_concentration(samples, eps_grid, c1, min_count=20):
    """Regress log tails on eps^2 n; c2 is the largest rate whose bound 2d e^{-c2 x}
    lies above the Wilson upper limit of every observed tail."""
    d = np.atleast_2d(next(iter(samples.values())).T).T.shape[1]
    T = tail_table(samples, eps_grid, c1)
    use = (T[:, 5] >= min_count) & (T[:, 3] < 1)
    if use.sum() < 3:
        raise ConvergenceError("too few populated tail levels for the concentration fit")
    x, y = T[use, 2], np.log(T[use, 3])
    slope, icept, r, _, _ = stats.linregress(x, y)
    if slope >= 0:
        raise ConvergenceError("non-exponential tails: regression slope is not negative")
    pos = (T[:, 5] > 0) & (T[:, 2] > 0)
    c2 = float(np.min(np.log(2 * d / T[pos, 4]) / T[pos, 2]))
    if c2 <= 0:
        raise ConvergenceError("no positive rate over-covers the empirical tails")
    return ConcentrationFit(float(c1), c2, float(r * r), float(slope), T, d)


def concentration_check(fit, samples, eps_grid):
    """Held-out check: empirical tails never exceed the fitted bound."""
    T = tail_table(samples, eps_grid, fit.c1)
    bound = 2 * fit.d * np.exp(-fit.c2 * T[:, 2])
    return bool(np.all(T[:, 3] <= bound)), T, bound


# -- local limit ------------------------------------------------------------

@dataclass(frozen=True)
class LcltPrediction:
    value: float
    refused: bool = False
    diagnostic: str = ""


def lclt_prediction(s, n, sigma2, volume, lattice=False, growth=None):
    """(2 pi)^{-d/2} |Sigma|^{-1} n^{-d/2} exp(-s.Sigma^{-2}s/(2n)) |J|.

    Refuses lattice observables, and configurations whose measured twisted
    norm growth on the probe set J' is not negative.
    """
    S2 = np.atleast_2d(getattr(sigma2, "values", sigma2))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d = len(s)
    if lattice:
        return LcltPrediction(np.nan, True, "lattice observable: twisted norm does not contract at resonant t")
    if growth is not None and np.max(growth) >= 0:
        return LcltPrediction(np.nan, True, f"twisted norm growth {np.max(growth):.3g} >= 0 on probe set")
    ev = np.linalg.eigvalsh(S2)
    if np.min(ev) <= 0:
        raise ConfigError("Sigma^2 must be positive definite")
    det = np.sqrt(np.linalg.det(S2))
    q = s @ np.linalg.solve(S2, s)
    val = (2 * np.pi) ** (-d / 2) / det * n ** (-d / 2) * np.exp(-q / (2 * n)) * volume
    return LcltPrediction(float(val))
