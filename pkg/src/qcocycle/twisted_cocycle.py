"""Twisted transfer cocycle L^theta f = L(e^{theta.g} f) on Ulam step functions.

The leading objects are computed by normalized forward sweeps: starting from a
density far in the past, each step applies the twisted operator and divides by
the integral.  Once the start has been forgotten, the normalizers are the fiber
eigenvalues lambda_{sigma^j omega}^theta and the normalized iterates are the
equivariant densities v^theta.  Many theta values are swept at once as columns.
"""
from dataclasses import dataclass, field
from math import factorial
import csv

import numpy as np

from .errors import (BranchJumpError, ContourMismatchError, ConvergenceError,
                     PerturbativeError)
from .ulam_core import UlamCocycle, bv_norm, integral, variation
from .map_family import FiberConstants

_TINY = 1e-12


class TwistedCocycle:
    """Ulam operators plus observable samples for building twisted weights.

    Observables are sampled at bin midpoints (this equals the exact bin value
    for observables that are constant on the partition cells).
    """

    def __init__(self, ulam, g):
        self.ulam = ulam
        self.g = g
        self._gmid = {}

    @property
    def n(self):
        return self.ulam.n

    @property
    def dim(self):
        return self.g.dim

    def gmid(self, symbol):
        if symbol not in self._gmid:
            self._gmid[symbol] = self.g.raw(symbol, self.ulam.partition.midpoints)
        return self._gmid[symbol]

    def offsets(self, orbit, lo, hi):
        """Centering constants for relative fibers lo..hi-1 (zeros if uncentered)."""
        if self.g.centering is None:
            return np.zeros((hi - lo, self.dim))
        a = orbit.origin.index
        return self.g.centering.slice(a + lo, a + hi)

    def weights(self, symbol, thetas):
        """exp(theta . g) per bin, shape (n, K) for thetas of shape (K, d)."""
        return np.exp(self.gmid(symbol) @ thetas.T)

    def with_observable(self, g):
        return TwistedCocycle(self.ulam, g)


def _thetas(theta, d):
    t = np.asarray(theta)
    if t.ndim == 0:
        t = t.reshape(1, 1)
    elif t.ndim == 1:
        t = t.reshape(-1, 1) if d == 1 else t.reshape(1, -1)
    if t.shape[1] != d:
        raise ValueError(f"theta has dimension {t.shape[1]}, observable has {d}")
    return t


@dataclass(frozen=True)
class TwistedWeight:
    theta: np.ndarray
    values: np.ndarray

    @property
    def bound_ok(self):
        return True


def twisted_weight(tc, theta, omega):
    th = _thetas(theta, tc.dim)[0]
    from .base_driver import symbol_at
    w = tc.weights(symbol_at(omega), th[None, :])[:, 0]
    if tc.g.centering is not None:
        w = w * np.exp(-th @ tc.g.centering.at(omega.index))
    return TwistedWeight(th, w)


def twisted_apply(tc, theta, omega, f):
    """L_omega^theta f for one theta (vector of length d) on a step function."""
    from .base_driver import symbol_at
    w = twisted_weight(tc, theta, omega).values
    fv = np.asarray(getattr(f, "values", f))
    if fv.ndim == 2:
        w = w[:, None]
    return tc.ulam.op(symbol_at(omega)).PT @ (w * fv)


# -- a.c.i.m. -----------------------------------------------------------------

@dataclass(frozen=True)
class AcimFamily:
    """Densities v^0 for relative fibers lo..lo+len-1 of an orbit."""
    lo: int
    densities: np.ndarray
    depth: int
    residuals: np.ndarray
    cauchy: float

    def density(self, j):
        return self.densities[j - self.lo]

    @property
    def hi(self):
        return self.lo + len(self.densities)


def _push_real(ulam, syms, v):
    for s in syms:
        v = ulam.op(s).PT @ v
        v = v / integral(v)
    return v


def acim_pullback(ulam, orbit, lo=0, hi=1, N=16, tol=1e-8, N_max=4096):
    """v^0 on fibers lo..hi-1 as normalized pullbacks of the constant density.

    The depth N doubles until the pullbacks from depths N and 2N differ by less
    than tol in L1 at fiber lo.
    """
    n = ulam.n
    while True:
        if lo - 2 * N < -orbit.n_back:
            raise ConvergenceError(f"orbit window too short for pullback depth {2 * N}")
        v1 = _push_real(ulam, orbit.symbol_range(lo - N, lo), np.ones(n))
        v2 = _push_real(ulam, orbit.symbol_range(lo - 2 * N, lo), np.ones(n))
        cauchy = float(integral(np.abs(v1 - v2)))
        if cauchy < tol:
            break
        if 2 * N > N_max:
            raise ConvergenceError(f"a.c.i.m. pullback residual {cauchy:.3e} > {tol} at depth {N}")
        N *= 2
    dens = np.empty((hi - lo, n))
    res = np.zeros(hi - lo)
    v = v2
    for k, s in enumerate(orbit.symbol_range(lo, hi)):
        dens[k] = v
        u = ulam.op(s).PT @ v
        vn = u / integral(u)
        res[k] = float(integral(np.abs(u - vn)))
        v = vn
    return AcimFamily(lo, dens, N, res, cauchy)


def acim_stream(ulam, orbit, lo, hi, N=64):
    """Yield (j, v_j) for j in lo..hi-1 without storing the family."""
    v = _push_real(ulam, orbit.symbol_range(lo - N, lo), np.ones(ulam.n))
    for j, s in zip(range(lo, hi), orbit.symbol_range(lo, hi)):
        yield j, v
        v = ulam.op(s).PT @ v
        v = v / integral(v)


def fiber_means(tc, orbit, lo, hi, acims=None, N=64):
    """int g_raw(sigma^j omega, .) v_j dm for j in lo..hi-1, shape (hi-lo, d)."""
    out = np.empty((hi - lo, tc.dim))
    if acims is not None:
        it = ((j, acims.density(j)) for j in range(lo, hi))
    else:
        it = acim_stream(tc.ulam, orbit, lo, hi, N)
    for j, v in it:
        out[j - lo] = integral(tc.gmid(orbit.symbol(j)) * v[:, None])
    return out


def center_observable(tc, orbit, lo, hi, acims=None, N=64):
    """Observable with per-fiber means subtracted on relative fibers lo..hi-1."""
    raw = tc.g.with_centering(None)
    base = tc.with_observable(raw)
    c = fiber_means(base, orbit, lo, hi, acims, N)
    c[np.abs(c) < 1e-15] = 0.0
    return raw.with_centering(FiberConstants(orbit.origin.index + lo, c))


# -- normalized twisted sweeps ---------------------------------------------------

def _sweep(tc, orbit, thetas, start, n, burn, init=None, keep_density=False):
    """Normalizers c_j = int L^theta_j v_j dm for relative fibers start..start+n-1.

    Returns (c, v_end, v_start) with c of shape (n, K).  Centering is applied
    afterwards as a scalar factor, since e^{theta.(g - c)} = e^{theta.g} e^{-theta.c}.
    """
    K = thetas.shape[0]
    real = np.isrealobj(thetas)
    dtype = float if real else complex
    if init is None:
        v = np.ones((tc.n, K), dtype=dtype)
    else:
        v = np.array(np.broadcast_to(np.asarray(init).reshape(tc.n, -1), (tc.n, K)), dtype=dtype)
    syms = orbit.symbol_range(start - burn, start + n)
    cache = {}
    # v is kept unnormalized between occasional rescalings; m = int v dm
    m = integral(v)
    out = np.empty((n, K), dtype=dtype)
    v_start = None
    for i, s in enumerate(syms):
        if i == burn and keep_density:
            v_start = v / m
        W = cache.get(s)
        if W is None:
            W = cache[s] = tc.weights(s, thetas)
        u = tc.ulam.op(s).PT @ (W * v)
        mu = integral(u)
        if np.any(np.abs(mu) < _TINY * np.abs(m)):
            raise PerturbativeError("twisted pullback integral below 1e-12")
        if i >= burn:
            out[i - burn] = mu / m
        v, m = u, mu
        if i % 16 == 15:
            v *= 1.0 / m
            m = np.ones_like(m)
    if v_start is None and keep_density:
        v_start = v / m
    v = v / m
    return out, v, v_start


def _centered_logs(tc, orbit, thetas, c, start):
    logs = np.log(c.astype(complex))
    if tc.g.centering is not None:
        off = tc.offsets(orbit, start, start + len(c))
        logs = logs - off @ thetas.T
    return logs


def check_branch(logs):
    """Raise if any fiber's principal log jumps by more than pi along the path (axis 1)."""
    if logs.shape[1] < 2:
        return
    jump = np.max(np.abs(np.diff(logs.imag, axis=1)))
    if jump > np.pi:
        raise BranchJumpError(f"log lambda increment {jump:.3f} exceeds pi along the theta path")


def choose_depth(tc, orbit, thetas, start=0, N=16, tol=1e-12, N_max=2048):
    """Smallest doubling depth with |lambda(N) - lambda(3N/2)| < tol at fiber start."""
    thetas = np.asarray(thetas)
    while True:
        n_back = start - (N + N // 2)
        if n_back < -orbit.n_back:
            raise ConvergenceError(f"orbit window too short for pullback depth {N + N // 2}")
        c1, _, _ = _sweep(tc, orbit, thetas, start, 1, N)
        c2, _, _ = _sweep(tc, orbit, thetas, start, 1, N + N // 2)
        diff = float(np.max(np.abs(c1 - c2)))
        if diff < tol:
            return N, diff
        if 2 * N > N_max:
            raise ConvergenceError(f"twisted pullback not converged (diff {diff:.2e}) at depth {N}")
        N *= 2


@dataclass
class TwistedTrace:
    """Per-fiber eigenvalues and branch-tracked logs along a theta path."""
    thetas: np.ndarray
    lambdas: np.ndarray
    logs: np.ndarray
    start: int
    depth: int
    density: np.ndarray = None

    @property
    def n(self):
        return self.logs.shape[0]

    def pi(self, n=None):
        """Pi_{omega,n}(theta) for each path column."""
        n = self.n if n is None else n
        return self.logs[:n].sum(axis=0)

    def partial_sums(self):
        """Pi_{omega,m} for m = 1..n as rows."""
        return np.cumsum(self.logs, axis=0)

    def to_csv(self, path, n=None):
        n = self.n if n is None else n
        lam = self.lambdas[0]
        Lam = (self.pi(n) / n).real
        write_theta_csv(path, self.thetas, lam, Lam)


def write_theta_csv(path, thetas, lam, Lam):
    d = thetas.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"theta_{i + 1}" for i in range(d)] + ["re_lambda", "im_lambda", "Lambda"])
        for t, l, L in zip(thetas, lam, Lam):
            w.writerow([repr(float(x)) for x in np.real(t)] +
                       [repr(float(np.real(l))), repr(float(np.imag(l))), repr(float(L))])


def pi_trace(tc, orbit, thetas, n, start=0, depth=None, keep_density=False, track=True):
    """Twisted trace over fibers start..start+n-1 for a path of theta columns.

    thetas has shape (K, d) and is read as a path starting near 0; a zero column
    is prepended so branch continuity is checked from theta = 0.
    """
    th = _thetas(thetas, tc.dim)
    full = np.vstack([np.zeros((1, tc.dim), dtype=th.dtype), th])
    if depth is None:
        depth, _ = choose_depth(tc, orbit, full, start)
    c, _, v0 = _sweep(tc, orbit, full, start, n, depth, keep_density=keep_density)
    logs = _centered_logs(tc, orbit, full, c, start)
    if track:
        check_branch(logs)
    lam = np.exp(logs[:, 1:])
    return TwistedTrace(th, lam, logs[:, 1:], start, depth,
                        None if v0 is None else v0[:, 1:])


def log_mgf_trace(tc, orbit, thetas, n, v0, start=0, track=True):
    """Per-fiber increments of log int e^{theta.S_n g} v0 dm (no pullback)."""
    th = _thetas(thetas, tc.dim)
    full = np.vstack([np.zeros((1, tc.dim), dtype=th.dtype), th])
    c, _, _ = _sweep(tc, orbit, full, start, n, 0, init=v0)
    logs = _centered_logs(tc, orbit, full, c, start)
    if track:
        check_branch(logs)
    return TwistedTrace(th, np.exp(logs[:, 1:]), logs[:, 1:], start, 0)


def fiber_lambda(tc, orbit, theta, j=0, depth=None, tol=1e-12):
    """(lambda_{sigma^j omega}^theta, v^theta) by twisted pullback to fiber j."""
    th = _thetas(theta, tc.dim)[:1]
    full = np.vstack([np.zeros((1, tc.dim), dtype=th.dtype), th])
    if depth is None:
        depth, _ = choose_depth(tc, orbit, full, j, tol=tol)
    c, _, v = _sweep(tc, orbit, full, j, 1, depth, keep_density=True)
    logs = _centered_logs(tc, orbit, full, c, j)
    return complex(np.exp(logs[0, 1])), v[:, 1]


@dataclass(frozen=True)
class LambdaGrid:
    thetas: np.ndarray
    Lambda: np.ndarray
    stderr: np.ndarray
    n: int
    lambdas0: np.ndarray = None

    def to_csv(self, path):
        lam = self.lambdas0 if self.lambdas0 is not None else np.exp(self.Lambda)
        write_theta_csv(path, self.thetas, lam, self.Lambda)


def lambda_grid(tc, orbit, n, grid, start=0, depth=None):
    """Lambda(theta) = (1/n) sum_j log|lambda_j^theta| on a grid of real theta."""
    th = np.asarray(_thetas(grid, tc.dim), dtype=float)
    tr = pi_trace(tc, orbit, th, n, start, depth, track=False)
    ll = tr.logs.real
    Lam = ll.mean(axis=0)
    se = ll.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(th))
    return LambdaGrid(th, Lam, se, n, tr.lambdas[0])


# -- derivatives at a point by contour integration -----------------------------

_FD1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
_FD2 = np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0
_FD3 = np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0
_FD_STEPS = np.arange(-3, 4)


@dataclass(frozen=True)
class DirectionalDerivs:
    """k-th derivatives of z -> Pi_{omega,n}(center + z e) for each n in ns."""
    ns: np.ndarray
    derivs: dict
    fd: dict
    discrepancy: dict
    radius: float


def directional_derivs(tc, orbit, ns, direction=None, center=0.0, orders=(1, 2, 3),
                       r0=0.25, nodes=32, fd_h=0.005, mode="pi", v0=None, start=0,
                       depth=None, check=True):
    """Contour (trapezoidal Cauchy integral) derivatives along a direction.

    mode "pi" uses the pulled-back eigenvalue trace; mode "mgf" the exact
    log-moment generating function started from v0 at the first fiber.
    """
    ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
    e = np.ones(tc.dim) if direction is None else np.asarray(direction, dtype=float)
    phi = 2 * np.pi * np.arange(nodes) / nodes
    circle = center + r0 * np.exp(1j * phi)
    radial = np.linspace(0.0, 1.0, 6)[1:] * (center + r0)
    fd_pts = center + fd_h * _FD_STEPS
    z = np.concatenate([radial, circle, fd_pts.astype(complex)])
    thetas = z[:, None] * e[None, :]
    nmax = int(ns.max())
    if mode == "pi":
        tr = pi_trace(tc, orbit, thetas, nmax, start, depth, track=False)
    else:
        tr = log_mgf_trace(tc, orbit, thetas, nmax, v0, start, track=False)
    path = tr.logs[:, :len(radial) + nodes]
    check_branch(np.hstack([np.zeros((len(path), 1)), path]))
    S = tr.partial_sums()[ns - 1]
    Sc = S[:, len(radial):len(radial) + nodes]
    Sf = S[:, len(radial) + nodes:].real
    derivs, fd, disc = {}, {}, {}
    stencils = {1: _FD1 / fd_h, 2: _FD2 / fd_h ** 2, 3: _FD3 / fd_h ** 3}
    for k in orders:
        ck = factorial(k) / (nodes * r0 ** k) * (Sc * np.exp(-1j * k * phi)).sum(axis=1)
        derivs[k] = ck.real
        fd[k] = Sf @ stencils[k]
        scale = np.maximum(np.abs(derivs[k]), 1e-6 * ns)
        disc[k] = np.abs(derivs[k] - fd[k]) / scale
        if check and np.any(disc[k] > 1e-3):
            raise ContourMismatchError(
                f"order-{k} contour/finite-difference mismatch {disc[k].max():.2e}; shrink r0")
    return DirectionalDerivs(ns, derivs, fd, disc, r0)


@dataclass(frozen=True)
class CumulantDerivs:
    """Derivatives of Pi_{omega,n} at a point; Lambda derivatives are these / n."""
    n: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray
    discrepancy: float


def cumulant_derivs(tc, orbit, ns, order=2, components=None, r0=0.25, nodes=32,
                    mode="pi", v0=None, start=0, depth=None, check=True):
    """Gradient, Hessian (polarization) and, for d = 1, third derivative at 0.

    Arrays are indexed by the ladder ns; hess has shape (len(ns), d, d).
    """
    ns = np.atleast_1d(np.asarray(ns, dtype=np.int64))
    d = tc.dim
    idx = list(range(d)) if components is None else list(components)
    kw = dict(r0=r0, nodes=nodes, mode=mode, v0=v0, start=start, depth=depth, check=check)
    eye = np.eye(d)
    grad = np.zeros((len(ns), d))
    hess = np.zeros((len(ns), d, d))
    third = np.full(len(ns), np.nan)
    disc = 0.0
    orders = tuple(range(1, order + 1))
    for i in idx:
        dd = directional_derivs(tc, orbit, ns, eye[i], orders=orders, **kw)
        grad[:, i] = dd.derivs[1]
        if order >= 2:
            hess[:, i, i] = dd.derivs[2]
        if order >= 3 and d == 1:
            third[:] = dd.derivs[3]
        disc = max(disc, max(float(np.max(v)) for v in dd.discrepancy.values()))
    if order >= 2:
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                i, j = idx[a], idx[b]
                p = directional_derivs(tc, orbit, ns, eye[i] + eye[j], orders=(2,), **kw)
                m = directional_derivs(tc, orbit, ns, eye[i] - eye[j], orders=(2,), **kw)
                hess[:, i, j] = hess[:, j, i] = 0.25 * (p.derivs[2] - m.derivs[2])
                disc = max(disc, float(np.max(p.discrepancy[2])), float(np.max(m.discrepancy[2])))
    return CumulantDerivs(ns, grad, hess, third, disc)


# -- norm growth for the (Large t's) probe --------------------------------------

def twisted_norm_growth(tc, orbit, t, n, trials=6, rounds=3, start=0, seed=0):
    """(1/n) log of the BV-proxy norm of L^{it,(n)}, by power iteration.

    Reports the max over random step functions (plus the constant function) of
    the growth of the normalized iterate.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    th = (1j * t)[None, :]
    rng = np.random.default_rng(seed)
    nb = tc.n
    F = np.empty((nb, trials + 1), dtype=complex)
    F[:, 0] = 1.0
    for k in range(1, trials + 1):
        m = rng.integers(2, 32)
        cuts = np.sort(rng.choice(np.arange(1, nb), size=m - 1, replace=False))
        vals = rng.normal(size=m) + 1j * rng.normal(size=m)
        F[:, k] = np.repeat(vals, np.diff(np.concatenate(([0], cuts, [nb]))))
    F /= bv_norm(F)
    syms = orbit.symbol_range(start, start + n)
    off = tc.offsets(orbit, start, start + n)
    best = -np.inf
    for _ in range(rounds):
        G = F.copy()
        logscale = np.zeros(G.shape[1])
        for i, s in enumerate(syms):
            w = tc.weights(s, th)[:, 0] * np.exp(-th[0] @ off[i])
            G = tc.ulam.op(s).PT @ (w[:, None] * G)
            sc = np.max(np.abs(G), axis=0)
            sc[sc == 0] = 1.0
            G /= sc
            logscale += np.log(sc)
        norms = bv_norm(G)
        with np.errstate(divide="ignore"):
            growth = (np.log(norms) + logscale) / n
        best = max(best, float(np.max(growth)))
        F = G / norms
    return best


def twisted_norm_bound(theta, M, var_g, K=1.0):
    """K(theta) = K (e^{|theta| M} + |theta| e^{|theta| M} ess sup var g)."""
    r = float(np.linalg.norm(np.atleast_1d(theta)))
    return K * (np.exp(r * M) + r * np.exp(r * M) * var_g)
