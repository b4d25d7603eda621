"""Ulam discretization of transfer operators on a uniform partition.

P_ij = m(B_i n T^{-1} B_j) / m(B_i) is computed by intersecting each branch
image with the bins, so the build is exact up to rounding.  Densities are
step functions stored as bin values; the transfer operator pushes them by
(Lf)_j = sum_i f_i P_ij.
"""
from dataclasses import dataclass, field
import csv

import numpy as np
import scipy.sparse as sp

from .errors import ExpansionError

_SNAP = 1e-9


@dataclass(frozen=True)
class Partition:
    n: int = 4096

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("partition needs n >= 2 bins")

    @property
    def edges(self):
        return np.arange(self.n + 1) / self.n

    @property
    def midpoints(self):
        return (np.arange(self.n) + 0.5) / self.n

    def bin_of(self, x):
        return np.minimum((np.asarray(x) * self.n).astype(np.int64), self.n - 1)


@dataclass(frozen=True)
class StepDensity:
    values: np.ndarray
    partition: Partition

    def __post_init__(self):
        if len(self.values) != self.partition.n:
            raise ValueError("values do not match partition size")

    @property
    def integral(self):
        return integral(self.values)

    def to_csv(self, path):
        write_step_csv(path, self.values)


def integral(f):
    """Lebesgue integral of step function(s) along axis 0."""
    return np.mean(f, axis=0)


def variation(f):
    """Discrete total variation sum |f_i - f_{i-1}| along axis 0."""
    f = getattr(f, "values", f)
    return np.sum(np.abs(np.diff(f, axis=0)), axis=0)


def bv_norm(f):
    f = getattr(f, "values", f)
    return np.mean(np.abs(f), axis=0) + variation(f)


def write_step_csv(path, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_index", "value"])
        for i, v in enumerate(np.asarray(values)):
            w.writerow([i, repr(float(v))])


@dataclass(frozen=True)
class UlamOperator:
    """Ulam matrix stored transposed (CSR) so that push = PT @ f."""
    P: sp.csr_matrix
    PT: sp.csr_matrix
    partition: Partition

    @property
    def n(self):
        return self.partition.n

    def dense(self):
        return self.P.toarray()


def _snap(y, n):
    yn = y * n
    r = np.round(yn)
    return np.where(np.abs(yn - r) < _SNAP, r / n, y)


def build_ulam(T, part):
    """Ulam matrix of a piecewise affine map by exact interval intersection."""
    n = part.n
    if any(abs(s) <= 1.0 for s in T.slopes):
        raise ExpansionError("branch slope magnitude <= 1")
    rows, cols, vals = [], [], []
    c = T.breakpoints
    for k, (s, off) in enumerate(zip(T.slopes, T.offsets)):
        a, b = c[k], c[k + 1]
        i0 = int(np.floor(a * n))
        i1 = min(int(np.ceil(b * n)), n)
        i = np.arange(i0, i1)
        p = np.maximum(i / n, a)
        q = np.minimum((i + 1) / n, b)
        keep = q > p
        i, p, q = i[keep], p[keep], q[keep]
        y1 = _snap(off + s * (p - a), n)
        y2 = _snap(off + s * (q - a), n)
        lo, hi = np.minimum(y1, y2), np.maximum(y1, y2)
        j0 = np.floor(lo * n).astype(np.int64)
        span = int(np.max(np.ceil(hi * n) - j0)) if len(i) else 0
        for o in range(span):
            j = j0 + o
            ok = j < n
            jj = np.where(ok, j, 0)
            ov = np.minimum(hi, (jj + 1) / n) - np.maximum(lo, jj / n)
            ok &= ov > 0
            rows.append(i[ok])
            cols.append(jj[ok])
            vals.append(ov[ok] * n / abs(s))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    P.sum_duplicates()
    PT = P.T.tocsr()
    return UlamOperator(P, PT, part)


def apply_operator(L, f):
    """(Lf)_j = sum_i f_i P_ij; f may be (n,) or (n, k), real or complex."""
    fv = getattr(f, "values", f)
    if fv.shape[0] != L.n:
        raise ValueError(f"density has {fv.shape[0]} bins, operator has {L.n}")
    out = L.PT @ fv
    if isinstance(f, StepDensity):
        return StepDensity(out, L.partition)
    return out


@dataclass
class UlamCocycle:
    """Ulam operators for every symbol of a fiber selector."""
    selector: object
    partition: Partition
    operators: tuple = field(init=False)

    def __post_init__(self):
        self.operators = tuple(build_ulam(T, self.partition) for T in self.selector.maps)

    @property
    def n(self):
        return self.partition.n

    def op(self, symbol):
        return self.operators[symbol % len(self.operators)]

    def map(self, symbol):
        return self.selector.map_for_symbol(symbol)

    @property
    def integer_full_branch(self):
        return all(T.integer_full_branch for T in self.selector.maps)

    def push(self, orbit, f, start, steps):
        """L^{(steps)} applied from relative fiber `start`."""
        for s in orbit.symbol_range(start, start + steps):
            f = self.op(s).PT @ f
        return f


def _random_steps(rng, n, trials, positive=False):
    """Random step functions mixing coarse plateaus and fine noise."""
    out = np.empty((n, trials))
    for t in range(trials):
        kind = t % 4
        if kind == 0:
            m = rng.integers(2, 64)
            cuts = np.sort(rng.integers(1, n, size=m - 1))
            vals = rng.normal(size=m)
            f = np.repeat(vals, np.diff(np.concatenate(([0], cuts, [n]))))
        elif kind == 1:
            f = rng.normal(size=n)
        elif kind == 2:
            k = rng.integers(1, n // 2)
            f = np.cos(np.pi * k * (np.arange(n) + 0.5) / n * 2)
            f += 0.1 * rng.normal(size=n)
        else:
            f = np.zeros(n)
            i = rng.integers(0, n)
            f[i] = 1.0
        if positive:
            f = np.abs(f) + 0.01
        out[:, t] = f
    return out


@dataclass(frozen=True)
class LasotaYorkeFit:
    alpha: float
    beta: float
    N: int
    n_samples: int

    @property
    def alpha_lt_one(self):
        return self.alpha < 1.0


def probe_lasota_yorke(cocycle, orbit, N=1, trials=200, start=0, n_fibers=4, seed=0, band=4.0):
    """Fit var(L^{(N)} f) <= alpha var(f) + beta ||f||_1 over random step f.

    Each sample gives a point (s, r) = (||f||_1/var f, var(Lf)/var f).  alpha
    is the largest r among the most oscillatory samples (s within a factor
    `band` of the smallest s, which includes single-bin indicators), so it
    estimates lim sup r as s -> 0.  beta is then the least slope making the
    inequality hold for every sample.
    """
    rng = np.random.default_rng(seed)
    n = cocycle.n
    # single-bin indicators: random ones plus those touching [0,1]'s ends and
    # the branch cuts, where the one-step variation bound is attained
    cuts = {0, n - 1}
    for T in cocycle.selector.maps:
        for c in T.breakpoints[1:-1]:
            k = int(np.floor(c * n))
            cuts.update(j for j in (k - 1, k) if 0 <= j < n)
    picks = np.union1d(rng.choice(n, size=min(n, 64), replace=False), sorted(cuts))
    basis = np.eye(n)[:, picks]
    s_all, r_all = [], []
    for f0 in range(start, start + n_fibers):
        F = np.hstack([_random_steps(rng, n, trials), basis])
        G = cocycle.push(orbit, F, f0, N)
        v = variation(F)
        ok = v > 0
        s_all.append(integral(np.abs(F))[ok] / v[ok])
        r_all.append(variation(G)[ok] / v[ok])
    s = np.concatenate(s_all)
    r = np.concatenate(r_all)
    osc = s <= band * s.min()
    alpha = float(np.max(r[osc]))
    rest = ~osc
    beta = float(max(0.0, np.max((r[rest] - alpha) / s[rest]))) if np.any(rest) else 0.0
    return LasotaYorkeFit(alpha, beta, N, len(s))


@dataclass(frozen=True)
class DecayCurve:
    norms: np.ndarray
    rate: float
    K: float


def probe_decay(cocycle, orbit, n_max, f=None, start=0, floor=1e-12):
    """||L^{(k)} f||_BV for k = 0..n_max and a fitted rate lambda (norm ~ K e^{-lambda k})."""
    n = cocycle.n
    if f is None:
        # a zero-mean step that no catalog map annihilates in one step
        f = np.where(cocycle.partition.midpoints < 1 / 3, 1.0, 0.0)
        f -= integral(f)
    f = np.asarray(getattr(f, "values", f), dtype=float)
    norms = [float(bv_norm(f))]
    g = f
    for s in orbit.symbol_range(start, start + n_max):
        g = cocycle.op(s).PT @ g
        norms.append(float(bv_norm(g)))
    norms = np.array(norms)
    if norms[0] == 0.0:
        return DecayCurve(norms, np.inf, 0.0)
    use = norms > floor * norms[0]
    k = np.arange(len(norms))[use]
    if len(k) < 2:
        return DecayCurve(norms, np.inf, norms[0])
    slope, icept = np.polyfit(k, np.log(norms[use]), 1)
    return DecayCurve(norms, float(-slope), float(np.exp(icept)))


@dataclass(frozen=True)
class MinorizationFit:
    c: float
    N: int
    a: float


def probe_minorization(cocycle, orbit, N=4, a=10.0, trials=100, start=0, seed=0):
    """Fitted c in ess inf L^{(N)} f >= c ||f||_1 over f >= 0 with var f <= a ||f||_1."""
    rng = np.random.default_rng(seed)
    F = _random_steps(rng, cocycle.n, trials, positive=True)
    F = F / integral(F)
    # enforce the cone condition by mixing with the constant function
    v = variation(F)
    w = np.where(v > a, a / v, 1.0)
    F = w * F + (1 - w)
    G = cocycle.push(orbit, F, start, N)
    c = float(np.min(np.min(G, axis=0) / integral(F)))
    return MinorizationFit(c, N, a)


def correlation_decay(cocycle, orbit, f, h, density, n_max, start=0):
    """C_k = int L^{(k)}(f v) h dm - (int f dmu)(int h dmu_k) for k <= n_max.

    `density` holds v^0 for fibers start..start+n_max as rows.
    """
    v0 = density[0]
    u = f * v0
    mf = integral(u)
    out = []
    for k in range(n_max + 1):
        vk = density[k]
        out.append(float(integral(u * h) - mf * integral(h * vk)))
        if k < n_max:
            u = cocycle.op(orbit.symbol(start + k)).PT @ u
    return np.array(out)
