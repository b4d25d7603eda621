"""Monte Carlo for quenched Birkhoff sums.

Trajectories follow the exact fiber maps in double precision.  Expanding maps
shift bits out of the mantissa (the doubling map reaches 0 after ~53 steps),
so every r steps the digits below 2^-40 are redrawn from the sample's counter
stream.  The refreshed point has the same coarse address and a fresh uniform
tail, which keeps the pushed-forward law intact for maps whose branch
boundaries lie above that resolution.

All randomness is a pure function of (seed, sample id, counter): counters 0 and
1 place the initial point, counter 2 + j feeds step j.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import math
import warnings

import numpy as np
from scipy import stats

from ._counter import keyed_uniform, stream_keys
from .errors import ConfigError, ZeroCountError
from .map_family import _apply, preimage_table
from .ulam_core import integral

REFRESH_BITS = 40
_TILT_STREAM = 1 << 40  # offset separating tilted-sample streams from direct ones


def refresh_interval(max_slope, bits=REFRESH_BITS):
    """Steps between low-digit refreshes so no more than 52 - bits bits are lost."""
    return max(1, int(math.floor((52 - bits) / math.log2(max_slope))))


def _check_density(v):
    v = np.asarray(getattr(v, "values", v), dtype=float)
    if v.ndim != 1 or np.any(v < 0) or not np.isfinite(v).all() or v.sum() <= 0:
        raise ConfigError("initial law must be a nonnegative step density")
    if abs(integral(v) - 1.0) > 1e-8:
        raise ConfigError(f"step density integrates to {integral(v)!r}, expected 1")
    return v


def sample_initial(v, keys, counter=0):
    """Inverse-CDF samples from a step density: bin by mass, uniform within."""
    v = _check_density(v)
    nb = len(v)
    cdf = np.cumsum(v)
    cdf /= cdf[-1]
    u0 = keyed_uniform(keys, counter)
    b = np.minimum(np.searchsorted(cdf, u0, side="right"), nb - 1)
    u1 = keyed_uniform(keys, counter + 1)
    x = (b + u1) / nb
    return np.minimum(x, np.nextafter(1.0, 0.0))


@dataclass
class TrajectoryBatch:
    """Birkhoff sums of M samples over fibers start..start+n-1 of an orbit.

    Sample i uses stream id first_stream + i.  log_weights is set for tilted
    batches (importance weights relative to mu_omega).
    """
    n: int
    M: int
    seed: int
    sums: np.ndarray
    checkpoints: dict = field(default_factory=dict)
    first_stream: int = 0
    start: int = 0
    refresh: int = 0
    log_weights: np.ndarray = None
    theta: np.ndarray = None

    @property
    def d(self):
        return self.sums.shape[1]

    @property
    def weights(self):
        return None if self.log_weights is None else np.exp(self.log_weights)

    def at(self, n):
        if n == self.n:
            return self.sums
        return self.checkpoints[n]

    def scaled(self, n=None, scale=None):
        """S_n / scale (default sqrt(n))."""
        n = self.n if n is None else n
        return self.at(n) / (np.sqrt(n) if scale is None else scale)


@dataclass
class _Job:
    maps: tuple
    g: object
    syms: np.ndarray
    off: np.ndarray
    v0: np.ndarray
    seed: int
    ids: np.ndarray
    checkpoints: tuple
    refresh: int
    bits: int
    probes: tuple = ()


def _direct_block(job):
    keys = stream_keys(job.seed, job.ids)
    x = sample_initial(job.v0, keys)
    d = job.g.dim
    acc = np.zeros((len(x), d))
    chk, probe = {}, {}
    cp = set(job.checkpoints)
    pr = set(job.probes)
    scale = float(2 ** job.bits)
    for j, s in enumerate(job.syms):
        gx = job.g.raw(s, x)
        if j in pr:
            probe[j] = (gx.sum(axis=0), (gx ** 2).sum(axis=0))
        acc += gx - job.off[j]
        x = _apply(job.maps[s % len(job.maps)], x)
        if job.refresh and (j + 1) % job.refresh == 0:
            x = (np.floor(x * scale) + keyed_uniform(keys, 2 + j)) / scale
        if j + 1 in cp:
            chk[j + 1] = acc.copy()
    return acc, chk, probe


def _blocks(M, block, first):
    return [np.arange(first + a, first + min(a + block, M), dtype=np.int64) for a in range(0, M, block)]


def _run(fn, jobs_list, jobs):
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, jobs_list))
    return [fn(j) for j in jobs_list]


def _offsets(tc, orbit, start, n):
    return tc.offsets(orbit, start, start + n) if tc.g.centering is not None else np.zeros((n, tc.dim))


def birkhoff_batch(tc, orbit, n, M, seed, v0, start=0, checkpoints=(), block=1 << 16,
                   jobs=1, bits=REFRESH_BITS, first_stream=0):
    """M samples of S_n g(sigma^start omega, .) with x ~ v0 dm.

    tc supplies the fiber maps and the observable (centered if it carries
    constants).  Results are merged in sample-id order, so they do not depend
    on jobs or block.
    """
    if n < 1 or M < 1:
        raise ConfigError("need n >= 1 and M >= 1")
    sel = tc.ulam.selector
    r = refresh_interval(sel.max_expansion, bits)
    syms = orbit.symbol_range(start, start + n)
    off = _offsets(tc, orbit, start, n)
    cps = tuple(sorted(c for c in checkpoints if 0 < c < n))
    v0 = _check_density(v0)
    jl = [_Job(sel.maps, tc.g, syms, off, v0, seed, ids, cps, r, bits)
          for ids in _blocks(M, block, first_stream)]
    res = _run(_direct_block, jl, jobs)
    sums = np.concatenate([a for a, _, _ in res])
    chk = {c: np.concatenate([b[c] for _, b, _ in res]) for c in cps}
    return TrajectoryBatch(n, M, seed, sums, chk, first_stream, start, r)


def pushed_means(tc, orbit, steps, M, seed, v0, start=0, block=1 << 16, jobs=1, bits=REFRESH_BITS):
    """Empirical mean and standard error of g_raw(sigma^k omega, T^(k) x) for k in steps."""
    steps = sorted(int(k) for k in steps)
    n = steps[-1] + 1
    sel = tc.ulam.selector
    r = refresh_interval(sel.max_expansion, bits)
    syms = orbit.symbol_range(start, start + n)
    jl = [_Job(sel.maps, tc.g, syms, np.zeros((n, tc.dim)), _check_density(v0), seed, ids, (), r,
               bits, tuple(steps)) for ids in _blocks(M, block, 0)]
    res = _run(_direct_block, jl, jobs)
    out = {}
    for k in steps:
        s1 = sum(p[k][0] for _, _, p in res)
        s2 = sum(p[k][1] for _, _, p in res)
        mean = s1 / M
        var = np.maximum(s2 / M - mean ** 2, 0.0) * M / max(M - 1, 1)
        out[k] = (mean, np.sqrt(var / M))
    return out


# -- exponentially tilted sampling ------------------------------------------

def tilted_densities(tc, orbit, theta, n, v0, start=0):
    """Normalized twisted pushes u_k = L^{theta,(k)} v0 / Z_k for k = 0..n."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    off = _offsets(tc, orbit, start, n)
    U = np.empty((n + 1, tc.n))
    u = np.asarray(v0, dtype=float) / integral(v0)
    U[0] = u
    logZ = 0.0
    for k, s in enumerate(orbit.symbol_range(start, start + n)):
        w = np.exp(tc.gmid(s) @ th - th @ off[k])
        u = tc.ulam.op(s).PT @ (w * u)
        c = integral(u)
        logZ += math.log(c)
        u = u / c
        U[k + 1] = u
    return U, logZ


@dataclass
class _TiltJob:
    maps: tuple
    g: object
    syms: np.ndarray
    off: np.ndarray
    U: np.ndarray
    theta: np.ndarray
    seed: int
    ids: np.ndarray


def _tilted_block(job):
    keys = stream_keys(job.seed, job.ids + _TILT_STREAM)
    n = len(job.syms)
    nb = job.U.shape[1]
    x = sample_initial(job.U[n], keys)
    logq = np.log(job.U[n][np.minimum((x * nb).astype(np.int64), nb - 1)])
    acc = np.zeros((len(x), job.g.dim))
    rows = np.arange(len(x))
    for k in range(n - 1, -1, -1):
        s = job.syms[k]
        T = job.maps[s % len(job.maps)]
        X, valid = preimage_table(T, x)
        Xc = np.where(valid, X, 0.0)
        gX = job.g.raw(s, Xc) - job.off[k]
        slope = np.abs(np.asarray(T.slopes))
        ub = job.U[k][np.minimum((Xc * nb).astype(np.int64), nb - 1)]
        w = np.where(valid, np.exp(gX @ job.theta) * ub / slope, 0.0)
        tot = w.sum(axis=1)
        cw = np.cumsum(w, axis=1)
        u = keyed_uniform(keys, 2 + k) * tot
        b = np.minimum((cw <= u[:, None]).sum(axis=1), w.shape[1] - 1)
        # guard against landing on a zero-weight branch through rounding
        bad = w[rows, b] == 0
        if np.any(bad):
            b[bad] = np.argmax(w[bad], axis=1)
        logq += np.log(w[rows, b] / tot) + np.log(slope[b])
        x = X[rows, b]
        acc += gX[rows, b]
    v0 = job.U[0]
    logp = np.log(v0[np.minimum((x * nb).astype(np.int64), nb - 1)])
    return acc, logp - logq


def tilted_batch(tc, orbit, n, M, theta, seed, v0, start=0, block=1 << 16, jobs=1):
    """Importance-sampled Birkhoff sums under the exponentially tilted law.

    The endpoint x_n is drawn from u_n and the trajectory is pulled back one
    preimage at a time, choosing branch b with probability proportional to
    e^{theta.g} u_k(x_b) / |T'|.  The proposal density q(x_0) is known in closed
    form, and log_weights = log v0(x_0) - log q(x_0) is the exact likelihood
    ratio; with exact u_k it reduces to -theta.S_n + Pi_{omega,n}(theta).
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    v0 = _check_density(v0)
    U, _ = tilted_densities(tc, orbit, th, n, v0, start)
    syms = orbit.symbol_range(start, start + n)
    off = _offsets(tc, orbit, start, n)
    jl = [_TiltJob(tc.ulam.selector.maps, tc.g, syms, off, U, th, seed, ids)
          for ids in _blocks(M, block, 0)]
    res = _run(_tilted_block, jl, jobs)
    sums = np.concatenate([a for a, _ in res])
    lw = np.concatenate([b for _, b in res])
    return TrajectoryBatch(n, M, seed, sums, {}, _TILT_STREAM, start, 0, lw, th)


# -- estimators -------------------------------------------------------------

def wilson(k, M, z=1.96):
    p = k / M
    den = 1 + z * z / M
    c = (p + z * z / (2 * M)) / den
    h = z * math.sqrt(p * (1 - p) / M + z * z / (4 * M * M)) / den
    return max(0.0, c - h), min(1.0, c + h)


@dataclass(frozen=True)
class Estimate:
    statistic: str
    n: int
    M: int
    value: float
    ci_lo: float
    ci_hi: float
    count: int = -1


def _project(batch, n, direction):
    S = batch.at(n)
    if direction is None:
        if S.shape[1] != 1:
            raise ConfigError("direction needed for d > 1")
        return S[:, 0]
    return S @ np.asarray(direction, dtype=float)


def _prob(hit, batch):
    """(p, lo, hi, count) for indicator array hit, direct or weighted."""
    M = len(hit)
    k = int(hit.sum())
    if batch.log_weights is None:
        lo, hi = wilson(k, M)
        return k / M, lo, hi, k
    w = np.where(hit, batch.weights, 0.0)
    p = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(M))
    return p, p - 1.96 * se, p + 1.96 * se, k


def tail_log_prob(batch, a, n=None, direction=None, min_count=20):
    """(1/n) log P(S_n/n >= a) with a 95% interval on the same scale.

    Direct batches use the Wilson interval, tilted batches the delta method.
    """
    n = batch.n if n is None else n
    S = _project(batch, n, direction)
    hit = S >= a * n - 1e-9
    p, lo, hi, k = _prob(hit, batch)
    if k == 0:
        raise ZeroCountError(f"no samples reached level {a} at n = {n}; use the tilted estimator")
    if batch.log_weights is None:
        if k < min_count:
            warnings.warn(f"only {k} tail hits; the direct estimate is unreliable", RuntimeWarning)
        return Estimate("tail_log_prob", n, batch.M, math.log(p) / n, math.log(lo) / n, math.log(hi) / n, k)
    se = (hi - p) / 1.96
    rel = se / p
    return Estimate("tail_log_prob_tilted", n, batch.M, math.log(p) / n,
                    (math.log(p) - 1.96 * rel) / n, (math.log(p) + 1.96 * rel) / n, k)


def tail_prob(batch, a, n=None, direction=None):
    n = batch.n if n is None else n
    hit = _project(batch, n, direction) >= a * n - 1e-9
    p, lo, hi, k = _prob(hit, batch)
    return Estimate("tail_prob", n, batch.M, p, lo, hi, k)


def window_prob(batch, s, delta, n=None):
    """P(S_n in the box s +- delta) with a 95% interval."""
    n = batch.n if n is None else n
    S = batch.at(n)
    s = np.broadcast_to(np.atleast_1d(np.asarray(s, dtype=float)), (S.shape[1],))
    hit = np.all(np.abs(S - s) <= delta, axis=1)
    p, lo, hi, k = _prob(hit, batch)
    return Estimate("window_prob", n, batch.M, p, lo, hi, k)


def ks_distance(samples, cdf="norm"):
    """Exact KS statistic of the empirical CDF of 1-d samples against cdf."""
    x = np.asarray(samples, dtype=float).ravel()
    return float(stats.kstest(x, cdf).statistic)


def sup_cdf_distance(samples, cdf):
    """Same as ks_distance for a vectorized callable reference CDF."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    M = len(x)
    F = cdf(x)
    i = np.arange(1, M + 1)
    return float(max(np.max(i / M - F), np.max(F - (i - 1) / M)))


def cf_distance(samples, sigma2, tgrid, chunk=32):
    """max_t |mean exp(i t.X) - exp(-t.Sigma^2 t / 2)| for samples X of shape (M, d)."""
    X = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    T = np.atleast_2d(np.asarray(tgrid, dtype=float).T).T
    S2 = np.atleast_2d(sigma2)
    best = 0.0
    for a in range(0, len(T), chunk):
        t = T[a:a + chunk]
        emp = np.exp(1j * (X @ t.T)).mean(axis=0)
        ref = np.exp(-0.5 * np.einsum("ki,ij,kj->k", t, S2, t))
        best = max(best, float(np.max(np.abs(emp - ref))))
    return best


def cf_grid(d, tmax=3.0, m=31):
    """Tensor grid on [-tmax, tmax]^d (m points per axis)."""
    ax = np.linspace(-tmax, tmax, m)
    return np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1).reshape(-1, d)


@dataclass
class EmpiricalSummary:
    rows: list = field(default_factory=list)

    def add(self, est=None, **kw):
        if est is not None:
            kw = dict(n=est.n, M=est.M, statistic=est.statistic, value=est.value,
                      ci_lo=est.ci_lo, ci_hi=est.ci_hi)
        kw.setdefault("ci_lo", float("nan"))
        kw.setdefault("ci_hi", float("nan"))
        self.rows.append(kw)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "M", "statistic", "value", "ci_lo", "ci_hi"])
            for r in self.rows:
                w.writerow([int(r["n"]), int(r["M"]), r["statistic"], repr(float(r["value"])),
                            repr(float(r["ci_lo"])), repr(float(r["ci_hi"]))])


def empirical_cdf(samples):
    """Knots (sorted x, F) of the empirical CDF of 1-d samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    return x, np.arange(1, len(x) + 1) / len(x)
