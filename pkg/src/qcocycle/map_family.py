"""Fiber maps T_omega and vector observables g(omega, x).

Maps are piecewise affine on half-open branches [c_{i-1}, c_i); branch i sends
x to offset_i + slope_i (x - c_{i-1}).  Observables are vectors of catalog
components, optionally scaled per base symbol and centered per fiber.
"""
from dataclasses import dataclass, field
from functools import reduce
import math

import numpy as np

from .base_driver import symbol_at
from .errors import CatalogError, ConfigError, DomainError, ExpansionError

TWO_PI = 2.0 * math.pi
_EDGE = 1e-12


@dataclass(frozen=True)
class PiecewiseAffineMap:
    breakpoints: tuple
    slopes: tuple
    offsets: tuple
    name: str = "table"
    beta: float = None  # set when the map is exactly x -> beta x mod 1

    def __post_init__(self):
        c = np.asarray(self.breakpoints, dtype=float)
        s = np.asarray(self.slopes, dtype=float)
        off = np.asarray(self.offsets, dtype=float)
        if c.ndim != 1 or c.size < 2 or c[0] != 0.0 or c[-1] != 1.0:
            raise ConfigError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(c) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        if s.size != c.size - 1 or off.size != c.size - 1:
            raise ConfigError("need one slope and one offset per branch")
        if np.any(np.abs(s) <= 1.0):
            raise ExpansionError(f"branch slope magnitude <= 1 in map {self.name!r}")
        end = off + s * np.diff(c)
        lo, hi = np.minimum(off, end), np.maximum(off, end)
        if np.any(lo < -_EDGE) or np.any(hi > 1.0 + _EDGE):
            raise ConfigError(f"branch image leaves [0, 1] in map {self.name!r}")
        for name, arr in (("breakpoints", c), ("slopes", s), ("offsets", off)):
            object.__setattr__(self, name, tuple(float(v) for v in arr))

    @property
    def n_branches(self):
        return len(self.slopes)

    @property
    def min_expansion(self):
        return min(abs(v) for v in self.slopes)

    @property
    def max_expansion(self):
        return max(abs(v) for v in self.slopes)

    @property
    def integer_full_branch(self):
        """True if every branch is onto [0,1) with integer slope (so L1 = 1)."""
        return self.full_branch and all(float(abs(s)).is_integer() for s in self.slopes)

    @property
    def full_branch(self):
        lo, hi = self.images()
        return bool(np.all(np.abs(lo) < _EDGE) and np.all(np.abs(hi - 1.0) < _EDGE))

    def images(self):
        """Closures of branch images as (lo, hi) arrays."""
        c = np.asarray(self.breakpoints)
        off = np.asarray(self.offsets)
        end = off + np.asarray(self.slopes) * np.diff(c)
        return np.minimum(off, end), np.maximum(off, end)

    def __call__(self, x):
        return eval_map(self, x)


def _apply(T, x):
    if T.beta is not None:
        y = T.beta * x
        return y - np.floor(y)
    c = np.asarray(T.breakpoints)
    k = np.searchsorted(c[1:-1], x, side="right")
    y = np.asarray(T.offsets)[k] + np.asarray(T.slopes)[k] * (x - c[k])
    # only hit at the open end of a decreasing branch (value 1 means 0 mod 1)
    y = np.where(y >= 1.0, y - 1.0, y)
    return np.maximum(y, 0.0)


def eval_map(T, x):
    """Image of x under T; x scalar or array in [0, 1)."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0.0) | (xa >= 1.0)):
        raise DomainError("eval_map needs points in [0, 1)")
    y = _apply(T, xa)
    return float(y) if np.ndim(x) == 0 else y


def branch_inverses(T, y):
    """All (x, 1/|T'(x)|) with T(x) = y, for scalar y in [0, 1)."""
    if not 0.0 <= y < 1.0:
        raise DomainError("branch_inverses needs y in [0, 1)")
    c = T.breakpoints
    out = []
    for i, (s, off) in enumerate(zip(T.slopes, T.offsets)):
        x = c[i] + (y - off) / s
        if c[i] <= x < c[i + 1]:
            out.append((x, 1.0 / abs(s)))
    return out


def preimage_table(T, y):
    """Vectorized preimages: arrays X (M, b) and mask valid (M, b)."""
    c = np.asarray(T.breakpoints)
    s = np.asarray(T.slopes)
    off = np.asarray(T.offsets)
    X = c[:-1] + (y[:, None] - off) / s
    valid = (X >= c[:-1]) & (X < c[1:])
    return X, valid


def beta_map(beta):
    """x -> beta x mod 1 (last branch partial when beta is not an integer)."""
    beta = float(beta)
    if beta <= 1.0:
        raise ExpansionError("beta must exceed 1")
    k = math.ceil(beta) - 1 if float(beta).is_integer() else math.floor(beta)
    cuts = [j / beta for j in range(1, k + 1) if j / beta < 1.0]
    c = (0.0, *cuts, 1.0)
    nb = len(c) - 1
    name = "doubling" if beta == 2.0 else f"beta-map({beta:.12g})"
    return PiecewiseAffineMap(c, (beta,) * nb, (0.0,) * nb, name=name, beta=beta)


def doubling():
    return beta_map(2.0)


def golden_beta():
    return beta_map((1.0 + math.sqrt(5.0)) / 2.0)


def tent():
    return PiecewiseAffineMap((0.0, 0.5, 1.0), (2.0, -2.0), (0.0, 1.0), name="tent")


MAP_CATALOG = {
    "beta-map": {"params": {"beta": "float > 1"}, "doc": "x -> beta x mod 1"},
    "doubling": {"params": {}, "doc": "x -> 2x mod 1"},
    "tent": {"params": {}, "doc": "1 - |1 - 2x|"},
    "table": {"params": {"breakpoints": "floats", "slopes": "floats", "offsets": "floats"},
              "doc": "user-supplied piecewise affine map"},
}


def make_map(name, **params):
    if name == "beta-map":
        return beta_map(params["beta"])
    if name == "doubling":
        return doubling()
    if name == "tent":
        return tent()
    if name == "table":
        return PiecewiseAffineMap(tuple(params["breakpoints"]), tuple(params["slopes"]),
                                  tuple(params["offsets"]))
    raise CatalogError(f"unknown map {name!r}; known: {sorted(MAP_CATALOG)}")


@dataclass(frozen=True)
class FiberSelector:
    """Symbol-indexed choice of fiber map."""
    maps: tuple
    delta: float = 0.1

    def __post_init__(self):
        if not self.maps:
            raise ConfigError("selector needs at least one map")
        worst = min(T.min_expansion for T in self.maps)
        if worst < 1.0 + self.delta:
            raise ExpansionError(f"min slope {worst} below 1 + delta = {1 + self.delta}")

    def select(self, omega):
        return self.maps[symbol_at(omega) % len(self.maps)]

    def map_for_symbol(self, s):
        return self.maps[s % len(self.maps)]

    @property
    def max_expansion(self):
        return max(T.max_expansion for T in self.maps)


# -- observables ------------------------------------------------------------

def _trig(cos_terms, sin_terms, x):
    """sum a cos(2 pi k x) + sum b sin(2 pi k x).

    Small integer frequencies share one cos (and sin) evaluation through the
    Chebyshev recurrence h_{k+1} = 2 cos(2 pi x) h_k - h_{k-1}; anything else
    is evaluated directly.
    """
    ks = [k for k, _ in cos_terms] + [k for k, _ in sin_terms]
    out = np.zeros_like(x)
    if ks and all(float(k).is_integer() and 1 <= k <= 8 for k in ks):
        c1 = np.cos(TWO_PI * x)
        kmax = int(max(ks))
        for terms, prev, cur in ((cos_terms, np.ones_like(x), c1),
                                 (sin_terms, np.zeros_like(x), None)):
            if not terms:
                continue
            if cur is None:
                cur = np.sin(TWO_PI * x)
            w = dict((int(k), a) for k, a in terms)
            for k in range(1, kmax + 1):
                if k > 1:
                    prev, cur = cur, 2 * c1 * cur - prev
                if k in w:
                    out += w[k] * cur
        return out
    for k, a in cos_terms:
        out += a * np.cos(TWO_PI * k * x)
    for k, b in sin_terms:
        out += b * np.sin(TWO_PI * k * x)
    return out


@dataclass(frozen=True)
class Component:
    """One scalar observable x -> g(x).

    kind: "cos", "sin" (params k), "trig" (cos/sin coefficient pairs),
    "rademacher", "table" (values on equal cells), "constant" (value).
    """
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in COMPONENT_CATALOG:
            raise CatalogError(f"unknown observable {self.kind!r}; known: {sorted(COMPONENT_CATALOG)}")

    def p(self, key, default=None):
        return dict(self.params).get(key, default)

    def __call__(self, x):
        kind = self.kind
        if kind == "cos":
            return np.cos(TWO_PI * self.p("k", 1) * x)
        if kind == "sin":
            return np.sin(TWO_PI * self.p("k", 1) * x)
        if kind == "trig":
            return _trig(self.p("cos", ()), self.p("sin", ()), np.asarray(x, dtype=float))
        if kind == "rademacher":
            return np.where(x < 0.5, 1.0, -1.0)
        if kind == "table":
            vals = np.asarray(self.p("values"), dtype=float)
            idx = np.minimum((np.asarray(x) * vals.size).astype(np.int64), vals.size - 1)
            return vals[idx]
        return np.full(np.shape(x), float(self.p("value", 0.0)))

    @property
    def sup(self):
        kind = self.kind
        if kind in ("cos", "sin", "rademacher"):
            return 1.0
        if kind == "trig":
            return float(sum(abs(a) for _, a in self.p("cos", ())) + sum(abs(a) for _, a in self.p("sin", ())))
        if kind == "table":
            return float(np.max(np.abs(self.p("values"))))
        return abs(float(self.p("value", 0.0)))

    @property
    def variation(self):
        """Total variation on [0, 1) (upper bound for trig sums)."""
        kind = self.kind
        if kind in ("cos", "sin"):
            return 4.0 * abs(self.p("k", 1))
        if kind == "trig":
            return float(sum(4.0 * abs(k * a) for k, a in self.p("cos", ()) + self.p("sin", ())))
        if kind == "rademacher":
            return 2.0
        if kind == "table":
            return float(np.sum(np.abs(np.diff(self.p("values")))))
        return 0.0

    @property
    def lattice_span(self):
        """Span h if g takes values in a + h Z, else None (non-lattice)."""
        if self.kind == "rademacher":
            return 2.0
        if self.kind == "table":
            vals = np.asarray(self.p("values"), dtype=float)
            if np.all(vals == np.round(vals)):
                diffs = np.abs(np.round(vals - vals[0])).astype(np.int64)
                h = reduce(math.gcd, diffs.tolist(), 0)
                return float(h) if h > 0 else None
        return None


COMPONENT_CATALOG = {
    "cos": {"params": {"k": "int frequency (default 1)"}, "doc": "cos(2 pi k x)"},
    "sin": {"params": {"k": "int frequency (default 1)"}, "doc": "sin(2 pi k x)"},
    "trig": {"params": {"cos": "(k, coef) pairs", "sin": "(k, coef) pairs"}, "doc": "finite Fourier sum"},
    "rademacher": {"params": {}, "doc": "+1 on [0, 1/2), -1 on [1/2, 1); lattice, span 2"},
    "table": {"params": {"values": "floats on equal cells"}, "doc": "piecewise constant"},
    "constant": {"params": {"value": "float"}, "doc": "constant function"},
}


def component(kind, **params):
    items = []
    for k, v in sorted(params.items()):
        if isinstance(v, (list, np.ndarray)):
            v = tuple(tuple(e) if isinstance(e, (list, tuple)) else e for e in v)
        items.append((k, v))
    return Component(kind, tuple(items))


@dataclass(frozen=True)
class FiberConstants:
    """Per-fiber vectors indexed by absolute base index start..start+len-1."""
    start: int
    values: np.ndarray

    def at(self, index):
        j = int(index) - self.start
        if not 0 <= j < len(self.values):
            raise IndexError(f"no centering constant stored for fiber index {index}")
        return self.values[j]

    def slice(self, lo, hi):
        """Rows for absolute indices lo..hi-1."""
        a, b = lo - self.start, hi - self.start
        if a < 0 or b > len(self.values):
            raise IndexError(f"centering constants cover [{self.start}, {self.start + len(self.values)})")
        return self.values[a:b]


@dataclass(frozen=True)
class ObservableSpec:
    """Vector observable g = (g^1, ..., g^d).

    scalings: optional (alphabet, d) array of per-symbol amplitudes.
    centering: optional FiberConstants subtracted fiberwise.
    """
    components: tuple
    scalings: np.ndarray = None
    centering: FiberConstants = None

    def __post_init__(self):
        if len(self.components) < 1:
            raise ConfigError("observable needs d >= 1 components")
        if self.scalings is not None:
            sc = np.atleast_2d(np.asarray(self.scalings, dtype=float))
            if sc.shape[1] != self.dim:
                raise ConfigError("scalings must have one column per component")
            object.__setattr__(self, "scalings", sc)

    @property
    def dim(self):
        return len(self.components)

    @property
    def centered(self):
        return self.centering is not None

    @property
    def sup_bound(self):
        """M = ess-sup of |g| (Euclidean), ignoring centering shifts."""
        sups = np.array([c.sup for c in self.components])
        if self.scalings is not None:
            sups = sups * np.max(np.abs(self.scalings), axis=0)
        return float(np.sqrt(np.sum(sups ** 2)))

    @property
    def variation_bound(self):
        v = np.array([c.variation for c in self.components])
        if self.scalings is not None:
            v = v * np.max(np.abs(self.scalings), axis=0)
        return float(np.sqrt(np.sum(v ** 2)))

    @property
    def lattice(self):
        return any(c.lattice_span is not None for c in self.components)

    def scale(self, symbol):
        if self.scalings is None:
            return None
        return self.scalings[symbol % len(self.scalings)]

    def raw(self, symbol, x):
        """Uncentered values, shape (len(x), d)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (self.dim,))
        for i, comp in enumerate(self.components):
            out[..., i] = comp(x)
        sc = self.scale(symbol)
        if sc is not None:
            out *= sc
        return out

    def with_centering(self, constants):
        return ObservableSpec(self.components, self.scalings, constants)


def observable(*kinds, scalings=None):
    """Shorthand: observable("cos", "sin") or with Component objects."""
    comps = tuple(k if isinstance(k, Component) else Component(k) for k in kinds)
    return ObservableSpec(comps, scalings)


def eval_observable(g, omega, x):
    """g(omega, x) as an array (..., d); centered if g carries constants."""
    s = symbol_at(omega)
    out = g.raw(s, x)
    if g.centering is not None:
        out = out - g.centering.at(omega.index)
    return out
