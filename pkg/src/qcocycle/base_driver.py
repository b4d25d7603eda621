"""Invertible driving systems sigma on Omega and their two-sided orbits.

Two kinds are supported: an irrational rotation x -> x + alpha mod 1 whose
symbol is read off the point, and a two-sided i.i.d. shift whose symbol at
index j is a hash of (seed, j).  States only carry an integer index, so the
group law is exact.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from ._counter import counter_uniform
from .errors import ConfigError

GOLDEN_ALPHA = (math.sqrt(5.0) - 1.0) / 2.0
_BASE_STREAM = -1  # stream id reserved for base symbols


@dataclass(frozen=True)
class BaseSystem:
    """Driving system description.

    kind is "rotation" (uses alpha, x0, n_symbols) or "iid" (uses weights, seed).
    """
    kind: str
    alpha: float = GOLDEN_ALPHA
    x0: float = 0.0
    n_symbols: int = 2
    weights: tuple = (0.5, 0.5)
    seed: int = 0
    description: str = ""

    def __post_init__(self):
        if self.kind == "rotation":
            if not 0.0 < self.alpha < 1.0:
                raise ConfigError("rotation angle alpha must lie in (0, 1)")
            if self.n_symbols < 2:
                raise ConfigError("rotation needs n_symbols >= 2")
        elif self.kind == "iid":
            w = np.asarray(self.weights, dtype=float)
            if w.size < 2 or np.any(w < 0):
                raise ConfigError("iid weights must be >= 0 with at least 2 symbols")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ConfigError(f"iid weights sum to {w.sum()!r}, expected 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))
        else:
            raise ConfigError(f"unknown base kind {self.kind!r}")

    @property
    def alphabet_size(self):
        return self.n_symbols if self.kind == "rotation" else len(self.weights)

    def points(self, idx):
        """Rotation points frac(x0 + k alpha) for integer indices k."""
        k = np.asarray(idx, dtype=np.int64).astype(np.float64)
        return np.mod(self.x0 + k * self.alpha, 1.0)

    def symbols(self, idx):
        """Symbols at absolute indices (vectorized)."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.kind == "rotation":
            s = np.floor(self.points(idx) * self.n_symbols).astype(np.int64)
            return np.minimum(s, self.n_symbols - 1)
        u = counter_uniform(self.seed, _BASE_STREAM, idx)
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        s = np.searchsorted(cdf, u, side="right")
        return np.minimum(s, len(self.weights) - 1).astype(np.int64)


@dataclass(frozen=True)
class OmegaState:
    """The fiber sigma^index(omega_0)."""
    base: BaseSystem
    index: int = 0

    @property
    def point(self):
        if self.base.kind != "rotation":
            return None
        return float(self.base.points(self.index))


def advance(omega, k):
    """sigma^k omega; k may be negative."""
    return OmegaState(omega.base, omega.index + int(k))


def symbol_at(omega):
    return int(omega.base.symbols(omega.index))


@dataclass(frozen=True)
class BaseOrbit:
    """Cached symbols for the window of relative indices [-n_back, n_fwd]."""
    origin: OmegaState
    n_back: int = 0
    n_fwd: int = 0
    symbols: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_back < 0 or self.n_fwd < 0:
            raise ValueError("window sizes must be nonnegative")
        j = np.arange(-self.n_back, self.n_fwd + 1, dtype=np.int64)
        sym = self.origin.base.symbols(self.origin.index + j)
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    @property
    def base(self):
        return self.origin.base

    def covers(self, lo, hi):
        return lo >= -self.n_back and hi <= self.n_fwd

    def symbol(self, j):
        """Symbol of sigma^j omega for relative j in the window."""
        if not -self.n_back <= j <= self.n_fwd:
            raise IndexError(f"relative index {j} outside [-{self.n_back}, {self.n_fwd}]")
        return int(self.symbols[j + self.n_back])

    def symbol_range(self, lo, hi):
        """Symbols for relative indices lo..hi-1."""
        if lo < -self.n_back or hi - 1 > self.n_fwd:
            raise IndexError(f"range [{lo}, {hi}) outside orbit window")
        return self.symbols[lo + self.n_back:hi + self.n_back]

    def state(self, j):
        return advance(self.origin, j)


def make_orbit(base, n_back, n_fwd, origin_index=0):
    return BaseOrbit(OmegaState(base, origin_index), n_back, n_fwd)
