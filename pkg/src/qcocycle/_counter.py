"""Stateless counter-keyed hashing.

Every random number in the package is a pure function of (seed, stream, counter),
so any sample or base symbol can be regenerated in isolation.  The mixer is the
SplitMix64 finalizer.
"""
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0


def _as_u64(a):
    a = np.asarray(a)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind == "i":
        return a.astype(np.int64).view(np.uint64)
    return a.astype(np.uint64)


def mix64(z):
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.array(z, dtype=np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z


def stream_keys(seed, streams):
    """Per-stream keys derived from a 64-bit seed."""
    s = _as_u64(np.asarray(streams, dtype=np.int64))
    with np.errstate(over="ignore"):
        return mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ (s * _GAMMA))


def keyed_uniform(keys, counter):
    """Uniform doubles in [0, 1) at position `counter` of each keyed stream.

    `keys` and `counter` broadcast against each other.
    """
    c = _as_u64(counter)
    with np.errstate(over="ignore"):
        z = mix64(keys + c * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * _TWO53


def counter_uniform(seed, stream, counter):
    """Uniform doubles for a single stream and an array of counters."""
    return keyed_uniform(stream_keys(seed, [stream])[0], counter)
